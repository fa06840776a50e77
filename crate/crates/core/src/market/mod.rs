//! The clearing house: a passive store of ISP offer credentials, offer
//! search, and end-to-end path composition from posted offers.

mod house;
mod offer;
mod path;

use thiserror::Error;

use crate::money::{Currency, Money};
use crate::time::Date;

pub use house::ClearingHouse;
pub use offer::{
    offer_id, prorated_price, scaled_amount, validate_unbundling, Link, Offer, OfferTerms,
    QosClass, BANDX_DOMAIN,
};
pub use path::{compose_path, eligible, PathPlan, PlanSegment};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("offer credential signature does not verify")]
    BadSignature,
    #[error("malformed offer: {0}")]
    MalformedOffer(String),
    #[error("offer expired on {0}")]
    Expired(Date),
    #[error("no path satisfies the query")]
    NoPath,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("offer import failed at block {index}: {reason}")]
    Import { index: usize, reason: String },
}

/// What a customer is looking for. All prices in one query share
/// `currency`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfferQuery {
    pub from: String,
    pub to: String,
    pub min_bandwidth_mbps: u64,
    pub max_total_price: Option<Money>,
    pub needed_on: Date,
    pub currency: Currency,
}

impl OfferQuery {
    pub fn new(from: &str, to: &str, min_bandwidth_mbps: u64, needed_on: Date) -> Result<Self, MarketError> {
        if min_bandwidth_mbps == 0 {
            return Err(MarketError::InvalidQuery("bandwidth must be positive".into()));
        }
        if from.is_empty() || to.is_empty() || from == to {
            return Err(MarketError::InvalidQuery("endpoints must be distinct".into()));
        }
        Ok(OfferQuery {
            from: from.to_string(),
            to: to.to_string(),
            min_bandwidth_mbps,
            max_total_price: None,
            needed_on,
            currency: Currency::usd(),
        })
    }

    /// Caps the total price; also fixes the query currency.
    pub fn with_max_price(mut self, max: Money) -> Self {
        self.currency = max.currency().clone();
        self.max_total_price = Some(max);
        self
    }

    pub fn with_currency(mut self, currency: Currency) -> Self {
        self.currency = currency;
        self
    }
}
