//! Offers: structured terms read back from an ISP-signed credential.
//!
//! The credential is the single source of truth. Its conditions must be
//! one `-> "true"` clause whose test is a conjunction drawn from:
//!
//! ```text
//! app_domain == "BAND-X"
//! currency == "USD"
//! &bandwidth <= "50Mbps"
//! link_name == "Dublin-NYC"
//! &amount >= 3.00           (whole-offer purchase only)
//! &scaled_amount >= 3.00    (un-bundling allowed)
//! date < "20031120"
//! qos_class == "premium_best_effort"   (optional)
//! path_hint == "ne1,ne2,ne3"           (optional)
//! ```
//!
//! Each attribute appears at most once; anything else is malformed.
//! `scaled_amount` is the paid amount rescaled to the full offered
//! bandwidth, `floor(amount * offered / purchased)` in minor units, so that
//! `scaled_amount >= min_price` holds exactly when the payment covers
//! `ceil(min_price * purchased / offered)`.

use std::fmt;

use sha2::{Digest, Sha256};

use crate::credential::{
    numeric_prefix, AttrRef, CmpOp, ConditionExpr, Credential, CredentialError, Literal,
    Principal, PrincipalExpr, PublicKeyId, SigningKey,
};
use crate::money::{Currency, Money};
use crate::time::Date;

use super::MarketError;

/// Application domain every exchange credential is scoped to.
pub const BANDX_DOMAIN: &str = "BAND-X";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QosClass {
    Reserved,
    PremiumBestEffort,
}

impl QosClass {
    pub fn as_str(self) -> &'static str {
        match self {
            QosClass::Reserved => "reserved",
            QosClass::PremiumBestEffort => "premium_best_effort",
        }
    }

    pub fn parse(text: &str) -> Option<QosClass> {
        match text {
            "reserved" => Some(QosClass::Reserved),
            "premium_best_effort" => Some(QosClass::PremiumBestEffort),
            _ => None,
        }
    }
}

impl fmt::Display for QosClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directed link between two opaque, case-sensitive location ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub from: String,
    pub to: String,
}

impl Link {
    pub fn new(from: &str, to: &str) -> Link {
        Link {
            from: from.to_string(),
            to: to.to_string(),
        }
    }

    /// Splits `link_name` on its last hyphen.
    pub fn parse(link_name: &str) -> Option<Link> {
        let (from, to) = link_name.rsplit_once('-')?;
        (!from.is_empty() && !to.is_empty() && from != to).then(|| Link::new(from, to))
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.from, self.to)
    }
}

/// Everything an ISP promises in an offer, minus identity and signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfferTerms {
    pub link: Link,
    pub bandwidth_mbps: u64,
    pub min_price: Money,
    pub valid_until: Date,
    pub unbundling_allowed: bool,
    pub qos_class: QosClass,
    pub path_hint: Option<Vec<String>>,
}

impl OfferTerms {
    pub fn new(link: Link, bandwidth_mbps: u64, min_price: Money, valid_until: Date) -> OfferTerms {
        OfferTerms {
            link,
            bandwidth_mbps,
            min_price,
            valid_until,
            unbundling_allowed: false,
            qos_class: QosClass::Reserved,
            path_hint: None,
        }
    }

    pub fn unbundled(mut self, allowed: bool) -> OfferTerms {
        self.unbundling_allowed = allowed;
        self
    }

    pub fn qos(mut self, class: QosClass) -> OfferTerms {
        self.qos_class = class;
        self
    }

    pub fn hint(mut self, ne_ids: Vec<String>) -> OfferTerms {
        self.path_hint = Some(ne_ids);
        self
    }

    pub fn conditions(&self) -> ConditionExpr {
        let price_attr = if self.unbundling_allowed { "scaled_amount" } else { "amount" };
        let mut tests = vec![
            ConditionExpr::str_eq("app_domain", BANDX_DOMAIN),
            ConditionExpr::str_eq("currency", self.min_price.currency().as_str()),
            ConditionExpr::compare(
                AttrRef::numeric("bandwidth"),
                CmpOp::Le,
                Literal::Str(format!("{}Mbps", self.bandwidth_mbps)),
            ),
            ConditionExpr::str_eq("link_name", &self.link.name()),
            ConditionExpr::compare(
                AttrRef::numeric(price_attr),
                CmpOp::Ge,
                Literal::Num(self.min_price.to_decimal()),
            ),
            ConditionExpr::compare(
                AttrRef::string("date"),
                CmpOp::Lt,
                Literal::Str(self.valid_until.succ().to_string()),
            ),
        ];
        if self.qos_class != QosClass::Reserved {
            tests.push(ConditionExpr::str_eq("qos_class", self.qos_class.as_str()));
        }
        if let Some(hint) = &self.path_hint {
            tests.push(ConditionExpr::str_eq("path_hint", &hint.join(",")));
        }
        ConditionExpr::clause(ConditionExpr::and(tests), true)
    }

    /// Unsigned offer credential; anyone may use it.
    pub fn credential(&self, isp: &PublicKeyId) -> Credential {
        Credential::new(Principal::Key(isp.clone()), PrincipalExpr::Anyone, self.conditions())
    }

    pub fn sign(&self, isp: &SigningKey) -> Result<Credential, CredentialError> {
        self.credential(&isp.public_id()).sign(isp)
    }
}

/// A posted offer: terms derived from, and bound to, a signed credential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offer {
    offer_id: String,
    isp_key: PublicKeyId,
    terms: OfferTerms,
    credential: Credential,
}

impl Offer {
    /// Verifies the signature and derives the terms.
    pub fn from_credential(cred: Credential) -> Result<Offer, MarketError> {
        let isp_key = match cred.authorizer() {
            Principal::Key(k) => k.clone(),
            Principal::Policy => return Err(MarketError::BadSignature),
        };
        match cred.verify_signature() {
            Ok(true) => {}
            _ => return Err(MarketError::BadSignature),
        }
        let terms = derive_terms(cred.conditions())?;
        Ok(Offer {
            offer_id: offer_id(&cred),
            isp_key,
            terms,
            credential: cred,
        })
    }

    pub fn offer_id(&self) -> &str {
        &self.offer_id
    }

    pub fn isp_key(&self) -> &PublicKeyId {
        &self.isp_key
    }

    pub fn terms(&self) -> &OfferTerms {
        &self.terms
    }

    pub fn credential(&self) -> &Credential {
        &self.credential
    }

    pub fn link(&self) -> &Link {
        &self.terms.link
    }

    pub fn bandwidth_mbps(&self) -> u64 {
        self.terms.bandwidth_mbps
    }

    pub fn min_price(&self) -> &Money {
        &self.terms.min_price
    }

    pub fn valid_until(&self) -> Date {
        self.terms.valid_until
    }

    pub fn unbundling_allowed(&self) -> bool {
        self.terms.unbundling_allowed
    }

    pub fn qos_class(&self) -> QosClass {
        self.terms.qos_class
    }

    pub fn path_hint(&self) -> Option<&[String]> {
        self.terms.path_hint.as_deref()
    }

    pub fn currency(&self) -> &Currency {
        self.terms.min_price.currency()
    }

    /// Usable on `day` (the last valid day included).
    pub fn is_valid_on(&self, day: Date) -> bool {
        day <= self.terms.valid_until
    }

    /// `ceil(min_price * purchased / offered)`.
    pub fn prorated_price(&self, purchased_mbps: u64) -> Money {
        prorated_price(self, purchased_mbps)
    }
}

/// First 16 hex digits of SHA-256 over the full credential text.
pub fn offer_id(cred: &Credential) -> String {
    let digest = Sha256::digest(cred.render().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `true` iff the purchase takes the whole offer, or a strict part of an
/// offer that permits un-bundling.
pub fn validate_unbundling(offer: &Offer, purchased_mbps: u64) -> bool {
    purchased_mbps > 0
        && (purchased_mbps == offer.bandwidth_mbps()
            || purchased_mbps < offer.bandwidth_mbps() && offer.unbundling_allowed())
}

pub fn prorated_price(offer: &Offer, purchased_mbps: u64) -> Money {
    offer
        .min_price()
        .scale_ceil(purchased_mbps, offer.bandwidth_mbps())
}

/// `floor(amount * offered / purchased)` in minor units: the quantity the
/// `&scaled_amount` condition of an un-bundled offer is tested against.
pub fn scaled_amount(amount: &Money, offered_mbps: u64, purchased_mbps: u64) -> Money {
    assert!(purchased_mbps > 0, "scaled_amount with zero purchase");
    let scaled = (amount.minor() as i128 * offered_mbps as i128).div_euclid(purchased_mbps as i128);
    Money::from_minor(scaled as i64, amount.currency().clone())
}

fn malformed(msg: impl Into<String>) -> MarketError {
    MarketError::MalformedOffer(msg.into())
}

#[derive(Default)]
struct Fields {
    app_domain: bool,
    currency: Option<String>,
    bandwidth: Option<u64>,
    link: Option<Link>,
    price: Option<(String, bool)>,
    expiry_bound: Option<Date>,
    qos: Option<QosClass>,
    hint: Option<Vec<String>>,
}

fn set_once<T>(slot: &mut Option<T>, value: T, name: &str) -> Result<(), MarketError> {
    if slot.is_some() {
        return Err(malformed(format!("`{name}` constrained twice")));
    }
    *slot = Some(value);
    Ok(())
}

fn derive_terms(conditions: &ConditionExpr) -> Result<OfferTerms, MarketError> {
    let test = match conditions {
        ConditionExpr::Clause { test, result: true } => test.as_ref(),
        _ => return Err(malformed("conditions must be a single `-> \"true\"` clause")),
    };
    let conjuncts: Vec<&ConditionExpr> = match test {
        ConditionExpr::And(children) => children.iter().collect(),
        single => vec![single],
    };

    let mut f = Fields::default();
    for c in conjuncts {
        let ConditionExpr::Compare { attr, op, literal } = c else {
            return Err(malformed("conditions must be a conjunction of comparisons"));
        };
        match (attr.name.as_str(), attr.numeric, op, literal) {
            ("app_domain", false, CmpOp::Eq, Literal::Str(v)) if v == BANDX_DOMAIN => {
                if f.app_domain {
                    return Err(malformed("`app_domain` constrained twice"));
                }
                f.app_domain = true;
            }
            ("currency", false, CmpOp::Eq, Literal::Str(v)) => {
                set_once(&mut f.currency, v.clone(), "currency")?
            }
            ("bandwidth", true, CmpOp::Le, lit) => {
                let text = lit.text();
                let n = numeric_prefix(text)
                    .and_then(|p| p.as_whole())
                    .filter(|n| *n > 0)
                    .filter(|n| {
                        let digits = n.to_string();
                        text == digits || text == format!("{digits}Mbps")
                    })
                    .ok_or_else(|| malformed(format!("bad bandwidth `{text}`")))?;
                set_once(&mut f.bandwidth, n, "bandwidth")?
            }
            ("link_name", false, CmpOp::Eq, Literal::Str(v)) => {
                let link = Link::parse(v).ok_or_else(|| malformed(format!("bad link_name `{v}`")))?;
                set_once(&mut f.link, link, "link_name")?
            }
            ("amount", true, CmpOp::Ge, Literal::Num(v)) => {
                set_once(&mut f.price, (v.clone(), false), "price")?
            }
            ("scaled_amount", true, CmpOp::Ge, Literal::Num(v)) => {
                set_once(&mut f.price, (v.clone(), true), "price")?
            }
            ("date", false, CmpOp::Lt, Literal::Str(v)) => {
                let d: Date = v.parse().map_err(|_| malformed(format!("bad date `{v}`")))?;
                set_once(&mut f.expiry_bound, d, "date")?
            }
            ("qos_class", false, CmpOp::Eq, Literal::Str(v)) => {
                let q = QosClass::parse(v).ok_or_else(|| malformed(format!("bad qos_class `{v}`")))?;
                set_once(&mut f.qos, q, "qos_class")?
            }
            ("path_hint", false, CmpOp::Eq, Literal::Str(v)) => {
                let hops: Vec<String> = v.split(',').map(str::to_string).collect();
                if hops.len() < 2 || hops.iter().any(String::is_empty) {
                    return Err(malformed(format!("bad path_hint `{v}`")));
                }
                set_once(&mut f.hint, hops, "path_hint")?
            }
            _ => {
                return Err(malformed(format!(
                    "unsupported condition on `{}`",
                    attr.name
                )))
            }
        }
    }

    if !f.app_domain {
        return Err(malformed(format!("missing `app_domain == \"{BANDX_DOMAIN}\"`")));
    }
    let currency = f.currency.ok_or_else(|| malformed("missing currency"))?;
    let currency = Currency::new(&currency).map_err(|e| malformed(e.to_string()))?;
    let bandwidth_mbps = f.bandwidth.ok_or_else(|| malformed("missing bandwidth"))?;
    let link = f.link.ok_or_else(|| malformed("missing link_name"))?;
    let (price_text, unbundling_allowed) = f.price.ok_or_else(|| malformed("missing price"))?;
    let min_price = Money::parse_decimal(&price_text, currency).map_err(|e| malformed(e.to_string()))?;
    if !min_price.is_positive() {
        return Err(malformed("price must be positive"));
    }
    let bound = f.expiry_bound.ok_or_else(|| malformed("missing expiry date"))?;
    Ok(OfferTerms {
        link,
        bandwidth_mbps,
        min_price,
        valid_until: bound.pred(),
        unbundling_allowed,
        qos_class: f.qos.unwrap_or(QosClass::Reserved),
        path_hint: f.hint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn terms() -> OfferTerms {
        OfferTerms::new(
            Link::new("Dublin", "NYC"),
            100,
            Money::from_minor(300, Currency::usd()),
            "20031119".parse().unwrap(),
        )
    }

    #[test]
    fn worked_example_offer_derives() {
        let offer = Offer::from_credential(fixtures::worked_example().offer).unwrap();
        assert_eq!(offer.link(), &Link::new("Dublin", "NYC"));
        assert_eq!(offer.bandwidth_mbps(), 50);
        assert_eq!(offer.min_price().minor(), 300);
        assert_eq!(offer.valid_until().to_string(), "20031119");
        assert!(!offer.unbundling_allowed());
        assert_eq!(offer.qos_class(), QosClass::Reserved);
        assert_eq!(offer.offer_id().len(), 16);
    }

    #[test]
    fn terms_round_trip_through_credential() {
        let key = SigningKey::derive("isp");
        let t = terms()
            .unbundled(true)
            .qos(QosClass::PremiumBestEffort)
            .hint(vec!["d1".into(), "n1".into()]);
        let offer = Offer::from_credential(t.sign(&key).unwrap()).unwrap();
        assert_eq!(offer.terms(), &t);
        assert_eq!(offer.isp_key(), &key.public_id());
    }

    #[test]
    fn link_names_split_on_last_hyphen() {
        assert_eq!(Link::parse("Dublin-NYC"), Some(Link::new("Dublin", "NYC")));
        assert_eq!(Link::parse("Rome-East-Paris"), Some(Link::new("Rome-East", "Paris")));
        assert_eq!(Link::parse("Rome"), None);
        assert_eq!(Link::parse("Rome-"), None);
        assert_eq!(Link::parse("A-A"), None);
    }

    #[test]
    fn unbundling_rule() {
        let key = SigningKey::derive("isp");
        let flag = Offer::from_credential(terms().unbundled(true).sign(&key).unwrap()).unwrap();
        let plain = Offer::from_credential(terms().sign(&key).unwrap()).unwrap();
        assert!(validate_unbundling(&flag, 50));
        assert!(!validate_unbundling(&plain, 50));
        assert!(validate_unbundling(&plain, 100));
        assert!(validate_unbundling(&flag, 100));
        assert!(!validate_unbundling(&flag, 101));
        assert!(!validate_unbundling(&flag, 0));
        assert_eq!(flag.prorated_price(50).minor(), 150);
        assert_eq!(flag.prorated_price(33).minor(), 99);
        assert_eq!(flag.prorated_price(1).minor(), 3);
    }

    #[test]
    fn missing_or_extra_conditions_are_malformed() {
        let key = SigningKey::derive("isp");
        let good = terms().conditions();
        let ConditionExpr::Clause { test, .. } = good else { panic!() };
        let ConditionExpr::And(parts) = *test else { panic!() };
        for skip in 0..parts.len() {
            let fewer: Vec<_> = parts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, c)| c.clone())
                .collect();
            let cred = Credential::new(
                Principal::Key(key.public_id()),
                PrincipalExpr::Anyone,
                ConditionExpr::clause(ConditionExpr::and(fewer), true),
            )
            .sign(&key)
            .unwrap();
            assert!(matches!(
                Offer::from_credential(cred),
                Err(MarketError::MalformedOffer(_))
            ));
        }
        let mut more = parts.clone();
        more.push(ConditionExpr::str_eq("latency", "10ms"));
        let cred = Credential::new(
            Principal::Key(key.public_id()),
            PrincipalExpr::Anyone,
            ConditionExpr::clause(ConditionExpr::and(more), true),
        )
        .sign(&key)
        .unwrap();
        assert!(matches!(
            Offer::from_credential(cred),
            Err(MarketError::MalformedOffer(_))
        ));
    }

    #[test]
    fn unsigned_offer_is_rejected() {
        let key = SigningKey::derive("isp");
        let cred = terms().credential(&key.public_id());
        assert_eq!(Offer::from_credential(cred), Err(MarketError::BadSignature));
    }

    #[test]
    fn scaled_amount_matches_prorated_threshold() {
        let usd = Currency::usd();
        for min in 1..60i64 {
            for offered in 1..12u64 {
                for purchased in 1..=offered {
                    let min_price = Money::from_minor(min, usd.clone());
                    let need = min_price.scale_ceil(purchased, offered).minor();
                    for amount in (need - 2).max(0)..need + 2 {
                        let a = Money::from_minor(amount, usd.clone());
                        let scaled = scaled_amount(&a, offered, purchased).minor();
                        assert_eq!(scaled >= min, amount >= need);
                    }
                }
            }
        }
    }
}
