use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use crate::credential::{parse_credentials, Credential, ParseMode};
use crate::time::Date;

use super::offer::Offer;
use super::path::{compose_path, PathPlan};
use super::{Link, MarketError, OfferQuery};

#[derive(Debug, Default)]
struct Store {
    offers: BTreeMap<String, Offer>,
    by_link: BTreeMap<Link, BTreeSet<String>>,
}

impl Store {
    fn insert(&mut self, offer: Offer) -> Offer {
        if let Some(existing) = self.offers.get(offer.offer_id()) {
            return existing.clone();
        }
        self.by_link
            .entry(offer.link().clone())
            .or_default()
            .insert(offer.offer_id().to_string());
        self.offers.insert(offer.offer_id().to_string(), offer.clone());
        offer
    }
}

/// Offer repository. Never signs and never holds money.
///
/// Readers run concurrently; each write takes the lock once, so a query
/// never observes a half-posted offer or half-finished import.
#[derive(Debug, Default)]
pub struct ClearingHouse {
    store: RwLock<Store>,
}

impl ClearingHouse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a signed offer. Posting an identical credential again
    /// returns the stored offer unchanged.
    pub fn post_offer(&self, cred: Credential, today: Date) -> Result<Offer, MarketError> {
        let offer = admit(cred, today)?;
        Ok(self.store.write().expect("store lock").insert(offer))
    }

    /// Unexpired offers on the requested endpoints with enough bandwidth,
    /// cheapest first, ties broken by offer id.
    pub fn query_offers(&self, q: &OfferQuery) -> Vec<Offer> {
        let store = self.store.read().expect("store lock");
        let link = Link::new(&q.from, &q.to);
        let mut hits: Vec<Offer> = store
            .by_link
            .get(&link)
            .into_iter()
            .flatten()
            .map(|id| &store.offers[id])
            .filter(|o| {
                o.currency() == &q.currency
                    && o.is_valid_on(q.needed_on)
                    && o.bandwidth_mbps() >= q.min_bandwidth_mbps
                    && q.max_total_price
                        .as_ref()
                        .is_none_or(|max| o.prorated_price(q.min_bandwidth_mbps).minor() <= max.minor())
                    && matches!(o.credential().verify_signature(), Ok(true))
            })
            .cloned()
            .collect();
        hits.sort_by(|a, b| {
            a.min_price()
                .minor()
                .cmp(&b.min_price().minor())
                .then_with(|| a.offer_id().cmp(b.offer_id()))
        });
        hits
    }

    /// Drops offers whose last valid day is before `now`.
    pub fn expire_offers(&self, now: Date) -> usize {
        let mut store = self.store.write().expect("store lock");
        let dead: Vec<(String, Link)> = store
            .offers
            .values()
            .filter(|o| o.valid_until() < now)
            .map(|o| (o.offer_id().to_string(), o.link().clone()))
            .collect();
        for (id, link) in &dead {
            store.offers.remove(id);
            if let Some(ids) = store.by_link.get_mut(link) {
                ids.remove(id);
                if ids.is_empty() {
                    store.by_link.remove(link);
                }
            }
        }
        dead.len()
    }

    pub fn compose_path(&self, q: &OfferQuery) -> Result<PathPlan, MarketError> {
        let snapshot = self.offers();
        compose_path(&snapshot, q)
    }

    pub fn get(&self, offer_id: &str) -> Option<Offer> {
        self.store.read().expect("store lock").offers.get(offer_id).cloned()
    }

    /// Every stored offer in offer-id order.
    pub fn offers(&self) -> Vec<Offer> {
        self.store.read().expect("store lock").offers.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.store.read().expect("store lock").offers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored credentials as text blocks separated by empty lines, in
    /// offer-id order.
    pub fn export(&self) -> String {
        self.store
            .read()
            .expect("store lock")
            .offers
            .values()
            .map(|o| o.credential().render())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Posts every block of an export. All-or-nothing: any bad block
    /// leaves the store untouched. Returns how many offers were new.
    pub fn import(&self, text: &str, today: Date) -> Result<usize, MarketError> {
        let creds = parse_credentials(text, ParseMode::Checked).map_err(|e| MarketError::Import {
            index: 0,
            reason: e.to_string(),
        })?;
        let offers = creds
            .into_iter()
            .enumerate()
            .map(|(index, c)| {
                admit(c, today).map_err(|e| MarketError::Import {
                    index,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut store = self.store.write().expect("store lock");
        let before = store.offers.len();
        for o in offers {
            store.insert(o);
        }
        Ok(store.offers.len() - before)
    }
}

fn admit(cred: Credential, today: Date) -> Result<Offer, MarketError> {
    let offer = Offer::from_credential(cred)?;
    if offer.valid_until() < today {
        return Err(MarketError::Expired(offer.valid_until()));
    }
    Ok(offer)
}
