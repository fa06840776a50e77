//! Network element state machine.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use crate::credential::PublicKeyId;
use crate::time::{Interval, SimTime};

use super::calendar::LinkCalendar;
use super::request::Challenge;
use super::reservation::ReservationState;
use super::FabricError;

/// Messages exchanged between NEs of one ISP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeMessage {
    /// Record `res_id` on `link`, charging capacity when `charge` is set.
    Install {
        res_id: String,
        link: String,
        interval: Interval,
        mbps: u64,
        charge: bool,
        state: ReservationState,
    },
    /// Turn a committed booking into an installed path; never charges.
    Activate { res_id: String },
    Release { res_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeReply {
    Done,
    Refused { ne_id: String, link: String },
}

/// A reservation as one NE sees it: the link it carries it on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeEntry {
    pub link: String,
    pub state: ReservationState,
    pub mbps: u64,
    pub interval: Interval,
    pub charged: bool,
}

#[derive(Debug, Clone)]
pub struct NetworkElement {
    ne_id: String,
    isp: String,
    isp_key: PublicKeyId,
    location: String,
    links: Vec<(String, String, u64)>,
    calendars: BTreeMap<String, LinkCalendar>,
    table: BTreeMap<String, NeEntry>,
    challenges: BTreeMap<String, Challenge>,
    redeemed: BTreeSet<String>,
    challenge_ttl: i64,
}

impl NetworkElement {
    pub fn new(
        ne_id: &str,
        isp: &str,
        isp_key: PublicKeyId,
        location: &str,
        links: Vec<(String, String, u64)>,
        challenge_ttl: i64,
    ) -> NetworkElement {
        let calendars = links.iter().map(|(_, l, c)| (l.clone(), LinkCalendar::new(*c))).collect();
        NetworkElement {
            ne_id: ne_id.to_string(),
            isp: isp.to_string(),
            isp_key,
            location: location.to_string(),
            links,
            calendars,
            table: BTreeMap::new(),
            challenges: BTreeMap::new(),
            redeemed: BTreeSet::new(),
            challenge_ttl,
        }
    }

    pub fn ne_id(&self) -> &str {
        &self.ne_id
    }

    pub fn isp(&self) -> &str {
        &self.isp
    }

    pub fn isp_key(&self) -> &PublicKeyId {
        &self.isp_key
    }

    pub fn location(&self) -> &str {
        &self.location
    }

    /// `(neighbor, link_name, capacity_mbps)` per outgoing direction.
    pub fn links(&self) -> &[(String, String, u64)] {
        &self.links
    }

    pub fn calendar(&self, link: &str) -> Option<&LinkCalendar> {
        self.calendars.get(link)
    }

    pub fn calendars(&self) -> &BTreeMap<String, LinkCalendar> {
        &self.calendars
    }

    pub fn table(&self) -> &BTreeMap<String, NeEntry> {
        &self.table
    }

    pub fn active_reservations(&self) -> impl Iterator<Item = (&String, &NeEntry)> {
        self.table.iter().filter(|(_, e)| e.state == ReservationState::Active)
    }

    pub fn issue_challenge<R: RngCore + ?Sized>(&mut self, rng: &mut R, now: SimTime) -> Challenge {
        loop {
            let c = Challenge::fresh(rng, &self.ne_id, now, self.challenge_ttl);
            if !self.challenges.contains_key(&c.challenge_id) && !self.redeemed.contains(&c.challenge_id) {
                self.challenges.insert(c.challenge_id.clone(), c.clone());
                return c;
            }
        }
    }

    /// Checks that `id` may be redeemed now, without consuming it.
    pub fn check_challenge(&self, id: &str, now: SimTime) -> Result<(), FabricError> {
        if self.redeemed.contains(id) {
            return Err(FabricError::ReplayedChallenge);
        }
        let c = self.challenges.get(id).ok_or(FabricError::UnknownChallenge)?;
        if !c.is_live(now) {
            return Err(FabricError::ExpiredChallenge);
        }
        Ok(())
    }

    pub fn consume_challenge(&mut self, id: &str) {
        let removed = self.challenges.remove(id);
        assert!(removed.is_some(), "consuming an unchecked challenge");
        self.redeemed.insert(id.to_string());
    }

    /// Drops unredeemed challenges that can no longer be used.
    pub fn prune_challenges(&mut self, now: SimTime) {
        self.challenges.retain(|_, c| now < c.issued_at.plus_secs(c.ttl_seconds));
    }

    pub fn handle(&mut self, msg: NeMessage) -> NeReply {
        match msg {
            NeMessage::Install {
                res_id,
                link,
                interval,
                mbps,
                charge,
                state,
            } => {
                assert!(!self.table.contains_key(&res_id), "reservation installed twice on {}", self.ne_id);
                let cal = self
                    .calendars
                    .get_mut(&link)
                    .unwrap_or_else(|| panic!("{} does not own link {link}", self.ne_id));
                if charge && !cal.admit(&res_id, interval, mbps) {
                    return NeReply::Refused {
                        ne_id: self.ne_id.clone(),
                        link,
                    };
                }
                self.table.insert(
                    res_id,
                    NeEntry {
                        link,
                        state,
                        mbps,
                        interval,
                        charged: charge,
                    },
                );
                NeReply::Done
            }
            NeMessage::Activate { res_id } => {
                let e = self
                    .table
                    .get_mut(&res_id)
                    .unwrap_or_else(|| panic!("activating unknown booking on {}", self.ne_id));
                assert_eq!(e.state, ReservationState::Notional);
                e.state = ReservationState::Active;
                NeReply::Done
            }
            NeMessage::Release { res_id } => {
                if let Some(e) = self.table.remove(&res_id) {
                    if let Some(cal) = self.calendars.get_mut(&e.link) {
                        cal.release(&res_id);
                    }
                }
                NeReply::Done
            }
        }
    }
}
