use std::fmt;
use std::str::FromStr;

use crate::codec::{CodecError, Payload};
use crate::credential::{
    parse_credential, ActionAttributeSet, AttrRef, CmpOp, ConditionExpr, Credential, Literal,
    Principal, PrincipalExpr, PublicKeyId, SigningKey,
};
use crate::market::{QosClass, BANDX_DOMAIN};
use crate::time::{Interval, SimTime};

use super::FabricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReservationState {
    Notional,
    Active,
    Expired,
    Lapsed,
}

impl ReservationState {
    pub fn as_str(self) -> &'static str {
        match self {
            ReservationState::Notional => "notional",
            ReservationState::Active => "active",
            ReservationState::Expired => "expired",
            ReservationState::Lapsed => "lapsed",
        }
    }

    /// Holds capacity (or, for premium best-effort, a table entry).
    pub fn is_live(self) -> bool {
        matches!(self, ReservationState::Notional | ReservationState::Active)
    }
}

impl fmt::Display for ReservationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReservationState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "notional" => ReservationState::Notional,
            "active" => ReservationState::Active,
            "expired" => ReservationState::Expired,
            "lapsed" => ReservationState::Lapsed,
            _ => return Err(format!("unknown reservation state `{s}`")),
        })
    }
}

/// Capacity held inside one ISP for one customer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reservation {
    pub reservation_id: String,
    pub isp: String,
    pub state: ReservationState,
    /// `(ne_id, link_name)` in path order; each link is owned by its NE.
    pub segments: Vec<(String, String)>,
    /// Offer link names this reservation carries, in order.
    pub links: Vec<String>,
    pub offer_ids: Vec<String>,
    pub bandwidth_mbps: u64,
    pub interval: Interval,
    pub customer_key: PublicKeyId,
    pub qos_class: QosClass,
    /// Reporting only; set for premium best-effort service.
    pub scheduling_weight: Option<u64>,
    pub next_payment_due: Option<SimTime>,
    /// ISP-signed terms that keepalive checks are verified against.
    pub keepalive_offer: Option<Credential>,
}

impl Reservation {
    pub fn ingress_ne(&self) -> Option<&str> {
        self.segments.first().map(|(ne, _)| ne.as_str())
    }

    /// Whether capacity is charged on the segments.
    pub fn charges_capacity(&self) -> bool {
        self.qos_class == QosClass::Reserved
    }

    pub fn to_payload(&self) -> Payload {
        let mut p = Payload::new()
            .with("id", &self.reservation_id)
            .with("isp", &self.isp)
            .with("state", self.state)
            .with("segments", self.segments.iter().map(|(n, l)| format!("{n}:{l}")).collect::<Vec<_>>().join(","))
            .with("links", self.links.join(","))
            .with("offers", self.offer_ids.join(","))
            .with("bandwidth", self.bandwidth_mbps)
            .with("start", self.interval.start)
            .with("end", self.interval.end)
            .with("customer", &self.customer_key)
            .with("qos", self.qos_class);
        if let Some(w) = self.scheduling_weight {
            p.set("weight", w);
        }
        if let Some(d) = self.next_payment_due {
            p.set("due", d);
        }
        if let Some(k) = &self.keepalive_offer {
            p.push_blob("keepalive_offer", k.render());
        }
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Reservation, CodecError> {
        let bad = |f: &str, v: &str| CodecError::BadField {
            field: f.to_string(),
            value: v.to_string(),
        };
        let list = |f: &str| -> Result<Vec<String>, CodecError> {
            let t = p.require(f)?;
            Ok(if t.is_empty() { Vec::new() } else { t.split(',').map(str::to_string).collect() })
        };
        let segments = list("segments")?
            .into_iter()
            .map(|s| match s.split_once(':') {
                Some((n, l)) => Ok((n.to_string(), l.to_string())),
                None => Err(bad("segments", &s)),
            })
            .collect::<Result<_, _>>()?;
        let state_text = p.require("state")?;
        let qos_text = p.require("qos")?;
        let customer = p.require("customer")?;
        let interval = Interval::new(p.parse("start")?, p.parse("end")?).ok_or_else(|| bad("end", "empty interval"))?;
        Ok(Reservation {
            reservation_id: p.require("id")?.to_string(),
            isp: p.require("isp")?.to_string(),
            state: state_text.parse().map_err(|_| bad("state", state_text))?,
            segments,
            links: list("links")?,
            offer_ids: list("offers")?,
            bandwidth_mbps: p.parse("bandwidth")?,
            interval,
            customer_key: PublicKeyId::parse(customer).map_err(|_| bad("customer", customer))?,
            qos_class: QosClass::parse(qos_text).ok_or_else(|| bad("qos", qos_text))?,
            scheduling_weight: p.parse_opt("weight")?,
            next_payment_due: p.parse_opt("due")?,
            keepalive_offer: p
                .blob("keepalive_offer")
                .map(|t| parse_credential(t).map_err(|e| bad("keepalive_offer", &e.to_string())))
                .transpose()?,
        })
    }
}

/// ISP-signed promise of a future reservation, redeemed alone at
/// activation. Conditions pin the reservation id, links, bandwidth and
/// `start <= time < end`; the credential expires with the reservation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationCredential {
    credential: Credential,
    reservation_id: String,
    isp_key: PublicKeyId,
    customer_key: PublicKeyId,
    links: Vec<String>,
    bandwidth_mbps: u64,
    interval: Interval,
}

impl ReservationCredential {
    pub fn issue(isp: &SigningKey, res: &Reservation) -> Result<ReservationCredential, FabricError> {
        let conditions = ConditionExpr::clause(
            ConditionExpr::and(vec![
                ConditionExpr::str_eq("app_domain", BANDX_DOMAIN),
                ConditionExpr::str_eq("reservation_id", &res.reservation_id),
                ConditionExpr::str_eq("link_name", &res.links.join(",")),
                ConditionExpr::str_eq("bandwidth", &res.bandwidth_mbps.to_string()),
                ConditionExpr::compare(AttrRef::string("time"), CmpOp::Ge, Literal::Str(res.interval.start.to_string())),
                ConditionExpr::compare(AttrRef::string("time"), CmpOp::Lt, Literal::Str(res.interval.end.to_string())),
            ]),
            true,
        );
        let cred = Credential::new(
            Principal::Key(isp.public_id()),
            PrincipalExpr::Key(res.customer_key.clone()),
            conditions,
        )
        .sign(isp)
        .map_err(|e| FabricError::MalformedRequest(e.to_string()))?;
        ReservationCredential::from_credential(cred)
    }

    /// Reads the pinned terms. Does not check the signature.
    pub fn from_credential(cred: Credential) -> Result<ReservationCredential, FabricError> {
        let bad = |m: &str| FabricError::MalformedRequest(format!("reservation credential: {m}"));
        let isp_key = cred.authorizer_key().cloned().ok_or_else(|| bad("POLICY authorizer"))?;
        let customer_key = cred.licensees().single_key().cloned().ok_or_else(|| bad("licensee must be one key"))?;
        let c = cred.conditions();
        let text = |name: &str, op: CmpOp| match c.find_comparison(name, op) {
            Some((a, Literal::Str(s))) if !a.numeric => Some(s.clone()),
            _ => None,
        };
        if text("app_domain", CmpOp::Eq).as_deref() != Some(BANDX_DOMAIN) {
            return Err(bad("missing app_domain"));
        }
        let reservation_id = text("reservation_id", CmpOp::Eq).ok_or_else(|| bad("missing reservation_id"))?;
        let links = text("link_name", CmpOp::Eq)
            .ok_or_else(|| bad("missing link_name"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let bandwidth_mbps = text("bandwidth", CmpOp::Eq)
            .and_then(|b| b.parse().ok())
            .ok_or_else(|| bad("missing bandwidth"))?;
        let start: SimTime = text("time", CmpOp::Ge)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing start"))?;
        let end: SimTime = text("time", CmpOp::Lt)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("missing end"))?;
        let interval = Interval::new(start, end).ok_or_else(|| bad("empty interval"))?;
        Ok(ReservationCredential {
            credential: cred,
            reservation_id,
            isp_key,
            customer_key,
            links,
            bandwidth_mbps,
            interval,
        })
    }

    /// Action under which the credential's conditions are evaluated at
    /// activation time.
    pub fn activation_action(&self, now: SimTime) -> ActionAttributeSet {
        ActionAttributeSet::new(BANDX_DOMAIN)
            .with("reservation_id", &self.reservation_id)
            .with("link_name", self.links.join(","))
            .with("bandwidth", self.bandwidth_mbps.to_string())
            .with("time", now.to_string())
    }

    pub fn credential(&self) -> &Credential {
        &self.credential
    }

    pub fn reservation_id(&self) -> &str {
        &self.reservation_id
    }

    pub fn isp_key(&self) -> &PublicKeyId {
        &self.isp_key
    }

    pub fn customer_key(&self) -> &PublicKeyId {
        &self.customer_key
    }

    pub fn links(&self) -> &[String] {
        &self.links
    }

    pub fn bandwidth_mbps(&self) -> u64 {
        self.bandwidth_mbps
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// Equals the end of the reserved period.
    pub fn expiry(&self) -> SimTime {
        self.interval.end
    }
}

/// Points the customer at the next ISP's ingress NE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryReferral {
    pub next_isp: String,
    pub ne_id: String,
    pub location: String,
    /// Index into the request's offers where the next ISP's run starts.
    pub next_offer: usize,
}

impl BoundaryReferral {
    pub fn to_payload(&self) -> Payload {
        Payload::new()
            .with("next_isp", &self.next_isp)
            .with("ne", &self.ne_id)
            .with("location", &self.location)
            .with("next_offer", self.next_offer)
    }

    pub fn from_payload(p: &Payload) -> Result<BoundaryReferral, CodecError> {
        Ok(BoundaryReferral {
            next_isp: p.require("next_isp")?.to_string(),
            ne_id: p.require("ne")?.to_string(),
            location: p.require("location")?.to_string(),
            next_offer: p.parse("next_offer")?,
        })
    }
}
