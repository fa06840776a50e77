//! Role state machines behind both transports.
//!
//! Every request gets exactly one reply carrying the request's sequence
//! number. Domain failures reply `ERROR` with `code` and `message`;
//! requests the service cannot interpret reply `PROTOCOL-ERROR`.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use bandx_core::codec::{CodecError, Payload};
use bandx_core::credential::{parse_credential, Credential, PublicKeyId, SigningKey};
use bandx_core::fabric::{Fabric, ReservationRequest, ReservationState};
use bandx_core::market::{ClearingHouse, MarketError, OfferQuery};
use bandx_core::money::{Currency, Money};
use bandx_core::payments::{issue_guarantor_credential, ClearingSettlementCenter, TransactionRecord};
use bandx_core::time::{Date, SimTime};

use crate::envelope::{msg, Envelope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    ClearingHouse,
    Isp,
    Csc,
    Guarantor,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::ClearingHouse, Role::Isp, Role::Csc, Role::Guarantor];

    pub fn name(self) -> &'static str {
        match self {
            Role::ClearingHouse => "clearinghouse",
            Role::Isp => "isp",
            Role::Csc => "csc",
            Role::Guarantor => "guarantor",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Role, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

pub trait Service: Send {
    fn role(&self) -> Role;
    fn handle(&mut self, req: &Envelope) -> Envelope;
    fn as_any(&self) -> &dyn Any;
}

/// Why a request produced no ordinary reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fail {
    Domain { code: String, message: String },
    Protocol(String),
}

impl Fail {
    pub fn domain(code: &str, message: impl fmt::Display) -> Fail {
        Fail::Domain {
            code: code.to_string(),
            message: message.to_string(),
        }
    }
}

impl From<CodecError> for Fail {
    fn from(e: CodecError) -> Fail {
        Fail::Protocol(e.to_string())
    }
}

type Handled = Result<(&'static str, Payload), Fail>;

pub fn protocol_error(role: Role, seq: u64, message: &str) -> Envelope {
    Envelope::new(
        msg::PROTOCOL_ERROR,
        role.name(),
        seq,
        Payload::new().with("code", "ProtocolError").with("message", message),
    )
}

fn finish(role: Role, req: &Envelope, out: Handled) -> Envelope {
    match out {
        Ok((t, p)) => Envelope::new(t, role.name(), req.seq, p),
        Err(Fail::Domain { code, message }) => Envelope::new(
            msg::ERROR,
            role.name(),
            req.seq,
            Payload::new().with("code", code).with("message", message),
        ),
        Err(Fail::Protocol(m)) => protocol_error(role, req.seq, &m),
    }
}

fn unknown(req: &Envelope) -> Fail {
    Fail::Protocol(format!("unknown msg_type `{}`", req.msg_type))
}

fn credential_blob(p: &Payload, name: &str) -> Result<Credential, Fail> {
    let text = p.require_blob(name)?;
    parse_credential(text).map_err(|e| Fail::Protocol(format!("{name}: {e}")))
}

fn key_field(p: &Payload, name: &str) -> Result<PublicKeyId, Fail> {
    let text = p.require(name)?;
    PublicKeyId::parse(text).map_err(|_| Fail::Protocol(format!("bad key in `{name}`")))
}

fn money_fields(p: &Payload, amount: &str) -> Result<Money, Fail> {
    let currency: Currency = p.parse("currency")?;
    let text = p.require(amount)?;
    Money::parse_decimal(text, currency).map_err(|_| Fail::Protocol(format!("bad amount `{text}`")))
}

fn clock_set(p: &Payload, now: &mut SimTime) -> Result<SimTime, Fail> {
    let t: SimTime = p.parse("now")?;
    if t < *now {
        return Err(Fail::domain("ClockRegression", format!("clock is at {now}")));
    }
    *now = t;
    Ok(t)
}

/// Query fields: `from`, `to`, `mbps`, `on`, `currency`, optional `max`.
pub fn query_to_payload(q: &OfferQuery) -> Payload {
    let mut p = Payload::new()
        .with("from", &q.from)
        .with("to", &q.to)
        .with("mbps", q.min_bandwidth_mbps)
        .with("on", q.needed_on)
        .with("currency", &q.currency);
    if let Some(m) = &q.max_total_price {
        p.set("max", m.to_decimal());
    }
    p
}

pub fn query_from_payload(p: &Payload) -> Result<OfferQuery, Fail> {
    let on: Date = p.parse("on")?;
    let currency: Currency = p.parse("currency")?;
    let q = OfferQuery::new(p.require("from")?, p.require("to")?, p.parse("mbps")?, on)
        .map_err(|e| Fail::domain("InvalidQuery", e))?
        .with_currency(currency.clone());
    Ok(match p.get("max") {
        None => q,
        Some(m) => q.with_max_price(
            Money::parse_decimal(m, currency).map_err(|_| Fail::Protocol(format!("bad max `{m}`")))?,
        ),
    })
}

fn market_fail(e: MarketError) -> Fail {
    let code = match e {
        MarketError::BadSignature => "BadSignature",
        MarketError::MalformedOffer(_) => "MalformedOffer",
        MarketError::Expired(_) => "Expired",
        MarketError::NoPath => "NoPath",
        MarketError::InvalidQuery(_) => "InvalidQuery",
        MarketError::Import { .. } => "Import",
    };
    Fail::domain(code, e)
}

pub struct ClearingHouseService {
    house: ClearingHouse,
    now: SimTime,
}

impl ClearingHouseService {
    pub fn new(now: SimTime) -> Self {
        ClearingHouseService {
            house: ClearingHouse::new(),
            now,
        }
    }

    pub fn house(&self) -> &ClearingHouse {
        &self.house
    }

    fn dispatch(&mut self, req: &Envelope) -> Handled {
        let p = &req.payload;
        match req.msg_type.as_str() {
            msg::POST_OFFER => {
                let offer = self
                    .house
                    .post_offer(credential_blob(p, "offer")?, self.now.date())
                    .map_err(market_fail)?;
                Ok((msg::POSTED, Payload::new().with("offer_id", offer.offer_id())))
            }
            msg::QUERY => {
                let q = query_from_payload(p)?;
                let mut out = Payload::new();
                for o in self.house.query_offers(&q) {
                    out.push_blob("offer", o.credential().render());
                }
                Ok((msg::OFFERS, out))
            }
            msg::COMPOSE => {
                let plan = self.house.compose_path(&query_from_payload(p)?).map_err(market_fail)?;
                let mut out = Payload::new()
                    .with("total", plan.total_price.to_decimal())
                    .with("currency", plan.total_price.currency())
                    .with("mbps", plan.purchased_mbps());
                for s in &plan.segments {
                    out.push_blob("offer", s.offer.credential().render());
                }
                Ok((msg::PLAN, out))
            }
            msg::PROBE => Ok((msg::PROBED, Payload::new().with("offers", self.house.len()))),
            msg::CLOCK_SET => {
                let now = clock_set(p, &mut self.now)?;
                let n = self.house.expire_offers(now.date());
                Ok((msg::CLOCK_OK, Payload::new().with("expired", n)))
            }
            msg::REPORT_REQ => {
                let mut text = String::new();
                for o in self.house.offers() {
                    text.push_str(&format!(
                        "offer {} {} {} {}Mbps {} until {}{}\n",
                        o.offer_id(),
                        o.isp_key(),
                        o.link(),
                        o.bandwidth_mbps(),
                        o.min_price(),
                        o.valid_until(),
                        if o.unbundling_allowed() { " unbundled" } else { "" }
                    ));
                }
                Ok((msg::REPORT, Payload::new().with_blob("report", text)))
            }
            _ => Err(unknown(req)),
        }
    }
}

impl Service for ClearingHouseService {
    fn role(&self) -> Role {
        Role::ClearingHouse
    }

    fn handle(&mut self, req: &Envelope) -> Envelope {
        let out = self.dispatch(req);
        finish(self.role(), req, out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct IspService {
    fabric: Fabric,
    now: SimTime,
}

fn fabric_fail(e: bandx_core::fabric::FabricError) -> Fail {
    Fail::domain(e.code(), e)
}

impl IspService {
    pub fn new(fabric: Fabric, now: SimTime) -> Self {
        IspService { fabric, now }
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    fn request(p: &Payload) -> Result<ReservationRequest, Fail> {
        let inner = Payload::decode(p.require_blob("request")?)?;
        Ok(ReservationRequest::from_payload(&inner)?)
    }

    fn dispatch(&mut self, req: &Envelope) -> Handled {
        let p = &req.payload;
        let now = self.now;
        match req.msg_type.as_str() {
            msg::CHALLENGE_REQ => {
                let ne = match p.get("ne") {
                    Some(ne) => ne.to_string(),
                    None => {
                        let key = key_field(p, "isp_key")?;
                        let location = p.require("location")?;
                        let topo = self.fabric.topology();
                        topo.isp_by_key(&key)
                            .and_then(|isp| topo.ne_at(&isp.name, location))
                            .map(|n| n.ne_id.clone())
                            .ok_or_else(|| Fail::domain("UnknownNe", format!("no ne of that isp at {location}")))?
                    }
                };
                let c = self.fabric.issue_challenge(&ne, now).map_err(fabric_fail)?;
                Ok((msg::CHALLENGE_RESP, c.to_payload()))
            }
            msg::RESERVE_SPOT => {
                let request = Self::request(p)?;
                let out = self
                    .fabric
                    .handle_spot_request(p.require("ne")?, &request, now)
                    .map_err(fabric_fail)?;
                let mut reply = Payload::new().with_blob("reservation", out.reservation.to_payload().encode());
                match out.referral {
                    None => Ok((msg::RESERVED, reply)),
                    Some(r) => {
                        reply.push_blob("referral", r.to_payload().encode());
                        Ok((msg::BOUNDARY_REFERRAL, reply))
                    }
                }
            }
            msg::BOOK_FUTURE => {
                let request = Self::request(p)?;
                let out = self
                    .fabric
                    .book_future(p.require("ne")?, &request, now)
                    .map_err(fabric_fail)?;
                let mut reply = Payload::new()
                    .with_blob("reservation", out.reservation.to_payload().encode())
                    .with_blob("credential", out.credential.credential().render());
                match out.referral {
                    None => Ok((msg::BOOKED, reply)),
                    Some(r) => {
                        reply.push_blob("referral", r.to_payload().encode());
                        Ok((msg::BOUNDARY_REFERRAL, reply))
                    }
                }
            }
            msg::ACTIVATE => {
                let cred = credential_blob(p, "credential")?;
                let res = self
                    .fabric
                    .activate_reservation(p.require("ne")?, &cred, now)
                    .map_err(fabric_fail)?;
                Ok((msg::ACTIVATED, Payload::new().with_blob("reservation", res.to_payload().encode())))
            }
            msg::KEEPALIVE => {
                let check = credential_blob(p, "microcheck")?;
                let due = self
                    .fabric
                    .keepalive_payment(p.require("ne")?, p.require("reservation")?, &check, now)
                    .map_err(fabric_fail)?;
                Ok((msg::KEEPALIVE_OK, Payload::new().with("due", due)))
            }
            msg::TEARDOWN_NOTIFY => {
                let res = self
                    .fabric
                    .teardown(p.require("ne")?, p.require("reservation")?)
                    .map_err(fabric_fail)?;
                Ok((msg::TORN_DOWN, Payload::new().with("reservation", res.reservation_id).with("state", res.state)))
            }
            msg::COLLECT => {
                let isp = p.require("isp")?;
                if self.fabric.isp(isp).is_none() {
                    return Err(Fail::domain("UnknownIsp", isp));
                }
                let mut out = Payload::new();
                for r in self.fabric.take_deposits(isp) {
                    out.push_blob("record", r.to_payload().encode());
                }
                Ok((msg::RECORDS, out))
            }
            msg::PROBE => self.probe(p),
            msg::CLOCK_SET => {
                let now = clock_set(p, &mut self.now)?;
                let n = self.fabric.expire_reservations(now);
                Ok((msg::CLOCK_OK, Payload::new().with("expired", n)))
            }
            msg::REPORT_REQ => Ok((msg::REPORT, Payload::new().with_blob("report", self.report()))),
            _ => Err(unknown(req)),
        }
    }

    fn probe(&self, p: &Payload) -> Handled {
        match p.require("kind")? {
            "link" => {
                let (ne, link) = (p.require("ne")?, p.require("link")?);
                let u = self
                    .fabric
                    .link_usage(self.now)
                    .into_iter()
                    .find(|u| u.ne_id == ne && u.link == link)
                    .ok_or_else(|| Fail::domain("UnknownLink", format!("{ne} {link}")))?;
                Ok((msg::PROBED, Payload::new().with("used", u.used_mbps).with("capacity", u.capacity_mbps)))
            }
            "reservation" => {
                let id = p.require("reservation")?;
                let r = self
                    .fabric
                    .reservation(id)
                    .ok_or_else(|| Fail::domain("UnknownReservation", id))?;
                Ok((msg::PROBED, Payload::new().with("state", r.state)))
            }
            "count" => {
                let state: ReservationState = p.parse("state")?;
                let n = self.fabric.reservations().filter(|r| r.state == state).count();
                Ok((msg::PROBED, Payload::new().with("count", n)))
            }
            other => Err(Fail::Protocol(format!("unknown probe `{other}`"))),
        }
    }

    fn report(&self) -> String {
        let mut text = String::new();
        for r in self.fabric.reservations() {
            text.push_str(&format!(
                "reservation {} {} {} {}Mbps {} {} {} links {}\n",
                r.reservation_id,
                r.isp,
                r.state,
                r.bandwidth_mbps,
                r.qos_class,
                r.interval,
                r.customer_key,
                r.links.join(",")
            ));
        }
        for u in self.fabric.link_usage(self.now) {
            text.push_str(&format!("link {} {} {}/{}\n", u.ne_id, u.link, u.used_mbps, u.capacity_mbps));
        }
        for isp in self.fabric.isps() {
            text.push_str(&format!("pending {} {}\n", isp.name(), isp.pending_deposits().len()));
        }
        match self.fabric.audit() {
            Ok(()) => text.push_str("audit ok\n"),
            Err(e) => text.push_str(&format!("audit failed {e}\n")),
        }
        text
    }
}

impl Service for IspService {
    fn role(&self) -> Role {
        Role::Isp
    }

    fn handle(&mut self, req: &Envelope) -> Envelope {
        let out = self.dispatch(req);
        finish(self.role(), req, out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct CscService {
    csc: ClearingSettlementCenter,
    now: SimTime,
}

impl CscService {
    pub fn new(csc: ClearingSettlementCenter, now: SimTime) -> Self {
        CscService { csc, now }
    }

    pub fn csc(&self) -> &ClearingSettlementCenter {
        &self.csc
    }

    fn dispatch(&mut self, req: &Envelope) -> Handled {
        let p = &req.payload;
        match req.msg_type.as_str() {
            msg::DEPOSIT => {
                let mut records = Vec::new();
                for blob in p.blobs_named("record") {
                    records.push(TransactionRecord::from_payload(&Payload::decode(blob)?)?);
                }
                let report = self
                    .csc
                    .deposit_batch(&records)
                    .map_err(|e| Fail::domain("JournalFailure", e))?;
                let mut out = Payload::new()
                    .with("accepted", report.accepted.len())
                    .with("rejected", report.rejected.len());
                for (id, amount) in &report.accepted {
                    out.set(&format!("record.{id}"), format!("accepted {amount}"));
                }
                for (id, reason) in &report.rejected {
                    out.set(&format!("record.{id}"), format!("rejected {}", reason.code()));
                }
                Ok((msg::SETTLED, out))
            }
            msg::PROBE => {
                let key = key_field(p, "principal")?;
                let currency: Currency = p.parse("currency")?;
                let balance = self.csc.account_balance(&key, &currency);
                Ok((msg::PROBED, Payload::new().with("balance", balance.to_decimal())))
            }
            msg::CLOCK_SET => {
                clock_set(p, &mut self.now)?;
                Ok((msg::CLOCK_OK, Payload::new()))
            }
            msg::REPORT_REQ => {
                let mut text = String::new();
                for a in self.csc.accounts() {
                    text.push_str(&format!("balance {} {} {}\n", a.principal, a.role, a.balance));
                }
                for (currency, sum) in self.csc.totals() {
                    text.push_str(&format!("total {currency} {sum}\n"));
                }
                let accepted = self.csc.deposit_log().iter().filter(|o| o.disposition == bandx_core::payments::Disposition::Accepted).count();
                text.push_str(&format!(
                    "deposits {} accepted {}\n",
                    self.csc.deposit_log().len(),
                    accepted
                ));
                Ok((msg::REPORT, Payload::new().with_blob("report", text)))
            }
            _ => Err(unknown(req)),
        }
    }
}

impl Service for CscService {
    fn role(&self) -> Role {
        Role::Csc
    }

    fn handle(&mut self, req: &Envelope) -> Envelope {
        let out = self.dispatch(req);
        finish(self.role(), req, out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Credit institutions issuing credit-worthiness credentials.
pub struct GuarantorService {
    keys: BTreeMap<String, SigningKey>,
    issued: BTreeMap<String, usize>,
    now: SimTime,
}

impl GuarantorService {
    pub fn new(keys: BTreeMap<String, SigningKey>, now: SimTime) -> Self {
        GuarantorService {
            keys,
            issued: BTreeMap::new(),
            now,
        }
    }

    fn dispatch(&mut self, req: &Envelope) -> Handled {
        let p = &req.payload;
        match req.msg_type.as_str() {
            msg::ISSUE_CWC => {
                let name = p.require("guarantor")?;
                let key = self
                    .keys
                    .get(name)
                    .ok_or_else(|| Fail::domain("UnknownGuarantor", name))?;
                let payer = key_field(p, "payer")?;
                let limit = money_fields(p, "limit")?;
                let expiry: Date = p.parse("expiry")?;
                let cwc = issue_guarantor_credential(key, &payer, &limit, expiry, self.now.date())
                    .map_err(|e| Fail::domain("InvalidTerms", e))?;
                *self.issued.entry(name.to_string()).or_default() += 1;
                Ok((msg::CWC, Payload::new().with_blob("guarantor", cwc.credential().render())))
            }
            msg::CLOCK_SET => {
                clock_set(p, &mut self.now)?;
                Ok((msg::CLOCK_OK, Payload::new()))
            }
            msg::REPORT_REQ => {
                let mut text = String::new();
                for name in self.keys.keys() {
                    text.push_str(&format!("issued {name} {}\n", self.issued.get(name).copied().unwrap_or(0)));
                }
                Ok((msg::REPORT, Payload::new().with_blob("report", text)))
            }
            _ => Err(unknown(req)),
        }
    }
}

impl Service for GuarantorService {
    fn role(&self) -> Role {
        Role::Guarantor
    }

    fn handle(&mut self, req: &Envelope) -> Envelope {
        let out = self.dispatch(req);
        finish(self.role(), req, out)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
