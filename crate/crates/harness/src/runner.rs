//! Deterministic scenario execution.
//!
//! Events run in file order under the virtual clock. Every request and
//! reply is appended to the transcript; the final-state report is fetched
//! from the services afterwards and is not part of the transcript.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use bandx_core::codec::Payload;
use bandx_core::credential::PublicKeyId;
use bandx_core::market::{Link, OfferQuery, OfferTerms, QosClass};
use bandx_core::time::SimTime;
use thiserror::Error;

use crate::envelope::{msg, Envelope};
use crate::qna::{Handle, HeldCredential, QnaError, QnaSession};
use crate::scenario::{Assertion, Event, EventKind, OfferDecl, PurchaseDecl, Scenario, ScenarioError};
use crate::service::Role;
use crate::transport::{Client, InProcess, Transport, TransportError};
use crate::world::{ConfigError, World};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_PROTOCOL: i32 = 3;

const HARNESS: &str = "harness";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureKind {
    Assertion,
    Protocol,
}

/// Why a run stopped early. `index` is the 0-based event position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFailure {
    pub kind: FailureKind,
    pub index: usize,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            FailureKind::Assertion => "assertion failed",
            FailureKind::Protocol => "protocol error",
        };
        write!(f, "event {} (line {}): {what}: {}", self.index, self.line, self.message)
    }
}

pub struct RunOutcome {
    pub transcript: String,
    pub report: String,
    pub failure: Option<RunFailure>,
    /// Outcome of every purchase-like event by handle: `ok` or an error code.
    pub outcomes: BTreeMap<String, String>,
    pub transport: Box<dyn Transport>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.failure.as_ref().map(|f| &f.kind) {
            None => EXIT_OK,
            Some(FailureKind::Assertion) => EXIT_ASSERTION,
            Some(FailureKind::Protocol) => EXIT_PROTOCOL,
        }
    }

    /// The in-process services, when the run used them.
    pub fn in_process(self) -> Option<InProcess> {
        self.transport.into_any().downcast::<InProcess>().ok().map(|b| *b)
    }
}

enum Held {
    Spot(Handle),
    Future(Vec<HeldCredential>),
}

struct Step {
    kind: FailureKind,
    message: String,
}

impl Step {
    fn assertion(message: impl Into<String>) -> Step {
        Step {
            kind: FailureKind::Assertion,
            message: message.into(),
        }
    }

    fn protocol(message: impl Into<String>) -> Step {
        Step {
            kind: FailureKind::Protocol,
            message: message.into(),
        }
    }
}

impl From<TransportError> for Step {
    fn from(e: TransportError) -> Step {
        Step::protocol(e.to_string())
    }
}

struct Runner<'w> {
    world: &'w World,
    client: Client,
    now: SimTime,
    customers: BTreeMap<String, QnaSession>,
    owners: BTreeMap<String, String>,
    handles: BTreeMap<String, Held>,
    outcomes: BTreeMap<String, String>,
    labels: BTreeMap<PublicKeyId, String>,
}

fn reply_ok(reply: Envelope, want: &str) -> Result<Envelope, Step> {
    if reply.msg_type == want {
        return Ok(reply);
    }
    let detail = reply.payload.get("message").unwrap_or("");
    Err(Step::protocol(format!("expected {want}, got {} {detail}", reply.msg_type)))
}

fn unknown_customer(name: &str) -> Step {
    Step::protocol(format!("unknown customer `{name}`"))
}

fn session_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl<'w> Runner<'w> {
    fn call(&mut self, role: Role, msg_type: &str, sender: &str, payload: Payload) -> Result<Envelope, Step> {
        Ok(self.client.call(role, msg_type, sender, payload)?)
    }

    fn record(&mut self, handle: &str, result: Result<Held, QnaError>) -> Result<(), Step> {
        match result {
            Ok(held) => {
                self.handles.insert(handle.to_string(), held);
                self.outcomes.insert(handle.to_string(), "ok".into());
                Ok(())
            }
            Err(e) if e.is_fatal() => Err(Step::protocol(e.to_string())),
            Err(e) => {
                self.outcomes.insert(handle.to_string(), e.code().to_string());
                Ok(())
            }
        }
    }

    fn query(&self, p: &PurchaseDecl) -> Result<OfferQuery, QnaError> {
        let q = OfferQuery::new(&p.from, &p.to, p.mbps, self.now.date())
            .map_err(|e| QnaError::Refused {
                code: "InvalidQuery".into(),
                message: e.to_string(),
            })?
            .with_currency(p.currency.clone());
        Ok(match &p.max {
            Some(m) => q.with_max_price(m.clone()),
            None => q,
        })
    }

    fn step(&mut self, ev: &Event) -> Result<(), Step> {
        match &ev.kind {
            EventKind::Customer {
                name,
                guarantor,
                limit,
                expiry,
            } => {
                if self.customers.contains_key(name) {
                    return Err(Step::protocol(format!("customer `{name}` declared twice")));
                }
                let key = self.world.customer_key(name);
                self.labels.insert(key.public_id(), name.clone());
                let seed = session_seed(self.world.header.seed, self.customers.len());
                let mut s = QnaSession::with_seed(key, seed);
                let r = s.obtain_guarantor(&mut self.client, guarantor, limit, *expiry);
                self.customers.insert(name.clone(), s);
                self.record(name, r.map(|_| Held::Spot(Handle::default())))?;
                self.handles.remove(name);
                Ok(())
            }
            EventKind::PostOffer(o) => self.post_offer(o),
            EventKind::Advance(secs) => self.set_clock(self.now.plus_secs(*secs)),
            EventKind::AdvanceTo(t) => {
                if *t < self.now {
                    return Err(Step::protocol(format!("clock is already at {}", self.now)));
                }
                self.set_clock(*t)
            }
            EventKind::BuySpot(p) => {
                let now = self.now;
                let r = match self.query(p) {
                    Err(e) => Err(e),
                    Ok(q) => {
                        let s = self.customers.get_mut(&p.customer).ok_or_else(|| unknown_customer(&p.customer))?;
                        s.purchase_spot(&mut self.client, &q, now)
                    }
                };
                self.owners.insert(p.handle.clone(), p.customer.clone());
                self.record(&p.handle, r.map(Held::Spot))
            }
            EventKind::BuyFuture(p, interval) => {
                let now = self.now;
                let r = match self.query(p) {
                    Err(e) => Err(e),
                    Ok(q) => {
                        let s = self.customers.get_mut(&p.customer).ok_or_else(|| unknown_customer(&p.customer))?;
                        s.purchase_future(&mut self.client, &q, *interval, now)
                    }
                };
                self.owners.insert(p.handle.clone(), p.customer.clone());
                self.record(&p.handle, r.map(Held::Future))
            }
            EventKind::Activate(h) => {
                let creds = match self.handles.get(h) {
                    Some(Held::Future(c)) => c.clone(),
                    _ => return Err(Step::protocol(format!("`{h}` holds no reservation credentials"))),
                };
                let r = self.with_owner(h, |s, client, now| s.activate(client, &creds, now))?;
                self.record(h, r.map(Held::Spot))
            }
            EventKind::Keepalive(h) => {
                let mut handle = match self.handles.get(h) {
                    Some(Held::Spot(handle)) => handle.clone(),
                    _ => return Err(Step::protocol(format!("`{h}` holds no established path"))),
                };
                let r = self.with_owner(h, |s, client, now| s.keepalive(client, &mut handle, now))?;
                self.record(h, r.map(|_| Held::Spot(handle)))
            }
            EventKind::Teardown(h) => {
                let targets: Vec<(String, String)> = match self.handles.get(h) {
                    Some(Held::Spot(handle)) => handle
                        .segments
                        .iter()
                        .map(|s| (s.ne.clone(), s.reservation.reservation_id.clone()))
                        .collect(),
                    Some(Held::Future(creds)) => creds
                        .iter()
                        .map(|c| (c.ne.clone(), c.credential.reservation_id().to_string()))
                        .collect(),
                    None => return Err(Step::protocol(format!("unknown handle `{h}`"))),
                };
                let r = self.with_owner(h, |s, client, _| {
                    targets.iter().try_for_each(|(ne, id)| s.release(client, ne, id))
                })?;
                match r {
                    Ok(()) => {
                        self.outcomes.insert(h.clone(), "ok".into());
                        Ok(())
                    }
                    Err(e) => self.record(h, Err(e)),
                }
            }
            EventKind::Deposit => self.deposit(),
            EventKind::Assert(a) => self.check(a),
        }
    }

    fn with_owner<T>(
        &mut self,
        handle: &str,
        f: impl FnOnce(&mut QnaSession, &mut Client, SimTime) -> Result<T, QnaError>,
    ) -> Result<Result<T, QnaError>, Step> {
        let owner = self
            .owners
            .get(handle)
            .cloned()
            .ok_or_else(|| Step::protocol(format!("unknown handle `{handle}`")))?;
        let s = self.customers.get_mut(&owner).ok_or_else(|| unknown_customer(&owner))?;
        Ok(f(s, &mut self.client, self.now))
    }

    fn post_offer(&mut self, o: &OfferDecl) -> Result<(), Step> {
        let key = self
            .world
            .isp_keys
            .get(&o.isp)
            .ok_or_else(|| Step::protocol(format!("unknown isp `{}`", o.isp)))?
            .clone();
        let mut terms = OfferTerms::new(Link::new(&o.from, &o.to), o.mbps, o.price.clone(), o.until).unbundled(o.unbundled);
        if o.premium {
            terms = terms.qos(QosClass::PremiumBestEffort);
        }
        if let Some(h) = &o.hint {
            terms = terms.hint(h.clone());
        }
        let cred = terms.sign(&key).map_err(|e| Step::protocol(e.to_string()))?;
        let reply = self.call(
            Role::ClearingHouse,
            msg::POST_OFFER,
            &key.public_id().to_string(),
            Payload::new().with_blob("offer", cred.render()),
        )?;
        if reply.msg_type == msg::PROTOCOL_ERROR {
            return Err(Step::protocol(reply.payload.get("message").unwrap_or("").to_string()));
        }
        Ok(())
    }

    fn set_clock(&mut self, t: SimTime) -> Result<(), Step> {
        self.now = t;
        for role in Role::ALL {
            let reply = self.call(role, msg::CLOCK_SET, HARNESS, Payload::new().with("now", t))?;
            reply_ok(reply, msg::CLOCK_OK)?;
        }
        Ok(())
    }

    fn deposit(&mut self) -> Result<(), Step> {
        let isps: Vec<(String, String)> = self
            .world
            .isp_keys
            .iter()
            .map(|(n, k)| (n.clone(), k.public_id().to_string()))
            .collect();
        for (name, key) in isps {
            let reply = self.call(Role::Isp, msg::COLLECT, HARNESS, Payload::new().with("isp", &name))?;
            let reply = reply_ok(reply, msg::RECORDS)?;
            if reply.payload.blobs().is_empty() {
                continue;
            }
            let mut batch = Payload::new();
            for r in reply.payload.blobs_named("record") {
                batch.push_blob("record", r);
            }
            let settled = self.call(Role::Csc, msg::DEPOSIT, &key, batch)?;
            reply_ok(settled, msg::SETTLED)?;
        }
        Ok(())
    }

    fn principal(&self, name: &str) -> Result<PublicKeyId, Step> {
        if let Some(s) = self.customers.get(name) {
            return Ok(s.key());
        }
        if name == "csc" {
            return Ok(self.world.csc_key.public_id());
        }
        self.world
            .isp_keys
            .get(name)
            .or_else(|| self.world.guarantor_keys.get(name))
            .map(|k| k.public_id())
            .ok_or_else(|| Step::protocol(format!("unknown principal `{name}`")))
    }

    fn probe(&mut self, role: Role, p: Payload) -> Result<Payload, Step> {
        let reply = self.call(role, msg::PROBE, HARNESS, p)?;
        if reply.msg_type == msg::ERROR {
            return Err(Step::assertion(format!(
                "{}: {}",
                reply.payload.get("code").unwrap_or(""),
                reply.payload.get("message").unwrap_or("")
            )));
        }
        Ok(reply_ok(reply, msg::PROBED)?.payload)
    }

    fn check(&mut self, a: &Assertion) -> Result<(), Step> {
        let field = |p: &Payload, k: &str| p.get(k).unwrap_or("").to_string();
        match a {
            Assertion::Balance { principal, amount } => {
                let key = self.principal(principal)?;
                let p = self.probe(
                    Role::Csc,
                    Payload::new().with("principal", key).with("currency", amount.currency()),
                )?;
                let got = field(&p, "balance");
                if got != amount.to_decimal() {
                    return Err(Step::assertion(format!("balance of {principal} is {got}, expected {}", amount.to_decimal())));
                }
            }
            Assertion::Capacity { ne, link, used_mbps } => {
                let p = self.probe(Role::Isp, Payload::new().with("kind", "link").with("ne", ne).with("link", link))?;
                let got = field(&p, "used");
                if got != used_mbps.to_string() {
                    return Err(Step::assertion(format!("{ne} {link} carries {got}Mbps, expected {used_mbps}")));
                }
            }
            Assertion::State { handle, state } => {
                let ids: Vec<String> = match self.handles.get(handle) {
                    Some(Held::Spot(h)) => h.reservation_ids(),
                    Some(Held::Future(c)) => c.iter().map(|c| c.credential.reservation_id().to_string()).collect(),
                    None => return Err(Step::assertion(format!("`{handle}` holds no reservations"))),
                };
                for id in ids {
                    let p = self.probe(Role::Isp, Payload::new().with("kind", "reservation").with("reservation", &id))?;
                    let got = field(&p, "state");
                    if got != state.as_str() {
                        return Err(Step::assertion(format!("reservation {id} of {handle} is {got}, expected {state}")));
                    }
                }
            }
            Assertion::Count { state, n } => {
                let p = self.probe(Role::Isp, Payload::new().with("kind", "count").with("state", state))?;
                let got = field(&p, "count");
                if got != n.to_string() {
                    return Err(Step::assertion(format!("{got} reservations are {state}, expected {n}")));
                }
            }
            Assertion::Outcome { handle, expect } => {
                let got = self.outcomes.get(handle).map(String::as_str).unwrap_or("none");
                if got != expect {
                    return Err(Step::assertion(format!("`{handle}` ended {got}, expected {expect}")));
                }
            }
            Assertion::Offers(n) => {
                let p = self.probe(Role::ClearingHouse, Payload::new())?;
                let got = field(&p, "offers");
                if got != n.to_string() {
                    return Err(Step::assertion(format!("clearing house holds {got} offers, expected {n}")));
                }
            }
        }
        Ok(())
    }

    fn report(&mut self) -> Result<String, TransportError> {
        let mut out = format!("clock {}\n", self.now);
        for role in Role::ALL {
            let req = Envelope::new(msg::REPORT_REQ, HARNESS, 0, Payload::new());
            let reply = self.client.unrecorded(role, &req)?;
            out.push_str(&format!("[{role}]\n"));
            out.push_str(reply.payload.blob("report").unwrap_or(""));
        }
        let mut labels: Vec<(String, &String)> = self.labels.iter().map(|(k, v)| (k.to_string(), v)).collect();
        labels.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        for (key, label) in labels {
            out = out.replace(&key, label);
        }
        Ok(out)
    }
}

/// Runs `sc` over `transport`, or over fresh in-process services.
pub fn run_scenario(sc: &Scenario, transport: Option<Box<dyn Transport>>) -> Result<RunOutcome, RunError> {
    let world = World::from_scenario(sc)?;
    let transport = match transport {
        Some(t) => t,
        None => Box::new(InProcess::new(world.simulation_services()?)),
    };
    let mut runner = Runner {
        world: &world,
        client: Client::new(transport),
        now: world.clock(),
        customers: BTreeMap::new(),
        owners: BTreeMap::new(),
        handles: BTreeMap::new(),
        outcomes: BTreeMap::new(),
        labels: world.labels(),
    };
    let mut failure = None;
    for (index, ev) in sc.events.iter().enumerate() {
        if let Err(s) = runner.step(ev) {
            failure = Some(RunFailure {
                kind: s.kind,
                index,
                line: ev.line,
                message: s.message,
            });
            break;
        }
    }
    let report = runner.report()?;
    Ok(RunOutcome {
        transcript: runner.client.transcript().to_string(),
        report,
        failure,
        outcomes: runner.outcomes,
        transport: runner.client.into_transport(),
    })
}

pub fn run_file(path: impl AsRef<Path>, transport: Option<Box<dyn Transport>>) -> Result<RunOutcome, RunError> {
    run_scenario(&Scenario::load(path)?, transport)
}
