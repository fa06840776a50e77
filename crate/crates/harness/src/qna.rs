//! Customer-side negotiation agent.
//!
//! The agent only ever signs requests over credentials it has verified
//! itself, and every check it writes pays exactly the pro-rated offer
//! price.

use bandx_core::codec::{CodecError, Payload};
use bandx_core::credential::{parse_credential, Credential, PublicKeyId, SigningKey};
use bandx_core::fabric::{BoundaryReferral, Challenge, Purpose, Reservation, ReservationCredential, ReservationRequest};
use bandx_core::market::{validate_unbundling, Offer, OfferQuery};
use bandx_core::money::Money;
use bandx_core::payments::{CheckBook, GuarantorCredential};
use bandx_core::time::{Date, Interval, SimTime};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::envelope::{msg, Envelope};
use crate::service::{query_to_payload, Role};
use crate::transport::{Client, TransportError};

#[derive(Debug, Error)]
pub enum QnaError {
    #[error("no guarantor credential held")]
    NoGuarantor,
    #[error("no path: {0}")]
    NoPath(String),
    #[error("{code}: {message}")]
    Refused { code: String, message: String },
    #[error("partial establishment, released {released:?}: {cause}")]
    PartialEstablishment { released: Vec<String>, cause: Box<QnaError> },
    #[error("refusing to sign: {0}")]
    Unverified(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

impl QnaError {
    pub fn code(&self) -> &str {
        match self {
            QnaError::NoGuarantor => "NoGuarantor",
            QnaError::NoPath(_) => "NoPath",
            QnaError::Refused { code, .. } => code,
            QnaError::PartialEstablishment { .. } => "PartialEstablishment",
            QnaError::Unverified(_) => "Unverified",
            QnaError::Protocol(_) => "ProtocolError",
            QnaError::Transport(_) => "TransportError",
        }
    }

    /// True when the failure says nothing about the counterpart's state
    /// and the run cannot meaningfully continue.
    pub fn is_fatal(&self) -> bool {
        matches!(self, QnaError::Protocol(_) | QnaError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldReservation {
    /// NE the reservation was bought at and is managed through.
    pub ne: String,
    pub reservation: Reservation,
}

/// An end-to-end path: one ISP-local reservation per ISP, in path order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Handle {
    pub segments: Vec<HeldReservation>,
}

impl Handle {
    pub fn reservation_ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.reservation.reservation_id.clone()).collect()
    }

    /// One `segment` blob per reservation, in path order.
    pub fn to_payload(&self) -> Payload {
        let mut p = Payload::new();
        for s in &self.segments {
            let seg = Payload::new().with("ne", &s.ne).with_blob("reservation", s.reservation.to_payload().encode());
            p.push_blob("segment", seg.encode());
        }
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Handle, CodecError> {
        let mut segments = Vec::new();
        for text in p.blobs_named("segment") {
            let seg = Payload::decode(text)?;
            let reservation = Reservation::from_payload(&Payload::decode(seg.require_blob("reservation")?)?)?;
            segments.push(HeldReservation {
                ne: seg.require("ne")?.to_string(),
                reservation,
            });
        }
        Ok(Handle { segments })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldCredential {
    pub ne: String,
    pub credential: ReservationCredential,
}

impl HeldCredential {
    /// One `segment` blob per credential, in path order.
    pub fn list_to_payload(creds: &[HeldCredential]) -> Payload {
        let mut p = Payload::new();
        for c in creds {
            let seg = Payload::new().with("ne", &c.ne).with_blob("credential", c.credential.credential().render());
            p.push_blob("segment", seg.encode());
        }
        p
    }

    /// Reads the pinned terms only; signatures are checked on activation.
    pub fn list_from_payload(p: &Payload) -> Result<Vec<HeldCredential>, CodecError> {
        let bad = |e: String| CodecError::BadField {
            field: "credential".into(),
            value: e,
        };
        let mut out = Vec::new();
        for text in p.blobs_named("segment") {
            let seg = Payload::decode(text)?;
            let cred = parse_credential(seg.require_blob("credential")?).map_err(|e| bad(e.to_string()))?;
            out.push(HeldCredential {
                ne: seg.require("ne")?.to_string(),
                credential: ReservationCredential::from_credential(cred).map_err(|e| bad(e.to_string()))?,
            });
        }
        Ok(out)
    }
}

/// Fields of an `ERROR` or `PROTOCOL-ERROR` reply as a typed failure.
fn refusal(reply: &Envelope) -> QnaError {
    let code = reply.payload.get("code").unwrap_or("Unknown").to_string();
    let message = reply.payload.get("message").unwrap_or("").to_string();
    if reply.msg_type == msg::PROTOCOL_ERROR {
        return QnaError::Protocol(message);
    }
    match code.as_str() {
        "NoPath" => QnaError::NoPath(message),
        _ => QnaError::Refused { code, message },
    }
}

fn expect(reply: Envelope, types: &[&str]) -> Result<Envelope, QnaError> {
    if reply.is_error() {
        return Err(refusal(&reply));
    }
    if !types.contains(&reply.msg_type.as_str()) {
        return Err(QnaError::Protocol(format!("unexpected {} reply", reply.msg_type)));
    }
    Ok(reply)
}

fn blob_payload(env: &Envelope, name: &str) -> Result<Payload, QnaError> {
    let text = env.payload.require_blob(name).map_err(|e| QnaError::Protocol(e.to_string()))?;
    Payload::decode(text).map_err(|e| QnaError::Protocol(e.to_string()))
}

fn verified_signature(cred: &Credential) -> bool {
    matches!(cred.verify_signature(), Ok(true))
}

/// Checks a composed plan against the query it answers.
pub fn verify_plan(q: &OfferQuery, offers: &[Offer], total: &Money) -> Result<(), String> {
    let mbps = q.min_bandwidth_mbps;
    let (first, last) = match (offers.first(), offers.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err("empty plan".into()),
    };
    if first.link().from != q.from || last.link().to != q.to {
        return Err("plan does not join the requested endpoints".into());
    }
    let mut sum = Money::zero(q.currency.clone());
    for (i, o) in offers.iter().enumerate() {
        if i > 0 && offers[i - 1].link().to != o.link().from {
            return Err(format!("plan breaks between offers {} and {i}", i - 1));
        }
        if !o.is_valid_on(q.needed_on) {
            return Err(format!("offer {} not valid on {}", o.offer_id(), q.needed_on));
        }
        if o.currency() != &q.currency {
            return Err(format!("offer {} priced in {}", o.offer_id(), o.currency()));
        }
        if !validate_unbundling(o, mbps) {
            return Err(format!("offer {} cannot carry {mbps}Mbps", o.offer_id()));
        }
        sum = sum.checked_add(&o.prorated_price(mbps)).map_err(|e| e.to_string())?;
    }
    if &sum != total {
        return Err(format!("plan total {total} but offers sum to {sum}"));
    }
    if q.max_total_price.as_ref().is_some_and(|max| sum.minor() > max.minor()) {
        return Err("plan exceeds the price limit".into());
    }
    Ok(())
}

enum Target {
    Locate { isp_key: PublicKeyId, location: String },
    Ne(String),
}

struct Established {
    held: HeldReservation,
    credential: Option<ReservationCredential>,
}

pub struct QnaSession {
    book: CheckBook,
    guarantor: Option<GuarantorCredential>,
    offers: Vec<Offer>,
    pending: Vec<Challenge>,
    acquired: Vec<String>,
    rng: ChaCha20Rng,
}

impl QnaSession {
    pub fn new(key: SigningKey, rng: ChaCha20Rng) -> Self {
        QnaSession {
            book: CheckBook::new(key),
            guarantor: None,
            offers: Vec::new(),
            pending: Vec::new(),
            acquired: Vec::new(),
            rng,
        }
    }

    pub fn with_seed(key: SigningKey, seed: u64) -> Self {
        Self::new(key, ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn key(&self) -> PublicKeyId {
        self.book.payer_key()
    }

    fn sender(&self) -> String {
        self.key().to_string()
    }

    pub fn guarantor(&self) -> Option<&GuarantorCredential> {
        self.guarantor.as_ref()
    }

    /// Offers of the last verified plan.
    pub fn collected_offers(&self) -> &[Offer] {
        &self.offers
    }

    /// Challenges received and not yet answered.
    pub fn pending_challenges(&self) -> &[Challenge] {
        &self.pending
    }

    /// Ids of every reservation ever acquired, in order.
    pub fn acquired(&self) -> &[String] {
        &self.acquired
    }

    /// Adopts a guarantor credential after checking it names this agent.
    pub fn adopt_guarantor(&mut self, cred: Credential) -> Result<(), QnaError> {
        if !verified_signature(&cred) {
            return Err(QnaError::Unverified("guarantor credential signature".into()));
        }
        let cwc = GuarantorCredential::from_credential(cred).map_err(|e| QnaError::Unverified(e.to_string()))?;
        if cwc.payer_key() != &self.key() {
            return Err(QnaError::Unverified("guarantor credential names another payer".into()));
        }
        self.guarantor = Some(cwc);
        Ok(())
    }

    /// Asks the named credit institution for a credit-worthiness credential.
    pub fn obtain_guarantor(&mut self, client: &mut Client, guarantor: &str, limit: &Money, expiry: Date) -> Result<(), QnaError> {
        let p = Payload::new()
            .with("guarantor", guarantor)
            .with("payer", self.key())
            .with("limit", limit.to_decimal())
            .with("currency", limit.currency())
            .with("expiry", expiry);
        let reply = expect(client.call(Role::Guarantor, msg::ISSUE_CWC, &self.sender(), p)?, &[msg::CWC])?;
        let text = reply.payload.require_blob("guarantor").map_err(|e| QnaError::Protocol(e.to_string()))?;
        let cred = parse_credential(text).map_err(|e| QnaError::Protocol(e.to_string()))?;
        self.adopt_guarantor(cred)
    }

    fn plan(&mut self, client: &mut Client, q: &OfferQuery) -> Result<Vec<Offer>, QnaError> {
        let reply = expect(client.call(Role::ClearingHouse, msg::COMPOSE, &self.sender(), query_to_payload(q))?, &[msg::PLAN])?;
        let mut offers = Vec::new();
        for text in reply.payload.blobs_named("offer") {
            let cred = parse_credential(text).map_err(|e| QnaError::Protocol(e.to_string()))?;
            offers.push(Offer::from_credential(cred).map_err(|e| QnaError::Unverified(e.to_string()))?);
        }
        let total = reply
            .payload
            .get("total")
            .and_then(|t| Money::parse_decimal(t, q.currency.clone()).ok())
            .ok_or_else(|| QnaError::Protocol("plan lacks a total".into()))?;
        verify_plan(q, &offers, &total).map_err(QnaError::Unverified)?;
        self.offers = offers.clone();
        Ok(offers)
    }

    pub fn purchase_spot(&mut self, client: &mut Client, q: &OfferQuery, now: SimTime) -> Result<Handle, QnaError> {
        let est = self.negotiate(client, q, Purpose::Spot, now)?;
        Ok(Handle {
            segments: est.into_iter().map(|e| e.held).collect(),
        })
    }

    pub fn purchase_future(
        &mut self,
        client: &mut Client,
        q: &OfferQuery,
        interval: Interval,
        now: SimTime,
    ) -> Result<Vec<HeldCredential>, QnaError> {
        let est = self.negotiate(client, q, Purpose::Future(interval), now)?;
        Ok(est
            .into_iter()
            .map(|e| HeldCredential {
                ne: e.held.ne,
                credential: e.credential.expect("futures replies carry a credential"),
            })
            .collect())
    }

    fn negotiate(&mut self, client: &mut Client, q: &OfferQuery, purpose: Purpose, now: SimTime) -> Result<Vec<Established>, QnaError> {
        let guarantor = self.guarantor.clone().ok_or(QnaError::NoGuarantor)?;
        let offers = self.plan(client, q)?;
        let creds: Vec<Credential> = offers.iter().map(|o| o.credential().clone()).collect();
        let mbps = q.min_bandwidth_mbps;
        let mut done: Vec<Established> = Vec::new();
        let mut target = Target::Locate {
            isp_key: offers[0].isp_key().clone(),
            location: offers[0].link().from.clone(),
        };
        let mut start = 0;
        loop {
            let step = self.establish_run(client, &target, &offers, &creds, start, &guarantor, &purpose, mbps, now);
            let (est, referral) = match step {
                Ok(v) => v,
                Err(e) => return Err(self.roll_back(client, done, e)),
            };
            let run_end = start + offers[start..].iter().take_while(|o| o.isp_key() == offers[start].isp_key()).count();
            done.push(est);
            match referral {
                Some(r) if r.next_offer == run_end && run_end < offers.len() => {
                    target = Target::Ne(r.ne_id);
                    start = run_end;
                }
                None if run_end == offers.len() => break,
                _ => {
                    let e = QnaError::Protocol("referral does not continue the plan".into());
                    return Err(self.roll_back(client, done, e));
                }
            }
        }
        self.acquired.extend(done.iter().map(|e| e.held.reservation.reservation_id.clone()));
        Ok(done)
    }

    #[allow(clippy::too_many_arguments)]
    fn establish_run(
        &mut self,
        client: &mut Client,
        target: &Target,
        offers: &[Offer],
        creds: &[Credential],
        start: usize,
        guarantor: &GuarantorCredential,
        purpose: &Purpose,
        mbps: u64,
        now: SimTime,
    ) -> Result<(Established, Option<BoundaryReferral>), QnaError> {
        let ask = match target {
            Target::Locate { isp_key, location } => Payload::new().with("isp_key", isp_key).with("location", location),
            Target::Ne(ne) => Payload::new().with("ne", ne),
        };
        let reply = expect(client.call(Role::Isp, msg::CHALLENGE_REQ, &self.sender(), ask)?, &[msg::CHALLENGE_RESP])?;
        let challenge = Challenge::from_payload(&reply.payload).map_err(|e| QnaError::Protocol(e.to_string()))?;
        if let Target::Ne(ne) = target {
            if &challenge.ne_id != ne {
                return Err(QnaError::Protocol("challenge from the wrong network element".into()));
            }
        }
        self.pending.push(challenge.clone());

        let isp = offers[start].isp_key().clone();
        let mut checks = Vec::new();
        for o in offers[start..].iter().take_while(|o| o.isp_key() == &isp) {
            let nonce = self.book.fresh_nonce(&mut self.rng);
            let check = self
                .book
                .write_check(&isp, &o.prorated_price(mbps), &nonce, now.date())
                .map_err(|e| QnaError::Unverified(e.to_string()))?;
            checks.push(check.credential().clone());
        }
        let req = ReservationRequest::sign(
            self.book.key(),
            &challenge.challenge_id,
            purpose.clone(),
            creds.to_vec(),
            guarantor.credential().clone(),
            checks,
            mbps,
        );
        let (msg_type, ok) = match purpose {
            Purpose::Spot => (msg::RESERVE_SPOT, msg::RESERVED),
            Purpose::Future(_) => (msg::BOOK_FUTURE, msg::BOOKED),
        };
        let p = Payload::new()
            .with("ne", &challenge.ne_id)
            .with_blob("request", req.to_payload().encode());
        let sent = client.call(Role::Isp, msg_type, &self.sender(), p);
        self.pending.retain(|c| c.challenge_id != challenge.challenge_id);
        let reply = expect(sent?, &[ok, msg::BOUNDARY_REFERRAL])?;

        let reservation = Reservation::from_payload(&blob_payload(&reply, "reservation")?)
            .map_err(|e| QnaError::Protocol(e.to_string()))?;
        let referral = match reply.payload.blob("referral") {
            None => None,
            Some(_) => Some(
                BoundaryReferral::from_payload(&blob_payload(&reply, "referral")?)
                    .map_err(|e| QnaError::Protocol(e.to_string()))?,
            ),
        };
        let credential = match purpose {
            Purpose::Spot => None,
            Purpose::Future(_) => {
                let text = reply.payload.require_blob("credential").map_err(|e| QnaError::Protocol(e.to_string()))?;
                let cred = parse_credential(text).map_err(|e| QnaError::Protocol(e.to_string()))?;
                if !verified_signature(&cred) {
                    return Err(QnaError::Protocol("reservation credential signature".into()));
                }
                let rc = ReservationCredential::from_credential(cred).map_err(|e| QnaError::Protocol(e.to_string()))?;
                if rc.isp_key() != &isp || rc.reservation_id() != reservation.reservation_id {
                    return Err(QnaError::Protocol("reservation credential does not match the booking".into()));
                }
                Some(rc)
            }
        };
        let held = HeldReservation {
            ne: challenge.ne_id,
            reservation,
        };
        Ok((Established { held, credential }, referral))
    }

    /// Tears down what was established before `cause`.
    fn roll_back(&mut self, client: &mut Client, done: Vec<Established>, cause: QnaError) -> QnaError {
        if done.is_empty() || cause.is_fatal() {
            return cause;
        }
        let mut released = Vec::new();
        for e in &done {
            if self.release(client, &e.held.ne, &e.held.reservation.reservation_id).is_ok() {
                released.push(e.held.reservation.reservation_id.clone());
            }
        }
        QnaError::PartialEstablishment {
            released,
            cause: Box::new(cause),
        }
    }

    /// Releases one reservation through the NE that manages it.
    pub fn release(&mut self, client: &mut Client, ne: &str, reservation_id: &str) -> Result<(), QnaError> {
        let p = Payload::new().with("ne", ne).with("reservation", reservation_id);
        expect(client.call(Role::Isp, msg::TEARDOWN_NOTIFY, &self.sender(), p)?, &[msg::TORN_DOWN])?;
        Ok(())
    }

    /// Releases every segment of `handle`; returns the released ids.
    pub fn teardown(&mut self, client: &mut Client, handle: &Handle) -> Result<Vec<String>, QnaError> {
        let mut out = Vec::new();
        for seg in &handle.segments {
            self.release(client, &seg.ne, &seg.reservation.reservation_id)?;
            out.push(seg.reservation.reservation_id.clone());
        }
        Ok(out)
    }

    /// Redeems reservation credentials. Signatures and `now` are checked
    /// locally before any is sent; a failure part-way releases the ones
    /// already activated.
    pub fn activate(&mut self, client: &mut Client, creds: &[HeldCredential], now: SimTime) -> Result<Handle, QnaError> {
        for c in creds {
            if !verified_signature(c.credential.credential()) {
                return Err(QnaError::Refused {
                    code: "BadSignature".into(),
                    message: format!("credential for {} does not verify", c.credential.reservation_id()),
                });
            }
            if !c.credential.interval().contains(now) {
                return Err(QnaError::Refused {
                    code: "OutsideInterval".into(),
                    message: format!("{} is outside {}", now, c.credential.interval()),
                });
            }
        }
        let mut done = Vec::new();
        for c in creds {
            let p = Payload::new()
                .with("ne", &c.ne)
                .with_blob("credential", c.credential.credential().render());
            let step = client
                .call(Role::Isp, msg::ACTIVATE, &self.sender(), p)
                .map_err(QnaError::from)
                .and_then(|r| expect(r, &[msg::ACTIVATED]))
                .and_then(|r| {
                    Reservation::from_payload(&blob_payload(&r, "reservation")?).map_err(|e| QnaError::Protocol(e.to_string()))
                });
            match step {
                Ok(reservation) => done.push(Established {
                    held: HeldReservation {
                        ne: c.ne.clone(),
                        reservation,
                    },
                    credential: Some(c.credential.clone()),
                }),
                Err(e) => return Err(self.roll_back(client, done, e)),
            }
        }
        Ok(Handle {
            segments: done.into_iter().map(|e| e.held).collect(),
        })
    }

    /// Pays the next period of every payment-metered segment of `handle`.
    /// Returns how many were paid.
    pub fn keepalive(&mut self, client: &mut Client, handle: &mut Handle, now: SimTime) -> Result<usize, QnaError> {
        let mut paid = 0;
        for seg in &mut handle.segments {
            let res = &seg.reservation;
            let (Some(_), Some(terms)) = (res.next_payment_due, &res.keepalive_offer) else {
                continue;
            };
            let offer = Offer::from_credential(terms.clone()).map_err(|e| QnaError::Unverified(e.to_string()))?;
            let nonce = self.book.fresh_nonce(&mut self.rng);
            let check = self
                .book
                .write_check(offer.isp_key(), &offer.prorated_price(res.bandwidth_mbps), &nonce, now.date())
                .map_err(|e| QnaError::Unverified(e.to_string()))?;
            let p = Payload::new()
                .with("ne", &seg.ne)
                .with("reservation", &res.reservation_id)
                .with_blob("microcheck", check.credential().render());
            let reply = expect(client.call(Role::Isp, msg::KEEPALIVE, &self.sender(), p)?, &[msg::KEEPALIVE_OK])?;
            let due: SimTime = reply.payload.parse("due").map_err(|e| QnaError::Protocol(e.to_string()))?;
            seg.reservation.next_payment_due = Some(due);
            paid += 1;
        }
        Ok(paid)
    }
}
