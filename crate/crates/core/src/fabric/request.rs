//! Challenges and the signed reservation request that answers them.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::RngCore;

use crate::codec::{CodecError, Payload};
use crate::credential::{parse_credential, Credential, PublicKeyId, SigningKey};
use crate::time::{Interval, SimTime};

pub const DEFAULT_CHALLENGE_TTL_SECS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    /// 16 random bytes as lowercase hex.
    pub challenge_id: String,
    pub ne_id: String,
    pub issued_at: SimTime,
    pub ttl_seconds: i64,
}

impl Challenge {
    pub fn fresh<R: RngCore + ?Sized>(rng: &mut R, ne_id: &str, now: SimTime, ttl_seconds: i64) -> Challenge {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Challenge {
            challenge_id: bytes.iter().map(|b| format!("{b:02x}")).collect(),
            ne_id: ne_id.to_string(),
            issued_at: now,
            ttl_seconds,
        }
    }

    /// Redeemable strictly before `issued_at + ttl`.
    pub fn is_live(&self, now: SimTime) -> bool {
        now >= self.issued_at && now < self.issued_at.plus_secs(self.ttl_seconds)
    }

    pub fn to_payload(&self) -> Payload {
        Payload::new()
            .with("challenge_id", &self.challenge_id)
            .with("ne", &self.ne_id)
            .with("issued_at", self.issued_at)
            .with("ttl", self.ttl_seconds)
    }

    pub fn from_payload(p: &Payload) -> Result<Challenge, CodecError> {
        Ok(Challenge {
            challenge_id: p.require("challenge_id")?.to_string(),
            ne_id: p.require("ne")?.to_string(),
            issued_at: p.parse("issued_at")?,
            ttl_seconds: p.parse("ttl")?,
        })
    }
}

/// What the customer is buying with a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Spot,
    Future(Interval),
}

impl Purpose {
    fn text(&self) -> String {
        match self {
            Purpose::Spot => "spot".to_string(),
            Purpose::Future(i) => format!("future {} {}", i.start, i.end),
        }
    }

    fn parse(text: &str) -> Option<Purpose> {
        match text.split(' ').collect::<Vec<_>>()[..] {
            ["spot"] => Some(Purpose::Spot),
            ["future", s, e] => Interval::new(s.parse().ok()?, e.parse().ok()?).map(Purpose::Future),
            _ => None,
        }
    }
}

/// Customer's signed answer to a challenge. `offers` is the whole
/// composed path in order; `microchecks` pay only the receiving ISP's run
/// of it, one check per offer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationRequest {
    pub challenge_id: String,
    pub purpose: Purpose,
    pub offers: Vec<Credential>,
    pub guarantor: Credential,
    pub microchecks: Vec<Credential>,
    pub bandwidth_mbps: u64,
    pub customer_key: PublicKeyId,
    pub signature: Vec<u8>,
}

fn put(out: &mut Vec<u8>, tag: &str, bytes: &[u8]) {
    out.extend_from_slice(format!("{tag} {}\n", bytes.len()).as_bytes());
    out.extend_from_slice(bytes);
    out.push(b'\n');
}

impl ReservationRequest {
    #[allow(clippy::too_many_arguments)]
    pub fn sign(
        customer: &SigningKey,
        challenge_id: &str,
        purpose: Purpose,
        offers: Vec<Credential>,
        guarantor: Credential,
        microchecks: Vec<Credential>,
        bandwidth_mbps: u64,
    ) -> ReservationRequest {
        let mut req = ReservationRequest {
            challenge_id: challenge_id.to_string(),
            purpose,
            offers,
            guarantor,
            microchecks,
            bandwidth_mbps,
            customer_key: customer.public_id(),
            signature: Vec::new(),
        };
        req.signature = customer.sign_bytes(&req.signed_bytes());
        req
    }

    /// Bytes covered by the signature: challenge, purpose, bandwidth,
    /// customer and every enclosed credential in canonical form, each
    /// length-prefixed.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = b"BXRQ1\n".to_vec();
        put(&mut out, "challenge", self.challenge_id.as_bytes());
        put(&mut out, "purpose", self.purpose.text().as_bytes());
        put(&mut out, "bandwidth", self.bandwidth_mbps.to_string().as_bytes());
        put(&mut out, "customer", self.customer_key.to_string().as_bytes());
        for o in &self.offers {
            put(&mut out, "offer", &o.canonical_bytes());
        }
        put(&mut out, "guarantor", &self.guarantor.canonical_bytes());
        for c in &self.microchecks {
            put(&mut out, "microcheck", &c.canonical_bytes());
        }
        out
    }

    pub fn to_payload(&self) -> Payload {
        let mut p = Payload::new()
            .with("challenge_id", &self.challenge_id)
            .with("purpose", self.purpose.text())
            .with("bandwidth", self.bandwidth_mbps)
            .with("customer", &self.customer_key)
            .with("signature", B64.encode(&self.signature));
        for o in &self.offers {
            p.push_blob("offer", o.render());
        }
        p.push_blob("guarantor", self.guarantor.render());
        for c in &self.microchecks {
            p.push_blob("microcheck", c.render());
        }
        p
    }

    pub fn from_payload(p: &Payload) -> Result<ReservationRequest, CodecError> {
        let bad = |f: &str, v: &str| CodecError::BadField {
            field: f.to_string(),
            value: v.to_string(),
        };
        let creds = |name: &str| -> Result<Vec<Credential>, CodecError> {
            p.blobs_named(name)
                .map(|t| parse_credential(t).map_err(|e| bad(name, &e.to_string())))
                .collect()
        };
        let purpose_text = p.require("purpose")?;
        let customer = p.require("customer")?;
        let sig = p.require("signature")?;
        Ok(ReservationRequest {
            challenge_id: p.require("challenge_id")?.to_string(),
            purpose: Purpose::parse(purpose_text).ok_or_else(|| bad("purpose", purpose_text))?,
            offers: creds("offer")?,
            guarantor: parse_credential(p.require_blob("guarantor")?)
                .map_err(|e| bad("guarantor", &e.to_string()))?,
            microchecks: creds("microcheck")?,
            bandwidth_mbps: p.parse("bandwidth")?,
            customer_key: PublicKeyId::parse(customer).map_err(|_| bad("customer", customer))?,
            signature: B64.decode(sig).map_err(|_| bad("signature", sig))?,
        })
    }
}
