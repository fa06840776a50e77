use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::codec::{CodecError, Payload};
use crate::credential::{
    check_compliance, parse_credential, ActionAttributeSet, ComplianceError, ConditionExpr,
    Credential, Principal, PrincipalExpr, PublicKeyId,
};
use crate::market::{scaled_amount, Offer, QosClass, BANDX_DOMAIN};
use crate::time::Date;

use super::instruments::Microcheck;

/// Guarantor keys a merchant or the settlement center accepts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuarantorRegistry {
    trusted: BTreeSet<PublicKeyId>,
}

impl GuarantorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: PublicKeyId) -> Self {
        self.trusted.insert(key);
        self
    }

    pub fn add(&mut self, key: PublicKeyId) {
        self.trusted.insert(key);
    }

    pub fn contains(&self, key: &PublicKeyId) -> bool {
        self.trusted.contains(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &PublicKeyId> {
        self.trusted.iter()
    }

    /// `POLICY` licensing `(G1 || G2 || ...) && MERCHANT` for the exchange
    /// domain. An empty registry yields a policy that admits nothing.
    pub fn merchant_policy(&self, merchant: &PublicKeyId) -> Credential {
        let guarantors = PrincipalExpr::or(self.trusted.iter().cloned().map(PrincipalExpr::Key).collect());
        let test = if self.trusted.is_empty() {
            ConditionExpr::Const(false)
        } else {
            ConditionExpr::str_eq("app_domain", BANDX_DOMAIN)
        };
        Credential::new(
            Principal::Policy,
            PrincipalExpr::and(vec![guarantors, PrincipalExpr::Key(merchant.clone())]),
            ConditionExpr::clause(test, true),
        )
    }
}

/// Action the merchant evaluates for one purchase: the check's pinned
/// values, the offer's link and QoS attributes, the purchased bandwidth,
/// and the transaction date.
pub fn payment_action(offer: &Offer, check: &Microcheck, purchased_mbps: u64, today: Date) -> ActionAttributeSet {
    let amount = check.amount();
    let mut a = ActionAttributeSet::new(BANDX_DOMAIN)
        .with("currency", amount.currency().as_str())
        .with("amount", amount.to_decimal())
        .with("nonce", check.nonce())
        .with("date", today.to_string())
        .with("bandwidth", purchased_mbps.to_string())
        .with("link_name", offer.link().name())
        .with(
            "scaled_amount",
            scaled_amount(amount, offer.bandwidth_mbps(), purchased_mbps.max(1)).to_decimal(),
        );
    if offer.qos_class() != QosClass::Reserved {
        a.insert("qos_class", offer.qos_class().as_str());
    }
    if let Some(hint) = offer.path_hint() {
        a.insert("path_hint", hint.join(","));
    }
    a
}

/// `check_compliance(policy, {guarantor, offer, check}, {}, action)`.
pub fn verify_payment(
    merchant_policy: &Credential,
    guarantor: &Credential,
    offer: &Credential,
    check: &Credential,
    action: &ActionAttributeSet,
) -> Result<bool, ComplianceError> {
    check_compliance(
        std::slice::from_ref(merchant_policy),
        &[guarantor.clone(), offer.clone(), check.clone()],
        &[],
        action,
    )
}

/// Everything needed to re-run a payment decision later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub offer: Credential,
    pub microcheck: Credential,
    pub guarantor: Credential,
    pub action: ActionAttributeSet,
    pub merchant_key: PublicKeyId,
    pub received_at: Date,
}

impl TransactionRecord {
    /// First 16 hex digits of SHA-256 over the encoded record.
    pub fn record_id(&self) -> String {
        let digest = Sha256::digest(self.to_payload().encode().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Re-runs the merchant decision under `registry`'s policy.
    pub fn verify(&self, registry: &GuarantorRegistry) -> Result<bool, ComplianceError> {
        verify_payment(
            &registry.merchant_policy(&self.merchant_key),
            &self.guarantor,
            &self.offer,
            &self.microcheck,
            &self.action,
        )
    }

    pub fn to_payload(&self) -> Payload {
        let mut p = Payload::new();
        p.set("merchant", &self.merchant_key);
        p.set("received_at", self.received_at);
        for (k, v) in self.action.iter() {
            p.set(&format!("action.{k}"), v);
        }
        p.push_blob("offer", self.offer.render());
        p.push_blob("microcheck", self.microcheck.render());
        p.push_blob("guarantor", self.guarantor.render());
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Self, CodecError> {
        let bad = |field: &str, value: String| CodecError::BadField {
            field: field.to_string(),
            value,
        };
        let cred = |name: &str| -> Result<Credential, CodecError> {
            let text = p.require_blob(name)?;
            parse_credential(text).map_err(|e| bad(name, e.to_string()))
        };
        let merchant_text = p.require("merchant")?;
        let merchant_key =
            PublicKeyId::parse(merchant_text).map_err(|_| bad("merchant", merchant_text.to_string()))?;
        let action_map: BTreeMap<String, String> = p.section("action");
        let action = ActionAttributeSet::from_map(action_map).map_err(|e| bad("action", e.to_string()))?;
        Ok(TransactionRecord {
            offer: cred("offer")?,
            microcheck: cred("microcheck")?,
            guarantor: cred("guarantor")?,
            action,
            merchant_key,
            received_at: p.parse("received_at")?,
        })
    }
}
