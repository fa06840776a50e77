//! Policy decision point: every signature check and compliance decision an
//! ISP's network elements need.

use std::collections::BTreeSet;

use crate::credential::{verify_detached, Credential, PublicKeyId, ED25519_SIGNATURE_ALGORITHM};
use crate::market::Offer;
use crate::payments::{
    payment_action, GuarantorCredential, GuarantorRegistry, Microcheck, TransactionRecord,
};
use crate::time::SimTime;

use super::request::ReservationRequest;
use super::reservation::ReservationCredential;
use super::FabricError;

#[derive(Debug, Clone)]
pub struct Pdp {
    isp_key: PublicKeyId,
    registry: GuarantorRegistry,
    /// `(payer, nonce)` of every check this ISP has accepted.
    seen: BTreeSet<(PublicKeyId, String)>,
}

impl Pdp {
    pub fn new(isp_key: PublicKeyId, registry: GuarantorRegistry) -> Pdp {
        Pdp {
            isp_key,
            registry,
            seen: BTreeSet::new(),
        }
    }

    pub fn isp_key(&self) -> &PublicKeyId {
        &self.isp_key
    }

    pub fn registry(&self) -> &GuarantorRegistry {
        &self.registry
    }

    pub fn verify_request_signature(&self, req: &ReservationRequest) -> bool {
        matches!(
            verify_detached(&req.customer_key, &req.signed_bytes(), ED25519_SIGNATURE_ALGORITHM, &req.signature),
            Ok(true)
        )
    }

    pub fn verify_offers(&self, creds: &[Credential]) -> Result<Vec<Offer>, FabricError> {
        creds
            .iter()
            .map(|c| Offer::from_credential(c.clone()).map_err(|_| FabricError::BadSignature))
            .collect()
    }

    /// Checks that the guarantor credential covers the requesting customer
    /// and is issued by a trusted guarantor.
    pub fn check_guarantor(&self, guarantor: &Credential, customer: &PublicKeyId) -> Result<(), FabricError> {
        let g = GuarantorCredential::from_credential(guarantor.clone())
            .map_err(|e| FabricError::PaymentRefused(e.to_string()))?;
        if g.payer_key() != customer {
            return Err(FabricError::PaymentRefused("guarantor credential names another payer".into()));
        }
        if !self.registry.contains(g.guarantor_key()) {
            return Err(FabricError::PaymentRefused("unknown guarantor".into()));
        }
        Ok(())
    }

    /// Verifies one check against one offer for `purchased_mbps` and
    /// returns the record to deposit. Does not mark the nonce used.
    pub fn authorize_payment(
        &self,
        offer: &Offer,
        guarantor: &Credential,
        check: &Credential,
        customer: &PublicKeyId,
        purchased_mbps: u64,
        now: SimTime,
    ) -> Result<TransactionRecord, FabricError> {
        let refused = |m: &str| FabricError::PaymentRefused(m.to_string());
        let mc = Microcheck::from_credential(check.clone()).map_err(|e| refused(&e.to_string()))?;
        if mc.payer_key() != customer {
            return Err(refused("check not written by the requesting customer"));
        }
        if mc.merchant_key() != &self.isp_key {
            return Err(refused("check payable to another merchant"));
        }
        if offer.isp_key() != &self.isp_key {
            return Err(refused("offer from another isp"));
        }
        if self.seen.contains(&(mc.payer_key().clone(), mc.nonce().to_string())) {
            return Err(refused("nonce already spent here"));
        }
        let today = now.date();
        let action = payment_action(offer, &mc, purchased_mbps, today);
        let record = TransactionRecord {
            offer: offer.credential().clone(),
            microcheck: check.clone(),
            guarantor: guarantor.clone(),
            action,
            merchant_key: self.isp_key.clone(),
            received_at: today,
        };
        match record.verify(&self.registry) {
            Ok(true) => Ok(record),
            Ok(false) => Err(refused("compliance check failed")),
            Err(e) => Err(refused(&e.to_string())),
        }
    }

    /// Marks the checks of accepted records as spent.
    pub fn commit(&mut self, records: &[TransactionRecord]) {
        for r in records {
            let mc = Microcheck::from_credential(r.microcheck.clone()).expect("committed records were verified");
            let fresh = self.seen.insert((mc.payer_key().clone(), mc.nonce().to_string()));
            assert!(fresh, "nonce committed twice");
        }
    }

    /// Signature, issuer and time window of a reservation credential.
    pub fn verify_reservation_credential(
        &self,
        cred: &Credential,
        now: SimTime,
    ) -> Result<ReservationCredential, FabricError> {
        let view = ReservationCredential::from_credential(cred.clone())?;
        if view.isp_key() != &self.isp_key || !matches!(cred.verify_signature(), Ok(true)) {
            return Err(FabricError::BadSignature);
        }
        if !view.interval().contains(now) {
            return Err(FabricError::OutsideInterval);
        }
        if !cred.eval_conditions(&view.activation_action(now)) {
            return Err(FabricError::MalformedRequest("reservation credential conditions do not hold".into()));
        }
        Ok(view)
    }
}
