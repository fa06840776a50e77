//! Credit-worthiness credentials and microchecks as typed views over
//! credentials.

use std::collections::BTreeSet;

use rand::RngCore;

use crate::credential::{
    AttrRef, CmpOp, ConditionExpr, Credential, Literal, Principal, PrincipalExpr, PublicKeyId,
    SigningKey,
};
use crate::market::BANDX_DOMAIN;
use crate::money::{Currency, Money};
use crate::time::Date;

use super::PaymentError;

/// Check-guarantor credential: the guarantor lets one payer write checks
/// of up to `per_check_limit` dated before `expiry`.
///
/// Conditions: `app_domain == "BAND-X" && currency == C && &amount < L+0.01
/// && date < "expiry"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuarantorCredential {
    credential: Credential,
    guarantor_key: PublicKeyId,
    payer_key: PublicKeyId,
    per_check_limit: Money,
    expiry: Date,
}

impl GuarantorCredential {
    pub fn from_credential(cred: Credential) -> Result<Self, PaymentError> {
        let bad = |m: &str| PaymentError::Malformed(format!("guarantor credential: {m}"));
        let guarantor_key = cred.authorizer_key().cloned().ok_or_else(|| bad("POLICY authorizer"))?;
        let payer_key = cred
            .licensees()
            .single_key()
            .cloned()
            .ok_or_else(|| bad("licensee must be one key"))?;
        let c = cred.conditions();
        require_domain(c).ok_or_else(|| bad("missing app_domain"))?;
        let currency = str_eq(c, "currency")
            .and_then(|s| Currency::new(s).ok())
            .ok_or_else(|| bad("missing currency"))?;
        let bound = match c.find_comparison("amount", CmpOp::Lt) {
            Some((attr, Literal::Num(n))) if attr.numeric => {
                Money::parse_decimal(n, currency.clone()).map_err(|_| bad("bad amount bound"))?
            }
            _ => return Err(bad("missing amount bound")),
        };
        let per_check_limit = Money::from_minor(bound.minor() - 1, currency);
        let expiry = match c.find_comparison("date", CmpOp::Lt) {
            Some((attr, Literal::Str(d))) if !attr.numeric => {
                d.parse().map_err(|_| bad("bad expiry"))?
            }
            _ => return Err(bad("missing expiry")),
        };
        Ok(GuarantorCredential {
            credential: cred,
            guarantor_key,
            payer_key,
            per_check_limit,
            expiry,
        })
    }

    pub fn credential(&self) -> &Credential {
        &self.credential
    }

    pub fn guarantor_key(&self) -> &PublicKeyId {
        &self.guarantor_key
    }

    pub fn payer_key(&self) -> &PublicKeyId {
        &self.payer_key
    }

    pub fn per_check_limit(&self) -> &Money {
        &self.per_check_limit
    }

    pub fn currency(&self) -> &Currency {
        self.per_check_limit.currency()
    }

    /// First day on which checks are no longer covered.
    pub fn expiry(&self) -> Date {
        self.expiry
    }
}

pub fn issue_guarantor_credential(
    guarantor: &SigningKey,
    payer: &PublicKeyId,
    limit: &Money,
    expiry: Date,
    today: Date,
) -> Result<GuarantorCredential, PaymentError> {
    if !limit.is_positive() {
        return Err(PaymentError::InvalidTerms("limit must be positive".into()));
    }
    if expiry <= today {
        return Err(PaymentError::InvalidTerms("expiry must be in the future".into()));
    }
    let just_over = Money::from_minor(limit.minor() + 1, limit.currency().clone());
    let conditions = ConditionExpr::clause(
        ConditionExpr::and(vec![
            ConditionExpr::str_eq("app_domain", BANDX_DOMAIN),
            ConditionExpr::str_eq("currency", limit.currency().as_str()),
            ConditionExpr::compare(AttrRef::numeric("amount"), CmpOp::Lt, Literal::Num(just_over.to_decimal())),
            ConditionExpr::compare(AttrRef::string("date"), CmpOp::Lt, Literal::Str(expiry.to_string())),
        ]),
        true,
    );
    let cred = Credential::new(
        Principal::Key(guarantor.public_id()),
        PrincipalExpr::Key(payer.clone()),
        conditions,
    )
    .sign(guarantor)?;
    GuarantorCredential::from_credential(cred)
}

/// A payer-signed check payable to one merchant.
///
/// Conditions: `app_domain == "BAND-X" && currency == C && amount == "A"
/// && nonce == "N" && date == "D"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Microcheck {
    credential: Credential,
    payer_key: PublicKeyId,
    merchant_key: PublicKeyId,
    amount: Money,
    nonce: String,
    date: Date,
}

/// Lowercase hex, at least 12 digits.
pub fn is_valid_nonce(nonce: &str) -> bool {
    nonce.len() >= 12 && nonce.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl Microcheck {
    pub fn from_credential(cred: Credential) -> Result<Self, PaymentError> {
        let bad = |m: &str| PaymentError::Malformed(format!("microcheck: {m}"));
        let payer_key = cred.authorizer_key().cloned().ok_or_else(|| bad("POLICY authorizer"))?;
        let merchant_key = cred
            .licensees()
            .single_key()
            .cloned()
            .ok_or_else(|| bad("licensee must be one key"))?;
        let c = cred.conditions();
        require_domain(c).ok_or_else(|| bad("missing app_domain"))?;
        let currency = str_eq(c, "currency")
            .and_then(|s| Currency::new(s).ok())
            .ok_or_else(|| bad("missing currency"))?;
        let amount = str_eq(c, "amount")
            .and_then(|a| Money::parse_decimal(a, currency).ok())
            .filter(Money::is_positive)
            .ok_or_else(|| bad("missing or invalid amount"))?;
        let nonce = str_eq(c, "nonce")
            .filter(|n| is_valid_nonce(n))
            .ok_or_else(|| bad("missing or invalid nonce"))?
            .to_string();
        let date = str_eq(c, "date")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad("missing or invalid date"))?;
        Ok(Microcheck {
            credential: cred,
            payer_key,
            merchant_key,
            amount,
            nonce,
            date,
        })
    }

    pub fn credential(&self) -> &Credential {
        &self.credential
    }

    pub fn payer_key(&self) -> &PublicKeyId {
        &self.payer_key
    }

    pub fn merchant_key(&self) -> &PublicKeyId {
        &self.merchant_key
    }

    pub fn amount(&self) -> &Money {
        &self.amount
    }

    pub fn nonce(&self) -> &str {
        &self.nonce
    }

    pub fn date(&self) -> Date {
        self.date
    }
}

/// Signs a check without any freshness bookkeeping. Prefer
/// [`CheckBook::write_check`].
pub fn issue_microcheck(
    payer: &SigningKey,
    merchant: &PublicKeyId,
    amount: &Money,
    nonce: &str,
    date: Date,
) -> Result<Microcheck, PaymentError> {
    if !is_valid_nonce(nonce) {
        return Err(PaymentError::InvalidTerms(format!("nonce `{nonce}` is not hex of 12+ digits")));
    }
    if !amount.is_positive() {
        return Err(PaymentError::InvalidTerms("amount must be positive".into()));
    }
    let conditions = ConditionExpr::clause(
        ConditionExpr::and(vec![
            ConditionExpr::str_eq("app_domain", BANDX_DOMAIN),
            ConditionExpr::str_eq("currency", amount.currency().as_str()),
            ConditionExpr::str_eq("amount", &amount.to_decimal()),
            ConditionExpr::str_eq("nonce", nonce),
            ConditionExpr::str_eq("date", &date.to_string()),
        ]),
        true,
    );
    let cred = Credential::new(
        Principal::Key(payer.public_id()),
        PrincipalExpr::Key(merchant.clone()),
        conditions,
    )
    .sign(payer)?;
    Microcheck::from_credential(cred)
}

/// Payer-side wallet: the signing key plus every nonce already used.
#[derive(Debug, Clone)]
pub struct CheckBook {
    key: SigningKey,
    used: BTreeSet<String>,
}

impl CheckBook {
    pub fn new(key: SigningKey) -> Self {
        CheckBook {
            key,
            used: BTreeSet::new(),
        }
    }

    pub fn key(&self) -> &SigningKey {
        &self.key
    }

    pub fn payer_key(&self) -> PublicKeyId {
        self.key.public_id()
    }

    /// 16 random hex digits not yet used by this book.
    pub fn fresh_nonce<R: RngCore + ?Sized>(&self, rng: &mut R) -> String {
        loop {
            let mut bytes = [0u8; 8];
            rng.fill_bytes(&mut bytes);
            let nonce: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            if !self.used.contains(&nonce) {
                return nonce;
            }
        }
    }

    pub fn write_check(
        &mut self,
        merchant: &PublicKeyId,
        amount: &Money,
        nonce: &str,
        date: Date,
    ) -> Result<Microcheck, PaymentError> {
        if self.used.contains(nonce) {
            return Err(PaymentError::StaleNonce(nonce.to_string()));
        }
        let check = issue_microcheck(&self.key, merchant, amount, nonce, date)?;
        self.used.insert(nonce.to_string());
        Ok(check)
    }
}

fn require_domain(c: &ConditionExpr) -> Option<()> {
    (str_eq(c, "app_domain")? == BANDX_DOMAIN).then_some(())
}

fn str_eq<'a>(c: &'a ConditionExpr, name: &str) -> Option<&'a str> {
    match c.find_comparison(name, CmpOp::Eq)? {
        (attr, Literal::Str(s)) if !attr.numeric => Some(s),
        _ => None,
    }
}
