//! Clearing and Settlement Center: deposits, double-deposit rejection, the
//! account ledger and dispute replay.
//!
//! Deposits apply strictly in batch order. Each record gets a verdict (the
//! merchant-side payment check re-run under the CSC's guarantor registry)
//! and a disposition. Checks, in order: decodable instruments, trusted
//! guarantor, verdict, first settlement of (payer, nonce), daily cap.
//! Only accepted records move money.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use crate::codec::{CodecError, Payload};
use crate::credential::PublicKeyId;
use crate::money::{Currency, Money};
use crate::time::Date;

use super::instruments::{GuarantorCredential, Microcheck};
use super::journal::{Journal, JournalError};
use super::verify::{GuarantorRegistry, TransactionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Payer,
    Merchant,
    Csc,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Payer => "payer",
            Role::Merchant => "merchant",
            Role::Csc => "csc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerAccount {
    pub principal: PublicKeyId,
    pub role: Role,
    pub balance: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Malformed(String),
    UnknownGuarantor,
    NotAuthorized,
    DoubleDeposit,
    DailyCapExceeded,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Malformed(_) => "malformed",
            RejectReason::UnknownGuarantor => "unknown-guarantor",
            RejectReason::NotAuthorized => "not-authorized",
            RejectReason::DoubleDeposit => "double-deposit",
            RejectReason::DailyCapExceeded => "daily-cap",
        }
    }

    fn from_code(code: &str, detail: &str) -> Option<RejectReason> {
        Some(match code {
            "malformed" => RejectReason::Malformed(detail.to_string()),
            "unknown-guarantor" => RejectReason::UnknownGuarantor,
            "not-authorized" => RejectReason::NotAuthorized,
            "double-deposit" => RejectReason::DoubleDeposit,
            "daily-cap" => RejectReason::DailyCapExceeded,
            _ => return None,
        })
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(why) => write!(f, "malformed: {why}"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SettlementReport {
    pub accepted: Vec<(String, Money)>,
    pub rejected: Vec<(String, RejectReason)>,
    /// Commission per currency, omitting currencies with none.
    pub commission_taken: Vec<Money>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CscConfig {
    pub commission_bps: u32,
    /// Per-payer, per-day total of accepted checks in the cap's currency.
    pub daily_cap: Option<Money>,
}

impl Default for CscConfig {
    fn default() -> Self {
        CscConfig {
            commission_bps: 100,
            daily_cap: None,
        }
    }
}

/// One processed deposit, as journaled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepositOutcome {
    pub record_id: String,
    pub record: TransactionRecord,
    pub verdict: bool,
    pub disposition: Disposition,
}

#[derive(Debug, Clone)]
struct Settlement {
    payer: PublicKeyId,
    merchant: PublicKeyId,
    nonce: String,
    date: Date,
    amount: Money,
    commission: Money,
}

#[derive(Debug)]
pub struct ClearingSettlementCenter {
    csc_key: PublicKeyId,
    registry: GuarantorRegistry,
    config: CscConfig,
    balances: BTreeMap<(PublicKeyId, Currency), i64>,
    roles: BTreeMap<PublicKeyId, Role>,
    settled: BTreeSet<(PublicKeyId, String)>,
    daily: BTreeMap<(PublicKeyId, Date, Currency), i64>,
    log: Vec<DepositOutcome>,
    verdicts: BTreeMap<String, bool>,
    journal: Option<Journal>,
}

impl ClearingSettlementCenter {
    /// In-memory center with no journal.
    pub fn new(csc_key: PublicKeyId, registry: GuarantorRegistry, config: CscConfig) -> Self {
        let mut roles = BTreeMap::new();
        roles.insert(csc_key.clone(), Role::Csc);
        ClearingSettlementCenter {
            csc_key,
            registry,
            config,
            balances: BTreeMap::new(),
            roles,
            settled: BTreeSet::new(),
            daily: BTreeMap::new(),
            log: Vec::new(),
            verdicts: BTreeMap::new(),
            journal: None,
        }
    }

    /// Journaled center; replays the journal at `path` before returning.
    pub fn open(
        path: impl AsRef<Path>,
        csc_key: PublicKeyId,
        registry: GuarantorRegistry,
        config: CscConfig,
    ) -> Result<Self, JournalError> {
        let (journal, entries) = Journal::open(path)?;
        let mut csc = Self::new(csc_key, registry, config);
        for (i, entry) in entries.iter().enumerate() {
            let outcome = decode_outcome(entry).map_err(|e| JournalError::Corrupt {
                offset: i as u64,
                reason: format!("entry {i}: {e}"),
            })?;
            let settlement = match outcome.disposition {
                Disposition::Accepted => Some(settlement_of(&outcome.record, csc.config.commission_bps).ok_or(
                    JournalError::Corrupt {
                        offset: i as u64,
                        reason: format!("entry {i}: accepted record without instruments"),
                    },
                )?),
                Disposition::Rejected(_) => None,
            };
            csc.apply(outcome, settlement);
        }
        csc.journal = Some(journal);
        Ok(csc)
    }

    pub fn csc_key(&self) -> &PublicKeyId {
        &self.csc_key
    }

    pub fn registry(&self) -> &GuarantorRegistry {
        &self.registry
    }

    pub fn config(&self) -> &CscConfig {
        &self.config
    }

    pub fn deposit_batch(&mut self, records: &[TransactionRecord]) -> Result<SettlementReport, JournalError> {
        let mut report = SettlementReport::default();
        let mut commission: BTreeMap<Currency, i64> = BTreeMap::new();
        for record in records {
            let (outcome, settlement) = self.judge(record);
            if let Some(j) = self.journal.as_mut() {
                j.append(&encode_outcome(&outcome))?;
            }
            match &outcome.disposition {
                Disposition::Accepted => {
                    let s = settlement.as_ref().expect("accepted deposits carry a settlement");
                    report.accepted.push((outcome.record_id.clone(), s.amount.clone()));
                    *commission.entry(s.commission.currency().clone()).or_default() += s.commission.minor();
                }
                Disposition::Rejected(why) => report.rejected.push((outcome.record_id.clone(), why.clone())),
            }
            self.apply(outcome, settlement);
        }
        report.commission_taken = commission
            .into_iter()
            .filter(|(_, m)| *m != 0)
            .map(|(c, m)| Money::from_minor(m, c))
            .collect();
        Ok(report)
    }

    fn judge(&self, record: &TransactionRecord) -> (DepositOutcome, Option<Settlement>) {
        let record_id = record.record_id();
        let verdict = self.verdict_of(record);
        let decide = || -> Result<Settlement, RejectReason> {
            let check = Microcheck::from_credential(record.microcheck.clone())
                .map_err(|e| RejectReason::Malformed(e.to_string()))?;
            let guarantor = GuarantorCredential::from_credential(record.guarantor.clone())
                .map_err(|e| RejectReason::Malformed(e.to_string()))?;
            if check.merchant_key() != &record.merchant_key {
                return Err(RejectReason::Malformed("check is payable to another merchant".into()));
            }
            if !self.registry.contains(guarantor.guarantor_key()) {
                return Err(RejectReason::UnknownGuarantor);
            }
            if !verdict {
                return Err(RejectReason::NotAuthorized);
            }
            if self.settled.contains(&(check.payer_key().clone(), check.nonce().to_string())) {
                return Err(RejectReason::DoubleDeposit);
            }
            if let Some(cap) = &self.config.daily_cap {
                if cap.currency() == check.amount().currency() {
                    let key = (check.payer_key().clone(), check.date(), cap.currency().clone());
                    let spent = self.daily.get(&key).copied().unwrap_or(0);
                    if spent + check.amount().minor() > cap.minor() {
                        return Err(RejectReason::DailyCapExceeded);
                    }
                }
            }
            Ok(settlement_of(record, self.config.commission_bps).expect("instruments decoded above"))
        };
        let (disposition, settlement) = match decide() {
            Ok(s) => (Disposition::Accepted, Some(s)),
            Err(why) => (Disposition::Rejected(why), None),
        };
        (
            DepositOutcome {
                record_id,
                record: record.clone(),
                verdict,
                disposition,
            },
            settlement,
        )
    }

    fn apply(&mut self, outcome: DepositOutcome, settlement: Option<Settlement>) {
        if let Some(s) = settlement {
            let cur = s.amount.currency().clone();
            self.move_money(&s.payer, Role::Payer, &cur, -s.amount.minor());
            self.move_money(&s.merchant, Role::Merchant, &cur, s.amount.minor() - s.commission.minor());
            let csc = self.csc_key.clone();
            self.move_money(&csc, Role::Csc, &cur, s.commission.minor());
            self.settled.insert((s.payer.clone(), s.nonce));
            *self.daily.entry((s.payer, s.date, cur)).or_default() += s.amount.minor();
        }
        self.verdicts.insert(outcome.record_id.clone(), outcome.verdict);
        self.log.push(outcome);
    }

    fn move_money(&mut self, who: &PublicKeyId, role: Role, currency: &Currency, delta: i64) {
        self.roles.entry(who.clone()).or_insert(role);
        *self.balances.entry((who.clone(), currency.clone())).or_default() += delta;
    }

    fn verdict_of(&self, record: &TransactionRecord) -> bool {
        matches!(record.verify(&self.registry), Ok(true))
    }

    /// Re-runs the payment decision from the record alone.
    pub fn dispute_replay(&self, record: &TransactionRecord) -> bool {
        self.verdict_of(record)
    }

    pub fn recorded_verdict(&self, record_id: &str) -> Option<bool> {
        self.verdicts.get(record_id).copied()
    }

    /// Every processed deposit in order, including rejections.
    pub fn deposit_log(&self) -> &[DepositOutcome] {
        &self.log
    }

    pub fn account_balance(&self, key: &PublicKeyId, currency: &Currency) -> Money {
        let minor = self
            .balances
            .get(&(key.clone(), currency.clone()))
            .copied()
            .unwrap_or(0);
        Money::from_minor(minor, currency.clone())
    }

    /// All accounts with a ledger entry, ordered by principal then currency.
    pub fn accounts(&self) -> Vec<LedgerAccount> {
        self.balances
            .iter()
            .map(|((who, cur), minor)| LedgerAccount {
                principal: who.clone(),
                role: self.roles[who],
                balance: Money::from_minor(*minor, cur.clone()),
            })
            .collect()
    }

    /// Σ balances per currency; all zero while the ledger is consistent.
    pub fn totals(&self) -> BTreeMap<Currency, i64> {
        let mut out: BTreeMap<Currency, i64> = BTreeMap::new();
        for ((_, cur), minor) in &self.balances {
            *out.entry(cur.clone()).or_default() += minor;
        }
        out
    }

    pub fn is_settled(&self, payer: &PublicKeyId, nonce: &str) -> bool {
        self.settled.contains(&(payer.clone(), nonce.to_string()))
    }
}

fn settlement_of(record: &TransactionRecord, commission_bps: u32) -> Option<Settlement> {
    let check = Microcheck::from_credential(record.microcheck.clone()).ok()?;
    let commission = check.amount().scale_ceil(u64::from(commission_bps), 10_000);
    Some(Settlement {
        payer: check.payer_key().clone(),
        merchant: record.merchant_key.clone(),
        nonce: check.nonce().to_string(),
        date: check.date(),
        amount: check.amount().clone(),
        commission,
    })
}

fn encode_outcome(o: &DepositOutcome) -> Payload {
    let mut p = o.record.to_payload();
    p.set("outcome.record_id", &o.record_id);
    p.set("outcome.verdict", o.verdict);
    match &o.disposition {
        Disposition::Accepted => {
            p.set("outcome.disposition", "accepted");
        }
        Disposition::Rejected(why) => {
            p.set("outcome.disposition", why.code());
            if let RejectReason::Malformed(detail) = why {
                p.set("outcome.detail", detail);
            }
        }
    }
    p
}

fn decode_outcome(p: &Payload) -> Result<DepositOutcome, CodecError> {
    let record = TransactionRecord::from_payload(p)?;
    let record_id = p.require("outcome.record_id")?.to_string();
    if record_id != record.record_id() {
        return Err(CodecError::BadField {
            field: "outcome.record_id".into(),
            value: record_id,
        });
    }
    let code = p.require("outcome.disposition")?;
    let disposition = if code == "accepted" {
        Disposition::Accepted
    } else {
        Disposition::Rejected(
            RejectReason::from_code(code, p.get("outcome.detail").unwrap_or("")).ok_or_else(|| {
                CodecError::BadField {
                    field: "outcome.disposition".into(),
                    value: code.to_string(),
                }
            })?,
        )
    };
    Ok(DepositOutcome {
        record_id,
        record,
        verdict: p.parse("outcome.verdict")?,
        disposition,
    })
}
