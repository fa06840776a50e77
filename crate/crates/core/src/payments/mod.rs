//! Microcheck payments: guarantor credentials, checks, merchant-side
//! verification and the clearing and settlement center.

mod csc;
mod instruments;
pub mod journal;
mod verify;

use thiserror::Error;

use crate::credential::CredentialError;

pub use csc::{
    ClearingSettlementCenter, CscConfig, DepositOutcome, Disposition, LedgerAccount, RejectReason,
    Role, SettlementReport,
};
pub use instruments::{
    is_valid_nonce, issue_guarantor_credential, issue_microcheck, CheckBook, GuarantorCredential,
    Microcheck,
};
pub use journal::{Journal, JournalError};
pub use verify::{payment_action, verify_payment, GuarantorRegistry, TransactionRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaymentError {
    #[error("nonce `{0}` already used by this payer")]
    StaleNonce(String),
    #[error("invalid terms: {0}")]
    InvalidTerms(String),
    #[error("malformed {0}")]
    Malformed(String),
    #[error(transparent)]
    Credential(#[from] CredentialError),
}
