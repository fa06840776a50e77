//! KeyNote-subset credentials: parsing, canonical rendering, signing,
//! condition evaluation and the delegation-graph compliance check.

mod action;
mod compliance;
mod expr;
mod key;
mod parse;
mod render;

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use thiserror::Error;

pub use action::{is_attribute_name, ActionAttributeSet, APP_DOMAIN};
pub use compliance::{check_compliance, check_compliance_unchecked, ComplianceError};
pub use expr::{numeric_prefix, AttrRef, CmpOp, ConditionExpr, Literal, NumericPrefix, PrincipalExpr};
pub use key::{
    scheme_for, verify_detached, PublicKeyId, SignatureScheme, SigningKey,
    ED25519_KEY_ALGORITHM, ED25519_SIGNATURE_ALGORITHM, POLICY,
};
pub use parse::{parse_credential, parse_credential_with, parse_credentials, split_blocks, ParseMode};

pub const KEYNOTE_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CredentialError {
    #[error("syntax error at line {line}, column {column}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },
    #[error("unknown Keynote-Version {0}")]
    UnknownVersion(u32),
    #[error("unresolved constant `{0}`")]
    UnresolvedConstant(String),
    #[error("malformed key `{0}`")]
    BadKey(String),
    #[error("unsupported signature algorithm `{0}`")]
    UnsupportedAlgorithm(String),
    #[error("credential authorizer does not match the signing key")]
    KeyMismatch,
    #[error("action attribute set lacks `app_domain`")]
    MissingAppDomain,
    #[error("invalid attribute name `{0}`")]
    BadAttributeName(String),
}

/// Credential authorizer: a single key, or locally trusted policy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Principal {
    Policy,
    Key(PublicKeyId),
}

impl Principal {
    pub fn key(&self) -> Option<&PublicKeyId> {
        match self {
            Principal::Policy => None,
            Principal::Key(k) => Some(k),
        }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Principal::Policy => f.write_str(POLICY),
            Principal::Key(k) => k.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub algorithm: String,
    /// Base64 text as it appears in the credential.
    pub value: String,
}

impl Signature {
    /// Strict decode; `None` for non-canonical base64.
    pub fn decode(&self) -> Option<Vec<u8>> {
        let bytes = B64.decode(&self.value).ok()?;
        (B64.encode(&bytes) == self.value).then_some(bytes)
    }
}

/// A signed (or locally trusted) authorization statement.
#[derive(Debug, Clone)]
pub struct Credential {
    version: u32,
    local_constants: BTreeMap<String, String>,
    authorizer: Principal,
    licensees: PrincipalExpr,
    conditions: ConditionExpr,
    signature: Option<Signature>,
    source: Option<String>,
}

impl PartialEq for Credential {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.local_constants == other.local_constants
            && self.authorizer == other.authorizer
            && self.licensees == other.licensees
            && self.conditions == other.conditions
            && self.signature == other.signature
    }
}

impl Eq for Credential {}

impl Credential {
    pub fn new(authorizer: Principal, licensees: PrincipalExpr, conditions: ConditionExpr) -> Self {
        Credential {
            version: KEYNOTE_VERSION,
            local_constants: BTreeMap::new(),
            authorizer,
            licensees,
            conditions,
            signature: None,
            source: None,
        }
    }

    /// Adds a local constant. Constants are informational once keys have
    /// been substituted, but they are covered by the signature.
    pub fn with_constant(mut self, name: &str, value: &str) -> Self {
        self.local_constants.insert(name.to_string(), value.to_string());
        self.signature = None;
        self
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn local_constants(&self) -> &BTreeMap<String, String> {
        &self.local_constants
    }

    pub fn authorizer(&self) -> &Principal {
        &self.authorizer
    }

    pub fn authorizer_key(&self) -> Option<&PublicKeyId> {
        self.authorizer.key()
    }

    pub fn licensees(&self) -> &PrincipalExpr {
        &self.licensees
    }

    pub fn conditions(&self) -> &ConditionExpr {
        &self.conditions
    }

    pub fn signature(&self) -> Option<&Signature> {
        self.signature.as_ref()
    }

    pub fn is_policy(&self) -> bool {
        self.authorizer == Principal::Policy
    }

    /// Original text this credential was parsed from, if any.
    pub fn source_text(&self) -> Option<&str> {
        self.source.as_deref()
    }

    /// Deterministic encoding of every field except the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        render::canonical_text(self).into_bytes()
    }

    /// Canonical text including the `Signature:` line.
    pub fn render(&self) -> String {
        render::full_text(self)
    }

    pub fn eval_conditions(&self, action: &ActionAttributeSet) -> bool {
        self.conditions.eval(action)
    }

    /// Attaches a signature over [`Credential::canonical_bytes`].
    pub fn sign(mut self, key: &SigningKey) -> Result<Credential, CredentialError> {
        if self.authorizer != Principal::Key(key.public_id()) {
            return Err(CredentialError::KeyMismatch);
        }
        let sig = key.sign_bytes(&self.canonical_bytes());
        self.signature = Some(Signature {
            algorithm: key.signature_algorithm().to_string(),
            value: B64.encode(sig),
        });
        self.source = None;
        Ok(self)
    }

    /// `true` iff the signature validates under the authorizer key.
    /// POLICY assertions are locally trusted and always pass.
    pub fn verify_signature(&self) -> Result<bool, CredentialError> {
        let key = match &self.authorizer {
            Principal::Policy => return Ok(true),
            Principal::Key(k) => k,
        };
        let Some(sig) = &self.signature else {
            return Ok(false);
        };
        if scheme_for(&sig.algorithm).is_none() {
            return Err(CredentialError::UnsupportedAlgorithm(sig.algorithm.clone()));
        }
        let Some(bytes) = sig.decode() else {
            return Ok(false);
        };
        verify_detached(key, &self.canonical_bytes(), &sig.algorithm, &bytes)
    }
}

impl fmt::Display for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Free-function form of [`Credential::sign`].
pub fn sign_credential(cred: Credential, key: &SigningKey) -> Result<Credential, CredentialError> {
    cred.sign(key)
}

/// Free-function form of [`Credential::verify_signature`].
pub fn verify_signature(cred: &Credential) -> Result<bool, CredentialError> {
    cred.verify_signature()
}

/// Free-function form of [`ConditionExpr::eval`].
pub fn eval_conditions(cond: &ConditionExpr, action: &ActionAttributeSet) -> bool {
    cond.eval(action)
}
