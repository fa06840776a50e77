//! Delegation-graph compliance check.
//!
//! Principals start unauthorized except the requesters. A credential
//! authorizes its authorizer when its conditions hold for the action and
//! its licensee expression is satisfied by the principals authorized so
//! far. Iterating to the least fixpoint answers whether POLICY is
//! authorized. Each productive round adds at least one principal, so the
//! loop runs at most `|principals| + 1` times, cycles included.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{ActionAttributeSet, Credential, Principal, PublicKeyId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplianceError {
    #[error("credential #{index} failed verification: {reason}")]
    UnverifiedCredential { index: usize, reason: String },
}

/// Verifies every non-POLICY input, then runs the fixpoint.
///
/// `policy` holds locally trusted assertions (authorizer POLICY);
/// `credentials` holds signed assertions. A POLICY assertion smuggled into
/// `credentials` is rejected as unverified.
pub fn check_compliance(
    policy: &[Credential],
    credentials: &[Credential],
    requesters: &[PublicKeyId],
    action: &ActionAttributeSet,
) -> Result<bool, ComplianceError> {
    let all = policy.iter().chain(credentials);
    for (index, cred) in all.enumerate() {
        let in_policy_list = index < policy.len();
        if cred.is_policy() {
            if !in_policy_list {
                return Err(ComplianceError::UnverifiedCredential {
                    index,
                    reason: "POLICY assertion supplied as a signed credential".into(),
                });
            }
            continue;
        }
        match cred.verify_signature() {
            Ok(true) => {}
            Ok(false) => {
                return Err(ComplianceError::UnverifiedCredential {
                    index,
                    reason: "bad signature".into(),
                })
            }
            Err(e) => {
                return Err(ComplianceError::UnverifiedCredential {
                    index,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(fixpoint(policy, credentials, requesters, action))
}

/// Fixture-only variant that skips signature checks, for credential text
/// whose keys cannot be verified.
pub fn check_compliance_unchecked(
    policy: &[Credential],
    credentials: &[Credential],
    requesters: &[PublicKeyId],
    action: &ActionAttributeSet,
) -> bool {
    fixpoint(policy, credentials, requesters, action)
}

fn fixpoint(
    policy: &[Credential],
    credentials: &[Credential],
    requesters: &[PublicKeyId],
    action: &ActionAttributeSet,
) -> bool {
    // Conditions depend only on the shared action; evaluate once.
    let live: Vec<&Credential> = policy
        .iter()
        .filter(|c| c.is_policy())
        .chain(credentials.iter().filter(|c| !c.is_policy()))
        .filter(|c| c.eval_conditions(action))
        .collect();

    let mut authorized: BTreeSet<Principal> =
        requesters.iter().cloned().map(Principal::Key).collect();
    let bound = live.len() + 1;
    for _ in 0..bound {
        let mut changed = false;
        for cred in &live {
            if authorized.contains(cred.authorizer()) {
                continue;
            }
            let holds = cred
                .licensees()
                .satisfied_by(&|k: &PublicKeyId| authorized.contains(&Principal::Key(k.clone())));
            if holds {
                authorized.insert(cred.authorizer().clone());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    authorized.contains(&Principal::Policy)
}
