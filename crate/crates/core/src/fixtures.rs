//! The four-credential worked example (check guarantor, offer, microcheck,
//! merchant policy), re-signed with locally derived keys.
//!
//! Differences from the raw example texts, all needed for the chain to be
//! satisfiable by one action:
//! - `app_domain` is `"BAND-X"` in every credential (the raw guarantor
//!   spells it `"Band-X"`; string comparison is case-sensitive);
//! - the offer expiry string is terminated (`date < "20031120"`);
//! - the microcheck is dated `20031119`, inside both the guarantor and the
//!   offer validity windows (the raw `20041120` is after both).

use crate::credential::{parse_credential, ActionAttributeSet, Credential, SigningKey};

const GUARANTOR_TEMPLATE: &str = r#"Keynote-Version: 2
Local-Constants:
      ALICE_KEY = "{ALICE}"
      CG_KEY = "{CG}"
Authorizer: CG_KEY
Licensees: ALICE_KEY
Conditions: app_domain == "BAND-X" &&
      currency == "USD" && &amount < 5.01
      && date < "20040324" -> "true";
"#;

const OFFER_TEMPLATE: &str = r#"Keynote-Version: 2
Local-Constants:
      ISP_KEY = "{NICK}"
Authorizer: ISP_KEY
Licensees:
Conditions: app_domain == "BAND-X" &&
      currency == "USD" &&
      &bandwidth <= "50Mbps" &&
      link_name == "Dublin-NYC" &&
      &amount >= 3.00
      && date < "20031120" -> "true";
"#;

const MICROCHECK_TEMPLATE: &str = r#"Keynote-Version: 2
Local-Constants:
      ALICE_KEY = "{ALICE}"
      ISP_KEY = "{NICK}"
Authorizer: ALICE_KEY
Licensees: ISP_KEY
Conditions: app_domain == "BAND-X" &&
      currency == "USD" && amount == "4.25"
      && nonce ==  "eb2c3dfc8e9a" &&
      date == "20031119" -> "true";
"#;

const POLICY_TEMPLATE: &str = r#"Keynote-Version: 2
Local-Constants:
      NICK_KEY = "{NICK}"
      CG_KEY = "{CG}"
Authorizer: POLICY
Licensees: CG_KEY && NICK_KEY
Conditions:
      app_domain == "BAND-X" -> "true";
"#;

/// Signed instances of the worked example plus the keys behind them.
#[derive(Debug, Clone)]
pub struct WorkedExample {
    pub alice: SigningKey,
    pub check_guarantor: SigningKey,
    pub nick: SigningKey,
    pub guarantor: Credential,
    pub offer: Credential,
    pub microcheck: Credential,
    pub policy: Credential,
}

impl WorkedExample {
    /// Everything except the POLICY assertion.
    pub fn signed_credentials(&self) -> Vec<Credential> {
        vec![self.guarantor.clone(), self.offer.clone(), self.microcheck.clone()]
    }
}

pub fn alice_key() -> SigningKey {
    SigningKey::derive("bandx-fixture/alice")
}

pub fn check_guarantor_key() -> SigningKey {
    SigningKey::derive("bandx-fixture/check-guarantor")
}

pub fn nick_key() -> SigningKey {
    SigningKey::derive("bandx-fixture/nick-isp")
}

/// Fills the `{ALICE}`, `{CG}` and `{NICK}` placeholders of a template.
pub fn instantiate(template: &str, alice: &SigningKey, cg: &SigningKey, nick: &SigningKey) -> String {
    template
        .replace("{ALICE}", &alice.public_id().to_string())
        .replace("{CG}", &cg.public_id().to_string())
        .replace("{NICK}", &nick.public_id().to_string())
}

pub fn guarantor_template() -> &'static str {
    GUARANTOR_TEMPLATE
}

pub fn offer_template() -> &'static str {
    OFFER_TEMPLATE
}

pub fn microcheck_template() -> &'static str {
    MICROCHECK_TEMPLATE
}

pub fn policy_template() -> &'static str {
    POLICY_TEMPLATE
}

/// Parses and signs a template with the given signer.
pub fn signed_from_template(
    template: &str,
    signer: &SigningKey,
    alice: &SigningKey,
    cg: &SigningKey,
    nick: &SigningKey,
) -> Credential {
    parse_credential(&instantiate(template, alice, cg, nick))
        .expect("fixture template parses")
        .sign(signer)
        .expect("fixture signer matches authorizer")
}

pub fn worked_example() -> WorkedExample {
    let alice = alice_key();
    let cg = check_guarantor_key();
    let nick = nick_key();
    let guarantor = signed_from_template(GUARANTOR_TEMPLATE, &cg, &alice, &cg, &nick);
    let offer = signed_from_template(OFFER_TEMPLATE, &nick, &alice, &cg, &nick);
    let microcheck = signed_from_template(MICROCHECK_TEMPLATE, &alice, &alice, &cg, &nick);
    let policy = parse_credential(&instantiate(POLICY_TEMPLATE, &alice, &cg, &nick))
        .expect("policy template parses");
    WorkedExample {
        alice,
        check_guarantor: cg,
        nick,
        guarantor,
        offer,
        microcheck,
        policy,
    }
}

/// The transaction the merchant evaluates for the worked example.
pub fn worked_example_action() -> ActionAttributeSet {
    ActionAttributeSet::new("BAND-X")
        .with("currency", "USD")
        .with("amount", "4.25")
        .with("nonce", "eb2c3dfc8e9a")
        .with("date", "20031119")
        .with("bandwidth", "50")
        .with("link_name", "Dublin-NYC")
}
