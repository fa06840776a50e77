mod support;

use std::collections::{BTreeMap, BTreeSet};

use bandx_core::credential::*;
use bandx_core::fixtures;
use bandx_core::market::Offer;
use bandx_core::money::{Currency, Money};
use bandx_core::payments::*;
use bandx_core::time::Date;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::payment_world::{Kind, World};

fn day(s: &str) -> Date {
    s.parse().unwrap()
}

fn usd(minor: i64) -> Money {
    Money::from_minor(minor, Currency::usd())
}

/// Records built through the typed API from the worked-example parties.
struct Example {
    ex: fixtures::WorkedExample,
    registry: GuarantorRegistry,
    guarantor: GuarantorCredential,
    offer: Offer,
    check: Microcheck,
}

fn example() -> Example {
    let ex = fixtures::worked_example();
    let guarantor = issue_guarantor_credential(
        &ex.check_guarantor,
        &ex.alice.public_id(),
        &usd(500),
        day("20040324"),
        day("20031101"),
    )
    .unwrap();
    let offer = Offer::from_credential(ex.offer.clone()).unwrap();
    let check = issue_microcheck(&ex.alice, &ex.nick.public_id(), &usd(425), "eb2c3dfc8e9a", day("20031119")).unwrap();
    let registry = GuarantorRegistry::new().with(ex.check_guarantor.public_id());
    Example {
        ex,
        registry,
        guarantor,
        offer,
        check,
    }
}

impl Example {
    fn record(&self) -> TransactionRecord {
        TransactionRecord {
            offer: self.offer.credential().clone(),
            microcheck: self.check.credential().clone(),
            guarantor: self.guarantor.credential().clone(),
            action: payment_action(&self.offer, &self.check, 50, day("20031119")),
            merchant_key: self.ex.nick.public_id(),
            received_at: day("20031119"),
        }
    }
}

#[test]
fn guarantor_credential_encodes_limit_and_expiry() {
    let e = example();
    let conds = render_conditions(e.guarantor.credential());
    assert!(conds.contains("&amount < 5.01 && date < \"20040324\""), "{conds}");
    assert_eq!(e.guarantor.per_check_limit(), &usd(500));
    assert_eq!(e.guarantor.expiry(), day("20040324"));
    let at = |amount: &str| {
        ActionAttributeSet::new("BAND-X")
            .with("currency", "USD")
            .with("amount", amount)
            .with("date", "20040323")
    };
    assert!(e.guarantor.credential().eval_conditions(&at("5.00")));
    assert!(!e.guarantor.credential().eval_conditions(&at("5.01")));
    assert_eq!(
        e.guarantor.credential().conditions(),
        e.ex.guarantor.conditions(),
        "same conditions as the worked example"
    );
}

fn render_conditions(c: &Credential) -> String {
    c.render()
        .lines()
        .find_map(|l| l.strip_prefix("Conditions: "))
        .unwrap()
        .to_string()
}

#[test]
fn microcheck_matches_raw_example_modulo_keys() {
    let ex = fixtures::worked_example();
    let check = issue_microcheck(&ex.alice, &ex.nick.public_id(), &usd(425), "eb2c3dfc8e9a", day("20041120")).unwrap();
    let raw = parse_credential_with(
        &fixtures::microcheck_template().replace("20031119", "20041120"),
        ParseMode::Unchecked,
    );
    let raw = raw.unwrap_or_else(|_| {
        parse_credential(&fixtures::instantiate(
            &fixtures::microcheck_template().replace("20031119", "20041120"),
            &ex.alice,
            &ex.check_guarantor,
            &ex.nick,
        ))
        .unwrap()
    });
    assert_eq!(check.credential().conditions(), raw.conditions());
    assert_eq!(
        render_conditions(check.credential()),
        "app_domain == \"BAND-X\" && currency == \"USD\" && amount == \"4.25\" && nonce == \"eb2c3dfc8e9a\" && date == \"20041120\" -> \"true\";"
    );
    assert_eq!(check.payer_key(), &ex.alice.public_id());
    assert_eq!(check.merchant_key(), &ex.nick.public_id());
}

#[test]
fn checkbook_refuses_reused_nonce() {
    let ex = fixtures::worked_example();
    let mut book = CheckBook::new(ex.alice.clone());
    let nick = ex.nick.public_id();
    book.write_check(&nick, &usd(425), "eb2c3dfc8e9a", day("20031119")).unwrap();
    assert_eq!(
        book.write_check(&nick, &usd(100), "eb2c3dfc8e9a", day("20031119")),
        Err(PaymentError::StaleNonce("eb2c3dfc8e9a".into()))
    );
    assert!(matches!(
        book.write_check(&nick, &usd(100), "short", day("20031119")),
        Err(PaymentError::InvalidTerms(_))
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = book.fresh_nonce(&mut rng);
    assert!(is_valid_nonce(&n));
}

#[test]
fn verify_payment_on_worked_example() {
    let ex = fixtures::worked_example();
    let action = fixtures::worked_example_action();
    assert_eq!(verify_payment(&ex.policy, &ex.guarantor, &ex.offer, &ex.microcheck, &action), Ok(true));
    let over = action.clone().with("amount", "5.50");
    assert_eq!(verify_payment(&ex.policy, &ex.guarantor, &ex.offer, &ex.microcheck, &over), Ok(false));

    let registry = GuarantorRegistry::new().with(ex.check_guarantor.public_id());
    let policy = registry.merchant_policy(&ex.nick.public_id());
    assert_eq!(policy.licensees(), ex.policy.licensees());
    assert_eq!(verify_payment(&policy, &ex.guarantor, &ex.offer, &ex.microcheck, &action), Ok(true));

    let other = GuarantorRegistry::new().with(SigningKey::derive("other-bank").public_id());
    let policy = other.merchant_policy(&ex.nick.public_id());
    assert_eq!(verify_payment(&policy, &ex.guarantor, &ex.offer, &ex.microcheck, &action), Ok(false));
    let empty = GuarantorRegistry::new().merchant_policy(&ex.nick.public_id());
    assert_eq!(verify_payment(&empty, &ex.guarantor, &ex.offer, &ex.microcheck, &action), Ok(false));
}

#[test]
fn underpaying_the_offer_fails_merchant_side() {
    let e = example();
    let cheap = issue_microcheck(&e.ex.alice, &e.ex.nick.public_id(), &usd(299), "0123456789ab", day("20031119")).unwrap();
    let action = payment_action(&e.offer, &cheap, 50, day("20031119"));
    let policy = e.registry.merchant_policy(&e.ex.nick.public_id());
    assert_eq!(
        verify_payment(&policy, e.guarantor.credential(), e.offer.credential(), cheap.credential(), &action),
        Ok(false)
    );
}

#[test]
fn deposit_moves_money_with_commission() {
    let e = example();
    let csc_key = SigningKey::derive("csc").public_id();
    let mut csc = ClearingSettlementCenter::new(csc_key.clone(), e.registry.clone(), CscConfig::default());
    assert_eq!(csc.deposit_batch(&[]).unwrap(), SettlementReport::default());

    let record = e.record();
    let report = csc.deposit_batch(&[record.clone()]).unwrap();
    assert_eq!(report.accepted, vec![(record.record_id(), usd(425))]);
    assert!(report.rejected.is_empty());
    assert_eq!(report.commission_taken, vec![usd(5)]);
    let usd_c = Currency::usd();
    assert_eq!(csc.account_balance(&e.ex.alice.public_id(), &usd_c), usd(-425));
    assert_eq!(csc.account_balance(&e.ex.nick.public_id(), &usd_c), usd(420));
    assert_eq!(csc.account_balance(&csc_key, &usd_c), usd(5));
    assert_eq!(csc.totals()[&usd_c], 0);
    assert_eq!(csc.account_balance(&SigningKey::derive("nobody").public_id(), &usd_c), usd(0));

    let again = csc.deposit_batch(&[record.clone()]).unwrap();
    assert_eq!(again.rejected, vec![(record.record_id(), RejectReason::DoubleDeposit)]);
    assert_eq!(csc.account_balance(&e.ex.alice.public_id(), &usd_c), usd(-425));
    assert!(csc.dispute_replay(&record));
    assert_eq!(csc.recorded_verdict(&record.record_id()), Some(true));
}

#[test]
fn commission_rounds_up() {
    // 425 at 100 bps is 4.25 minor units, charged as 5.
    let mut e = example();
    let csc_key = SigningKey::derive("csc").public_id();
    for (amount, bps, fee) in [(425, 100, 5), (400, 100, 4), (1, 100, 1), (425, 0, 0), (333, 250, 9)] {
        e.check = issue_microcheck(&e.ex.alice, &e.ex.nick.public_id(), &usd(amount), "eb2c3dfc8e9a", day("20031119")).unwrap();
        let mut csc = ClearingSettlementCenter::new(
            csc_key.clone(),
            e.registry.clone(),
            CscConfig { commission_bps: bps, daily_cap: None },
        );
        let offer_price_ok = amount >= 300;
        let report = csc.deposit_batch(&[e.record()]).unwrap();
        if offer_price_ok {
            assert_eq!(csc.account_balance(&csc_key, &Currency::usd()).minor(), fee, "{amount} at {bps}");
            assert_eq!(
                csc.account_balance(&e.ex.nick.public_id(), &Currency::usd()).minor(),
                amount - fee
            );
        } else {
            assert_eq!(report.rejected.len(), 1);
        }
    }
}

#[test]
fn tampered_record_replays_false() {
    let e = example();
    let csc = ClearingSettlementCenter::new(SigningKey::derive("csc").public_id(), e.registry.clone(), CscConfig::default());
    let mut record = e.record();
    assert!(csc.dispute_replay(&record));
    record.microcheck = parse_credential(&record.microcheck.render().replace("4.25", "0.25")).unwrap();
    record.action.insert("amount", "0.25");
    assert!(!csc.dispute_replay(&record));
}

#[test]
fn rejection_reasons() {
    let e = example();
    let mut csc = ClearingSettlementCenter::new(
        SigningKey::derive("csc").public_id(),
        GuarantorRegistry::new().with(SigningKey::derive("other").public_id()),
        CscConfig::default(),
    );
    let r = csc.deposit_batch(&[e.record()]).unwrap();
    assert_eq!(r.rejected[0].1, RejectReason::UnknownGuarantor);

    let mut csc = ClearingSettlementCenter::new(SigningKey::derive("csc").public_id(), e.registry.clone(), CscConfig::default());
    let mut wrong_merchant = e.record();
    wrong_merchant.merchant_key = e.ex.check_guarantor.public_id();
    let mut garbage = e.record();
    garbage.microcheck = e.guarantor.credential().clone();
    let mut late = e.record();
    late.action.insert("date", "20031120");
    let r = csc.deposit_batch(&[wrong_merchant, garbage, late]).unwrap();
    assert!(matches!(r.rejected[0].1, RejectReason::Malformed(_)));
    assert!(matches!(r.rejected[1].1, RejectReason::Malformed(_)));
    assert_eq!(r.rejected[2].1, RejectReason::NotAuthorized);
    assert!(csc.accounts().is_empty());
}

#[test]
fn daily_cap_limits_aggregate_exposure() {
    let mut w = World::new("cap");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cap = Money::from_minor(600, Currency::usd());
    let mut csc = w.csc(CscConfig {
        commission_bps: 100,
        daily_cap: Some(cap),
    });
    let mut accepted_per_payer: BTreeMap<PublicKeyId, i64> = BTreeMap::new();
    for _ in 0..40 {
        let rec = w.record(&mut rng, Kind::Valid);
        let check = Microcheck::from_credential(rec.microcheck.clone()).unwrap();
        let report = csc.deposit_batch(&[rec]).unwrap();
        if check.amount().currency() == &Currency::usd() {
            if let Some((_, m)) = report.accepted.first() {
                *accepted_per_payer.entry(check.payer_key().clone()).or_default() += m.minor();
            } else {
                assert_eq!(report.rejected[0].1, RejectReason::DailyCapExceeded);
            }
        }
    }
    assert!(!accepted_per_payer.is_empty());
    for total in accepted_per_payer.values() {
        assert!(*total <= 600);
    }
}

#[test]
fn randomized_batches_keep_ledger_invariants() {
    let mut w = World::new("batches");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut csc = w.csc(CscConfig::default());
    let mut history: Vec<(TransactionRecord, Kind)> = Vec::new();
    let mut settled: BTreeSet<(PublicKeyId, String)> = BTreeSet::new();
    let payer_keys: Vec<PublicKeyId> = w.payers.iter().map(|p| p.book.payer_key()).collect();
    for _ in 0..150 {
        let n = rng.gen_range(0..10);
        let mut batch = Vec::new();
        for _ in 0..n {
            if !history.is_empty() && rng.gen_bool(0.2) {
                let pick = history[rng.gen_range(0..history.len())].clone();
                batch.push(pick);
            } else {
                let kind = World::random_kind(&mut rng);
                batch.push((w.record(&mut rng, kind), kind));
            }
        }
        let before: Vec<_> = csc.accounts();
        let records: Vec<_> = batch.iter().map(|(r, _)| r.clone()).collect();
        let report = csc.deposit_batch(&records).unwrap();
        assert_eq!(report.accepted.len() + report.rejected.len(), batch.len());

        let mut expected_accepts = 0;
        for (rec, kind) in &batch {
            let check = Microcheck::from_credential(rec.microcheck.clone()).unwrap();
            let key = (check.payer_key().clone(), check.nonce().to_string());
            if *kind == Kind::Valid && settled.insert(key) {
                expected_accepts += 1;
            }
        }
        assert_eq!(report.accepted.len(), expected_accepts);
        if expected_accepts == 0 {
            assert_eq!(csc.accounts(), before, "rejections change no balance");
        }
        for total in csc.totals().values() {
            assert_eq!(*total, 0);
        }
        history.extend(batch);
    }
    // The attacker never moved money out of a payer account it forged.
    let log = csc.deposit_log();
    for o in log {
        let check = Microcheck::from_credential(o.record.microcheck.clone()).unwrap();
        if !matches!(o.record.microcheck.verify_signature(), Ok(true)) {
            assert!(o.disposition != Disposition::Accepted);
            assert!(payer_keys.contains(check.payer_key()));
        }
        assert_eq!(csc.dispute_replay(&o.record), o.verdict);
    }
}

#[test]
fn journal_restart_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("csc.journal");
    let mut w = World::new("journal");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<_> = (0..12)
        .map(|i| {
            let kind = if i % 4 == 3 { Kind::Forged } else { Kind::Valid };
            w.record(&mut rng, kind)
        })
        .collect();
    let open = || {
        ClearingSettlementCenter::open(&path, w.csc_key.public_id(), w.registry.clone(), CscConfig::default()).unwrap()
    };
    let mut csc = open();
    csc.deposit_batch(&records[..6]).unwrap();
    let snapshot = csc.accounts();
    drop(csc);

    let mut csc = open();
    assert_eq!(csc.accounts(), snapshot);
    let again = csc.deposit_batch(&records[..6]).unwrap();
    assert!(again.accepted.is_empty());
    csc.deposit_batch(&records[6..]).unwrap();
    let full = csc.accounts();
    let log_len = csc.deposit_log().len();
    drop(csc);

    // Torn write at the tail: the last entry disappears, nothing else.
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    let csc = open();
    assert_eq!(csc.deposit_log().len(), log_len - 1);
    for t in csc.totals().values() {
        assert_eq!(*t, 0);
    }
    let last = records.last().unwrap();
    let reference = {
        let mut r = w.csc(CscConfig::default());
        r.deposit_batch(&records[..6]).unwrap();
        r.deposit_batch(&records[..6]).unwrap();
        r.deposit_batch(&records[6..records.len() - 1]).unwrap();
        r.accounts()
    };
    assert_eq!(csc.accounts(), reference);
    let _ = (full, last);
}

#[test]
fn record_payload_round_trips() {
    let e = example();
    let rec = e.record();
    let p = rec.to_payload();
    let back = TransactionRecord::from_payload(&bandx_core::codec::Payload::decode(&p.encode()).unwrap()).unwrap();
    assert_eq!(back, rec);
    assert_eq!(back.record_id(), rec.record_id());
}
