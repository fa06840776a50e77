//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use bandx_core::credential::{check_compliance, parse_credential, ComplianceError, PublicKeyId, SigningKey};
use bandx_core::fabric::{FabricError, ReservationState};
use bandx_core::fixtures;
use bandx_core::market::{compose_path, MarketError, Offer};
use bandx_core::money::{Currency, Money};
use bandx_core::payments::{
    issue_guarantor_credential, issue_microcheck, payment_action, ClearingSettlementCenter, CscConfig,
    GuarantorRegistry, Microcheck, RejectReason, TransactionRecord,
};
use bandx_core::time::Date;
use bandx_harness::service::{CscService, IspService};
use bandx_harness::{run_file, Role, TcpTransport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::fabric_world::{commitment_scenario, t0, FabricWorld};
use support::market_oracle::{brute_force_plan, random_market};
use support::payment_world::{Kind, World};

type Check = Result<String, String>;

fn ensure(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(
        elapsed < limit,
        format!("took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn day(s: &str) -> Date {
    s.parse().unwrap()
}

fn usd(minor: i64) -> Money {
    Money::from_minor(minor, Currency::usd())
}

fn golden_chain() -> Check {
    let ex = fixtures::worked_example();
    let action = fixtures::worked_example_action();
    let policy = [ex.policy.clone()];
    let comply = |creds: &[bandx_core::credential::Credential], action: &bandx_core::credential::ActionAttributeSet| {
        check_compliance(&policy, creds, &[], action)
    };
    ensure(comply(&ex.signed_credentials(), &action) == Ok(true), "unmodified chain does not comply")?;

    let (alice, cg, nick) = (&ex.alice, &ex.check_guarantor, &ex.nick);
    let mut denied = Vec::new();

    // Over the guarantor's limit: a correctly signed check for 5.01.
    let big = fixtures::signed_from_template(
        &fixtures::microcheck_template().replace("\"4.25\"", "\"5.01\""),
        alice,
        alice,
        cg,
        nick,
    );
    let creds = [ex.guarantor.clone(), ex.offer.clone(), big];
    denied.push(("over-limit amount", comply(&creds, &action.clone().with("amount", "5.01")) == Ok(false)));

    let expired = fixtures::signed_from_template(
        &fixtures::guarantor_template().replace("\"20040324\"", "\"20031101\""),
        cg,
        alice,
        cg,
        nick,
    );
    let creds = [expired, ex.offer.clone(), ex.microcheck.clone()];
    denied.push(("expired guarantor", comply(&creds, &action) == Ok(false)));

    denied.push((
        "wrong currency",
        comply(&ex.signed_credentials(), &action.clone().with("currency", "EUR")) == Ok(false),
    ));

    let csc_key = SigningKey::derive("acceptance/csc").public_id();
    let registry = GuarantorRegistry::new().with(cg.public_id());
    let record = {
        let g = issue_guarantor_credential(cg, &alice.public_id(), &usd(500), day("20040324"), day("20031101")).unwrap();
        let offer = Offer::from_credential(ex.offer.clone()).unwrap();
        let check = issue_microcheck(alice, &nick.public_id(), &usd(425), "eb2c3dfc8e9a", day("20031119")).unwrap();
        TransactionRecord {
            action: payment_action(&offer, &check, 50, day("20031119")),
            offer: offer.credential().clone(),
            microcheck: check.credential().clone(),
            guarantor: g.credential().clone(),
            merchant_key: nick.public_id(),
            received_at: day("20031119"),
        }
    };
    let mut csc = ClearingSettlementCenter::new(csc_key.clone(), registry, CscConfig::default());
    let first = csc.deposit_batch(std::slice::from_ref(&record)).unwrap();
    let second = csc.deposit_batch(std::slice::from_ref(&record)).unwrap();
    denied.push((
        "reused nonce at settlement",
        first.accepted.len() == 1 && second.rejected == vec![(record.record_id(), RejectReason::DoubleDeposit)],
    ));

    let tampered = parse_credential(&ex.offer.render().replace("Dublin-NYC", "Rome-NYC")).unwrap();
    let creds = [ex.guarantor.clone(), tampered, ex.microcheck.clone()];
    denied.push((
        "tampered link_name",
        matches!(comply(&creds, &action.clone().with("link_name", "Rome-NYC")), Err(ComplianceError::UnverifiedCredential { .. })),
    ));

    let stranger = SigningKey::derive("acceptance/unknown-guarantor");
    let foreign = fixtures::signed_from_template(fixtures::guarantor_template(), &stranger, alice, &stranger, nick);
    let creds = [foreign, ex.offer.clone(), ex.microcheck.clone()];
    denied.push(("unknown guarantor", comply(&creds, &action) == Ok(false)));

    for (name, ok) in &denied {
        ensure(*ok, format!("mutation `{name}` was not rejected"))?;
    }
    Ok(format!("chain complies, {} mutations rejected", denied.len()))
}

/// Records whose replayed verdict was compared with the recorded one.
#[derive(Default)]
struct Replay {
    records: usize,
    agree: usize,
}

impl Replay {
    fn absorb(&mut self, csc: &ClearingSettlementCenter) {
        for o in csc.deposit_log() {
            self.records += 1;
            self.agree += usize::from(csc.dispute_replay(&o.record) == o.verdict);
        }
    }
}

fn double_deposit(replay: &mut Replay) -> Check {
    let mut w = World::new("acceptance-batches");
    let mut rng = ChaCha8Rng::seed_from_u64(2003);
    let mut csc = w.csc(CscConfig::default());
    let mut history: Vec<(TransactionRecord, Kind)> = Vec::new();
    let mut accepted_per_key: BTreeMap<(PublicKeyId, String), usize> = BTreeMap::new();
    let mut valid_keys: BTreeSet<(PublicKeyId, String)> = BTreeSet::new();
    let mut duplicates = 0usize;
    let mut total = 0usize;
    for batch_no in 0..1000 {
        let n = rng.gen_range(1..=10);
        let mut batch = Vec::new();
        for _ in 0..n {
            if !history.is_empty() && rng.gen_bool(0.2) {
                batch.push(history[rng.gen_range(0..history.len())].clone());
                duplicates += 1;
            } else {
                let kind = World::random_kind(&mut rng);
                batch.push((w.record(&mut rng, kind), kind));
            }
        }
        total += batch.len();
        let records: Vec<_> = batch.iter().map(|(r, _)| r.clone()).collect();
        let report = csc.deposit_batch(&records).map_err(|e| e.to_string())?;
        ensure(
            report.accepted.len() + report.rejected.len() == records.len(),
            format!("batch {batch_no}: not every record got a disposition"),
        )?;
        for (id, _) in &report.accepted {
            let rec = records.iter().find(|r| &r.record_id() == id).ok_or("accepted unknown record")?;
            let check = Microcheck::from_credential(rec.microcheck.clone()).map_err(|e| e.to_string())?;
            *accepted_per_key.entry((check.payer_key().clone(), check.nonce().to_string())).or_default() += 1;
        }
        for (rec, kind) in &batch {
            if *kind == Kind::Valid {
                let check = Microcheck::from_credential(rec.microcheck.clone()).map_err(|e| e.to_string())?;
                valid_keys.insert((check.payer_key().clone(), check.nonce().to_string()));
            }
        }
        for (cur, sum) in csc.totals() {
            ensure(sum == 0, format!("batch {batch_no}: {cur} balances sum to {sum}"))?;
        }
        history.extend(batch);
    }
    if let Some((k, n)) = accepted_per_key.iter().find(|(_, n)| **n != 1) {
        return Err(format!("({}, {}) accepted {n} times", k.0, k.1));
    }
    let accepted: BTreeSet<_> = accepted_per_key.keys().cloned().collect();
    ensure(accepted == valid_keys, "accepted set differs from the valid (payer, nonce) set")?;
    replay.absorb(&csc);
    Ok(format!(
        "{total} records incl. {duplicates} duplicates ({:.1}%), {} accepted exactly once, sums zero",
        100.0 * duplicates as f64 / total as f64,
        accepted.len()
    ))
}

fn path_oracle() -> Check {
    let mut with_path = 0;
    for seed in 0..100 {
        let (offers, q) = random_market(seed);
        let fast = compose_path(&offers, &q);
        match brute_force_plan(&offers, &q) {
            None => ensure(fast == Err(MarketError::NoPath), format!("seed {seed}: expected NoPath, got {fast:?}"))?,
            Some((cost, _)) => {
                with_path += 1;
                let plan = fast.map_err(|e| format!("seed {seed}: {e}"))?;
                ensure(
                    plan.total_price.minor() == cost,
                    format!("seed {seed}: {} vs optimum {cost}", plan.total_price.minor()),
                )?;
            }
        }
    }
    Ok(format!("100 graphs, {with_path} with a path, every total optimal"))
}

fn commitment() -> Check {
    let (mut accepted, mut refused) = (0, 0);
    for seed in 0..200 {
        let s = commitment_scenario(seed, 100)?;
        accepted += s.spot_accepted;
        refused += s.spot_refused;
    }
    Ok(format!("200 activations succeeded; competing spot load {accepted} admitted, {refused} refused"))
}

fn end_to_end(replay: &mut Replay) -> Check {
    let golden = std::fs::read_to_string(scenarios().join("rome-dublin.transcript")).map_err(|e| e.to_string())?;
    let outcome = run_file(scenarios().join("rome-dublin.scn"), None).map_err(|e| e.to_string())?;
    if let Some(f) = &outcome.failure {
        return Err(f.to_string());
    }
    ensure(outcome.outcomes.get("pipe").map(String::as_str) == Some("ok"), "purchase `pipe` failed")?;
    ensure(outcome.transcript == golden, "transcript differs from the golden file")?;
    for isp in ["A", "B"] {
        let line = outcome
            .report
            .lines()
            .find(|l| l.starts_with(&format!("balance {isp} merchant ")))
            .ok_or(format!("{isp} holds no account"))?;
        let amount = line.split_whitespace().nth(3).unwrap_or("0");
        ensure(
            Money::parse_decimal(amount, Currency::usd()).is_ok_and(|m| m.is_positive()),
            format!("{isp} not credited: {line}"),
        )?;
    }
    let services = outcome.in_process().ok_or("run did not use in-process services")?;
    let isp = services
        .service(Role::Isp)
        .and_then(|s| s.as_any().downcast_ref::<IspService>())
        .ok_or("no isp service")?;
    let held: Vec<_> = isp
        .fabric()
        .reservations()
        .filter(|r| r.bandwidth_mbps == 50 && r.state == ReservationState::Active)
        .collect();
    let isps: BTreeSet<_> = held.iter().map(|r| r.isp.as_str()).collect();
    ensure(
        held.len() == 2 && isps.len() == 2,
        format!("expected one active 50Mbps reservation per ISP, found {}", held.len()),
    )?;
    let csc = services
        .service(Role::Csc)
        .and_then(|s| s.as_any().downcast_ref::<CscService>())
        .ok_or("no settlement service")?;
    replay.absorb(csc.csc());
    Ok(format!("50Mbps over ISPs {isps:?}, both credited, transcript matches ({} bytes)", golden.len()))
}

fn dispute_agreement(replay: &Replay) -> Check {
    ensure(replay.records > 0, "no records to replay")?;
    ensure(
        replay.agree == replay.records,
        format!("{} of {} replays disagree", replay.records - replay.agree, replay.records),
    )?;
    Ok(format!("{} of {} records agree", replay.agree, replay.records))
}

fn unbundling() -> Check {
    let mut w = FabricWorld::two_isp("acceptance-unbundle", 11);
    let mut alice = w.customer("alice");
    let min_minor = 333i64;
    let allowed = w.offer("A", "Rome", "Paris", 100, min_minor, true);
    let denied = w.offer("A", "Rome", "Paris", 100, min_minor, false);
    let expect_minor = (min_minor * 50 + 99) / 100;

    let quoted = Offer::from_credential(allowed.clone()).map_err(|e| e.to_string())?.prorated_price(50);
    ensure(quoted == usd(expect_minor), format!("quoted {quoted}, expected {expect_minor} minor units"))?;
    let held = w
        .spot(&mut alice, std::slice::from_ref(&allowed), 50, t0())
        .map_err(|e| format!("flag set: {e}"))?;
    ensure(held[0].bandwidth_mbps == 50, "reservation is not 50Mbps")?;
    let paid = w.fabric.take_deposits("A");
    let amount = paid.first().and_then(|r| r.action.get("amount")).unwrap_or("");
    ensure(
        Money::parse_decimal(amount, Currency::usd()).ok() == Some(usd(expect_minor)),
        format!("paid {amount}, expected {expect_minor} minor units"),
    )?;

    match w.spot(&mut alice, &[denied], 50, t0()) {
        Err(FabricError::UnbundlingProhibited { .. }) => {}
        other => return Err(format!("flag clear: expected UnbundlingProhibited, got {other:?}")),
    }
    Ok(format!("flag set admitted at {amount}; flag clear refused UnbundlingProhibited"))
}

/// One `bandx serve` child per role; killed on drop.
struct Fleet {
    children: Vec<Child>,
    endpoints: BTreeMap<Role, String>,
}

impl Fleet {
    fn start(config: &Path) -> Result<Fleet, String> {
        let mut fleet = Fleet {
            children: Vec::new(),
            endpoints: BTreeMap::new(),
        };
        for role in Role::ALL {
            let mut child = Command::new(env!("CARGO_BIN_EXE_bandx"))
                .args(["serve", role.name(), "--listen", "127.0.0.1:0", "--deterministic", "--config"])
                .arg(config)
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| format!("spawn {role}: {e}"))?;
            let mut line = String::new();
            BufReader::new(child.stdout.take().ok_or("no stdout")?)
                .read_line(&mut line)
                .map_err(|e| e.to_string())?;
            fleet.children.push(child);
            let addr = line
                .trim()
                .strip_prefix("listening ")
                .ok_or(format!("{role} printed `{}`", line.trim()))?;
            fleet.endpoints.insert(role, addr.to_string());
        }
        Ok(fleet)
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for c in &mut self.children {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn bundled() -> Result<Vec<PathBuf>, String> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(scenarios())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    out.sort();
    Ok(out)
}

fn transport_equivalence() -> Check {
    let all = bundled()?;
    for path in &all {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let sim = run_file(path, None).map_err(|e| format!("{name}: {e}"))?;
        let fleet = Fleet::start(path).map_err(|e| format!("{name}: {e}"))?;
        let tcp = TcpTransport::connect(&fleet.endpoints).map_err(|e| format!("{name}: {e}"))?;
        let net = run_file(path, Some(Box::new(tcp))).map_err(|e| format!("{name}: {e}"))?;
        drop(fleet);
        ensure(sim.failure.is_none(), format!("{name}: simulation stopped: {:?}", sim.failure))?;
        ensure(net.failure.is_none(), format!("{name}: socket run stopped: {:?}", net.failure))?;
        ensure(sim.report == net.report, format!("{name}: final-state reports differ"))?;
    }
    Ok(format!("{} scenarios, identical reports over four processes", all.len()))
}

fn main() {
    let mut replay = Replay::default();
    let mut failed = 0;
    let mut line = |n: u32, name: &str, limit: Option<u64>, f: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let mut result = f();
        let elapsed = started.elapsed();
        if let (Ok(_), Some(secs)) = (&result, limit) {
            if let Err(e) = within(elapsed, Duration::from_secs(secs)) {
                result = Err(e);
            }
        }
        let secs = elapsed.as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}) [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why}) [{secs:.2}s]");
            }
        }
    };
    line(1, "golden credential chain", Some(1), &mut golden_chain);
    line(2, "double deposit", Some(30), &mut || double_deposit(&mut replay));
    line(3, "path composition oracle", Some(10), &mut path_oracle);
    line(4, "futures commitment", Some(60), &mut commitment);
    line(5, "end-to-end rome-dublin", Some(5), &mut || end_to_end(&mut replay));
    line(6, "dispute replay", None, &mut || dispute_agreement(&replay));
    line(7, "un-bundling", None, &mut unbundling);
    line(8, "transport equivalence", None, &mut transport_equivalence);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
