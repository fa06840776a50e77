use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn bandx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandx")).args(args).output().unwrap()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn scn(name: &str) -> String {
    scenarios().join(name).to_string_lossy().into_owned()
}

#[test]
fn run_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let transcript = tmp.path().join("t.txt");
    let out = bandx(&["run", &scn("rome-dublin.scn"), "--transcript", transcript.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = std::fs::read_to_string(scenarios().join("rome-dublin.transcript")).unwrap();
    assert_eq!(std::fs::read_to_string(&transcript).unwrap(), golden);
    assert!(String::from_utf8_lossy(&out.stdout).contains("balance alice payer -22.00 USD"));

    let failing = tmp.path().join("fail.scn");
    let text = std::fs::read_to_string(scenarios().join("rome-dublin.scn")).unwrap();
    std::fs::write(&failing, text.replace("assert offers 4", "assert offers 5")).unwrap();
    std::fs::copy(scenarios().join("rome-dublin.topo"), tmp.path().join("rome-dublin.topo")).unwrap();
    let out = bandx(&["run", failing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assertion failed"));

    let broken = tmp.path().join("broken.scn");
    std::fs::write(&broken, "seed 1\nbuy-spot\n").unwrap();
    assert_eq!(bandx(&["run", broken.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(bandx(&["run", "/nonexistent.scn"]).status.code(), Some(3));
}

#[test]
fn keygen_derive_is_stable() {
    let a = bandx(&["keygen", "--derive", "cli-test"]);
    let b = bandx(&["keygen", "--derive", "cli-test"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let fresh = bandx(&["keygen"]);
    assert_ne!(fresh.stdout, a.stdout);
}

struct Served(Vec<Child>);

impl Drop for Served {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

#[test]
fn operator_verbs_drive_live_services() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).to_string_lossy().into_owned();
    std::fs::write(
        p("svc.cfg"),
        format!("seed 3\nclock 20031119T090000\ntopology {}\nguarantor cg\n", scn("rome-dublin.topo")),
    )
    .unwrap();
    let mut served = Served(Vec::new());
    let mut endpoints = Vec::new();
    for role in ["clearinghouse", "isp", "csc", "guarantor"] {
        let mut child = Command::new(env!("CARGO_BIN_EXE_bandx"))
            .args(["serve", role, "--config", &p("svc.cfg")])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        served.0.push(child);
        endpoints.push(format!("{role}={}", line.trim().strip_prefix("listening ").unwrap()));
    }
    let ep = endpoints.join(",");
    let ok = |args: &[&str]| {
        let out = bandx(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    ok(&["keygen", "--derive", "rome-dublin/isp-a", "--out", &p("a.key")]);
    ok(&["keygen", "--derive", "rome-dublin/isp-b", "--out", &p("b.key")]);
    ok(&["keygen", "--out", &p("alice.key")]);
    for (key, from, to, price) in [("a.key", "Rome", "Paris", "20.00"), ("b.key", "Paris", "Dublin", "12.00")] {
        ok(&[
            "post-offer", "--connect", &ep, "--key", &p(key), "--from", from, "--to", to, "--mbps", "100", "--price", price,
            "--until", "20031130", "--unbundled",
        ]);
    }
    let found = ok(&["search", "--connect", &ep, "--from", "Rome", "--to", "Paris", "--mbps", "50", "--on", "20031119"]);
    assert!(found.contains("link_name == \"Rome-Paris\""));
    ok(&[
        "cwc", "--connect", &ep, "--key", &p("alice.key"), "--guarantor", "cg", "--limit", "50.00", "--expiry", "20040324",
        "--out", &p("alice.cwc"),
    ]);
    let agent = ["--connect", &ep, "--key", &p("alice.key"), "--cwc", &p("alice.cwc")];
    let route = ["--from", "Rome", "--to", "Dublin", "--mbps", "50", "--now", "20031119T090000"];
    ok(&[&["buy"][..], &agent, &route, &["--out", &p("pipe.handle")]].concat());
    ok(&[
        &["book"][..],
        &agent,
        &route,
        &["--start", "20031120T100000", "--end", "20031120T110000", "--out", &p("meet.creds")],
    ]
    .concat());
    let early = bandx(&[&["activate"][..], &agent, &["--creds", &p("meet.creds"), "--now", "20031119T100000"]].concat());
    assert_eq!(early.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&early.stderr).contains("OutsideInterval"));
    ok(&["clock", "--connect", &ep, "20031120T100000"]);
    ok(&[&["activate"][..], &agent, &["--creds", &p("meet.creds"), "--now", "20031120T100000"]].concat());
    let settled = ok(&["deposit", "--connect", &ep, "--isp", "A", "--key", &p("a.key")]);
    assert!(settled.contains("accepted 2"), "{settled}");
    ok(&["deposit", "--connect", &ep, "--isp", "B", "--key", &p("b.key")]);
    let report = ok(&["report", "--connect", &ep]);
    assert!(report.contains("total USD 0"));
    assert_eq!(report.lines().filter(|l| l.contains(" active 50Mbps")).count(), 4, "{report}");
    assert!(report.contains("merchant 19.80 USD") && report.contains("merchant 11.88 USD"), "{report}");
}

#[test]
fn serve_reports_bind_and_config_failures() {
    let cfg = scn("rome-dublin.scn");
    let out = bandx(&["serve", "isp", "--config", &cfg, "--listen", "256.1.1.1:1"]);
    assert_eq!(out.status.code(), Some(3));
    let out = bandx(&["serve", "isp", "--config", "/nonexistent.cfg"]);
    assert_eq!(out.status.code(), Some(3));
    let out = bandx(&["serve", "nobody", "--config", &cfg]);
    assert!(!out.status.success());
}
