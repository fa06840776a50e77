//! Scenario files.
//!
//! A scenario is a header of directives followed by an ordered event list,
//! one statement per line, `#` starting a comment. See `docs/scenario.md`
//! for the grammar. The header alone doubles as the `serve` config.

use std::fs;
use std::path::{Path, PathBuf};

use bandx_core::fabric::ReservationState;
use bandx_core::money::{Currency, Money};
use bandx_core::time::{Date, Interval, SimTime};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scenario line {line}: {reason}")]
pub struct ScenarioError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuarantorDecl {
    pub name: String,
    /// Whether ISPs and the settlement center accept its credentials.
    pub trusted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub seed: u64,
    pub clock: SimTime,
    pub topology: Option<PathBuf>,
    pub guarantors: Vec<GuarantorDecl>,
    pub commission_bps: u32,
    pub daily_cap: Option<Money>,
    /// CSC journal file; only `serve csc` uses it.
    pub journal: Option<PathBuf>,
    /// Default listen address for `serve`.
    pub listen: Option<String>,
}

impl Default for Header {
    fn default() -> Self {
        Header {
            seed: 0,
            clock: "20000101T000000".parse().expect("valid constant"),
            topology: None,
            guarantors: Vec::new(),
            commission_bps: 100,
            daily_cap: None,
            journal: None,
            listen: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfferDecl {
    pub isp: String,
    pub from: String,
    pub to: String,
    pub mbps: u64,
    pub price: Money,
    pub until: Date,
    pub unbundled: bool,
    pub premium: bool,
    pub hint: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PurchaseDecl {
    pub handle: String,
    pub customer: String,
    pub from: String,
    pub to: String,
    pub mbps: u64,
    pub currency: Currency,
    pub max: Option<Money>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assertion {
    Balance { principal: String, amount: Money },
    Capacity { ne: String, link: String, used_mbps: u64 },
    State { handle: String, state: ReservationState },
    Count { state: ReservationState, n: usize },
    Outcome { handle: String, expect: String },
    Offers(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Customer {
        name: String,
        guarantor: String,
        limit: Money,
        expiry: Date,
    },
    PostOffer(OfferDecl),
    Advance(i64),
    AdvanceTo(SimTime),
    BuySpot(PurchaseDecl),
    BuyFuture(PurchaseDecl, Interval),
    Activate(String),
    Keepalive(String),
    Teardown(String),
    Deposit,
    Assert(Assertion),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub line: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scenario {
    pub header: Header,
    pub events: Vec<Event>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ScenarioError {
            line: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Scenario::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario {
            base_dir: base_dir.into(),
            ..Scenario::default()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let err = |reason: String| ScenarioError { line, reason };
            let mut cur = Words { words: &words, pos: 1, line };
            if let Some(()) = parse_header(&mut sc.header, &mut cur).map_err(err)? {
                if !sc.events.is_empty() {
                    return Err(ScenarioError {
                        line,
                        reason: format!("`{}` must precede every event", words[0]),
                    });
                }
                cur.finish()?;
                continue;
            }
            let kind = parse_event(&mut cur)?;
            cur.finish()?;
            sc.events.push(Event { line, kind });
        }
        Ok(sc)
    }

    pub fn topology_path(&self) -> Option<PathBuf> {
        self.header.topology.as_ref().map(|p| self.base_dir.join(p))
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        self.header.journal.as_ref().map(|p| self.base_dir.join(p))
    }
}

struct Words<'a> {
    words: &'a [&'a str],
    pos: usize,
    line: usize,
}

impl<'a> Words<'a> {
    fn err(&self, reason: impl Into<String>) -> ScenarioError {
        ScenarioError {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, ScenarioError> {
        let w = self.words.get(self.pos).ok_or_else(|| self.err(format!("missing {what}")))?;
        self.pos += 1;
        Ok(w)
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.pos).copied()
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ScenarioError> {
        let w = self.next(what)?;
        w.parse().map_err(|_| self.err(format!("invalid {what} `{w}`")))
    }

    /// `<decimal> <currency>`
    fn money(&mut self, what: &str) -> Result<Money, ScenarioError> {
        let amount = self.next(what)?;
        let currency: Currency = self.parse("currency")?;
        Money::parse_decimal(amount, currency).map_err(|_| self.err(format!("invalid {what} `{amount}`")))
    }

    fn finish(&self) -> Result<(), ScenarioError> {
        match self.words.get(self.pos) {
            None => Ok(()),
            Some(extra) => Err(self.err(format!("unexpected `{extra}`"))),
        }
    }
}

/// `Ok(None)` when the statement is not a header directive.
fn parse_header(h: &mut Header, w: &mut Words) -> Result<Option<()>, String> {
    let head = w.words[0];
    let r = match head {
        "seed" => w.parse("seed").map(|v| h.seed = v),
        "clock" => w.parse("clock").map(|v| h.clock = v),
        "topology" => w.next("topology path").map(|p| h.topology = Some(PathBuf::from(p))),
        "commission" => w.parse("commission").map(|v| h.commission_bps = v),
        "daily-cap" => w.money("daily cap").map(|m| h.daily_cap = Some(m)),
        "journal" => w.next("journal path").map(|p| h.journal = Some(PathBuf::from(p))),
        "listen" => w.next("listen address").map(|a| h.listen = Some(a.to_string())),
        "guarantor" => (|| {
            let name = w.next("guarantor name")?.to_string();
            let trusted = match w.peek() {
                Some("untrusted") => {
                    w.pos += 1;
                    false
                }
                _ => true,
            };
            if h.guarantors.iter().any(|g| g.name == name) {
                return Err(w.err(format!("guarantor `{name}` declared twice")));
            }
            h.guarantors.push(GuarantorDecl { name, trusted });
            Ok(())
        })(),
        _ => return Ok(None),
    };
    r.map(Some).map_err(|e| e.reason)
}

fn purchase(w: &mut Words) -> Result<PurchaseDecl, ScenarioError> {
    Ok(PurchaseDecl {
        handle: w.next("handle")?.to_string(),
        customer: w.next("customer")?.to_string(),
        from: w.next("origin")?.to_string(),
        to: w.next("destination")?.to_string(),
        mbps: w.parse("bandwidth")?,
        currency: Currency::usd(),
        max: None,
    })
}

fn purchase_options(w: &mut Words, p: &mut PurchaseDecl) -> Result<(), ScenarioError> {
    while let Some(opt) = w.peek() {
        w.pos += 1;
        match opt {
            "max" => {
                let m = w.money("max price")?;
                p.currency = m.currency().clone();
                p.max = Some(m);
            }
            "currency" => p.currency = w.parse("currency")?,
            other => return Err(w.err(format!("unknown option `{other}`"))),
        }
    }
    Ok(())
}

fn parse_event(w: &mut Words) -> Result<EventKind, ScenarioError> {
    Ok(match w.words[0] {
        "customer" => EventKind::Customer {
            name: w.next("customer name")?.to_string(),
            guarantor: w.next("guarantor")?.to_string(),
            limit: w.money("limit")?,
            expiry: w.parse("expiry")?,
        },
        "offer" => {
            let mut o = OfferDecl {
                isp: w.next("isp")?.to_string(),
                from: w.next("origin")?.to_string(),
                to: w.next("destination")?.to_string(),
                mbps: w.parse("bandwidth")?,
                price: w.money("price")?,
                until: w.parse("valid-until date")?,
                unbundled: false,
                premium: false,
                hint: None,
            };
            while let Some(opt) = w.peek() {
                w.pos += 1;
                match opt {
                    "unbundled" => o.unbundled = true,
                    "premium" => o.premium = true,
                    "hint" => o.hint = Some(w.next("hint")?.split(',').map(str::to_string).collect()),
                    other => return Err(w.err(format!("unknown offer option `{other}`"))),
                }
            }
            EventKind::PostOffer(o)
        }
        "advance" => {
            let secs: i64 = w.parse("seconds")?;
            if secs < 0 {
                return Err(w.err("the clock only moves forward"));
            }
            EventKind::Advance(secs)
        }
        "advance-to" => EventKind::AdvanceTo(w.parse("time")?),
        "buy-spot" => {
            let mut p = purchase(w)?;
            purchase_options(w, &mut p)?;
            EventKind::BuySpot(p)
        }
        "buy-future" => {
            let mut p = purchase(w)?;
            let start: SimTime = w.parse("start")?;
            let end: SimTime = w.parse("end")?;
            let interval = Interval::new(start, end).ok_or_else(|| w.err("empty interval"))?;
            purchase_options(w, &mut p)?;
            EventKind::BuyFuture(p, interval)
        }
        "activate" => EventKind::Activate(w.next("handle")?.to_string()),
        "keepalive" => EventKind::Keepalive(w.next("handle")?.to_string()),
        "teardown" => EventKind::Teardown(w.next("handle")?.to_string()),
        "deposit" => EventKind::Deposit,
        "assert" => EventKind::Assert(parse_assertion(w)?),
        other => return Err(w.err(format!("unknown statement `{other}`"))),
    })
}

fn parse_assertion(w: &mut Words) -> Result<Assertion, ScenarioError> {
    Ok(match w.next("assertion")? {
        "balance" => Assertion::Balance {
            principal: w.next("principal")?.to_string(),
            amount: w.money("amount")?,
        },
        "capacity" => Assertion::Capacity {
            ne: w.next("network element")?.to_string(),
            link: w.next("link")?.to_string(),
            used_mbps: w.parse("used bandwidth")?,
        },
        "state" => Assertion::State {
            handle: w.next("handle")?.to_string(),
            state: w.parse("state")?,
        },
        "reservations" => Assertion::Count {
            state: w.parse("state")?,
            n: w.parse("count")?,
        },
        "outcome" => Assertion::Outcome {
            handle: w.next("handle")?.to_string(),
            expect: w.next("outcome")?.to_string(),
        },
        "offers" => Assertion::Offers(w.parse("count")?),
        other => return Err(w.err(format!("unknown assertion `{other}`"))),
    })
}
