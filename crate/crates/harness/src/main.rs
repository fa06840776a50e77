use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandx_core::codec::Payload;
use bandx_core::credential::{parse_credential, SigningKey};
use bandx_core::market::{Link, OfferQuery, OfferTerms, QosClass};
use bandx_core::money::{Currency, Money};
use bandx_core::time::{Date, Interval, SimTime};
use bandx_harness::runner::{EXIT_OK, EXIT_PROTOCOL};
use bandx_harness::serve::{bind, serve};
use bandx_harness::service::query_to_payload;
use bandx_harness::{msg, run_scenario, Client, Envelope, Handle, HeldCredential, QnaError, QnaSession, Role, Scenario, TcpTransport, World};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Operation refused by a counterpart.
const EXIT_REFUSED: u8 = 1;

#[derive(Parser)]
#[command(name = "bandx", version, about = "Bandwidth exchange services, agent and scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Connect {
    /// Service endpoints as `role=host:port`, comma separated.
    #[arg(long, value_parser = parse_endpoints)]
    connect: Endpoints,
}

#[derive(Clone, Debug)]
struct Endpoints(BTreeMap<Role, String>);

fn parse_endpoints(text: &str) -> Result<Endpoints, String> {
    let mut out = BTreeMap::new();
    for item in text.split(',').filter(|s| !s.is_empty()) {
        let (role, addr) = item.split_once('=').ok_or_else(|| format!("`{item}` is not role=addr"))?;
        out.insert(role.parse::<Role>()?, addr.to_string());
    }
    Ok(Endpoints(out))
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long)]
    mbps: u64,
    #[arg(long, default_value = "USD")]
    currency: Currency,
    /// Highest acceptable total, in `--currency`.
    #[arg(long)]
    max: Option<String>,
}

impl QueryArgs {
    fn query(&self, on: Date) -> Result<OfferQuery, Failure> {
        let q = OfferQuery::new(&self.from, &self.to, self.mbps, on)
            .map_err(|e| Failure::usage(e))?
            .with_currency(self.currency.clone());
        Ok(match &self.max {
            Some(m) => q.with_max_price(money(m, &self.currency)?),
            None => q,
        })
    }
}

#[derive(Args)]
struct Agent {
    #[command(flatten)]
    connect: Connect,
    /// Customer private key file.
    #[arg(long)]
    key: PathBuf,
    /// Guarantor credential file.
    #[arg(long)]
    cwc: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a private key and prints its public key id.
    Keygen {
        /// Derives the key from a label instead of system entropy.
        #[arg(long)]
        derive: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Obtains a credit-worthiness credential from a guarantor.
    Cwc {
        #[command(flatten)]
        agent: Agent,
        #[arg(long)]
        guarantor: String,
        #[arg(long)]
        limit: String,
        #[arg(long, default_value = "USD")]
        currency: Currency,
        #[arg(long)]
        expiry: Date,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Signs an offer with an ISP key and posts it to the clearing house.
    PostOffer {
        #[command(flatten)]
        connect: Connect,
        /// ISP private key file.
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        mbps: u64,
        #[arg(long)]
        price: String,
        #[arg(long, default_value = "USD")]
        currency: Currency,
        #[arg(long)]
        until: Date,
        #[arg(long)]
        unbundled: bool,
        #[arg(long)]
        premium: bool,
        /// NE ids along the offered link, comma separated.
        #[arg(long, value_delimiter = ',')]
        hint: Vec<String>,
    },
    /// Lists offers matching a query.
    Search {
        #[command(flatten)]
        connect: Connect,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        on: Date,
    },
    /// Buys a spot path and writes its handle.
    Buy {
        #[command(flatten)]
        agent: Agent,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        now: SimTime,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Books a path for a future interval and writes the reservation credentials.
    Book {
        #[command(flatten)]
        agent: Agent,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        now: SimTime,
        #[arg(long)]
        start: SimTime,
        #[arg(long)]
        end: SimTime,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Redeems reservation credentials and writes the resulting handle.
    Activate {
        #[command(flatten)]
        agent: Agent,
        #[arg(long)]
        creds: PathBuf,
        #[arg(long)]
        now: SimTime,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collects an ISP's transaction records and deposits them at the CSC.
    Deposit {
        #[command(flatten)]
        connect: Connect,
        #[arg(long)]
        isp: String,
        /// ISP private key file.
        #[arg(long)]
        key: PathBuf,
    },
    /// Prints the state report of every connected service.
    Report {
        #[command(flatten)]
        connect: Connect,
    },
    /// Sets the clock of every connected service.
    Clock {
        #[command(flatten)]
        connect: Connect,
        now: SimTime,
    },
    /// Runs a scenario file.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Runs against services instead of in-process state machines.
        #[arg(long, value_parser = parse_endpoints)]
        connect: Option<Endpoints>,
    },
    /// Serves one role over TCP.
    Serve {
        role: Role,
        /// Scenario file or header; events in it are ignored.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `listen` directive.
        #[arg(long)]
        listen: Option<String>,
        /// Seeds service randomness from the config seed.
        #[arg(long)]
        deterministic: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Failure {
        Failure {
            code: EXIT_PROTOCOL as u8,
            message: e.to_string(),
        }
    }
}

impl From<QnaError> for Failure {
    fn from(e: QnaError) -> Failure {
        let code = if e.is_fatal() { EXIT_PROTOCOL as u8 } else { EXIT_REFUSED };
        let text = e.to_string();
        let message = if text.starts_with(e.code()) { text } else { format!("{}: {text}", e.code()) };
        Failure { code, message }
    }
}

impl From<bandx_harness::TransportError> for Failure {
    fn from(e: bandx_harness::TransportError) -> Failure {
        Failure::usage(e)
    }
}

fn money(text: &str, currency: &Currency) -> Result<Money, Failure> {
    Money::parse_decimal(text, currency.clone()).map_err(Failure::usage)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_key(path: &Path) -> Result<SigningKey, Failure> {
    SigningKey::from_private_text(&read(path)?).map_err(Failure::usage)
}

fn client(c: &Connect) -> Result<Client, Failure> {
    Ok(Client::new(Box::new(TcpTransport::connect(&c.connect.0)?)))
}

fn session(agent: &Agent) -> Result<(QnaSession, Client), Failure> {
    let mut s = QnaSession::new(load_key(&agent.key)?, ChaCha20Rng::from_entropy());
    if let Some(path) = &agent.cwc {
        let cred = parse_credential(&read(path)?).map_err(Failure::usage)?;
        s.adopt_guarantor(cred)?;
    }
    Ok((s, client(&agent.connect)?))
}

fn reply(env: Envelope, want: &str) -> Result<Envelope, Failure> {
    if env.msg_type == want {
        return Ok(env);
    }
    let code = if env.msg_type == msg::ERROR { EXIT_REFUSED } else { EXIT_PROTOCOL as u8 };
    Err(Failure {
        code,
        message: format!(
            "{}: {} {}",
            env.msg_type,
            env.payload.get("code").unwrap_or(""),
            env.payload.get("message").unwrap_or("")
        ),
    })
}

fn execute(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Keygen { derive, out } => {
            let key = match derive {
                Some(label) => SigningKey::derive(&label),
                None => SigningKey::generate(&mut rand::rngs::OsRng),
            };
            match out {
                Some(path) => {
                    emit(Some(&path), &key.to_private_text())?;
                    println!("{}", key.public_id());
                }
                None => print!("{}", key.to_private_text()),
            }
        }
        Command::Cwc {
            agent,
            guarantor,
            limit,
            currency,
            expiry,
            out,
        } => {
            let (mut s, mut c) = session(&agent)?;
            s.obtain_guarantor(&mut c, &guarantor, &money(&limit, &currency)?, expiry)?;
            let cwc = s.guarantor().expect("guarantor adopted");
            emit(out.as_deref(), &cwc.credential().render())?;
        }
        Command::PostOffer {
            connect,
            key,
            from,
            to,
            mbps,
            price,
            currency,
            until,
            unbundled,
            premium,
            hint,
        } => {
            let key = load_key(&key)?;
            let mut terms = OfferTerms::new(Link::new(&from, &to), mbps, money(&price, &currency)?, until).unbundled(unbundled);
            if premium {
                terms = terms.qos(QosClass::PremiumBestEffort);
            }
            if !hint.is_empty() {
                terms = terms.hint(hint);
            }
            let cred = terms.sign(&key).map_err(Failure::usage)?;
            let mut c = client(&connect)?;
            let r = c.call(
                Role::ClearingHouse,
                msg::POST_OFFER,
                &key.public_id().to_string(),
                Payload::new().with_blob("offer", cred.render()),
            )?;
            println!("{}", reply(r, msg::POSTED)?.payload.get("offer_id").unwrap_or(""));
        }
        Command::Search { connect, query, on } => {
            let q = query.query(on)?;
            let mut c = client(&connect)?;
            let r = reply(c.call(Role::ClearingHouse, msg::QUERY, "harness", query_to_payload(&q))?, msg::OFFERS)?;
            for text in r.payload.blobs_named("offer") {
                println!("{text}");
            }
        }
        Command::Buy { agent, query, now, out } => {
            let (mut s, mut c) = session(&agent)?;
            let h = s.purchase_spot(&mut c, &query.query(now.date())?, now)?;
            emit(out.as_deref(), &h.to_payload().encode())?;
        }
        Command::Book {
            agent,
            query,
            now,
            start,
            end,
            out,
        } => {
            let interval = Interval::new(start, end).ok_or_else(|| Failure::usage("empty interval"))?;
            let (mut s, mut c) = session(&agent)?;
            let creds = s.purchase_future(&mut c, &query.query(start.date())?, interval, now)?;
            emit(out.as_deref(), &HeldCredential::list_to_payload(&creds).encode())?;
        }
        Command::Activate { agent, creds, now, out } => {
            let p = Payload::decode(&read(&creds)?).map_err(Failure::usage)?;
            let creds = HeldCredential::list_from_payload(&p).map_err(Failure::usage)?;
            let (mut s, mut c) = session(&agent)?;
            let h: Handle = s.activate(&mut c, &creds, now)?;
            emit(out.as_deref(), &h.to_payload().encode())?;
        }
        Command::Deposit { connect, isp, key } => {
            let key = load_key(&key)?;
            let mut c = client(&connect)?;
            let records = reply(c.call(Role::Isp, msg::COLLECT, "harness", Payload::new().with("isp", &isp))?, msg::RECORDS)?;
            let mut batch = Payload::new();
            for r in records.payload.blobs_named("record") {
                batch.push_blob("record", r);
            }
            let settled = reply(c.call(Role::Csc, msg::DEPOSIT, &key.public_id().to_string(), batch)?, msg::SETTLED)?;
            for (k, v) in settled.payload.fields() {
                println!("{k} {v}");
            }
        }
        Command::Report { connect } => {
            let mut c = client(&connect)?;
            for &role in connect.connect.0.keys() {
                let r = reply(c.call(role, msg::REPORT_REQ, "harness", Payload::new())?, msg::REPORT)?;
                println!("[{role}]");
                print!("{}", r.payload.blob("report").unwrap_or(""));
            }
        }
        Command::Clock { connect, now } => {
            let mut c = client(&connect)?;
            for &role in connect.connect.0.keys() {
                reply(c.call(role, msg::CLOCK_SET, "harness", Payload::new().with("now", now))?, msg::CLOCK_OK)?;
            }
        }
        Command::Run {
            scenario,
            transcript,
            report,
            connect,
        } => {
            let sc = Scenario::load(&scenario).map_err(Failure::usage)?;
            let transport: Option<Box<dyn bandx_harness::Transport>> = match connect {
                Some(e) => Some(Box::new(TcpTransport::connect(&e.0)?)),
                None => None,
            };
            let outcome = run_scenario(&sc, transport).map_err(Failure::usage)?;
            if let Some(path) = transcript {
                emit(Some(&path), &outcome.transcript)?;
            }
            emit(report.as_deref(), &outcome.report)?;
            if let Some(f) = &outcome.failure {
                eprintln!("{f}");
            }
            return Ok(outcome.exit_code() as u8);
        }
        Command::Serve {
            role,
            config,
            listen,
            deterministic,
        } => {
            let sc = Scenario::load(&config).map_err(Failure::usage)?;
            let world = World::from_scenario(&sc).map_err(Failure::usage)?;
            let service = world.service(role, deterministic).map_err(Failure::usage)?;
            let addr = listen.or(sc.header.listen.clone()).unwrap_or_else(|| "127.0.0.1:0".into());
            let listener = bind(&addr).map_err(Failure::usage)?;
            let local = listener.local_addr().map_err(Failure::usage)?;
            println!("listening {local}");
            std::io::stdout().flush().map_err(Failure::usage)?;
            serve(listener, service).map_err(Failure::usage)?;
        }
    }
    Ok(EXIT_OK as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("bandx: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
