use std::collections::BTreeMap;
use std::fmt::Display;

use bandx_core::codec::Payload;
use bandx_core::credential::{self, ActionAttributeSet, Credential, PublicKeyId, SigningKey};
use bandx_core::fixtures;
use bandx_core::market::{ClearingHouse, Link, Offer, OfferQuery, OfferTerms, PathPlan};
use bandx_core::money::{Currency, Money};
use bandx_core::time::Date;
use bandx_harness::{Envelope, Scenario};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn date(text: &str) -> PyResult<Date> {
    text.parse().map_err(err)
}

fn money(text: &str, currency: &str) -> PyResult<Money> {
    Money::parse_decimal(text, Currency::new(currency).map_err(err)?).map_err(err)
}

#[pyclass(name = "SigningKey", frozen)]
struct PySigningKey(SigningKey);

#[pymethods]
impl PySigningKey {
    /// Same label, same key.
    #[staticmethod]
    fn derive(label: &str) -> Self {
        PySigningKey(SigningKey::derive(label))
    }

    #[staticmethod]
    fn from_private_text(text: &str) -> PyResult<Self> {
        SigningKey::from_private_text(text).map(PySigningKey).map_err(err)
    }

    fn private_text(&self) -> String {
        self.0.to_private_text()
    }

    fn public_id(&self) -> String {
        self.0.public_id().to_string()
    }
}

#[pyclass(name = "Credential", frozen, from_py_object)]
#[derive(Clone)]
struct PyCredential(Credential);

#[pymethods]
impl PyCredential {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        credential::parse_credential(text).map(PyCredential).map_err(err)
    }

    fn render(&self) -> String {
        self.0.render()
    }

    fn is_policy(&self) -> bool {
        self.0.is_policy()
    }

    fn authorizer(&self) -> Option<String> {
        self.0.authorizer_key().map(ToString::to_string)
    }

    fn verify(&self) -> PyResult<bool> {
        self.0.verify_signature().map_err(err)
    }

    /// Re-signs with `key`; the authorizer must be that key.
    fn sign(&self, key: &PySigningKey) -> PyResult<Self> {
        self.0.clone().sign(&key.0).map(PyCredential).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Credential(authorizer={:?})", self.authorizer().unwrap_or_else(|| "POLICY".into()))
    }
}

fn action_set(attrs: BTreeMap<String, String>) -> PyResult<ActionAttributeSet> {
    ActionAttributeSet::from_map(attrs).map_err(err)
}

/// True when the signed credentials, rooted in the policy assertions,
/// authorize `requesters` to perform the action described by `action`.
#[pyfunction]
fn check_compliance(
    policy: Vec<PyCredential>,
    credentials: Vec<PyCredential>,
    requesters: Vec<String>,
    action: BTreeMap<String, String>,
) -> PyResult<bool> {
    let policy: Vec<Credential> = policy.into_iter().map(|c| c.0).collect();
    let creds: Vec<Credential> = credentials.into_iter().map(|c| c.0).collect();
    let keys = requesters.iter().map(|k| PublicKeyId::parse(k)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    credential::check_compliance(&policy, &creds, &keys, &action_set(action)?).map_err(err)
}

/// The four-credential example chain plus its action and requester.
#[pyfunction]
fn worked_example() -> (Vec<PyCredential>, Vec<PyCredential>, Vec<String>, BTreeMap<String, String>) {
    let ex = fixtures::worked_example();
    let action = fixtures::worked_example_action();
    (
        vec![PyCredential(ex.policy.clone())],
        ex.signed_credentials().into_iter().map(PyCredential).collect(),
        vec![ex.alice.public_id().to_string()],
        action.as_map().clone(),
    )
}

#[pyclass(name = "Offer", frozen, from_py_object)]
#[derive(Clone)]
struct PyOffer(Offer);

#[pymethods]
impl PyOffer {
    #[new]
    #[pyo3(signature = (key, from_city, to_city, mbps, price, until, currency = "USD", unbundled = false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        key: &PySigningKey,
        from_city: &str,
        to_city: &str,
        mbps: u64,
        price: &str,
        until: &str,
        currency: &str,
        unbundled: bool,
    ) -> PyResult<Self> {
        let cred = OfferTerms::new(Link::new(from_city, to_city), mbps, money(price, currency)?, date(until)?)
            .unbundled(unbundled)
            .sign(&key.0)
            .map_err(err)?;
        Offer::from_credential(cred).map(PyOffer).map_err(err)
    }

    #[staticmethod]
    fn from_credential(cred: &PyCredential) -> PyResult<Self> {
        Offer::from_credential(cred.0.clone()).map(PyOffer).map_err(err)
    }

    #[getter]
    fn offer_id(&self) -> String {
        self.0.offer_id().to_string()
    }

    #[getter]
    fn link(&self) -> String {
        self.0.link().name()
    }

    #[getter]
    fn bandwidth_mbps(&self) -> u64 {
        self.0.bandwidth_mbps()
    }

    #[getter]
    fn min_price(&self) -> String {
        self.0.min_price().to_string()
    }

    #[getter]
    fn unbundling_allowed(&self) -> bool {
        self.0.unbundling_allowed()
    }

    fn credential(&self) -> PyCredential {
        PyCredential(self.0.credential().clone())
    }

    /// Price for a slice of the offered bandwidth, rounded up to the minor unit.
    fn prorated_price(&self, mbps: u64) -> String {
        self.0.prorated_price(mbps).to_decimal()
    }
}

fn query(from: &str, to: &str, mbps: u64, on: &str, currency: &str, max: Option<&str>) -> PyResult<OfferQuery> {
    let q = OfferQuery::new(from, to, mbps, date(on)?)
        .map_err(err)?
        .with_currency(Currency::new(currency).map_err(err)?);
    Ok(match max {
        Some(m) => q.with_max_price(money(m, currency)?),
        None => q,
    })
}

/// `(total, [(offer_id, link, purchased_mbps, price)])`
type Plan = (String, Vec<(String, String, u64, String)>);

fn plan(p: PathPlan) -> Plan {
    let segs = p
        .segments
        .into_iter()
        .map(|s| (s.offer.offer_id().to_string(), s.offer.link().name(), s.purchased_mbps, s.price.to_decimal()))
        .collect();
    (p.total_price.to_decimal(), segs)
}

#[pyclass(name = "ClearingHouse", frozen)]
struct PyClearingHouse(ClearingHouse);

#[pymethods]
impl PyClearingHouse {
    #[new]
    fn new() -> Self {
        PyClearingHouse(ClearingHouse::new())
    }

    fn post(&self, offer: &PyOffer, today: &str) -> PyResult<String> {
        let o = self.0.post_offer(offer.0.credential().clone(), date(today)?).map_err(err)?;
        Ok(o.offer_id().to_string())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[pyo3(signature = (from_city, to_city, mbps, on, currency = "USD", max_price = None))]
    fn search(&self, from_city: &str, to_city: &str, mbps: u64, on: &str, currency: &str, max_price: Option<&str>) -> PyResult<Vec<PyOffer>> {
        let q = query(from_city, to_city, mbps, on, currency, max_price)?;
        Ok(self.0.query_offers(&q).into_iter().map(PyOffer).collect())
    }

    #[pyo3(signature = (from_city, to_city, mbps, on, currency = "USD", max_price = None))]
    fn compose(&self, from_city: &str, to_city: &str, mbps: u64, on: &str, currency: &str, max_price: Option<&str>) -> PyResult<Plan> {
        let q = query(from_city, to_city, mbps, on, currency, max_price)?;
        self.0.compose_path(&q).map(plan).map_err(err)
    }
}

/// Composes a cheapest path from an explicit offer list.
#[pyfunction]
#[pyo3(signature = (offers, from_city, to_city, mbps, on, currency = "USD", max_price = None))]
fn compose_path(offers: Vec<PyOffer>, from_city: &str, to_city: &str, mbps: u64, on: &str, currency: &str, max_price: Option<&str>) -> PyResult<Plan> {
    let q = query(from_city, to_city, mbps, on, currency, max_price)?;
    let offers: Vec<Offer> = offers.into_iter().map(|o| o.0).collect();
    bandx_core::market::compose_path(&offers, &q).map(plan).map_err(err)
}

#[pyclass(name = "Envelope", frozen, get_all)]
struct PyEnvelope {
    msg_type: String,
    sender: String,
    seq: u64,
    fields: BTreeMap<String, String>,
    blobs: Vec<(String, String)>,
}

#[pymethods]
impl PyEnvelope {
    #[new]
    #[pyo3(signature = (msg_type, sender, seq, fields = BTreeMap::new(), blobs = Vec::new()))]
    fn new(msg_type: String, sender: String, seq: u64, fields: BTreeMap<String, String>, blobs: Vec<(String, String)>) -> Self {
        PyEnvelope { msg_type, sender, seq, fields, blobs }
    }

    #[staticmethod]
    fn decode(text: &str) -> PyResult<Self> {
        let e = Envelope::decode(text).map_err(err)?;
        Ok(PyEnvelope {
            fields: e.payload.fields().clone(),
            blobs: e.payload.blobs().to_vec(),
            msg_type: e.msg_type,
            sender: e.sender,
            seq: e.seq,
        })
    }

    fn encode(&self) -> String {
        let mut p = Payload::new();
        for (k, v) in &self.fields {
            p.set(k, v.clone());
        }
        for (name, body) in &self.blobs {
            p.push_blob(name, body.clone());
        }
        Envelope::new(&self.msg_type, &self.sender, self.seq, p).encode()
    }
}

#[pyclass(name = "RunResult", frozen, get_all)]
struct PyRunResult {
    exit_code: i32,
    transcript: String,
    report: String,
    failure: Option<String>,
    outcomes: BTreeMap<String, String>,
}

fn run(sc: &Scenario) -> PyResult<PyRunResult> {
    let out = bandx_harness::run_scenario(sc, None).map_err(err)?;
    Ok(PyRunResult {
        exit_code: out.exit_code(),
        failure: out.failure.as_ref().map(ToString::to_string),
        transcript: out.transcript,
        report: out.report,
        outcomes: out.outcomes,
    })
}

/// Runs a scenario file in-process.
#[pyfunction]
fn run_scenario_file(path: &str) -> PyResult<PyRunResult> {
    run(&Scenario::load(path).map_err(err)?)
}

/// Runs scenario text; `base_dir` resolves topology and journal paths.
#[pyfunction]
#[pyo3(signature = (text, base_dir = "."))]
fn run_scenario_text(text: &str, base_dir: &str) -> PyResult<PyRunResult> {
    run(&Scenario::parse(text, base_dir).map_err(err)?)
}

#[pymodule]
fn pybandx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySigningKey>()?;
    m.add_class::<PyCredential>()?;
    m.add_class::<PyOffer>()?;
    m.add_class::<PyClearingHouse>()?;
    m.add_class::<PyEnvelope>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(check_compliance, m)?)?;
    m.add_function(wrap_pyfunction!(worked_example, m)?)?;
    m.add_function(wrap_pyfunction!(compose_path, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_file, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_text, m)?)?;
    Ok(())
}
