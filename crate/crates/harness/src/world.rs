//! Keys, topology and role services built from a scenario header.
//!
//! ISP keys come from the topology file: the key column of an `isp` line
//! may be `derive:<label>` (key derived from the label) or `file:<path>`
//! (private key file relative to the topology file) instead of a public
//! key id. Every other principal's key is derived from the seed and its
//! name, so all processes given the same header agree on the key set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bandx_core::credential::{PublicKeyId, SigningKey};
use bandx_core::fabric::{Fabric, Topology};
use bandx_core::payments::{ClearingSettlementCenter, CscConfig, GuarantorRegistry};
use bandx_core::time::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::scenario::{Header, Scenario};
use crate::service::{ClearingHouseService, CscService, GuarantorService, IspService, Role, Service};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(String),
    #[error("topology: {0}")]
    Topology(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct World {
    pub header: Header,
    pub topology: Topology,
    pub isp_keys: BTreeMap<String, SigningKey>,
    pub guarantor_keys: BTreeMap<String, SigningKey>,
    pub csc_key: SigningKey,
    journal: Option<std::path::PathBuf>,
}

/// Replaces `derive:` and `file:` key columns with public key ids.
pub fn resolve_topology(text: &str, base: &Path) -> Result<(String, BTreeMap<String, SigningKey>), ConfigError> {
    let mut keys = BTreeMap::new();
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let words: Vec<&str> = line.split('#').next().unwrap_or("").split_whitespace().collect();
        if words.first() == Some(&"isp") && words.len() >= 3 {
            let bad = |r: String| ConfigError::Topology(format!("line {}: {r}", i + 1));
            let key = if let Some(label) = words[2].strip_prefix("derive:") {
                Some(SigningKey::derive(label))
            } else if let Some(file) = words[2].strip_prefix("file:") {
                let text = fs::read_to_string(base.join(file)).map_err(|e| bad(format!("{file}: {e}")))?;
                Some(SigningKey::from_private_text(&text).map_err(|e| bad(e.to_string()))?)
            } else {
                None
            };
            if let Some(key) = key {
                let mut rebuilt = words.clone();
                let public = key.public_id().to_string();
                rebuilt[2] = &public;
                out.push_str(&rebuilt.join(" "));
                out.push('\n');
                keys.insert(words[1].to_string(), key);
                continue;
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    Ok((out, keys))
}

impl World {
    pub fn from_scenario(sc: &Scenario) -> Result<World, ConfigError> {
        let (topology, isp_keys) = match sc.topology_path() {
            None => (Topology::default(), BTreeMap::new()),
            Some(path) => {
                let text = fs::read_to_string(&path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let (resolved, keys) = resolve_topology(&text, base)?;
                let topology = Topology::parse(&resolved).map_err(|e| ConfigError::Topology(e.to_string()))?;
                (topology, keys)
            }
        };
        for name in topology.isps.keys() {
            if !isp_keys.contains_key(name) {
                return Err(ConfigError::Invalid(format!("isp `{name}` has no private key in the topology")));
            }
        }
        let seed = sc.header.seed;
        let guarantor_keys = sc
            .header
            .guarantors
            .iter()
            .map(|g| (g.name.clone(), SigningKey::derive(&format!("bandx/{seed}/guarantor/{}", g.name))))
            .collect();
        Ok(World {
            header: sc.header.clone(),
            topology,
            isp_keys,
            guarantor_keys,
            csc_key: SigningKey::derive(&format!("bandx/{seed}/csc")),
            journal: sc.journal_path(),
        })
    }

    pub fn clock(&self) -> SimTime {
        self.header.clock
    }

    pub fn customer_key(&self, name: &str) -> SigningKey {
        SigningKey::derive(&format!("bandx/{}/customer/{name}", self.header.seed))
    }

    /// Guarantors every ISP and the settlement center accept.
    pub fn registry(&self) -> GuarantorRegistry {
        let mut reg = GuarantorRegistry::new();
        for g in self.header.guarantors.iter().filter(|g| g.trusted) {
            reg.add(self.guarantor_keys[&g.name].public_id());
        }
        reg
    }

    /// Names of the principals known from the header, by key.
    pub fn labels(&self) -> BTreeMap<PublicKeyId, String> {
        let mut out = BTreeMap::new();
        for (name, k) in self.isp_keys.iter().chain(&self.guarantor_keys) {
            out.insert(k.public_id(), name.clone());
        }
        out.insert(self.csc_key.public_id(), "csc".to_string());
        out
    }

    /// `deterministic` seeds service randomness from the header seed;
    /// otherwise it comes from system entropy.
    pub fn service(&self, role: Role, deterministic: bool) -> Result<Box<dyn Service>, ConfigError> {
        let now = self.clock();
        Ok(match role {
            Role::ClearingHouse => Box::new(ClearingHouseService::new(now)),
            Role::Isp => {
                let rng = if deterministic {
                    ChaCha20Rng::seed_from_u64(self.header.seed)
                } else {
                    ChaCha20Rng::from_entropy()
                };
                let fabric = Fabric::new(self.topology.clone(), &self.isp_keys, self.registry(), Box::new(rng))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Box::new(IspService::new(fabric, now))
            }
            Role::Csc => {
                let config = CscConfig {
                    commission_bps: self.header.commission_bps,
                    daily_cap: self.header.daily_cap.clone(),
                };
                let key = self.csc_key.public_id();
                let csc = match &self.journal {
                    Some(path) => ClearingSettlementCenter::open(path, key, self.registry(), config)
                        .map_err(|e| ConfigError::Io(format!("journal: {e}")))?,
                    None => ClearingSettlementCenter::new(key, self.registry(), config),
                };
                Box::new(CscService::new(csc, now))
            }
            Role::Guarantor => Box::new(GuarantorService::new(self.guarantor_keys.clone(), now)),
        })
    }

    /// Same as [`World::service`] but never opens the journal; simulation
    /// runs keep the ledger in memory.
    pub fn simulation_services(&self) -> Result<BTreeMap<Role, Box<dyn Service>>, ConfigError> {
        let mut sim = self.clone();
        sim.journal = None;
        Role::ALL.iter().map(|&r| Ok((r, sim.service(r, true)?))).collect()
    }
}
