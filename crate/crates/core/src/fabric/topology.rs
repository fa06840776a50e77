//! Textual network description.
//!
//! ```text
//! # comment
//! isp  <name> <public-key-id> [keepalive <seconds> <price> <currency>]
//! ne   <ne-id> <isp> <location>
//! link <ne-id> <ne-id> <capacity-mbps>
//! ```
//!
//! A `link` is duplex; each direction is charged separately against the
//! stated capacity and is owned by the NE it leaves. Links join NEs of
//! the same ISP. An ISP has at most one NE per location, which is its
//! ingress and egress point there.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::credential::PublicKeyId;
use crate::money::{Currency, Money};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("topology line {line}: {reason}")]
pub struct TopologyError {
    pub line: usize,
    pub reason: String,
}

/// Periodic payment an ISP requires to keep a reservation installed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepalivePolicy {
    pub period_secs: i64,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IspSpec {
    pub name: String,
    pub key: PublicKeyId,
    pub keepalive: Option<KeepalivePolicy>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeSpec {
    pub ne_id: String,
    pub isp: String,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub capacity_mbps: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    pub isps: BTreeMap<String, IspSpec>,
    pub nes: BTreeMap<String, NeSpec>,
    pub links: Vec<LinkSpec>,
}

/// Name of the direction of a link leaving `from`.
pub fn link_name(from: &str, to: &str) -> String {
    format!("{from}>{to}")
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Topology {
    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut t = Topology::default();
        let mut seen_links = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| TopologyError { line, reason };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let words: Vec<&str> = body.split_whitespace().collect();
            match words[0] {
                "isp" => {
                    let spec = parse_isp(&words).map_err(err)?;
                    if t.isps.contains_key(&spec.name) {
                        return Err(err(format!("duplicate isp `{}`", spec.name)));
                    }
                    if t.isps.values().any(|o| o.key == spec.key) {
                        return Err(err(format!("isp `{}` reuses another isp's key", spec.name)));
                    }
                    t.isps.insert(spec.name.clone(), spec);
                }
                "ne" => {
                    let [_, ne_id, isp, location] = words[..] else {
                        return Err(err("expected `ne <id> <isp> <location>`".into()));
                    };
                    if !is_ident(ne_id) || !is_ident(location) {
                        return Err(err("bad identifier".into()));
                    }
                    if !t.isps.contains_key(isp) {
                        return Err(err(format!("unknown isp `{isp}`")));
                    }
                    if t.nes.contains_key(ne_id) {
                        return Err(err(format!("duplicate ne `{ne_id}`")));
                    }
                    if t.nes.values().any(|n| n.isp == isp && n.location == location) {
                        return Err(err(format!("isp `{isp}` already has an ne at {location}")));
                    }
                    t.nes.insert(
                        ne_id.to_string(),
                        NeSpec {
                            ne_id: ne_id.to_string(),
                            isp: isp.to_string(),
                            location: location.to_string(),
                        },
                    );
                }
                "link" => {
                    let [_, a, b, cap] = words[..] else {
                        return Err(err("expected `link <ne> <ne> <mbps>`".into()));
                    };
                    let (Some(na), Some(nb)) = (t.nes.get(a), t.nes.get(b)) else {
                        return Err(err("link names an unknown ne".into()));
                    };
                    if a == b {
                        return Err(err("link joins an ne to itself".into()));
                    }
                    if na.isp != nb.isp {
                        return Err(err("link crosses isps".into()));
                    }
                    let capacity_mbps = cap
                        .parse::<u64>()
                        .ok()
                        .filter(|c| *c > 0 && c.to_string() == cap)
                        .ok_or_else(|| err(format!("bad capacity `{cap}`")))?;
                    let key = if a < b { (a, b) } else { (b, a) };
                    if !seen_links.insert((key.0.to_string(), key.1.to_string())) {
                        return Err(err(format!("duplicate link {a} {b}")));
                    }
                    t.links.push(LinkSpec {
                        a: a.to_string(),
                        b: b.to_string(),
                        capacity_mbps,
                    });
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        Ok(t)
    }

    /// The NE of `isp` at `location`.
    pub fn ne_at(&self, isp: &str, location: &str) -> Option<&NeSpec> {
        self.nes.values().find(|n| n.isp == isp && n.location == location)
    }

    pub fn isp_by_key(&self, key: &PublicKeyId) -> Option<&IspSpec> {
        self.isps.values().find(|i| &i.key == key)
    }

    /// Outgoing directions per NE: `(neighbor, link_name, capacity)`,
    /// sorted by neighbor.
    pub fn adjacency(&self) -> BTreeMap<String, Vec<(String, String, u64)>> {
        let mut adj: BTreeMap<String, Vec<(String, String, u64)>> =
            self.nes.keys().map(|k| (k.clone(), Vec::new())).collect();
        for l in &self.links {
            for (from, to) in [(&l.a, &l.b), (&l.b, &l.a)] {
                adj.get_mut(from)
                    .expect("links join known nes")
                    .push((to.clone(), link_name(from, to), l.capacity_mbps));
            }
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }
}

fn parse_isp(words: &[&str]) -> Result<IspSpec, String> {
    let (name, key, rest) = match words {
        [_, name, key, rest @ ..] => (*name, *key, rest),
        _ => return Err("expected `isp <name> <key>`".into()),
    };
    if !is_ident(name) {
        return Err(format!("bad isp name `{name}`"));
    }
    let key = PublicKeyId::parse(key).map_err(|e| e.to_string())?;
    let keepalive = match rest {
        [] => None,
        ["keepalive", secs, price, currency] => {
            let period_secs = secs
                .parse::<i64>()
                .ok()
                .filter(|s| *s > 0)
                .ok_or_else(|| format!("bad keepalive period `{secs}`"))?;
            let currency = Currency::new(currency).map_err(|e| e.to_string())?;
            let price = Money::parse_decimal(price, currency).map_err(|e| e.to_string())?;
            if !price.is_positive() {
                return Err("keepalive price must be positive".into());
            }
            Some(KeepalivePolicy { period_secs, price })
        }
        _ => return Err("expected `keepalive <seconds> <price> <currency>`".into()),
    };
    Ok(IspSpec {
        name: name.to_string(),
        key,
        keepalive,
    })
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for isp in self.isps.values() {
            write!(f, "isp {} {}", isp.name, isp.key)?;
            if let Some(k) = &isp.keepalive {
                write!(
                    f,
                    " keepalive {} {} {}",
                    k.period_secs,
                    k.price.to_decimal(),
                    k.price.currency()
                )?;
            }
            writeln!(f)?;
        }
        for ne in self.nes.values() {
            writeln!(f, "ne {} {} {}", ne.ne_id, ne.isp, ne.location)?;
        }
        for l in &self.links {
            writeln!(f, "link {} {} {}", l.a, l.b, l.capacity_mbps)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credential::SigningKey;

    fn sample() -> String {
        let a = SigningKey::derive("topo/a").public_id();
        let b = SigningKey::derive("topo/b").public_id();
        format!(
            "# two isps\nisp A {a} keepalive 3600 0.50 USD\nisp B {b}\n\
             ne a.rome A Rome\nne a.paris A Paris  # egress\nne b.paris B Paris\nne b.dublin B Dublin\n\
             link a.rome a.paris 100\nlink b.paris b.dublin 80\n"
        )
    }

    #[test]
    fn parses_and_round_trips() {
        let t = Topology::parse(&sample()).unwrap();
        assert_eq!(t.isps.len(), 2);
        assert_eq!(t.isps["A"].keepalive.as_ref().unwrap().period_secs, 3600);
        assert_eq!(t.ne_at("B", "Paris").unwrap().ne_id, "b.paris");
        let adj = t.adjacency();
        assert_eq!(adj["a.paris"], vec![("a.rome".into(), "a.paris>a.rome".into(), 100)]);
        assert_eq!(Topology::parse(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_lines() {
        let base = sample();
        for (extra, needle) in [
            ("link a.rome b.paris 10", "crosses"),
            ("link a.rome a.paris 10", "duplicate link"),
            ("ne a.rome2 A Rome", "already has"),
            ("link a.rome a.paris 010", "capacity"),
            ("ne x.y C Oslo", "unknown isp"),
            ("route a b", "unknown directive"),
        ] {
            let e = Topology::parse(&format!("{base}{extra}\n")).unwrap_err();
            assert!(e.reason.contains(needle), "{extra}: {e}");
            assert_eq!(e.line, base.lines().count() + 1);
        }
    }
}
