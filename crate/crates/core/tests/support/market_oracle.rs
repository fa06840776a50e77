use bandx_core::credential::SigningKey;
use bandx_core::market::{Link, Offer, OfferQuery, OfferTerms};
use bandx_core::money::{Currency, Money};
use bandx_core::time::Date;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random offer graph over at most 8 locations and 14 offers, with
/// deliberately narrow price ranges so equal-price plans are common.
pub fn random_market(seed: u64) -> (Vec<Offer>, OfferQuery) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let isps: Vec<SigningKey> = (0..3)
        .map(|i| SigningKey::derive(&format!("oracle-isp-{i}")))
        .collect();
    let n_loc = rng.gen_range(2..=8);
    let locs: Vec<String> = (0..n_loc).map(|i| format!("L{i}")).collect();
    let n_offers = rng.gen_range(n_loc.min(14)..=14);
    let base: Date = "20030601".parse().unwrap();
    let needed_on = base.add_days(10);
    let mut offers = Vec::new();
    for _ in 0..n_offers {
        let a = rng.gen_range(0..n_loc);
        let mut b = rng.gen_range(0..n_loc);
        if a == b {
            b = (b + 1) % n_loc;
        }
        let bandwidth = [25, 50, 50, 100][rng.gen_range(0..4)];
        let price = rng.gen_range(1..=12) * [1, 10][rng.gen_range(0..2)];
        let valid_until = base.add_days(rng.gen_range(8..40));
        let currency = if rng.gen_bool(0.95) { Currency::usd() } else { Currency::new("EUR").unwrap() };
        let terms = OfferTerms::new(
            Link::new(&locs[a], &locs[b]),
            bandwidth,
            Money::from_minor(price, currency),
            valid_until,
        )
        .unbundled(rng.gen_bool(0.6));
        let isp = &isps[rng.gen_range(0..isps.len())];
        offers.push(Offer::from_credential(terms.sign(isp).unwrap()).unwrap());
    }
    let from = rng.gen_range(0..n_loc);
    let mut to = rng.gen_range(0..n_loc);
    if from == to {
        to = (to + 1) % n_loc;
    }
    let q = OfferQuery::new(&locs[from], &locs[to], [25, 50, 50][rng.gen_range(0..3)], needed_on).unwrap();
    (offers, q)
}

fn usable(o: &Offer, q: &OfferQuery) -> bool {
    let bw = o.bandwidth_mbps();
    let p = q.min_bandwidth_mbps;
    o.currency() == &q.currency
        && o.valid_until() >= q.needed_on
        && (bw == p || (bw > p && o.unbundling_allowed()))
}

fn price(o: &Offer, p: u64) -> i64 {
    let num = o.min_price().minor() * p as i64;
    let den = o.bandwidth_mbps() as i64;
    (num + den - 1) / den
}

/// Cheapest simple path by exhaustive enumeration; ties resolved by the
/// lexicographically smallest offer-id sequence.
pub fn brute_force_plan(offers: &[Offer], q: &OfferQuery) -> Option<(i64, Vec<String>)> {
    let edges: Vec<&Offer> = offers.iter().filter(|o| usable(o, q)).collect();
    let mut best: Option<(i64, Vec<String>)> = None;
    let mut visited = vec![q.from.clone()];
    let mut ids = Vec::new();
    walk(&edges, q, &q.from, 0, &mut visited, &mut ids, &mut best);
    best
}

fn walk(
    edges: &[&Offer],
    q: &OfferQuery,
    at: &str,
    cost: i64,
    visited: &mut Vec<String>,
    ids: &mut Vec<String>,
    best: &mut Option<(i64, Vec<String>)>,
) {
    if at == q.to {
        let candidate = (cost, ids.clone());
        if best.as_ref().is_none_or(|b| candidate < *b) {
            *best = Some(candidate);
        }
        return;
    }
    for e in edges {
        let link = e.link();
        if link.from != at || visited.contains(&link.to) {
            continue;
        }
        visited.push(link.to.clone());
        ids.push(e.offer_id().to_string());
        walk(edges, q, &link.to, cost + price(e, q.min_bandwidth_mbps), visited, ids, best);
        ids.pop();
        visited.pop();
    }
}
