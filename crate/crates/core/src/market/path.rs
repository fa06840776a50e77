//! Minimum-price path composition over the offer graph.
//!
//! Nodes are locations, edges are eligible offers priced at the pro-rated
//! cost of the requested bandwidth. Bandwidth feasibility is edge-local, so
//! filtering edges first reduces the problem to a single-criterion shortest
//! path. Among equally cheap plans the lexicographically smallest
//! offer-id sequence wins: Dijkstra from both ends marks the edges lying on
//! some optimal path, then a walk from the source takes the smallest id at
//! each step. Prices are positive, so the walk strictly advances along the
//! optimal distance and cannot cycle.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::money::Money;

use super::offer::{validate_unbundling, Offer};
use super::{MarketError, OfferQuery};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanSegment {
    pub offer: Offer,
    pub purchased_mbps: u64,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathPlan {
    pub segments: Vec<PlanSegment>,
    pub total_price: Money,
}

impl PathPlan {
    pub fn purchased_mbps(&self) -> u64 {
        self.segments.first().map_or(0, |s| s.purchased_mbps)
    }

    pub fn offer_ids(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.offer.offer_id()).collect()
    }

    /// Structural invariants: non-empty, chained endpoints, constant
    /// purchase within every offer's bandwidth, total equal to the sum.
    pub fn check(&self) -> Result<(), String> {
        let first = self.segments.first().ok_or("empty plan")?;
        let mbps = first.purchased_mbps;
        let mut total = Money::zero(self.total_price.currency().clone());
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.purchased_mbps != mbps {
                return Err(format!("segment {i} buys {} of {mbps}", seg.purchased_mbps));
            }
            if mbps > seg.offer.bandwidth_mbps() {
                return Err(format!("segment {i} exceeds offered bandwidth"));
            }
            if seg.price != seg.offer.prorated_price(mbps) {
                return Err(format!("segment {i} mispriced"));
            }
            if let Some(next) = self.segments.get(i + 1) {
                if seg.offer.link().to != next.offer.link().from {
                    return Err(format!("segments {i} and {} do not meet", i + 1));
                }
            }
            total = total.checked_add(&seg.price).map_err(|e| e.to_string())?;
        }
        if total != self.total_price {
            return Err("total differs from segment sum".into());
        }
        Ok(())
    }
}

/// Offers usable for `q`: right currency, valid on the needed day and
/// purchasable at the requested bandwidth.
pub fn eligible(offer: &Offer, q: &OfferQuery) -> bool {
    offer.currency() == &q.currency
        && offer.is_valid_on(q.needed_on)
        && validate_unbundling(offer, q.min_bandwidth_mbps)
}

pub fn compose_path(offers: &[Offer], q: &OfferQuery) -> Result<PathPlan, MarketError> {
    let edges: Vec<(&Offer, i64)> = offers
        .iter()
        .filter(|o| eligible(o, q))
        .map(|o| (o, o.prorated_price(q.min_bandwidth_mbps).minor()))
        .collect();

    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (o, _) in &edges {
        for loc in [o.link().from.as_str(), o.link().to.as_str()] {
            let next = index.len();
            index.entry(loc).or_insert(next);
        }
    }
    let (Some(&src), Some(&dst)) = (index.get(q.from.as_str()), index.get(q.to.as_str())) else {
        return Err(MarketError::NoPath);
    };

    let n = index.len();
    let mut out_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut in_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, (o, _)) in edges.iter().enumerate() {
        let u = index[o.link().from.as_str()];
        let v = index[o.link().to.as_str()];
        out_edges[u].push((v, e));
        in_edges[v].push((u, e));
    }

    let from_src = dijkstra(src, &out_edges, &edges);
    let to_dst = dijkstra(dst, &in_edges, &edges);
    let Some(best) = from_src[dst] else {
        return Err(MarketError::NoPath);
    };
    if let Some(max) = &q.max_total_price {
        if best > max.minor() {
            return Err(MarketError::NoPath);
        }
    }

    let mut segments = Vec::new();
    let mut at = src;
    while at != dst {
        let here = from_src[at].expect("walk stays on reachable nodes");
        let (next, e) = out_edges[at]
            .iter()
            .filter(|(v, e)| matches!(to_dst[*v], Some(rest) if here + edges[*e].1 + rest == best))
            .min_by_key(|(_, e)| edges[*e].0.offer_id())
            .copied()
            .expect("an optimal edge leaves every node on an optimal path");
        let (offer, _) = edges[e];
        segments.push(PlanSegment {
            offer: offer.clone(),
            purchased_mbps: q.min_bandwidth_mbps,
            price: offer.prorated_price(q.min_bandwidth_mbps),
        });
        at = next;
    }
    let plan = PathPlan {
        segments,
        total_price: Money::from_minor(best, q.currency.clone()),
    };
    if let Err(why) = plan.check() {
        panic!("composed plan violates its invariants: {why}");
    }
    Ok(plan)
}

fn dijkstra(start: usize, adj: &[Vec<(usize, usize)>], edges: &[(&Offer, i64)]) -> Vec<Option<i64>> {
    let mut dist: Vec<Option<i64>> = vec![None; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[start] = Some(0);
    heap.push(Reverse((0i64, start)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if dist[u] != Some(d) {
            continue;
        }
        for &(v, e) in &adj[u] {
            let nd = d + edges[e].1;
            if dist[v].is_none_or(|old| nd < old) {
                dist[v] = Some(nd);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    dist
}
