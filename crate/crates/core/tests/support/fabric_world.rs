//! A small exchange of ISPs with a customer-side driver that follows
//! boundary referrals, for fabric and acceptance tests.

use std::collections::BTreeMap;

use bandx_core::credential::{Credential, SigningKey};
use bandx_core::fabric::*;
use bandx_core::market::{Link, Offer, OfferTerms};
use bandx_core::money::{Currency, Money};
use bandx_core::payments::{issue_guarantor_credential, CheckBook, GuarantorRegistry};
use bandx_core::time::{Interval, SimTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn t0() -> SimTime {
    "20031110T090000".parse().unwrap()
}

pub struct Customer {
    pub book: CheckBook,
    pub guarantor: Credential,
}

pub struct FabricWorld {
    pub fabric: Fabric,
    pub isp_keys: BTreeMap<String, SigningKey>,
    pub guarantor_key: SigningKey,
    pub rng: ChaCha8Rng,
}

pub fn isp_key(tag: &str, isp: &str) -> SigningKey {
    SigningKey::derive(&format!("fabric-world/{tag}/isp/{isp}"))
}

/// Topology text with derived ISP keys. `isps` entries carry an optional
/// keepalive suffix such as `keepalive 3600 0.50 USD`.
pub fn topology_text(tag: &str, isps: &[(&str, &str)], nes: &[(&str, &str, &str)], links: &[(&str, &str, u64)]) -> String {
    let mut t = String::new();
    for (name, extra) in isps {
        t += &format!("isp {name} {} {extra}\n", isp_key(tag, name).public_id());
    }
    for (id, isp, loc) in nes {
        t += &format!("ne {id} {isp} {loc}\n");
    }
    for (a, b, c) in links {
        t += &format!("link {a} {b} {c}\n");
    }
    t
}

impl FabricWorld {
    pub fn new(tag: &str, topology: &str, seed: u64) -> FabricWorld {
        let topology = Topology::parse(topology).unwrap();
        let isp_keys: BTreeMap<String, SigningKey> =
            topology.isps.keys().map(|n| (n.clone(), isp_key(tag, n))).collect();
        let guarantor_key = SigningKey::derive(&format!("fabric-world/{tag}/guarantor"));
        let registry = GuarantorRegistry::new().with(guarantor_key.public_id());
        let fabric = Fabric::new(
            topology,
            &isp_keys,
            registry,
            Box::new(ChaCha8Rng::seed_from_u64(seed)),
        )
        .unwrap();
        FabricWorld {
            fabric,
            isp_keys,
            guarantor_key,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
        }
    }

    /// The two-ISP Rome to Dublin network.
    pub fn two_isp(tag: &str, seed: u64) -> FabricWorld {
        let text = topology_text(
            tag,
            &[("A", ""), ("B", "")],
            &[
                ("a.rome", "A", "Rome"),
                ("a.milan", "A", "Milan"),
                ("a.paris", "A", "Paris"),
                ("b.paris", "B", "Paris"),
                ("b.london", "B", "London"),
                ("b.dublin", "B", "Dublin"),
            ],
            &[
                ("a.rome", "a.milan", 100),
                ("a.milan", "a.paris", 100),
                ("b.paris", "b.london", 100),
                ("b.london", "b.dublin", 100),
            ],
        );
        FabricWorld::new(tag, &text, seed)
    }

    pub fn customer(&self, label: &str) -> Customer {
        let key = SigningKey::derive(&format!("fabric-world/customer/{label}"));
        let guarantor = issue_guarantor_credential(
            &self.guarantor_key,
            &key.public_id(),
            &Money::from_minor(100_000, Currency::usd()),
            "20050101".parse().unwrap(),
            t0().date(),
        )
        .unwrap()
        .credential()
        .clone();
        Customer {
            book: CheckBook::new(key),
            guarantor,
        }
    }

    pub fn offer(&self, isp: &str, from: &str, to: &str, mbps: u64, price_minor: i64, unbundled: bool) -> Credential {
        OfferTerms::new(
            Link::new(from, to),
            mbps,
            Money::from_minor(price_minor, Currency::usd()),
            "20031130".parse().unwrap(),
        )
        .unbundled(unbundled)
        .sign(&self.isp_keys[isp])
        .unwrap()
    }

    /// Challenge from `ne_id` answered with checks paying for the run of
    /// offers starting at `start`.
    pub fn request(
        &mut self,
        cust: &mut Customer,
        ne_id: &str,
        offers: &[Credential],
        start: usize,
        mbps: u64,
        purpose: Purpose,
        now: SimTime,
    ) -> ReservationRequest {
        let challenge = self.fabric.issue_challenge(ne_id, now).unwrap();
        let parsed: Vec<Offer> = offers.iter().map(|c| Offer::from_credential(c.clone()).unwrap()).collect();
        let isp = parsed[start].isp_key().clone();
        let mut checks = Vec::new();
        for o in parsed[start..].iter().take_while(|o| o.isp_key() == &isp) {
            let nonce = cust.book.fresh_nonce(&mut self.rng);
            let check = cust
                .book
                .write_check(&isp, &o.prorated_price(mbps), &nonce, now.date())
                .unwrap();
            checks.push(check.credential().clone());
        }
        ReservationRequest::sign(
            cust.book.key(),
            &challenge.challenge_id,
            purpose,
            offers.to_vec(),
            cust.guarantor.clone(),
            checks,
            mbps,
        )
    }

    fn ingress(&self, offer: &Credential) -> String {
        let o = Offer::from_credential(offer.clone()).unwrap();
        let isp = self.fabric.topology().isp_by_key(o.isp_key()).unwrap().name.clone();
        self.fabric.topology().ne_at(&isp, &o.link().from).unwrap().ne_id.clone()
    }

    /// Buys the whole path, following referrals; on failure tears down
    /// what was already established.
    pub fn spot(&mut self, cust: &mut Customer, offers: &[Credential], mbps: u64, now: SimTime) -> Result<Vec<Reservation>, FabricError> {
        let mut held: Vec<Reservation> = Vec::new();
        let mut ne = self.ingress(&offers[0]);
        let mut start = 0;
        loop {
            let req = self.request(cust, &ne, offers, start, mbps, Purpose::Spot, now);
            match self.fabric.handle_spot_request(&ne, &req, now) {
                Ok(out) => {
                    held.push(out.reservation);
                    match out.referral {
                        None => return Ok(held),
                        Some(r) => {
                            ne = r.ne_id;
                            start = r.next_offer;
                        }
                    }
                }
                Err(e) => {
                    for r in &held {
                        self.fabric.teardown(r.ingress_ne().unwrap(), &r.reservation_id).unwrap();
                    }
                    return Err(e);
                }
            }
        }
    }

    pub fn future(
        &mut self,
        cust: &mut Customer,
        offers: &[Credential],
        mbps: u64,
        interval: Interval,
        now: SimTime,
    ) -> Result<Vec<(String, ReservationCredential)>, FabricError> {
        let mut held: Vec<(String, ReservationCredential)> = Vec::new();
        let mut ne = self.ingress(&offers[0]);
        let mut start = 0;
        loop {
            let req = self.request(cust, &ne, offers, start, mbps, Purpose::Future(interval), now);
            match self.fabric.book_future(&ne, &req, now) {
                Ok(b) => {
                    held.push((ne.clone(), b.credential));
                    match b.referral {
                        None => return Ok(held),
                        Some(r) => {
                            ne = r.ne_id;
                            start = r.next_offer;
                        }
                    }
                }
                Err(e) => {
                    for (ne, c) in &held {
                        self.fabric.teardown(ne, c.reservation_id()).unwrap();
                    }
                    return Err(e);
                }
            }
        }
    }

    /// Per-link bookings recomputed from the reservation databases.
    pub fn recomputed_bookings(&self) -> BTreeMap<(String, String), Vec<(Interval, u64)>> {
        let mut out: BTreeMap<(String, String), Vec<(Interval, u64)>> = BTreeMap::new();
        for r in self.fabric.reservations() {
            if r.state.is_live() && r.charges_capacity() {
                for (ne, link) in &r.segments {
                    out.entry((ne.clone(), link.clone())).or_default().push((r.interval, r.bandwidth_mbps));
                }
            }
        }
        out
    }

    /// Independent capacity check: at every booking start on every link,
    /// the summed bandwidth of live reservations stays within capacity,
    /// and each NE's calendar holds exactly those bookings.
    pub fn check_capacity(&self) -> Result<(), String> {
        let recomputed = self.recomputed_bookings();
        for ne in self.fabric.nes() {
            for (neighbor, link, cap) in ne.links() {
                let _ = neighbor;
                let mine = recomputed.get(&(ne.ne_id().to_string(), link.clone())).cloned().unwrap_or_default();
                for (iv, _) in &mine {
                    let at = iv.start;
                    let used: u64 = mine.iter().filter(|(i, _)| i.contains(at)).map(|(_, m)| m).sum();
                    if used > *cap {
                        return Err(format!("{} {link}: {used} > {cap} at {at}", ne.ne_id()));
                    }
                }
                let mut held: Vec<(Interval, u64)> =
                    ne.calendar(link).unwrap().bookings().values().map(|b| (b.interval, b.mbps)).collect();
                let mut want = mine.clone();
                held.sort();
                want.sort();
                if held != want {
                    return Err(format!("{} {link}: calendar differs from reservation tables", ne.ne_id()));
                }
            }
        }
        Ok(())
    }
}

/// Offers of the two-ISP network, all un-bundled and valid for the month.
pub fn two_isp_offers(w: &FabricWorld) -> Vec<(&'static str, Credential)> {
    vec![
        ("rome-paris", w.offer("A", "Rome", "Paris", 100, 1000, true)),
        ("rome-milan", w.offer("A", "Rome", "Milan", 100, 600, true)),
        ("milan-paris", w.offer("A", "Milan", "Paris", 100, 600, true)),
        ("paris-dublin", w.offer("B", "Paris", "Dublin", 100, 900, true)),
        ("paris-london", w.offer("B", "Paris", "London", 100, 500, true)),
        ("london-dublin", w.offer("B", "London", "Dublin", 100, 500, true)),
    ]
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CommitmentStats {
    pub spot_accepted: usize,
    pub spot_refused: usize,
}

/// Books a future path, throws `load` random spot purchases at the same
/// links before the booked interval starts, then activates the booking.
/// Fails if activation is refused or any capacity check fails.
pub fn commitment_scenario(seed: u64, load: usize) -> Result<CommitmentStats, String> {
    use rand::seq::SliceRandom;
    use rand::Rng;

    let mut w = FabricWorld::two_isp("commitment", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offers = two_isp_offers(&w);
    let by = |names: &[&str]| -> Vec<Credential> {
        names.iter().map(|n| offers.iter().find(|(k, _)| k == n).unwrap().1.clone()).collect()
    };
    let paths: Vec<Vec<Credential>> = vec![
        by(&["rome-paris"]),
        by(&["rome-paris", "paris-dublin"]),
        by(&["paris-dublin"]),
        by(&["rome-milan"]),
        by(&["milan-paris", "paris-london"]),
        by(&["rome-paris", "paris-london", "london-dublin"]),
        by(&["paris-london", "london-dublin"]),
    ];
    let mut booker = w.customer("booker");
    let mut others: Vec<Customer> = (0..3).map(|i| w.customer(&format!("load{i}"))).collect();

    let start = t0().plus_secs(3600 * rng.gen_range(2..48));
    let interval = Interval::new(start, start.plus_secs(3600 * rng.gen_range(1..6))).unwrap();
    let booked = paths[rng.gen_range(0..3)].clone();
    let mbps = *[25u64, 50, 75, 100].choose(&mut rng).unwrap();
    let creds = w
        .future(&mut booker, &booked, mbps, interval, t0())
        .map_err(|e| format!("seed {seed}: booking refused: {e}"))?;

    let mut stats = CommitmentStats::default();
    let mut now = t0();
    let step = (t0().secs_until(start) / load as i64).max(1);
    for _ in 0..load {
        now = now.plus_secs(rng.gen_range(0..=step)).min(start.plus_secs(-1));
        let path = paths.choose(&mut rng).unwrap().clone();
        let bw = 5 * rng.gen_range(1..=20u64);
        let cust = others.choose_mut(&mut rng).unwrap();
        match w.spot(cust, &path, bw, now) {
            Ok(held) => {
                stats.spot_accepted += 1;
                if rng.gen_bool(0.2) {
                    for r in held {
                        w.fabric.teardown(r.ingress_ne().unwrap(), &r.reservation_id).unwrap();
                    }
                }
            }
            Err(FabricError::CapacityExhausted { .. }) => stats.spot_refused += 1,
            Err(e) => return Err(format!("seed {seed}: unexpected spot error {e}")),
        }
        w.fabric.expire_reservations(now);
        w.fabric.audit().map_err(|e| format!("seed {seed}: {e}"))?;
        w.check_capacity().map_err(|e| format!("seed {seed}: {e}"))?;
    }

    let at = start.plus_secs(rng.gen_range(0..interval.start.secs_until(interval.end)));
    for (ne, c) in &creds {
        match w.fabric.activate_reservation(ne, c.credential(), at) {
            Ok(r) if r.state == ReservationState::Active => {}
            Ok(r) => return Err(format!("seed {seed}: activation left state {}", r.state)),
            Err(e) => return Err(format!("seed {seed}: activation refused: {e}")),
        }
    }
    w.fabric.audit().map_err(|e| format!("seed {seed}: {e}"))?;
    w.check_capacity().map_err(|e| format!("seed {seed}: {e}"))?;
    Ok(stats)
}
