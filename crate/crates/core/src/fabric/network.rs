//! All ISPs of a simulated exchange and the NEs they operate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use sha2::{Digest, Sha256};

use crate::credential::{Credential, SigningKey};
use crate::market::{validate_unbundling, Link, Offer, OfferTerms, QosClass};
use crate::payments::{GuarantorRegistry, TransactionRecord};
use crate::time::{Interval, SimTime};

use super::ne::{NeMessage, NeReply, NetworkElement};
use super::pdp::Pdp;
use super::request::{Challenge, Purpose, ReservationRequest, DEFAULT_CHALLENGE_TTL_SECS};
use super::reservation::{BoundaryReferral, Reservation, ReservationCredential, ReservationState};
use super::topology::{KeepalivePolicy, Topology};
use super::FabricError;

/// One ISP: its signing key, PDP, reservation database and the payment
/// records waiting to be deposited.
#[derive(Debug)]
pub struct Isp {
    name: String,
    key: SigningKey,
    keepalive: Option<KeepalivePolicy>,
    pdp: Pdp,
    database: BTreeMap<String, Reservation>,
    guarantors: BTreeMap<String, Credential>,
    deposits: Vec<TransactionRecord>,
}

impl Isp {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key(&self) -> &SigningKey {
        &self.key
    }

    pub fn pdp(&self) -> &Pdp {
        &self.pdp
    }

    pub fn keepalive(&self) -> Option<&KeepalivePolicy> {
        self.keepalive.as_ref()
    }

    pub fn reservations(&self) -> &BTreeMap<String, Reservation> {
        &self.database
    }

    pub fn pending_deposits(&self) -> &[TransactionRecord] {
        &self.deposits
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpotOutcome {
    pub reservation: Reservation,
    pub referral: Option<BoundaryReferral>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FutureBooking {
    pub reservation: Reservation,
    pub credential: ReservationCredential,
    pub referral: Option<BoundaryReferral>,
}

/// Usage of one link direction at an instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkUsage {
    pub ne_id: String,
    pub link: String,
    pub capacity_mbps: u64,
    pub used_mbps: u64,
}

pub struct Fabric {
    topology: Topology,
    isps: BTreeMap<String, Isp>,
    nes: BTreeMap<String, NetworkElement>,
    rng: Box<dyn rand::RngCore + Send>,
    mailbox: VecDeque<(String, NeMessage)>,
    messages_delivered: u64,
}

impl std::fmt::Debug for Fabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fabric")
            .field("isps", &self.isps.keys().collect::<Vec<_>>())
            .field("nes", &self.nes.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

/// Work accepted by the ingress NE before capacity is installed.
struct Admission {
    own: Vec<Offer>,
    records: Vec<TransactionRecord>,
    segments: Vec<(String, String)>,
    referral: Option<BoundaryReferral>,
    qos_class: QosClass,
}

impl Fabric {
    /// `isp_keys` must hold the signing key of every ISP in the topology.
    pub fn new(
        topology: Topology,
        isp_keys: &BTreeMap<String, SigningKey>,
        registry: GuarantorRegistry,
        rng: Box<dyn rand::RngCore + Send>,
    ) -> Result<Fabric, FabricError> {
        let mut isps = BTreeMap::new();
        for spec in topology.isps.values() {
            let key = isp_keys
                .get(&spec.name)
                .ok_or_else(|| FabricError::Config(format!("no signing key for isp `{}`", spec.name)))?;
            if key.public_id() != spec.key {
                return Err(FabricError::Config(format!("signing key of `{}` does not match the topology", spec.name)));
            }
            isps.insert(
                spec.name.clone(),
                Isp {
                    name: spec.name.clone(),
                    key: key.clone(),
                    keepalive: spec.keepalive.clone(),
                    pdp: Pdp::new(spec.key.clone(), registry.clone()),
                    database: BTreeMap::new(),
                    guarantors: BTreeMap::new(),
                    deposits: Vec::new(),
                },
            );
        }
        let mut adjacency = topology.adjacency();
        let nes = topology
            .nes
            .values()
            .map(|n| {
                let ne = NetworkElement::new(
                    &n.ne_id,
                    &n.isp,
                    topology.isps[&n.isp].key.clone(),
                    &n.location,
                    adjacency.remove(&n.ne_id).unwrap_or_default(),
                    DEFAULT_CHALLENGE_TTL_SECS,
                );
                (n.ne_id.clone(), ne)
            })
            .collect();
        Ok(Fabric {
            topology,
            isps,
            nes,
            rng,
            mailbox: VecDeque::new(),
            messages_delivered: 0,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn isp(&self, name: &str) -> Option<&Isp> {
        self.isps.get(name)
    }

    pub fn isps(&self) -> impl Iterator<Item = &Isp> {
        self.isps.values()
    }

    pub fn ne(&self, ne_id: &str) -> Option<&NetworkElement> {
        self.nes.get(ne_id)
    }

    pub fn nes(&self) -> impl Iterator<Item = &NetworkElement> {
        self.nes.values()
    }

    pub fn messages_delivered(&self) -> u64 {
        self.messages_delivered
    }

    /// Every reservation of every ISP.
    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.isps.values().flat_map(|i| i.database.values())
    }

    pub fn reservation(&self, res_id: &str) -> Option<&Reservation> {
        self.isps.values().find_map(|i| i.database.get(res_id))
    }

    pub fn take_deposits(&mut self, isp: &str) -> Vec<TransactionRecord> {
        self.isps
            .get_mut(isp)
            .map(|i| std::mem::take(&mut i.deposits))
            .unwrap_or_default()
    }

    pub fn issue_challenge(&mut self, ne_id: &str, now: SimTime) -> Result<Challenge, FabricError> {
        let ne = self
            .nes
            .get_mut(ne_id)
            .ok_or_else(|| FabricError::UnknownNe(ne_id.to_string()))?;
        ne.prune_challenges(now);
        Ok(ne.issue_challenge(&mut self.rng, now))
    }

    /// Buys and installs the receiving ISP's run of the requested path.
    pub fn handle_spot_request(
        &mut self,
        ne_id: &str,
        req: &ReservationRequest,
        now: SimTime,
    ) -> Result<SpotOutcome, FabricError> {
        if req.purpose != Purpose::Spot {
            return Err(FabricError::MalformedRequest("not a spot request".into()));
        }
        let adm = self.admit(ne_id, req, now)?;
        let isp_name = self.nes[ne_id].isp().to_string();
        let end = adm
            .own
            .iter()
            .map(|o| o.valid_until())
            .min()
            .expect("admission has at least one offer")
            .succ()
            .start_of_day();
        let interval = Interval::new(now, end).ok_or_else(|| FabricError::PaymentRefused("offer expired".into()))?;
        let mut res = self.new_reservation(&isp_name, req, &adm, interval, ReservationState::Active);
        self.propagate_path(&res)?;
        self.meter(&isp_name, &mut res, now);
        self.commit(&isp_name, req, adm.records, &res);
        Ok(SpotOutcome {
            reservation: res,
            referral: adm.referral,
        })
    }

    /// Commits capacity over the requested future interval without
    /// installing a path and returns the signed reservation credential.
    pub fn book_future(
        &mut self,
        ne_id: &str,
        req: &ReservationRequest,
        now: SimTime,
    ) -> Result<FutureBooking, FabricError> {
        let Purpose::Future(interval) = req.purpose else {
            return Err(FabricError::MalformedRequest("not a futures request".into()));
        };
        if interval.start <= now {
            return Err(FabricError::MalformedRequest("booked interval must start in the future".into()));
        }
        let adm = self.admit(ne_id, req, now)?;
        let isp_name = self.nes[ne_id].isp().to_string();
        let res = self.new_reservation(&isp_name, req, &adm, interval, ReservationState::Notional);
        self.propagate_path(&res)?;
        let credential = ReservationCredential::issue(&self.isps[&isp_name].key, &res)?;
        self.commit(&isp_name, req, adm.records, &res);
        Ok(FutureBooking {
            reservation: res,
            credential,
            referral: adm.referral,
        })
    }

    /// Installs a committed booking. Capacity was charged at booking time,
    /// so this cannot run out of it.
    pub fn activate_reservation(
        &mut self,
        ne_id: &str,
        cred: &Credential,
        now: SimTime,
    ) -> Result<Reservation, FabricError> {
        let ne = self.nes.get(ne_id).ok_or_else(|| FabricError::UnknownNe(ne_id.to_string()))?;
        let isp_name = ne.isp().to_string();
        let view = self.isps[&isp_name].pdp.verify_reservation_credential(cred, now)?;
        let res = self.isps[&isp_name]
            .database
            .get(view.reservation_id())
            .filter(|r| {
                r.customer_key == *view.customer_key()
                    && r.links == view.links()
                    && r.bandwidth_mbps == view.bandwidth_mbps()
                    && r.interval == view.interval()
            })
            .ok_or_else(|| FabricError::UnknownReservation(view.reservation_id().to_string()))?
            .clone();
        if res.state != ReservationState::Notional {
            return Err(FabricError::NotActive(format!("reservation is {}", res.state)));
        }
        if res.ingress_ne().is_some_and(|i| i != ne_id) {
            return Err(FabricError::MalformedRequest(format!("activate at {}", res.ingress_ne().unwrap_or(""))));
        }
        for (ne, _) in &res.segments {
            let reply = self.send(ne, NeMessage::Activate { res_id: res.reservation_id.clone() });
            assert_eq!(reply, NeReply::Done, "activation of a committed booking refused");
        }
        let mut res = res;
        res.state = ReservationState::Active;
        self.meter(&isp_name, &mut res, now);
        self.isps
            .get_mut(&isp_name)
            .expect("isp exists")
            .database
            .insert(res.reservation_id.clone(), res.clone());
        Ok(res)
    }

    /// Accepts a periodic payment and moves the due time one period on.
    pub fn keepalive_payment(
        &mut self,
        ne_id: &str,
        res_id: &str,
        check: &Credential,
        now: SimTime,
    ) -> Result<SimTime, FabricError> {
        let ne = self.nes.get(ne_id).ok_or_else(|| FabricError::UnknownNe(ne_id.to_string()))?;
        let isp = &self.isps[ne.isp()];
        let res = isp
            .database
            .get(res_id)
            .ok_or_else(|| FabricError::UnknownReservation(res_id.to_string()))?;
        if res.state != ReservationState::Active {
            return Err(FabricError::NotActive(format!("reservation is {}", res.state)));
        }
        let (Some(policy), Some(due), Some(terms)) = (&isp.keepalive, res.next_payment_due, &res.keepalive_offer) else {
            return Err(FabricError::MalformedRequest("reservation is not payment-metered".into()));
        };
        if now >= due {
            return Err(FabricError::PaymentRefused("payment overdue".into()));
        }
        let offer = Offer::from_credential(terms.clone()).map_err(|_| FabricError::BadSignature)?;
        let guarantor = &isp.guarantors[res_id];
        let record = isp
            .pdp
            .authorize_payment(&offer, guarantor, check, &res.customer_key, res.bandwidth_mbps, now)?;
        let next = due.plus_secs(policy.period_secs);
        let isp_name = isp.name.clone();
        let isp = self.isps.get_mut(&isp_name).expect("isp exists");
        isp.pdp.commit(std::slice::from_ref(&record));
        isp.deposits.push(record);
        isp.database.get_mut(res_id).expect("checked above").next_payment_due = Some(next);
        Ok(next)
    }

    /// Ends reservations whose interval is over (`expired`) or whose
    /// payment is overdue (`lapsed`), releasing their capacity.
    pub fn expire_reservations(&mut self, now: SimTime) -> usize {
        let mut ending = Vec::new();
        for isp in self.isps.values() {
            for r in isp.database.values().filter(|r| r.state == ReservationState::Active) {
                let overdue = r.next_payment_due.filter(|d| *d < r.interval.end && now >= *d);
                if overdue.is_some() {
                    ending.push((isp.name.clone(), r.reservation_id.clone(), ReservationState::Lapsed));
                } else if now >= r.interval.end {
                    ending.push((isp.name.clone(), r.reservation_id.clone(), ReservationState::Expired));
                }
            }
        }
        for (isp, id, state) in &ending {
            self.end_reservation(isp, id, *state);
        }
        ending.len()
    }

    /// Customer-initiated release, also used to undo a partially
    /// established multi-ISP path. Live reservations end as `expired`.
    pub fn teardown(&mut self, ne_id: &str, res_id: &str) -> Result<Reservation, FabricError> {
        let ne = self.nes.get(ne_id).ok_or_else(|| FabricError::UnknownNe(ne_id.to_string()))?;
        let isp = ne.isp().to_string();
        let res = self.isps[&isp]
            .database
            .get(res_id)
            .ok_or_else(|| FabricError::UnknownReservation(res_id.to_string()))?;
        if !res.state.is_live() {
            return Err(FabricError::NotActive(format!("reservation is {}", res.state)));
        }
        self.end_reservation(&isp, res_id, ReservationState::Expired);
        Ok(self.isps[&isp].database[res_id].clone())
    }

    /// Recomputes every link's bookings from the ISPs' reservation
    /// databases and compares them with what the NEs hold.
    pub fn audit(&self) -> Result<(), String> {
        let mut expected: BTreeMap<(&str, &str), BTreeMap<&str, (Interval, u64)>> = BTreeMap::new();
        let mut expected_tables: BTreeMap<&str, BTreeMap<&str, ReservationState>> = BTreeMap::new();
        for r in self.reservations().filter(|r| r.state.is_live()) {
            for (ne, link) in &r.segments {
                expected_tables.entry(ne).or_default().insert(&r.reservation_id, r.state);
                if r.charges_capacity() {
                    expected
                        .entry((ne, link))
                        .or_default()
                        .insert(&r.reservation_id, (r.interval, r.bandwidth_mbps));
                }
            }
        }
        for ne in self.nes.values() {
            let table: BTreeMap<&str, ReservationState> =
                ne.table().iter().map(|(id, e)| (id.as_str(), e.state)).collect();
            if table != expected_tables.remove(ne.ne_id()).unwrap_or_default() {
                return Err(format!("{}: reservation table differs from the databases", ne.ne_id()));
            }
            for (link, cal) in ne.calendars() {
                let held: BTreeMap<&str, (Interval, u64)> =
                    cal.bookings().iter().map(|(id, b)| (id.as_str(), (b.interval, b.mbps))).collect();
                if held != expected.remove(&(ne.ne_id(), link.as_str())).unwrap_or_default() {
                    return Err(format!("{}: bookings on {link} differ from the databases", ne.ne_id()));
                }
                if cal.peak() > cal.capacity_mbps() {
                    return Err(format!("{}: {link} oversubscribed ({} > {})", ne.ne_id(), cal.peak(), cal.capacity_mbps()));
                }
            }
        }
        if let Some(((ne, link), _)) = expected.into_iter().next() {
            return Err(format!("reservation charged on unknown link {ne}/{link}"));
        }
        if let Some((ne, _)) = expected_tables.into_iter().next() {
            return Err(format!("reservation recorded on unknown ne {ne}"));
        }
        Ok(())
    }

    pub fn link_usage(&self, at: SimTime) -> Vec<LinkUsage> {
        self.nes
            .values()
            .flat_map(|ne| {
                ne.calendars().iter().map(move |(link, cal)| LinkUsage {
                    ne_id: ne.ne_id().to_string(),
                    link: link.clone(),
                    capacity_mbps: cal.capacity_mbps(),
                    used_mbps: cal.usage_at(at),
                })
            })
            .collect()
    }

    /// Installs `res` on every segment or on none.
    pub fn propagate_path(&mut self, res: &Reservation) -> Result<(), FabricError> {
        let mut done: Vec<&str> = Vec::new();
        for (ne, link) in &res.segments {
            let msg = NeMessage::Install {
                res_id: res.reservation_id.clone(),
                link: link.clone(),
                interval: res.interval,
                mbps: res.bandwidth_mbps,
                charge: res.charges_capacity(),
                state: res.state,
            };
            if let NeReply::Refused { ne_id, link } = self.send(ne, msg) {
                for prior in done {
                    self.send(prior, NeMessage::Release { res_id: res.reservation_id.clone() });
                }
                return Err(FabricError::CapacityExhausted { ne_id, link });
            }
            done.push(ne);
        }
        Ok(())
    }

    fn send(&mut self, to: &str, msg: NeMessage) -> NeReply {
        self.mailbox.push_back((to.to_string(), msg));
        let mut last = NeReply::Done;
        while let Some((to, msg)) = self.mailbox.pop_front() {
            self.messages_delivered += 1;
            last = self.nes.get_mut(&to).expect("messages go to known nes").handle(msg);
        }
        last
    }

    /// Everything the ingress NE checks before touching capacity:
    /// challenge, request signature, path shape, un-bundling and payment.
    fn admit(&mut self, ne_id: &str, req: &ReservationRequest, now: SimTime) -> Result<Admission, FabricError> {
        let ne = self.nes.get(ne_id).ok_or_else(|| FabricError::UnknownNe(ne_id.to_string()))?;
        ne.check_challenge(&req.challenge_id, now)?;
        let isp = &self.isps[ne.isp()];
        if !isp.pdp.verify_request_signature(req) {
            return Err(FabricError::BadSignature);
        }
        self.nes.get_mut(ne_id).expect("looked up above").consume_challenge(&req.challenge_id);
        let ne = &self.nes[ne_id];

        if req.bandwidth_mbps == 0 {
            return Err(FabricError::MalformedRequest("zero bandwidth".into()));
        }
        let offers = isp.pdp.verify_offers(&req.offers)?;
        for pair in offers.windows(2) {
            if pair[0].link().to != pair[1].link().from {
                return Err(FabricError::MalformedRequest("offers do not form a path".into()));
            }
        }
        let start = offers
            .iter()
            .enumerate()
            .position(|(i, o)| {
                o.isp_key() == ne.isp_key()
                    && o.link().from == ne.location()
                    && (i == 0 || offers[i - 1].isp_key() != ne.isp_key())
            })
            .ok_or_else(|| FabricError::MalformedRequest(format!("no offer of this isp leaves {}", ne.location())))?;
        let end = offers[start..]
            .iter()
            .position(|o| o.isp_key() != ne.isp_key())
            .map_or(offers.len(), |n| start + n);
        let own: Vec<Offer> = offers[start..end].to_vec();

        for o in &own {
            if !validate_unbundling(o, req.bandwidth_mbps) {
                return Err(FabricError::UnbundlingProhibited {
                    offer_id: o.offer_id().to_string(),
                });
            }
        }
        let qos_class = own[0].qos_class();
        if own.iter().any(|o| o.qos_class() != qos_class) {
            return Err(FabricError::MalformedRequest("mixed service classes".into()));
        }

        if req.microchecks.len() != own.len() {
            return Err(FabricError::PaymentRefused(format!(
                "{} offers of this isp but {} checks",
                own.len(),
                req.microchecks.len()
            )));
        }
        isp.pdp.check_guarantor(&req.guarantor, &req.customer_key)?;
        let mut records = Vec::new();
        let mut nonces = BTreeSet::new();
        for (o, check) in own.iter().zip(&req.microchecks) {
            if !o.is_valid_on(now.date()) {
                return Err(FabricError::PaymentRefused(format!("offer {} expired", o.offer_id())));
            }
            let rec = isp
                .pdp
                .authorize_payment(o, &req.guarantor, check, &req.customer_key, req.bandwidth_mbps, now)?;
            if !nonces.insert(rec.action.get("nonce").unwrap_or("").to_string()) {
                return Err(FabricError::PaymentRefused("nonce repeated within request".into()));
            }
            records.push(rec);
        }

        let mut segments = Vec::new();
        for o in &own {
            segments.extend(self.route(ne.isp(), o)?);
        }
        let mut visited = BTreeSet::new();
        if !segments.iter().all(|(n, _)| visited.insert(n.clone())) {
            return Err(FabricError::MalformedRequest("path revisits a network element".into()));
        }
        if segments.is_empty() {
            return Err(FabricError::NoRoute("empty intra-isp path".into()));
        }

        let referral = match offers.get(end) {
            None => None,
            Some(next) => {
                let spec = self
                    .topology
                    .isp_by_key(next.isp_key())
                    .ok_or_else(|| FabricError::NoRoute("next offer is from an unknown isp".into()))?;
                let ingress = self
                    .topology
                    .ne_at(&spec.name, &next.link().from)
                    .ok_or_else(|| FabricError::NoRoute(format!("{} has no ne at {}", spec.name, next.link().from)))?;
                Some(BoundaryReferral {
                    next_isp: spec.name.clone(),
                    ne_id: ingress.ne_id.clone(),
                    location: ingress.location.clone(),
                    next_offer: end,
                })
            }
        };
        Ok(Admission {
            own,
            records,
            segments,
            referral,
            qos_class,
        })
    }

    /// Intra-ISP route for one offer: its path hint when present, else a
    /// hop-count shortest path (ties to the smaller neighbor id).
    fn route(&self, isp: &str, offer: &Offer) -> Result<Vec<(String, String)>, FabricError> {
        let no_route = |m: String| FabricError::NoRoute(m);
        let ingress = self
            .topology
            .ne_at(isp, &offer.link().from)
            .ok_or_else(|| no_route(format!("{isp} has no ne at {}", offer.link().from)))?;
        let egress = self
            .topology
            .ne_at(isp, &offer.link().to)
            .ok_or_else(|| no_route(format!("{isp} has no ne at {}", offer.link().to)))?;
        let hops: Vec<String> = match offer.path_hint() {
            Some(hint) => {
                if hint.first() != Some(&ingress.ne_id) || hint.last() != Some(&egress.ne_id) {
                    return Err(no_route("path hint does not join the offer's endpoints".into()));
                }
                hint.to_vec()
            }
            None => self.shortest_hops(&ingress.ne_id, &egress.ne_id).ok_or_else(|| {
                no_route(format!("{} and {} are not connected", ingress.ne_id, egress.ne_id))
            })?,
        };
        hops.windows(2)
            .map(|w| {
                self.nes[&w[0]]
                    .links()
                    .iter()
                    .find(|(n, _, _)| *n == w[1])
                    .map(|(_, l, _)| (w[0].clone(), l.clone()))
                    .ok_or_else(|| no_route(format!("no link {} to {}", w[0], w[1])))
            })
            .collect()
    }

    fn shortest_hops(&self, from: &str, to: &str) -> Option<Vec<String>> {
        let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        let mut seen = BTreeSet::from([from]);
        while let Some(u) = queue.pop_front() {
            if u == to {
                let mut path = vec![to.to_string()];
                let mut at = to;
                while let Some(p) = parent.get(at) {
                    path.push(p.to_string());
                    at = p;
                }
                path.reverse();
                return Some(path);
            }
            for (v, _, _) in self.nes.get(u)?.links() {
                if seen.insert(v) {
                    parent.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        None
    }

    fn new_reservation(
        &self,
        isp: &str,
        req: &ReservationRequest,
        adm: &Admission,
        interval: Interval,
        state: ReservationState,
    ) -> Reservation {
        let digest = Sha256::digest(format!("{isp}\n{}", req.challenge_id).as_bytes());
        Reservation {
            reservation_id: digest[..8].iter().map(|b| format!("{b:02x}")).collect(),
            isp: isp.to_string(),
            state,
            segments: adm.segments.clone(),
            links: adm.own.iter().map(|o| o.link().name()).collect(),
            offer_ids: adm.own.iter().map(|o| o.offer_id().to_string()).collect(),
            bandwidth_mbps: req.bandwidth_mbps,
            interval,
            customer_key: req.customer_key.clone(),
            qos_class: adm.qos_class,
            scheduling_weight: (adm.qos_class == QosClass::PremiumBestEffort).then_some(req.bandwidth_mbps),
            next_payment_due: None,
            keepalive_offer: None,
        }
    }

    /// Starts periodic billing on a newly active reservation when the ISP
    /// requires it.
    fn meter(&self, isp: &str, res: &mut Reservation, now: SimTime) {
        let Some(policy) = &self.isps[isp].keepalive else {
            return;
        };
        let first = Link::parse(&res.links[0]).expect("reservation links are offer links");
        let last = Link::parse(res.links.last().expect("non-empty")).expect("offer link");
        let terms = OfferTerms::new(
            Link::new(&first.from, &last.to),
            res.bandwidth_mbps,
            policy.price.clone(),
            res.interval.end.plus_secs(-1).date(),
        );
        let cred = terms.sign(&self.isps[isp].key).expect("isp key signs");
        res.keepalive_offer = Some(cred);
        res.next_payment_due = Some(now.plus_secs(policy.period_secs));
    }

    fn commit(&mut self, isp: &str, req: &ReservationRequest, records: Vec<TransactionRecord>, res: &Reservation) {
        let isp = self.isps.get_mut(isp).expect("isp exists");
        isp.pdp.commit(&records);
        isp.deposits.extend(records);
        isp.guarantors.insert(res.reservation_id.clone(), req.guarantor.clone());
        let prior = isp.database.insert(res.reservation_id.clone(), res.clone());
        assert!(prior.is_none(), "reservation id reused");
    }

    fn end_reservation(&mut self, isp: &str, res_id: &str, state: ReservationState) {
        let segments = {
            let r = self
                .isps
                .get_mut(isp)
                .and_then(|i| i.database.get_mut(res_id))
                .expect("ending a known reservation");
            r.state = state;
            r.next_payment_due = None;
            r.segments.clone()
        };
        for (ne, _) in segments {
            self.send(&ne, NeMessage::Release { res_id: res_id.to_string() });
        }
    }
}
