//! Per-link capacity ledger over simulation time.

use std::collections::BTreeMap;

use crate::time::{Interval, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Booking {
    pub interval: Interval,
    pub mbps: u64,
}

/// Bookings charged against one link direction. Usage at an instant is
/// the sum over bookings whose interval contains it; admission keeps that
/// at or below `capacity_mbps` everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkCalendar {
    capacity_mbps: u64,
    bookings: BTreeMap<String, Booking>,
}

impl LinkCalendar {
    pub fn new(capacity_mbps: u64) -> Self {
        LinkCalendar {
            capacity_mbps,
            bookings: BTreeMap::new(),
        }
    }

    pub fn capacity_mbps(&self) -> u64 {
        self.capacity_mbps
    }

    pub fn bookings(&self) -> &BTreeMap<String, Booking> {
        &self.bookings
    }

    pub fn usage_at(&self, t: SimTime) -> u64 {
        self.bookings
            .values()
            .filter(|b| b.interval.contains(t))
            .map(|b| b.mbps)
            .sum()
    }

    /// Highest usage at any instant of `window`. Usage is piecewise
    /// constant and only rises at booking starts, so those starts plus the
    /// window start are the only candidates.
    pub fn peak_within(&self, window: &Interval) -> u64 {
        std::iter::once(window.start)
            .chain(
                self.bookings
                    .values()
                    .map(|b| b.interval.start)
                    .filter(|s| window.contains(*s)),
            )
            .map(|t| self.usage_at(t))
            .max()
            .unwrap_or(0)
    }

    /// Highest usage at any instant.
    pub fn peak(&self) -> u64 {
        self.bookings
            .values()
            .map(|b| self.usage_at(b.interval.start))
            .max()
            .unwrap_or(0)
    }

    pub fn can_admit(&self, interval: &Interval, mbps: u64) -> bool {
        self.peak_within(interval) + mbps <= self.capacity_mbps
    }

    /// Charges `mbps` over `interval` under `id`; `false` leaves the
    /// calendar unchanged.
    pub fn admit(&mut self, id: &str, interval: Interval, mbps: u64) -> bool {
        assert!(!self.bookings.contains_key(id), "booking `{id}` charged twice");
        if !self.can_admit(&interval, mbps) {
            return false;
        }
        self.bookings.insert(id.to_string(), Booking { interval, mbps });
        true
    }

    pub fn release(&mut self, id: &str) -> Option<Booking> {
        self.bookings.remove(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(h: i64) -> SimTime {
        "20031119T000000".parse::<SimTime>().unwrap().plus_secs(h * 3600)
    }

    fn iv(a: i64, b: i64) -> Interval {
        Interval::new(at(a), at(b)).unwrap()
    }

    #[test]
    fn admits_until_full() {
        let mut c = LinkCalendar::new(100);
        assert!(c.admit("a", iv(0, 10), 60));
        assert!(!c.admit("b", iv(5, 6), 50));
        assert!(c.admit("b", iv(10, 12), 100));
        assert!(c.admit("c", iv(2, 4), 40));
        assert_eq!(c.peak(), 100);
        c.release("a");
        assert!(c.admit("d", iv(0, 10), 60));
    }

    proptest! {
        #[test]
        fn admission_never_exceeds_capacity(
            ops in prop::collection::vec((0i64..20, 1i64..8, 1u64..60, any::<bool>()), 1..40)
        ) {
            let mut c = LinkCalendar::new(100);
            for (i, (start, len, mbps, release)) in ops.into_iter().enumerate() {
                let id = format!("r{i}");
                let interval = iv(start, start + len);
                let before = c.clone();
                let fits = (0..40).all(|h| before.usage_at(at(h)) + if interval.contains(at(h)) { mbps } else { 0 } <= 100);
                prop_assert_eq!(c.admit(&id, interval, mbps), fits);
                if release && i % 3 == 0 {
                    c.release(&id);
                }
                for h in 0..40 {
                    prop_assert!(c.usage_at(at(h)) <= 100);
                }
            }
        }
    }
}
