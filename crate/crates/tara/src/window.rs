//! Bounded slot windows and quorum-threshold tracking.

use std::collections::BTreeMap;

use crate::messages::{ReplicaId, Seq};

/// Slot storage bounded to the sequence range `(stable, stable + size]`.
/// Advancing the stable bound prunes everything at or below it, which is how
/// garbage collection reclaims memory on every replica.
#[derive(Debug, Clone)]
pub struct SlotWindow<T> {
    stable: Seq,
    size: u32,
    slots: BTreeMap<Seq, T>,
}

impl<T> SlotWindow<T> {
    pub fn new(size: u32) -> Self {
        SlotWindow {
            stable: -1,
            size,
            slots: BTreeMap::new(),
        }
    }

    pub fn stable(&self) -> Seq {
        self.stable
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn contains_seq(&self, s: Seq) -> bool {
        s > self.stable && s <= self.stable + self.size as Seq
    }

    pub fn high_end(&self) -> Seq {
        self.stable + self.size as Seq
    }

    /// Inserts only when `s` lies inside the window; returns whether it did.
    pub fn insert(&mut self, s: Seq, value: T) -> bool {
        if !self.contains_seq(s) {
            return false;
        }
        self.slots.insert(s, value);
        true
    }

    pub fn get(&self, s: Seq) -> Option<&T> {
        self.slots.get(&s)
    }

    pub fn get_mut(&mut self, s: Seq) -> Option<&mut T> {
        self.slots.get_mut(&s)
    }

    pub fn remove(&mut self, s: Seq) -> Option<T> {
        self.slots.remove(&s)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Seq, &T)> {
        self.slots.iter()
    }

    /// Raises the stable bound and discards every slot at or below it.
    /// Returns the number of slots discarded. Lower announcements are ignored.
    pub fn advance_stable(&mut self, stable: Seq) -> usize {
        if stable <= self.stable {
            return 0;
        }
        self.stable = stable;
        let keep = self.slots.split_off(&(stable + 1));
        let dropped = self.slots.len();
        self.slots = keep;
        dropped
    }
}

/// Tracks the latest value reported by each member of a replica group and
/// yields the highest value that at least `f + 1` distinct members have
/// reached. With at most `f` crash faults, at least one correct member backs
/// that value.
#[derive(Debug, Clone)]
pub struct QuorumMax {
    f: u32,
    reported: BTreeMap<ReplicaId, i64>,
}

impl QuorumMax {
    pub fn new(f: u32) -> Self {
        QuorumMax {
            f,
            reported: BTreeMap::new(),
        }
    }

    /// Records `value` for `member` if it exceeds the member's previous
    /// report. Returns the quorum value after the update.
    pub fn update(&mut self, member: ReplicaId, value: i64) -> Option<i64> {
        let entry = self.reported.entry(member).or_insert(value);
        if value > *entry {
            *entry = value;
        }
        self.quorum_value()
    }

    /// The (f+1)-highest reported value, or None while fewer than f+1 members
    /// have reported.
    pub fn quorum_value(&self) -> Option<i64> {
        let need = self.f as usize + 1;
        if self.reported.len() < need {
            return None;
        }
        let mut values: Vec<i64> = self.reported.values().copied().collect();
        values.sort_unstable_by(|a, b| b.cmp(a));
        Some(values[need - 1])
    }

    pub fn reported(&self) -> &BTreeMap<ReplicaId, i64> {
        &self.reported
    }
}

/// Monotone adoption of quorum-backed announcements (stability thresholds,
/// views). Wraps a `QuorumMax` and remembers the highest quorum value seen so
/// adoption never regresses.
#[derive(Debug, Clone)]
pub struct QuorumAdopter {
    tracker: QuorumMax,
    adopted: i64,
}

impl QuorumAdopter {
    pub fn new(f: u32, initial: i64) -> Self {
        QuorumAdopter {
            tracker: QuorumMax::new(f),
            adopted: initial,
        }
    }

    /// Feeds one announcement; returns the new adopted value if it advanced.
    pub fn observe(&mut self, member: ReplicaId, value: i64) -> Option<i64> {
        if let Some(q) = self.tracker.update(member, value) {
            if q > self.adopted {
                self.adopted = q;
                return Some(q);
            }
        }
        None
    }

    pub fn adopted(&self) -> i64 {
        self.adopted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_bounds_and_pruning() {
        let mut w: SlotWindow<&'static str> = SlotWindow::new(4);
        assert_eq!(w.stable(), -1);
        assert!(w.insert(0, "a"));
        assert!(w.insert(3, "d"));
        assert!(!w.insert(4, "too high"));
        assert!(!w.insert(-1, "below"));
        assert_eq!(w.len(), 2);

        assert_eq!(w.advance_stable(0), 1);
        assert!(w.get(0).is_none());
        assert!(w.get(3).is_some());
        assert!(w.insert(4, "now fits"));
        assert_eq!(w.advance_stable(0), 0); // stale announcement ignored
        assert_eq!(w.stable(), 0);
    }

    #[test]
    fn quorum_needs_f_plus_one_reports() {
        let mut q = QuorumMax::new(1);
        assert_eq!(q.update(0, 300), None);
        assert_eq!(q.update(1, 200), Some(200));
        assert_eq!(q.update(2, 100), Some(200));
    }

    #[test]
    fn stale_reports_never_lower_a_member() {
        let mut q = QuorumMax::new(1);
        q.update(0, 300);
        q.update(1, 200);
        assert_eq!(q.update(1, 150), Some(200));
        assert_eq!(q.reported()[&1], 200);
    }

    #[test]
    fn adopter_is_monotone() {
        let mut a = QuorumAdopter::new(1, -1);
        assert_eq!(a.observe(0, 100), None);
        assert_eq!(a.observe(1, 100), Some(100));
        assert_eq!(a.observe(2, 50), None);
        assert_eq!(a.adopted(), 100);
        assert_eq!(a.observe(2, 200), None); // 200 only 1 deep
        assert_eq!(a.observe(0, 200), Some(200));
    }

    // Brute-force oracle: sort all reported values descending and take index f.
    fn oracle(reported: &BTreeMap<ReplicaId, i64>, f: u32) -> Option<i64> {
        if reported.len() < f as usize + 1 {
            return None;
        }
        let mut v: Vec<i64> = reported.values().copied().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        Some(v[f as usize])
    }

    proptest! {
        #[test]
        fn incremental_quorum_matches_sort_oracle(
            f in 0u32..4,
            updates in proptest::collection::vec((0u32..8, 0i64..500), 1..40),
        ) {
            let mut q = QuorumMax::new(f);
            let mut shadow: BTreeMap<ReplicaId, i64> = BTreeMap::new();
            for (member, value) in updates {
                q.update(member, value);
                let e = shadow.entry(member).or_insert(value);
                if value > *e {
                    *e = value;
                }
                prop_assert_eq!(q.quorum_value(), oracle(&shadow, f));
            }
        }

        #[test]
        fn window_never_exceeds_capacity(
            ops in proptest::collection::vec((0i64..200, any::<bool>()), 0..200),
        ) {
            let mut w: SlotWindow<i64> = SlotWindow::new(16);
            for (s, advance) in ops {
                if advance {
                    w.advance_stable(s);
                } else {
                    w.insert(s, s);
                }
                prop_assert!(w.len() <= 16);
                for (slot, _) in w.iter() {
                    prop_assert!(w.contains_seq(*slot));
                }
            }
        }
    }
}
