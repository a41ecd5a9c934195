//! Quorum tables and the quorum-to-quorum channel.
//!
//! Quorums are sampled from a shared beacon seed. The simulator knows the
//! bad set, so sampling can be rejected until every quorum meets the
//! goodness bound; this stands in for a real quorum-formation protocol and
//! its cost is not part of any protocol metric.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;
use crate::proto::MemberSet;
use crate::simnet::PlayerId;

/// Quorums are numbered `1..=n`.
pub type QuorumId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuorumError {
    #[error("no table met the goodness and load bounds after {0} attempts")]
    GoodnessUnsatisfiable(u32),
    #[error("quorum {quorum} has {bad} bad members, bound {bound}")]
    TooManyBad { quorum: QuorumId, bad: usize, bound: usize },
    #[error("player {player} is in {count} quorums, bound {bound}")]
    Overloaded { player: PlayerId, count: usize, bound: usize },
    #[error("quorum {0} is malformed")]
    Malformed(QuorumId),
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuorumParams {
    /// Quorum size is `⌈c · log2 n⌉`.
    pub c: f64,
    /// Slack over the global bad fraction allowed inside a quorum.
    pub delta: f64,
    /// Load bound: each player sits in at most `c_lb · log2 n` quorums.
    pub c_lb: f64,
    pub max_retries: u32,
}

impl Default for QuorumParams {
    fn default() -> Self {
        QuorumParams { c: 2.0, delta: 0.05, c_lb: 6.0, max_retries: 1000 }
    }
}

impl QuorumParams {
    pub fn quorum_size(&self, n: usize) -> usize {
        ((self.c * (n as f64).log2()).ceil() as usize).clamp(1, n)
    }

    /// Largest admissible number of bad members in one quorum.
    pub fn bad_bound(&self, n: usize, t: usize) -> usize {
        let q = self.quorum_size(n) as f64;
        ((t as f64 / n as f64 + self.delta) * q + 1e-9).floor() as usize
    }

    pub fn load_bound(&self, n: usize) -> usize {
        (self.c_lb * (n as f64).log2()).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuorumTable {
    pub n: usize,
    pub q: usize,
    pub params: QuorumParams,
    pub beacon_seed: u64,
    /// `quorums[i - 1]` lists the members of quorum `i`, in position order.
    pub quorums: Vec<Vec<PlayerId>>,
    pub membership: BTreeMap<PlayerId, Vec<QuorumId>>,
}

impl QuorumTable {
    pub fn members(&self, id: QuorumId) -> &[PlayerId] {
        &self.quorums[id as usize - 1]
    }

    pub fn quorums_of(&self, p: PlayerId) -> &[QuorumId] {
        self.membership.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn position(&self, id: QuorumId, p: PlayerId) -> Option<usize> {
        self.members(id).iter().position(|&m| m == p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Checks sizes, distinct members, goodness and load balance.
    pub fn audit(&self, bad: &BTreeSet<PlayerId>) -> Result<(), QuorumError> {
        let bound = self.params.bad_bound(self.n, bad.len());
        if self.quorums.len() != self.n {
            return Err(QuorumError::Malformed(0));
        }
        let mut load = vec![0usize; self.n];
        for (i, qm) in self.quorums.iter().enumerate() {
            let id = i as QuorumId + 1;
            let distinct: BTreeSet<_> = qm.iter().collect();
            if qm.len() != self.q || distinct.len() != self.q || qm.iter().any(|&p| p as usize >= self.n) {
                return Err(QuorumError::Malformed(id));
            }
            let b = qm.iter().filter(|p| bad.contains(p)).count();
            if b > bound {
                return Err(QuorumError::TooManyBad { quorum: id, bad: b, bound });
            }
            for &p in qm {
                load[p as usize] += 1;
            }
        }
        let lb = self.params.load_bound(self.n);
        if let Some((p, &count)) = load.iter().enumerate().max_by_key(|(_, c)| **c) {
            if count > lb {
                return Err(QuorumError::Overloaded { player: p as PlayerId, count, bound: lb });
            }
        }
        Ok(())
    }
}

/// Samples `n` quorums of size `⌈c log2 n⌉` from `beacon_seed`, resampling
/// any quorum whose bad count exceeds the goodness bound, and the whole table
/// if the load bound fails.
pub fn create_quorums(
    n: usize,
    bad: &BTreeSet<PlayerId>,
    params: QuorumParams,
    beacon_seed: u64,
) -> Result<QuorumTable, QuorumError> {
    if n < 2 {
        return Err(QuorumError::BadParams("need at least two players".into()));
    }
    if bad.len() * 4 >= n {
        return Err(QuorumError::BadParams(format!("{} bad of {n} is not below a quarter", bad.len())));
    }
    let q = params.quorum_size(n);
    let bound = params.bad_bound(n, bad.len());
    let mut rng = ChaCha8Rng::seed_from_u64(beacon_seed);
    for _ in 0..params.max_retries.max(1) {
        let mut quorums = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ok = None;
            for _ in 0..params.max_retries.max(1) {
                let mut m: Vec<PlayerId> = sample(&mut rng, n, q).into_iter().map(|i| i as PlayerId).collect();
                m.sort_unstable();
                if m.iter().filter(|p| bad.contains(p)).count() <= bound {
                    ok = Some(m);
                    break;
                }
            }
            quorums.push(ok.ok_or(QuorumError::GoodnessUnsatisfiable(params.max_retries))?);
        }
        let mut membership: BTreeMap<PlayerId, Vec<QuorumId>> = BTreeMap::new();
        for (i, qm) in quorums.iter().enumerate() {
            for &p in qm {
                membership.entry(p).or_default().push(i as QuorumId + 1);
            }
        }
        let table = QuorumTable { n, q, params, beacon_seed, quorums, membership };
        if table.audit(bad).is_ok() {
            return Ok(table);
        }
    }
    Err(QuorumError::GoodnessUnsatisfiable(params.max_retries))
}

/// Acceptance threshold `⌈7q/8⌉`.
pub fn seven_eighths(q: usize) -> usize {
    (7 * q).div_ceil(8)
}

/// Receiver-side tally of one quorum-to-quorum message: a payload is
/// accepted once `⌈7q/8⌉` distinct members of the sending quorum sent it;
/// at most one payload is ever accepted.
#[derive(Clone, Debug)]
pub struct QuorumTally<V> {
    threshold: usize,
    from: MemberSet,
    counts: HashMap<V, usize>,
    accepted: Option<V>,
}

impl<V: Clone + Eq + Hash> QuorumTally<V> {
    pub fn new(q: usize) -> Self {
        Self::with_threshold(q, seven_eighths(q))
    }

    pub fn with_threshold(q: usize, threshold: usize) -> Self {
        QuorumTally { threshold, from: MemberSet::new(q), counts: HashMap::new(), accepted: None }
    }

    /// Records `v` from member position `pos`; returns the payload the
    /// moment it becomes accepted.
    pub fn record(&mut self, pos: usize, v: V) -> Option<V> {
        if self.accepted.is_some() || !self.from.insert(pos) {
            return None;
        }
        let c = self.counts.entry(v.clone()).or_insert(0);
        *c += 1;
        if *c >= self.threshold {
            self.accepted = Some(v.clone());
            self.counts.clear();
            return Some(v);
        }
        None
    }

    pub fn accepted(&self) -> Option<&V> {
        self.accepted.as_ref()
    }
}

/// Maps an opened shared coin to one of `targets`.
pub fn random_quorum_choice<F: Field>(coin: F, targets: &[QuorumId]) -> Option<QuorumId> {
    if targets.is_empty() {
        return None;
    }
    Some(targets[(coin.value() % targets.len() as u64) as usize])
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::Fp31;

    fn bad_set(k: u32) -> BTreeSet<PlayerId> {
        (0..k).map(|i| i * 9 % 64).collect()
    }

    #[test]
    fn no_bad_players_sizes() {
        let t = create_quorums(64, &BTreeSet::new(), QuorumParams::default(), 1).unwrap();
        assert_eq!(t.quorums.len(), 64);
        assert!(t.quorums.iter().all(|q| q.len() == 12));
    }

    #[test]
    fn goodness_and_load_over_seeds() {
        let bad = bad_set(7);
        let p = QuorumParams { delta: 0.15, ..Default::default() };
        for seed in 0..100 {
            let t = create_quorums(64, &bad, p, seed).unwrap();
            for qm in &t.quorums {
                let frac = qm.iter().filter(|m| bad.contains(m)).count() as f64 / qm.len() as f64;
                assert!(frac <= 7.0 / 64.0 + 0.15);
            }
            let max = t.membership.values().map(Vec::len).max().unwrap();
            assert!(max as f64 <= 6.0 * 6.0);
        }
    }

    #[test]
    fn deterministic_and_json_round_trip() {
        let bad = bad_set(3);
        let a = create_quorums(32, &bad, QuorumParams::default(), 77).unwrap();
        let b = create_quorums(32, &bad, QuorumParams::default(), 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(QuorumTable::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn audit_catches_bad_quorum() {
        let bad: BTreeSet<PlayerId> = [0, 1, 2].into();
        let mut t = create_quorums(32, &bad, QuorumParams::default(), 5).unwrap();
        t.quorums[0] = (0..10).collect();
        assert!(matches!(t.audit(&bad), Err(QuorumError::TooManyBad { quorum: 1, .. })));
    }

    #[test]
    fn seven_eighths_tally() {
        assert_eq!(seven_eighths(12), 11);
        let mut t = QuorumTally::new(12);
        let mut got = None;
        for i in 0..12 {
            if let Some(v) = t.record(i, 5) {
                got = Some((i, v));
            }
        }
        assert_eq!(got, Some((10, 5)));

        let mut t = QuorumTally::new(12);
        for i in 0..10 {
            assert_eq!(t.record(i, 5), None);
        }
        assert_eq!(t.accepted(), None);

        let mut t = QuorumTally::new(12);
        t.record(0, 9);
        t.record(1, 9);
        for i in 2..12 {
            t.record(i, 5);
        }
        assert_eq!(t.accepted(), None);
        assert_eq!(t.record(1, 5), None);
        let mut t = QuorumTally::new(12);
        t.record(0, 9);
        for i in 1..12 {
            t.record(i, 5);
        }
        assert_eq!(t.accepted(), Some(&5));
    }

    #[test]
    fn random_choice_forced_and_uniform() {
        assert_eq!(random_quorum_choice(Fp31::from_u64(123), &[7]), Some(7));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let targets: Vec<QuorumId> = (1..=8).collect();
        let mut counts = [0f64; 8];
        let draws = 10_000;
        for _ in 0..draws {
            let c = Fp31::from_u64(rng.gen_range(0..Fp31::MODULUS));
            counts[random_quorum_choice(c, &targets).unwrap() as usize - 1] += 1.0;
        }
        let e = draws as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 7 degrees of freedom: p = 0.01 at 18.48
        assert!(chi2 < 18.48, "chi2 = {chi2}");
    }
}
