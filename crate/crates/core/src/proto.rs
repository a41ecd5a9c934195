//! Shared plumbing for the sans-IO protocol components.
//!
//! Components address peers by their zero-based position in a participant
//! list; the hosting player node maps positions to [`PlayerId`]s.

use serde::{Deserialize, Serialize};

use crate::simnet::PlayerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dest {
    All,
    One(usize),
}

pub type Outgoing<M> = Vec<(Dest, M)>;

/// What a session is for. Tags are part of the session id so that
/// concurrent instances never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    InputCommit = 1,
    InputBroadcast = 2,
    MaskGen = 3,
    MaskAcs = 4,
    Majority = 5,
    MajorityBa = 6,
    GateEval = 7,
    Open = 8,
    Counter = 9,
    Output = 10,
    SizeOfS = 11,
    Coin = 12,
    Standalone = 13,
    MpcAvss = 14,
    MpcAcs = 15,
    MpcOpen = 16,
    MpcReduce = 17,
}

/// Session identifier: `(owner, node, purpose, index)`.
///
/// `owner` is the dealer or quorum that started the session, `node` the
/// circuit or counter node it belongs to, `index` a sub-instance counter
/// (e.g. the dealer index inside an agreement on a common subset).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId {
    pub owner: u32,
    pub node: u32,
    pub purpose: Purpose,
    pub index: u32,
}

impl SessionId {
    pub const fn new(owner: u32, node: u32, purpose: Purpose, index: u32) -> Self {
        SessionId { owner, node, purpose, index }
    }

    pub fn with_index(self, index: u32) -> Self {
        SessionId { index, ..self }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.owner.to_le_bytes());
        out.extend_from_slice(&self.node.to_le_bytes());
        out.push(self.purpose as u8);
        out.extend_from_slice(&self.index.to_le_bytes());
    }

    /// Stable 64-bit digest, used to derive per-session beacon values.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut buf = Vec::with_capacity(13);
        self.encode(&mut buf);
        for b in buf {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

/// Position of `p` in `members`, if any.
pub fn position(members: &[PlayerId], p: PlayerId) -> Option<usize> {
    members.iter().position(|&m| m == p)
}

/// Expands component output into `(receiver, message)` pairs.
pub fn route<'a, M: Clone + 'a>(members: &'a [PlayerId], out: Outgoing<M>) -> impl Iterator<Item = (PlayerId, M)> + 'a {
    out.into_iter().flat_map(move |(dest, m)| -> Vec<(PlayerId, M)> {
        match dest {
            Dest::All => members.iter().map(|&p| (p, m.clone())).collect(),
            Dest::One(i) => members.get(i).map(|&p| vec![(p, m)]).unwrap_or_default(),
        }
    })
}

/// SplitMix64 finaliser; deterministic beacon derivation.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed-capacity set of member positions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemberSet {
    bits: Vec<u64>,
    count: usize,
}

impl MemberSet {
    pub fn new(capacity: usize) -> Self {
        MemberSet { bits: vec![0; capacity.div_ceil(64).max(1)], count: 0 }
    }

    /// Returns true if newly inserted.
    pub fn insert(&mut self, i: usize) -> bool {
        let (w, b) = (i / 64, i % 64);
        if w >= self.bits.len() {
            self.bits.resize(w + 1, 0);
        }
        if self.bits[w] & (1 << b) != 0 {
            return false;
        }
        self.bits[w] |= 1 << b;
        self.count += 1;
        true
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn member_set_counts_distinct() {
        let mut s = MemberSet::new(10);
        assert!(s.insert(3));
        assert!(!s.insert(3));
        assert!(s.insert(70));
        assert_eq!(s.len(), 2);
        assert!(s.contains(70) && !s.contains(4));
    }

    #[test]
    fn routing_expands_broadcasts() {
        let members = [5, 7, 9];
        let out: Vec<_> = route(&members, vec![(Dest::All, 'a'), (Dest::One(1), 'b'), (Dest::One(8), 'c')]).collect();
        assert_eq!(out, vec![(5, 'a'), (7, 'a'), (9, 'a'), (7, 'b')]);
    }

    #[test]
    fn session_digests_differ() {
        let a = SessionId::new(1, 2, Purpose::MaskGen, 0);
        assert_ne!(a.digest(), a.with_index(1).digest());
    }
}
