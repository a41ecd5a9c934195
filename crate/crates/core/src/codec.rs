//! Wire tags and byte-level helpers. The layout is documented in
//! `docs/payload-codec.md`; field elements are 8 bytes little-endian.

use crate::agreement::BaMsg;
use crate::field::Field;
use crate::proto::SessionId;

pub const SHARE_ROW: u8 = 0x01;
pub const SHARE_COL: u8 = 0x02;
pub const ECHO: u8 = 0x03;
pub const READY: u8 = 0x04;
pub const REC_SHARE: u8 = 0x05;

pub const RBC_INIT: u8 = 0x10;
pub const RBC_ECHO: u8 = 0x11;
pub const RBC_READY: u8 = 0x12;
pub const BA_VOTE: u8 = 0x13;
pub const BA_COIN: u8 = 0x14;

pub const MPC_SHARE: u8 = 0x20;
pub const MPC_REDUCE: u8 = 0x21;
pub const MPC_OPEN: u8 = 0x22;

pub const FLAG: u8 = 0x30;
/// `COUNT(j)` is `COUNT_BASE + j` for subtree `j`, saturating at 14.
pub const COUNT_BASE: u8 = 0x30;
pub const DONE: u8 = 0x3f;

pub const GATE_SHARE: u8 = 0x40;
pub const OPEN_SHARE: u8 = 0x41;
pub const BIT: u8 = 0x42;
pub const OUTPUT: u8 = 0x43;
pub const SIZE: u8 = 0x44;
pub const VOTE: u8 = 0x45;

pub fn count_tag(j: u32) -> u8 {
    COUNT_BASE + (j.clamp(1, 14) as u8)
}

pub fn put_field<F: Field>(x: &F, out: &mut Vec<u8>) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn put_fields<F: Field>(xs: &[F], out: &mut Vec<u8>) {
    out.extend_from_slice(&(xs.len() as u32).to_le_bytes());
    for x in xs {
        put_field(x, out);
    }
}

pub fn put_session(s: &SessionId, out: &mut Vec<u8>) {
    s.encode(out);
}

/// `BA_VOTE` body: kind (0 = BVal, 1 = Aux, 2 = Decide), round, bit.
/// `BA_COIN` body: round.
pub fn encode_ba(m: &BaMsg, out: &mut Vec<u8>) {
    match *m {
        BaMsg::BVal { round, bit } => {
            out.push(0);
            out.extend_from_slice(&round.to_le_bytes());
            out.push(bit as u8);
        }
        BaMsg::Aux { round, bit } => {
            out.push(1);
            out.extend_from_slice(&round.to_le_bytes());
            out.push(bit as u8);
        }
        BaMsg::Decide { bit } => {
            out.push(2);
            out.extend_from_slice(&0u32.to_le_bytes());
            out.push(bit as u8);
        }
        BaMsg::Coin { round } => out.extend_from_slice(&round.to_le_bytes()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Fp31;

    #[test]
    fn field_elements_are_eight_bytes_le() {
        let mut out = Vec::new();
        put_field(&Fp31::from_u64(0x0102_0304), &mut out);
        assert_eq!(out, vec![4, 3, 2, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn count_tags_are_distinct_from_flag_and_done() {
        for j in 0..=40 {
            let t = count_tag(j);
            assert!(t != FLAG && t != DONE);
        }
    }
}
