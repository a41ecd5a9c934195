//! Heavyweight MPC inside one quorum: an errorless asynchronous protocol for
//! small arithmetic circuits tolerating fewer than a quarter bad roles.
//!
//! Inputs are dealt with verifiable sharing and fixed by agreement on a
//! common subset. Linear gates are local. Each layer of multiplications is
//! handled by resharing local products, agreeing on the set of resharings
//! to use, opening the syndrome of that set (which depends only on the
//! errors bad contributors introduced), locating the errors, and
//! interpolating over the correct contributions.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{Acs, BaMsg};
use crate::field::{lagrange_coefficients, Field, Polynomial};
use crate::proto::{mix64, Dest, Outgoing};
use crate::sharing::{avss_deal, robust_decode, AvssMember, AvssMsg, AvssParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HwError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("gate {0} references a later or missing gate")]
    NotTopological(usize),
    #[error("input {0} is not owned by any role")]
    BadInput(usize),
}

/// Who provides an input wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputOwner {
    /// The role deals the value with verifiable sharing.
    Role(usize),
    /// Every role already holds a degree-`d` share.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HwGate<F> {
    Input(usize),
    Const(F),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    Output(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HwCircuit<F> {
    pub inputs: Vec<InputOwner>,
    pub gates: Vec<HwGate<F>>,
}

impl<F: Field> HwCircuit<F> {
    pub fn validate(&self, q: usize) -> Result<(), HwError> {
        for (i, g) in self.gates.iter().enumerate() {
            let refs: &[usize] = match g {
                HwGate::Add(a, b) | HwGate::Sub(a, b) | HwGate::Mul(a, b) => &[*a, *b],
                HwGate::Scale(a, _) | HwGate::Output(a) => &[*a],
                HwGate::Input(k) => {
                    match self.inputs.get(*k) {
                        Some(InputOwner::Role(r)) if *r >= q => return Err(HwError::BadInput(*k)),
                        None => return Err(HwError::BadInput(*k)),
                        _ => {}
                    }
                    &[]
                }
                HwGate::Const(_) => &[],
            };
            if refs.iter().any(|&r| r >= i) {
                return Err(HwError::NotTopological(i));
            }
        }
        Ok(())
    }

    /// Multiplicative depth per gate.
    pub fn mul_depths(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.gates.len()];
        for (i, g) in self.gates.iter().enumerate() {
            d[i] = match *g {
                HwGate::Add(a, b) | HwGate::Sub(a, b) => d[a].max(d[b]),
                HwGate::Mul(a, b) => d[a].max(d[b]) + 1,
                HwGate::Scale(a, _) | HwGate::Output(a) => d[a],
                _ => 0,
            };
        }
        d
    }

    pub fn outputs(&self) -> Vec<usize> {
        (0..self.gates.len()).filter(|&i| matches!(self.gates[i], HwGate::Output(_))).collect()
    }

    /// In-the-clear evaluation.
    pub fn eval_clear(&self, inputs: &[F]) -> Vec<F> {
        let mut w: Vec<F> = Vec::with_capacity(self.gates.len());
        for g in &self.gates {
            let v = match *g {
                HwGate::Input(k) => inputs[k],
                HwGate::Const(c) => c,
                HwGate::Add(a, b) => w[a] + w[b],
                HwGate::Sub(a, b) => w[a] - w[b],
                HwGate::Mul(a, b) => w[a] * w[b],
                HwGate::Scale(a, c) => w[a] * c,
                HwGate::Output(a) => w[a],
            };
            w.push(v);
        }
        self.outputs().into_iter().map(|i| w[i]).collect()
    }

    /// `a + b` of two role inputs.
    pub fn add2(ra: usize, rb: usize) -> Self {
        HwCircuit {
            inputs: vec![InputOwner::Role(ra), InputOwner::Role(rb)],
            gates: vec![HwGate::Input(0), HwGate::Input(1), HwGate::Add(0, 1), HwGate::Output(2)],
        }
    }

    /// `a · b` of two role inputs.
    pub fn mul2(ra: usize, rb: usize) -> Self {
        HwCircuit {
            inputs: vec![InputOwner::Role(ra), InputOwner::Role(rb)],
            gates: vec![HwGate::Input(0), HwGate::Input(1), HwGate::Mul(0, 1), HwGate::Output(2)],
        }
    }

    /// Sum of one input per role (a shared random coin when every role
    /// inputs a random value).
    pub fn sum_of_roles(q: usize) -> Self {
        let mut gates: Vec<HwGate<F>> = (0..q).map(HwGate::Input).collect();
        let mut acc = 0;
        for i in 1..q {
            gates.push(HwGate::Add(acc, i));
            acc = gates.len() - 1;
        }
        gates.push(HwGate::Output(acc));
        HwCircuit { inputs: (0..q).map(InputOwner::Role).collect(), gates }
    }

    /// Threshold indicator over one bit per role: outputs 1 iff at least
    /// `threshold` inputs are 1 (inputs outside {0, 1} give an unspecified
    /// value). Evaluates the interpolated indicator polynomial of the sum
    /// using powers computed in `⌈log2 q⌉` multiplication layers.
    pub fn threshold(q: usize, threshold: usize) -> Self {
        let mut c = Self::sum_of_roles(q);
        c.gates.pop();
        let s = c.gates.len() - 1;
        // coefficients of P with P(k) = [k ≥ threshold] for k in 0..=q
        let pts: Vec<(F, F)> = (0..=q)
            .map(|k| (F::from_u64(k as u64), if k >= threshold { F::one() } else { F::zero() }))
            .collect();
        let poly = Polynomial::interpolate(&pts).expect("distinct points");
        // pow[k] = gate holding s^k
        let mut pow = vec![usize::MAX; q + 1];
        pow[1] = s;
        let mut k = 2;
        while k <= q {
            let high = 1usize << (usize::BITS - 1 - (k - 1).leading_zeros());
            let (a, b) = if high == k { (k / 2, k / 2) } else { (high, k - high) };
            c.gates.push(HwGate::Mul(pow[a], pow[b]));
            pow[k] = c.gates.len() - 1;
            k += 1;
        }
        c.gates.push(HwGate::Const(poly.constant_term()));
        let mut acc = c.gates.len() - 1;
        for (k, &coef) in poly.coeffs.iter().enumerate().skip(1) {
            if coef.is_zero() {
                continue;
            }
            c.gates.push(HwGate::Scale(pow[k], coef));
            let t = c.gates.len() - 1;
            c.gates.push(HwGate::Add(acc, t));
            acc = c.gates.len() - 1;
        }
        c.gates.push(HwGate::Output(acc));
        c
    }

    /// 5/8-majority over one bit per role.
    pub fn five_eighths_majority(q: usize) -> Self {
        Self::threshold(q, (5 * q).div_ceil(8))
    }
}

/// Sharing degree and fault bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HwParams {
    pub q: usize,
    pub d: usize,
    pub f: usize,
}

impl HwParams {
    /// `d = f = ⌈q/4⌉ − 1`.
    pub fn for_quorum(q: usize) -> Self {
        let f = q.div_ceil(4).saturating_sub(1);
        HwParams { q, d: f, f }
    }

    /// Needs `q ≥ d + 1 + 4f` for sharing and `q ≥ 2d + 1 + 3f` for error
    /// location in multiplication layers.
    pub fn validate(&self) -> Result<(), HwError> {
        self.avss().validate().map_err(|e| HwError::BadParams(e.to_string()))?;
        if self.q < 2 * self.d + 1 + 3 * self.f {
            return Err(HwError::BadParams(format!("q = {} < 2d + 1 + 3f", self.q)));
        }
        Ok(())
    }

    pub fn avss(&self) -> AvssParams {
        AvssParams::symmetric(self.q, self.d, self.f)
    }
}

/// Role-level messages. Stage 0 is input sharing, stage `l ≥ 1` the `l`-th
/// multiplication layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HwMsg<F> {
    Share { stage: u16, dealer: u16, msg: AvssMsg<F> },
    Ba { stage: u16, inst: u16, msg: BaMsg },
    Reduce { stage: u16, values: Vec<F> },
    Open { values: Vec<F> },
}

impl<F: Field> HwMsg<F> {
    pub fn field_elements(&self) -> usize {
        match self {
            HwMsg::Share { msg, .. } => msg.field_elements(),
            HwMsg::Ba { .. } => 1,
            HwMsg::Reduce { values, .. } | HwMsg::Open { values } => values.len(),
        }
    }

    pub fn tag(&self) -> u8 {
        use crate::codec::*;
        match self {
            HwMsg::Share { .. } => MPC_SHARE,
            HwMsg::Ba { msg: BaMsg::Coin { .. }, .. } => BA_COIN,
            HwMsg::Ba { .. } => BA_VOTE,
            HwMsg::Reduce { .. } => MPC_REDUCE,
            HwMsg::Open { .. } => MPC_OPEN,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.tag());
        match self {
            HwMsg::Share { stage, dealer, msg } => {
                out.extend_from_slice(&stage.to_le_bytes());
                out.extend_from_slice(&dealer.to_le_bytes());
                out.push(msg.tag());
                msg.encode(out);
            }
            HwMsg::Ba { stage, inst, msg } => {
                out.extend_from_slice(&stage.to_le_bytes());
                out.extend_from_slice(&inst.to_le_bytes());
                crate::codec::encode_ba(msg, out);
            }
            HwMsg::Reduce { stage, values } => {
                out.extend_from_slice(&stage.to_le_bytes());
                crate::codec::put_fields(values, out);
            }
            HwMsg::Open { values } => crate::codec::put_fields(values, out),
        }
    }

    pub fn tamper<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        match self {
            HwMsg::Share { msg, .. } => msg.tamper(rng),
            HwMsg::Ba { msg, .. } => {
                msg.flip();
                true
            }
            HwMsg::Reduce { values, .. } | HwMsg::Open { values } => {
                values.iter_mut().for_each(|v| *v = F::random(rng));
                true
            }
        }
    }
}

struct Stage<F> {
    avss: Vec<Option<AvssMember<F>>>,
    acs: Acs,
    dealt: bool,
    reduce_sent: bool,
    reduces: Vec<Option<Vec<F>>>,
}

/// One role's state machine for one evaluation.
pub struct HwEngine<F> {
    params: HwParams,
    me: usize,
    circuit: Arc<HwCircuit<F>>,
    /// Multiplication gates per layer (`layers[0]` is empty).
    layers: Vec<Vec<usize>>,
    batch0: Vec<usize>,
    my_inputs: Vec<F>,
    shared_inputs: Vec<F>,
    stages: Vec<Stage<F>>,
    wires: Vec<Option<F>>,
    stage: usize,
    opened: bool,
    opens: Vec<Option<Vec<F>>>,
    outputs: Option<Vec<F>>,
    included: Option<Vec<usize>>,
}

impl<F: Field> HwEngine<F> {
    /// `my_inputs` are the values of the inputs this role owns, in input
    /// order; `shared_inputs` its shares of the `Shared` inputs.
    pub fn new(
        params: HwParams,
        me: usize,
        circuit: Arc<HwCircuit<F>>,
        my_inputs: Vec<F>,
        shared_inputs: Vec<F>,
        coin_seed: u64,
    ) -> Self {
        let depths = circuit.mul_depths();
        let max_depth = depths.iter().copied().max().unwrap_or(0);
        let mut layers = vec![Vec::new(); max_depth + 1];
        for (i, g) in circuit.gates.iter().enumerate() {
            if matches!(g, HwGate::Mul(..)) {
                layers[depths[i]].push(i);
            }
        }
        let mut batch0 = vec![0usize; params.q];
        for o in &circuit.inputs {
            if let InputOwner::Role(r) = o {
                batch0[*r] += 1;
            }
        }
        let batch0: Vec<usize> = batch0.into_iter().map(|b| b.max(1)).collect();
        let stages = (0..=max_depth)
            .map(|s| Stage {
                avss: vec![None; params.q],
                acs: Acs::new(params.q, params.f, mix64(coin_seed ^ (s as u64 + 0x51))),
                dealt: false,
                reduce_sent: false,
                reduces: vec![None; params.q],
            })
            .collect();
        let n_gates = circuit.gates.len();
        HwEngine {
            params,
            me,
            circuit,
            layers,
            batch0,
            my_inputs,
            shared_inputs,
            stages,
            wires: vec![None; n_gates],
            stage: 0,
            opened: false,
            opens: vec![None; params.q],
            outputs: None,
            included: None,
        }
    }

    pub fn outputs(&self) -> Option<&[F]> {
        self.outputs.as_deref()
    }

    /// This role's share of gate `g`, once computed.
    pub fn wire_share(&self, g: usize) -> Option<F> {
        self.wires[g]
    }

    /// Roles whose inputs were included.
    pub fn included(&self) -> Option<&[usize]> {
        self.included.as_deref()
    }

    fn batch(&self, stage: usize, dealer: usize) -> usize {
        if stage == 0 {
            self.batch0[dealer]
        } else {
            self.layers[stage].len()
        }
    }

    fn member(&mut self, stage: usize, dealer: usize) -> &mut AvssMember<F> {
        let b = self.batch(stage, dealer);
        let (p, me) = (self.params.avss(), self.me);
        self.stages[stage].avss[dealer].get_or_insert_with(|| AvssMember::new(p, me, b))
    }

    pub fn start(&mut self, rng: &mut ChaCha8Rng) -> Outgoing<HwMsg<F>> {
        let mut out = Vec::new();
        self.progress(rng, &mut out);
        out
    }

    pub fn handle(&mut self, from: usize, msg: HwMsg<F>, rng: &mut ChaCha8Rng) -> Outgoing<HwMsg<F>> {
        let mut out = Vec::new();
        if from >= self.params.q {
            return out;
        }
        match msg {
            HwMsg::Share { stage, dealer, msg } => {
                let (s, dl) = (stage as usize, dealer as usize);
                if s >= self.stages.len() || dl >= self.params.q {
                    return out;
                }
                if matches!(msg, AvssMsg::ShareRow(_) | AvssMsg::ShareCol(_)) && from != dl {
                    return out;
                }
                let was = self.member(s, dl).is_complete();
                let o = self.member(s, dl).handle(from, msg);
                wrap_share(s, dl, o, &mut out);
                if !was && self.member(s, dl).is_complete() {
                    let o = self.stages[s].acs.proposal_ready(dl);
                    wrap_ba(s, o, &mut out);
                }
            }
            HwMsg::Ba { stage, inst, msg } => {
                let s = stage as usize;
                if s < self.stages.len() {
                    let o = self.stages[s].acs.handle(from, inst as usize, msg);
                    wrap_ba(s, o, &mut out);
                }
            }
            HwMsg::Reduce { stage, values } => {
                let s = stage as usize;
                if s < self.stages.len() && self.stages[s].reduces[from].is_none() {
                    self.stages[s].reduces[from] = Some(values);
                }
            }
            HwMsg::Open { values } => {
                if self.opens[from].is_none() {
                    self.opens[from] = Some(values);
                }
            }
        }
        self.progress(rng, &mut out);
        out
    }

    fn eval_linear(&mut self) {
        for i in 0..self.circuit.gates.len() {
            if self.wires[i].is_some() {
                continue;
            }
            let w = &self.wires;
            self.wires[i] = match self.circuit.gates[i] {
                HwGate::Const(c) => Some(c),
                HwGate::Add(a, b) => w[a].zip(w[b]).map(|(x, y)| x + y),
                HwGate::Sub(a, b) => w[a].zip(w[b]).map(|(x, y)| x - y),
                HwGate::Scale(a, c) => w[a].map(|x| x * c),
                HwGate::Output(a) => w[a],
                HwGate::Input(_) | HwGate::Mul(..) => None,
            };
        }
    }

    fn progress(&mut self, rng: &mut ChaCha8Rng, out: &mut Outgoing<HwMsg<F>>) {
        while self.step(rng, out) {}
    }

    fn step(&mut self, rng: &mut ChaCha8Rng, out: &mut Outgoing<HwMsg<F>>) -> bool {
        let (q, d, f) = (self.params.q, self.params.d, self.params.f);
        let st = self.stage;
        if st >= self.stages.len() {
            return self.finish(out);
        }
        if !self.stages[st].dealt {
            self.stages[st].dealt = true;
            let secrets: Vec<F> = if st == 0 {
                let mut v = self.my_inputs.clone();
                v.resize(self.batch0[self.me], F::zero());
                v
            } else {
                self.layers[st]
                    .iter()
                    .map(|&g| match self.circuit.gates[g] {
                        HwGate::Mul(a, b) => self.wires[a].unwrap() * self.wires[b].unwrap(),
                        _ => unreachable!(),
                    })
                    .collect()
            };
            let (_, deal) = avss_deal(&secrets, &self.params.avss(), rng);
            wrap_share(st, self.me, deal, out);
            return true;
        }
        let Some(set) = self.stages[st].acs.output() else { return false };
        let complete = |s: &Stage<F>, i: usize| s.avss[i].as_ref().is_some_and(|m| m.is_complete());
        if !set.iter().all(|&i| complete(&self.stages[st], i)) {
            return false;
        }
        if st == 0 {
            let mut next_input = vec![0usize; q];
            let mut shared_k = 0;
            let mut input_share = Vec::with_capacity(self.circuit.inputs.len());
            for o in &self.circuit.inputs {
                input_share.push(match *o {
                    InputOwner::Role(r) => {
                        let k = next_input[r];
                        next_input[r] += 1;
                        if set.contains(&r) {
                            self.stages[0].avss[r].as_ref().unwrap().shares().unwrap()[k].row0
                        } else {
                            F::zero()
                        }
                    }
                    InputOwner::Shared => {
                        let v = self.shared_inputs.get(shared_k).copied().unwrap_or_else(F::zero);
                        shared_k += 1;
                        v
                    }
                });
            }
            for (i, g) in self.circuit.gates.iter().enumerate() {
                if let HwGate::Input(k) = *g {
                    self.wires[i] = Some(input_share[k]);
                }
            }
            self.included = Some(set);
            self.eval_linear();
            self.stage += 1;
            return true;
        }
        // multiplication layer: open syndromes of the agreed resharings
        let k = 2 * d + 1;
        let xs: Vec<F> = set.iter().map(|&i| F::abscissa(i)).collect();
        let checks = set.len().saturating_sub(k);
        let gates = self.layers[st].clone();
        let shares: Vec<Vec<F>> = set
            .iter()
            .map(|&i| self.stages[st].avss[i].as_ref().unwrap().shares().unwrap().iter().map(|s| s.row0).collect())
            .collect();
        let weights = dual_weights(&xs);
        if !self.stages[st].reduce_sent {
            self.stages[st].reduce_sent = true;
            let mut values = Vec::with_capacity(gates.len() * checks);
            for gi in 0..gates.len() {
                for r in 0..checks {
                    let mut acc = F::zero();
                    for (idx, x) in xs.iter().enumerate() {
                        acc += weights[idx] * x.pow(r as u64) * shares[idx][gi];
                    }
                    values.push(acc);
                }
            }
            out.push((Dest::All, HwMsg::Reduce { stage: st as u16, values }));
            return true;
        }
        let want = gates.len() * checks;
        let Some(synd) = decode_vector(&self.stages[st].reduces, want, d, f) else { return false };
        for (gi, &g) in gates.iter().enumerate() {
            let s = &synd[gi * checks..(gi + 1) * checks];
            let errors = locate_errors(&xs, &weights, s, f).unwrap_or_default();
            let clean: Vec<usize> = (0..set.len()).filter(|idx| !errors.contains(idx)).take(k).collect();
            let cx: Vec<F> = clean.iter().map(|&i| xs[i]).collect();
            let lam = lagrange_coefficients(&cx, F::zero()).expect("distinct abscissas");
            let v = clean.iter().zip(&lam).fold(F::zero(), |acc, (&i, &l)| acc + l * shares[i][gi]);
            self.wires[g] = Some(v);
        }
        let _ = q;
        self.eval_linear();
        self.stage += 1;
        true
    }

    fn finish(&mut self, out: &mut Outgoing<HwMsg<F>>) -> bool {
        let outs = self.circuit.outputs();
        if !self.opened {
            self.opened = true;
            let values = outs.iter().map(|&g| self.wires[g].expect("all gates evaluated")).collect();
            out.push((Dest::All, HwMsg::Open { values }));
            return true;
        }
        if self.outputs.is_none() {
            self.outputs = decode_vector(&self.opens, outs.len(), self.params.d, self.params.f);
        }
        false
    }
}

fn wrap_share<F>(stage: usize, dealer: usize, o: Outgoing<AvssMsg<F>>, out: &mut Outgoing<HwMsg<F>>) {
    out.extend(o.into_iter().map(|(d, m)| (d, HwMsg::Share { stage: stage as u16, dealer: dealer as u16, msg: m })));
}

fn wrap_ba<F>(stage: usize, o: Outgoing<(u32, BaMsg)>, out: &mut Outgoing<HwMsg<F>>) {
    out.extend(o.into_iter().map(|(d, (k, m))| (d, HwMsg::Ba { stage: stage as u16, inst: k as u16, msg: m })));
}

/// Robustly opens a vector of degree-`d` sharings from per-role share
/// vectors; `None` until every component has a unique decoding.
pub fn decode_vector<F: Field>(received: &[Option<Vec<F>>], len: usize, d: usize, f: usize) -> Option<Vec<F>> {
    let senders: Vec<(usize, &Vec<F>)> =
        received.iter().enumerate().filter_map(|(i, v)| v.as_ref().filter(|v| v.len() == len).map(|v| (i, v))).collect();
    if senders.len() < d + 1 + f {
        return None;
    }
    (0..len)
        .map(|c| {
            let pts: Vec<(F, F)> = senders.iter().map(|(i, v)| (F::abscissa(*i), v[c])).collect();
            robust_decode(&pts, d, d + 1 + f).ok().map(|p| p.constant_term())
        })
        .collect()
}

/// `w_i = 1 / Π_{j≠i} (x_i − x_j)`: for any polynomial `g` of degree at most
/// `len − 2`, `Σ w_i g(x_i) = 0`.
pub fn dual_weights<F: Field>(xs: &[F]) -> Vec<F> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let prod = xs.iter().enumerate().filter(|(j, _)| *j != i).fold(F::one(), |a, (_, &xj)| a * (xi - xj));
            prod.inv().expect("distinct abscissas")
        })
        .collect()
}

/// Given the syndrome `s_r = Σ_i w_i x_i^r e_i` (`r < s.len()`), finds the
/// support of an error vector of weight at most `f`.
pub fn locate_errors<F: Field>(xs: &[F], w: &[F], s: &[F], f: usize) -> Option<Vec<usize>> {
    if s.iter().all(|v| v.is_zero()) {
        return Some(Vec::new());
    }
    let n = xs.len();
    let size = f.min(n);
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if let Some(e) = solve_support(xs, w, s, &idx) {
            return Some(idx.iter().zip(e).filter(|(_, v)| !v.is_zero()).map(|(i, _)| *i).collect());
        }
        let mut i = size;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if idx[i] < n - size + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Solves `H_E e = s` by Gaussian elimination; `None` if inconsistent.
fn solve_support<F: Field>(xs: &[F], w: &[F], s: &[F], support: &[usize]) -> Option<Vec<F>> {
    let rows = s.len();
    let cols = support.len();
    let mut m: Vec<Vec<F>> = (0..rows)
        .map(|r| {
            let mut row: Vec<F> = support.iter().map(|&i| w[i] * xs[i].pow(r as u64)).collect();
            row.push(s[r]);
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut pr = 0;
    for c in 0..cols {
        let Some(p) = (pr..rows).find(|&r| !m[r][c].is_zero()) else { continue };
        m.swap(pr, p);
        let inv = m[pr][c].inv().ok()?;
        for x in m[pr].iter_mut() {
            *x *= inv;
        }
        for r in 0..rows {
            if r != pr && !m[r][c].is_zero() {
                let factor = m[r][c];
                for cc in 0..=cols {
                    let v = m[pr][cc];
                    m[r][cc] -= factor * v;
                }
            }
        }
        pivots.push((pr, c));
        pr += 1;
        if pr == rows {
            break;
        }
    }
    if (pr..rows).any(|r| !m[r][cols].is_zero()) {
        return None;
    }
    let mut e = vec![F::zero(); cols];
    for (r, c) in pivots {
        e[c] = m[r][cols];
    }
    Some(e)
}

/// Maps roles to physical players; one player may hold several roles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub players: Vec<crate::simnet::PlayerId>,
}

impl RoleAssignment {
    pub fn identity(q: usize) -> Self {
        RoleAssignment { players: (0..q as u32).collect() }
    }

    pub fn roles_of(&self, p: crate::simnet::PlayerId) -> Vec<usize> {
        (0..self.players.len()).filter(|&r| self.players[r] == p).collect()
    }
}

pub mod standalone {
    //! Runs one HW-MPC evaluation on the simulator, with physical players
    //! hosting one or more roles.

    use std::collections::BTreeMap;

    use super::*;
    use crate::sharing::{avss_rec, ShamirShare};
    use crate::simnet::{Behavior, Context, Node, Payload, PlayerId, SimError, Simulation, Strategy};

    #[derive(Clone, Debug)]
    pub struct RoleEnvelope<F> {
        pub from_role: u16,
        pub to_role: u16,
        /// Which independent copy of the evaluation this belongs to.
        pub copy: u16,
        pub msg: HwMsg<F>,
    }

    impl<F: Field> Payload for RoleEnvelope<F> {
        fn field_elements(&self) -> usize {
            self.msg.field_elements()
        }
        fn tag(&self) -> u8 {
            self.msg.tag()
        }
        fn encode(&self, out: &mut Vec<u8>) {
            out.extend_from_slice(&self.from_role.to_le_bytes());
            out.extend_from_slice(&self.to_role.to_le_bytes());
            out.extend_from_slice(&self.copy.to_le_bytes());
            self.msg.encode(out);
        }
        fn tamper(&mut self, rng: &mut ChaCha8Rng) -> bool {
            self.msg.tamper(rng)
        }
    }

    /// One role hosted by a player: an engine per copy, and the copy that
    /// produced output first.
    pub struct RoleSlot<F> {
        pub role: usize,
        pub engines: Vec<HwEngine<F>>,
        pub first: Option<usize>,
    }

    impl<F: Field> RoleSlot<F> {
        /// Output of the first copy to finish.
        pub fn outputs(&self) -> Option<&[F]> {
            self.first.and_then(|c| self.engines[c].outputs())
        }

        /// The engine whose output the role adopted (copy 0 before that).
        pub fn adopted(&self) -> &HwEngine<F> {
            &self.engines[self.first.unwrap_or(0)]
        }

        fn note(&mut self, copy: usize) {
            if self.first.is_none() && self.engines[copy].outputs().is_some() {
                self.first = Some(copy);
            }
        }
    }

    pub struct HwPlayer<F> {
        assignment: Arc<RoleAssignment>,
        pub roles: Vec<RoleSlot<F>>,
    }

    impl<F: Field> HwPlayer<F> {
        fn route(&self, from_role: usize, copy: usize, out: Outgoing<HwMsg<F>>, ctx: &mut Context<'_, RoleEnvelope<F>>) {
            for (d, m) in out {
                let targets: Vec<usize> = match d {
                    Dest::All => (0..self.assignment.players.len()).collect(),
                    Dest::One(r) => vec![r],
                };
                for r in targets {
                    let env = RoleEnvelope { from_role: from_role as u16, to_role: r as u16, copy: copy as u16, msg: m.clone() };
                    ctx.send(self.assignment.players[r], env);
                }
            }
        }
    }

    impl<F: Field> Node for HwPlayer<F> {
        type Msg = RoleEnvelope<F>;

        fn start(&mut self, ctx: &mut Context<'_, RoleEnvelope<F>>) {
            for i in 0..self.roles.len() {
                for c in 0..self.roles[i].engines.len() {
                    let r = self.roles[i].role;
                    let out = self.roles[i].engines[c].start(ctx.rng());
                    self.roles[i].note(c);
                    self.route(r, c, out, ctx);
                }
            }
        }

        fn handle(&mut self, from: PlayerId, env: RoleEnvelope<F>, ctx: &mut Context<'_, RoleEnvelope<F>>) {
            let fr = env.from_role as usize;
            // role-level authentication: the claimed role must belong to the sender
            if self.assignment.players.get(fr) != Some(&from) {
                return;
            }
            let Some(i) = self.roles.iter().position(|s| s.role == env.to_role as usize) else { return };
            let c = env.copy as usize;
            if c >= self.roles[i].engines.len() {
                return;
            }
            let r = self.roles[i].role;
            let out = self.roles[i].engines[c].handle(fr, env.msg, ctx.rng());
            self.roles[i].note(c);
            self.route(r, c, out, ctx);
        }
    }

    #[derive(Clone, Debug)]
    pub struct HwReport<F> {
        /// Output at each good role (None = no output).
        pub outputs: Vec<Option<Vec<F>>>,
        /// Inputs as fixed by the sharing phase, reconstructed from good
        /// roles' shares.
        pub effective_inputs: Vec<F>,
        /// Circuit evaluated in the clear on the effective inputs.
        pub oracle: Vec<F>,
        pub rounds: u64,
        /// Copy adopted by each good role.
        pub adopted: Vec<usize>,
        pub metrics: crate::simnet::Metrics,
    }

    impl<F: Field> HwReport<F> {
        pub fn matches_oracle(&self) -> bool {
            self.outputs.iter().all(|o| o.as_deref() == Some(&self.oracle[..]))
        }
    }

    /// `inputs[k]` is the value of input `k` (for `Shared` inputs, the
    /// secret; the runner deals it with a random degree-`d` polynomial).
    pub fn run_hw<F: Field>(
        params: HwParams,
        circuit: HwCircuit<F>,
        inputs: &[F],
        assignment: RoleAssignment,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<HwReport<F>, SimError> {
        match run_hw_copies(params, circuit, inputs, assignment, bad, strategy, seed, 1) {
            Ok(r) => Ok(r),
            Err(HwRunError::Sim(e)) => Err(e),
            Err(HwRunError::Hw(e)) => unreachable!("single copy never rejects a circuit: {e}"),
        }
    }

    #[derive(Debug, Error, PartialEq, Eq)]
    pub enum HwRunError {
        #[error(transparent)]
        Sim(#[from] SimError),
        #[error(transparent)]
        Hw(#[from] HwError),
    }

    /// Runs `copies` independent evaluations side by side; each role adopts
    /// the output of whichever copy finishes first. Copies may fix different
    /// input subsets, so with more than one copy every input must be
    /// `Shared`.
    #[allow(clippy::too_many_arguments)]
    pub fn run_hw_copies<F: Field>(
        params: HwParams,
        circuit: HwCircuit<F>,
        inputs: &[F],
        assignment: RoleAssignment,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
        copies: usize,
    ) -> Result<HwReport<F>, HwRunError> {
        if copies == 0 || copies > u16::MAX as usize {
            return Err(HwError::BadParams(format!("copies = {copies}")).into());
        }
        if copies > 1 && circuit.inputs.iter().any(|o| *o != InputOwner::Shared) {
            return Err(HwError::BadParams("several copies need pre-shared inputs".into()).into());
        }
        use rand::SeedableRng;
        let q = params.q;
        let circuit = Arc::new(circuit);
        let assignment = Arc::new(assignment);
        let n_players = assignment.players.iter().copied().max().map_or(0, |m| m as usize + 1);
        let mut dealer_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdea1);
        let shared_polys: Vec<Polynomial<F>> = circuit
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == InputOwner::Shared)
            .map(|(k, _)| Polynomial::random_with_constant(inputs[k], params.d, &mut dealer_rng))
            .collect();
        let coin_seed = mix64(seed ^ 0xc0_1a);
        let mut nodes: Vec<HwPlayer<F>> =
            (0..n_players).map(|_| HwPlayer { assignment: assignment.clone(), roles: Vec::new() }).collect();
        for r in 0..q {
            let mine: Vec<F> = circuit
                .inputs
                .iter()
                .enumerate()
                .filter(|(_, o)| **o == InputOwner::Role(r))
                .map(|(k, _)| inputs[k])
                .collect();
            let shared: Vec<F> = shared_polys.iter().map(|p| p.eval(F::abscissa(r))).collect();
            let engines = (0..copies)
                .map(|c| HwEngine::new(params, r, circuit.clone(), mine.clone(), shared.clone(), mix64(coin_seed ^ c as u64)))
                .collect();
            nodes[assignment.players[r] as usize].roles.push(RoleSlot { role: r, engines, first: None });
        }
        let bad_roles = assignment.players.iter().filter(|p| bad.get(p).is_some_and(|b| *b != Behavior::Honest)).count();
        if bad_roles > params.f {
            return Err(SimError::BadFractionExceeded { bad: bad_roles, bound: params.f }.into());
        }
        let mut sim = Simulation::spawn(nodes, bad, n_players, strategy, seed)?.with_step_budget(100_000_000);
        let m = sim.run_until(|s| {
            s.nodes()
                .iter()
                .enumerate()
                .filter(|(p, _)| s.is_good(*p as PlayerId))
                .all(|(_, n)| n.roles.iter().all(|s| s.outputs().is_some()))
        })?;
        let good_slots: Vec<&RoleSlot<F>> = sim
            .nodes()
            .iter()
            .enumerate()
            .filter(|(p, _)| sim.is_good(*p as PlayerId))
            .flat_map(|(_, n)| n.roles.iter())
            .collect();
        let good_roles: Vec<&HwEngine<F>> = good_slots.iter().map(|s| s.adopted()).collect();
        // effective inputs from good roles' input-wire shares
        let mut effective = vec![F::zero(); circuit.inputs.len()];
        for (g, gate) in circuit.gates.iter().enumerate() {
            if let HwGate::Input(k) = *gate {
                let shares: Vec<ShamirShare<F>> = good_roles
                    .iter()
                    .filter_map(|e| {
                        e.wire_share(g).map(|v| ShamirShare {
                            dealer: 0,
                            session: crate::proto::SessionId::new(0, g as u32, crate::proto::Purpose::MpcAvss, 0),
                            abscissa: F::abscissa(e.me),
                            value: v,
                            degree: params.d,
                        })
                    })
                    .collect();
                if let Ok(v) = avss_rec(q, &shares) {
                    effective[k] = v;
                }
            }
        }
        Ok(HwReport {
            outputs: good_roles.iter().map(|e| e.outputs().map(<[F]>::to_vec)).collect(),
            oracle: circuit.eval_clear(&effective),
            effective_inputs: effective,
            rounds: m.max_chain_depth_delivered as u64,
            adopted: good_slots.iter().map(|s| s.first.unwrap_or(0)).collect(),
            metrics: m.clone(),
        })
    }

    /// Shared coin: every role contributes a random value; the sum over the
    /// agreed contributors is opened.
    pub fn shared_coin_in_quorum<F: Field>(
        params: HwParams,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<(F, HwReport<F>), SimError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0xc014));
        let contrib: Vec<F> = (0..params.q).map(|_| F::random(&mut rng)).collect();
        let r = run_hw(params, HwCircuit::sum_of_roles(params.q), &contrib, RoleAssignment::identity(params.q), bad, strategy, seed)?;
        let v = r.outputs.iter().flatten().next().map(|o| o[0]).unwrap_or_else(F::zero);
        Ok((v, r))
    }
}
