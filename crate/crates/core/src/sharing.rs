//! Shamir sharing, error-correcting reconstruction, and asynchronous
//! verifiable secret sharing (bivariate echo/ready scheme) for quorums with
//! fewer than a quarter bad members.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError, Polynomial};
use crate::proto::{Dest, MemberSet, Outgoing, SessionId};
use crate::simnet::PlayerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("degree {degree} needs more than {recipients} recipients")]
    DegreeTooHigh { degree: usize, recipients: usize },
    #[error("no polynomial of the required degree fits enough shares")]
    ReconstructFailed,
    #[error("dealer {0} was detected as faulty")]
    DealFailed(PlayerId),
    #[error("invalid sharing parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShamirShare<F> {
    pub dealer: PlayerId,
    pub session: SessionId,
    pub abscissa: F,
    pub value: F,
    pub degree: usize,
}

/// Shares `secret` with a random polynomial of degree `degree`; recipient
/// `i` gets the evaluation at `F::abscissa(i)`.
pub fn shamir_share<F: Field, R: Rng + ?Sized>(
    secret: F,
    degree: usize,
    recipients: &[PlayerId],
    dealer: PlayerId,
    session: SessionId,
    rng: &mut R,
) -> Result<Vec<ShamirShare<F>>, SharingError> {
    if degree >= recipients.len() {
        return Err(SharingError::DegreeTooHigh { degree, recipients: recipients.len() });
    }
    let poly = Polynomial::random_with_constant(secret, degree, rng);
    Ok((0..recipients.len())
        .map(|i| {
            let x = F::abscissa(i);
            ShamirShare { dealer, session, abscissa: x, value: poly.eval(x), degree }
        })
        .collect())
}

/// Plain Lagrange reconstruction from the first `degree + 1` shares.
pub fn shamir_reconstruct<F: Field>(shares: &[ShamirShare<F>]) -> Result<F, SharingError> {
    let d = shares.first().ok_or(SharingError::ReconstructFailed)?.degree;
    if shares.len() <= d {
        return Err(SharingError::ReconstructFailed);
    }
    let pts: Vec<(F, F)> = shares[..=d].iter().map(|s| (s.abscissa, s.value)).collect();
    Ok(crate::field::interpolate_at(&pts, F::zero())?)
}

/// Finds a polynomial of degree ≤ `degree` agreeing with at least
/// `min_agree` of `points` by searching subsets of size `degree + 1`.
/// With `min_agree ≥ degree + 1 + e` and at most `e` wrong points the
/// answer is unique.
pub fn robust_decode<F: Field>(points: &[(F, F)], degree: usize, min_agree: usize) -> Result<Polynomial<F>, SharingError> {
    let k = degree + 1;
    if points.len() < k || points.len() < min_agree {
        return Err(SharingError::ReconstructFailed);
    }
    let agrees = |p: &Polynomial<F>| points.iter().filter(|(x, y)| p.eval(*x) == *y).count();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut subset = Vec::with_capacity(k);
    loop {
        subset.clear();
        subset.extend(idx.iter().map(|&i| points[i]));
        let p = Polynomial::interpolate(&subset)?;
        if agrees(&p) >= min_agree {
            return Ok(p);
        }
        // next combination in lexicographic order
        let n = points.len();
        let mut i = k;
        loop {
            if i == 0 {
                return Err(SharingError::ReconstructFailed);
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Reconstruction tolerating fewer than `q/4` corrupted shares: accepts the
/// degree-`d` polynomial agreeing with at least `received − (⌈q/4⌉ − 1)`
/// shares.
pub fn avss_rec<F: Field>(q: usize, shares: &[ShamirShare<F>]) -> Result<F, SharingError> {
    let d = shares.first().ok_or(SharingError::ReconstructFailed)?.degree;
    let f = q.div_ceil(4).saturating_sub(1);
    let pts: Vec<(F, F)> = shares.iter().map(|s| (s.abscissa, s.value)).collect();
    let min_agree = pts.len().saturating_sub(f).max(d + 1);
    Ok(robust_decode(&pts, d, min_agree)?.constant_term())
}

// ---------------------------------------------------------------------------
// Bivariate sharing

/// `S(x, y) = Σ c[a][b] x^a y^b` with `a ≤ dx`, `b ≤ dy`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bivariate<F> {
    pub coeffs: Vec<Vec<F>>,
}

impl<F: Field> Bivariate<F> {
    pub fn random<R: Rng + ?Sized>(secret: F, dx: usize, dy: usize, rng: &mut R) -> Self {
        let mut coeffs: Vec<Vec<F>> = (0..=dx).map(|_| (0..=dy).map(|_| F::random(rng)).collect()).collect();
        coeffs[0][0] = secret;
        Bivariate { coeffs }
    }

    pub fn secret(&self) -> F {
        self.coeffs[0][0]
    }

    pub fn eval(&self, x: F, y: F) -> F {
        self.coeffs
            .iter()
            .rev()
            .fold(F::zero(), |acc, row| acc * x + row.iter().rev().fold(F::zero(), |a, &c| a * y + c))
    }

    /// `x ↦ S(x, y0)`.
    pub fn row(&self, y0: F) -> Polynomial<F> {
        Polynomial::new(self.coeffs.iter().map(|r| r.iter().rev().fold(F::zero(), |a, &c| a * y0 + c)).collect())
    }

    /// `y ↦ S(x0, y)`.
    pub fn col(&self, x0: F) -> Polynomial<F> {
        let dy = self.coeffs[0].len();
        Polynomial::new((0..dy).map(|b| self.coeffs.iter().rev().fold(F::zero(), |a, r| a * x0 + r[b])).collect())
    }
}

/// Degrees and fault bound of a verifiable sharing among `q` members.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvssParams {
    pub q: usize,
    /// Degree in `x`; the column shares `S(α_j, 0)` have this degree.
    pub dx: usize,
    /// Degree in `y`; the row shares `S(0, α_j)` have this degree.
    pub dy: usize,
    pub f: usize,
}

impl AvssParams {
    pub fn symmetric(q: usize, d: usize, f: usize) -> Self {
        AvssParams { q, dx: d, dy: d, f }
    }

    /// Default for a quorum of size `q`: `d = ⌈q/4⌉ − 1`, `f = d`.
    pub fn for_quorum(q: usize) -> Self {
        let d = q.div_ceil(4).saturating_sub(1);
        Self::symmetric(q, d, d)
    }

    /// Recovery from echoes needs `q ≥ max(dx, dy) + 1 + 4f`.
    pub fn validate(&self) -> Result<(), SharingError> {
        let need = self.dx.max(self.dy) + 1 + 4 * self.f;
        if self.q < need {
            return Err(SharingError::BadParams(format!("q = {} < max(dx, dy) + 1 + 4f = {need}", self.q)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AvssMsg<F> {
    /// `x ↦ S_k(x, α_j)` for each secret `k` in the batch.
    ShareRow(Vec<Polynomial<F>>),
    /// `y ↦ S_k(α_j, y)`.
    ShareCol(Vec<Polynomial<F>>),
    /// From `j` to `i`: `(S_k(α_i, α_j), S_k(α_j, α_i))`.
    Echo { row: Vec<F>, col: Vec<F> },
    Ready,
}

impl<F: Field> AvssMsg<F> {
    pub fn field_elements(&self) -> usize {
        match self {
            AvssMsg::ShareRow(ps) | AvssMsg::ShareCol(ps) => ps.iter().map(|p| p.coeffs.len()).sum(),
            AvssMsg::Echo { row, col } => row.len() + col.len(),
            AvssMsg::Ready => 0,
        }
    }

    pub fn tag(&self) -> u8 {
        use crate::codec::*;
        match self {
            AvssMsg::ShareRow(_) => SHARE_ROW,
            AvssMsg::ShareCol(_) => SHARE_COL,
            AvssMsg::Echo { .. } => ECHO,
            AvssMsg::Ready => READY,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        match self {
            AvssMsg::ShareRow(ps) | AvssMsg::ShareCol(ps) => {
                out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
                for p in ps {
                    crate::codec::put_fields(&p.coeffs, out);
                }
            }
            AvssMsg::Echo { row, col } => {
                crate::codec::put_fields(row, out);
                crate::codec::put_fields(col, out);
            }
            AvssMsg::Ready => {}
        }
    }

    /// Replaces every carried field element with a random one.
    pub fn tamper<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        match self {
            AvssMsg::ShareRow(ps) | AvssMsg::ShareCol(ps) => {
                ps.iter_mut().flat_map(|p| p.coeffs.iter_mut()).for_each(|c| *c = F::random(rng))
            }
            AvssMsg::Echo { row, col } => row.iter_mut().chain(col.iter_mut()).for_each(|c| *c = F::random(rng)),
            AvssMsg::Ready => return false,
        }
        true
    }
}

/// Honest dealer: per member `(rows, cols)` of a fresh bivariate for each
/// secret.
pub fn avss_deal<F: Field, R: Rng + ?Sized>(
    secrets: &[F],
    params: &AvssParams,
    rng: &mut R,
) -> (Vec<Bivariate<F>>, Outgoing<AvssMsg<F>>) {
    let bivs: Vec<Bivariate<F>> = secrets.iter().map(|&s| Bivariate::random(s, params.dx, params.dy, rng)).collect();
    let out = deal_messages(&bivs, params.q);
    (bivs, out)
}

/// Deal messages for given bivariates.
pub fn deal_messages<F: Field>(bivs: &[Bivariate<F>], q: usize) -> Outgoing<AvssMsg<F>> {
    let mut out = Vec::with_capacity(2 * q);
    for j in 0..q {
        let a = F::abscissa(j);
        out.push((Dest::One(j), AvssMsg::ShareRow(bivs.iter().map(|b| b.row(a)).collect())));
        out.push((Dest::One(j), AvssMsg::ShareCol(bivs.iter().map(|b| b.col(a)).collect())));
    }
    out
}

/// Final per-member share of one batched secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AvssShare<F> {
    /// `S(0, α_j)`: share of degree `dy`.
    pub row0: F,
    /// `S(α_j, 0)`: share of degree `dx`.
    pub col0: F,
}

/// Member side of one (batched) verifiable sharing.
#[derive(Clone, Debug)]
pub struct AvssMember<F> {
    params: AvssParams,
    me: usize,
    batch: usize,
    row: Option<Vec<Polynomial<F>>>,
    col: Option<Vec<Polynomial<F>>>,
    echoed: bool,
    echoes: Vec<Option<(Vec<F>, Vec<F>)>>,
    ready_sent: bool,
    ready_from: MemberSet,
    /// Final row/column polynomials once the sharing completed.
    done: Option<(Vec<Polynomial<F>>, Vec<Polynomial<F>>)>,
}

impl<F: Field> AvssMember<F> {
    pub fn new(params: AvssParams, me: usize, batch: usize) -> Self {
        AvssMember {
            params,
            me,
            batch,
            row: None,
            col: None,
            echoed: false,
            echoes: vec![None; params.q],
            ready_sent: false,
            ready_from: MemberSet::new(params.q),
            done: None,
        }
    }

    pub fn params(&self) -> &AvssParams {
        &self.params
    }

    pub fn is_complete(&self) -> bool {
        self.done.is_some()
    }

    pub fn has_deal(&self) -> bool {
        self.row.is_some() && self.col.is_some()
    }

    /// Shares, one per batched secret, once complete.
    pub fn shares(&self) -> Option<Vec<AvssShare<F>>> {
        self.done.as_ref().map(|(r, c)| {
            r.iter().zip(c).map(|(r, c)| AvssShare { row0: r.constant_term(), col0: c.constant_term() }).collect()
        })
    }

    /// Completed row polynomials `x ↦ S_k(x, α_me)`.
    pub fn rows(&self) -> Option<&[Polynomial<F>]> {
        self.done.as_ref().map(|(r, _)| r.as_slice())
    }

    /// Completed column polynomials `y ↦ S_k(α_me, y)`.
    pub fn cols(&self) -> Option<&[Polynomial<F>]> {
        self.done.as_ref().map(|(_, c)| c.as_slice())
    }

    fn deal_valid(&self) -> bool {
        let (Some(row), Some(col)) = (&self.row, &self.col) else { return false };
        let a = F::abscissa(self.me);
        row.len() == self.batch
            && col.len() == self.batch
            && row.iter().all(|p| p.degree() <= self.params.dx)
            && col.iter().all(|p| p.degree() <= self.params.dy)
            && row.iter().zip(col).all(|(r, c)| r.eval(a) == c.eval(a))
    }

    fn echo_consistent(&self, j: usize) -> Option<bool> {
        let (Some(row), Some(col)) = (&self.row, &self.col) else { return None };
        let (er, ec) = self.echoes[j].as_ref()?;
        if er.len() != self.batch || ec.len() != self.batch {
            return Some(false);
        }
        let a = F::abscissa(j);
        Some((0..self.batch).all(|k| er[k] == col[k].eval(a) && ec[k] == row[k].eval(a)))
    }

    fn consistency(&self) -> (usize, usize) {
        let mut good = 0;
        let mut bad = 0;
        for j in 0..self.params.q {
            match self.echo_consistent(j) {
                Some(true) => good += 1,
                Some(false) => bad += 1,
                None => {}
            }
        }
        (good, bad)
    }

    /// Evidence that the dealer cheated: an invalid deal, or more than `f`
    /// echoes contradicting a valid one.
    pub fn dealer_faulty(&self) -> bool {
        if !self.has_deal() {
            return false;
        }
        !self.deal_valid() || self.consistency().1 > self.params.f
    }

    pub fn handle(&mut self, from: usize, msg: AvssMsg<F>) -> Outgoing<AvssMsg<F>> {
        let mut out = Vec::new();
        if from >= self.params.q {
            return out;
        }
        match msg {
            AvssMsg::ShareRow(r) => {
                if self.row.is_none() {
                    self.row = Some(r);
                }
            }
            AvssMsg::ShareCol(c) => {
                if self.col.is_none() {
                    self.col = Some(c);
                }
            }
            AvssMsg::Echo { row, col } => {
                if self.echoes[from].is_none() {
                    self.echoes[from] = Some((row, col));
                }
            }
            AvssMsg::Ready => {
                self.ready_from.insert(from);
            }
        }
        self.progress(&mut out);
        out
    }

    fn progress(&mut self, out: &mut Outgoing<AvssMsg<F>>) {
        let (q, f) = (self.params.q, self.params.f);
        if !self.echoed && self.has_deal() {
            self.echoed = true;
            let (row, col) = (self.row.as_ref().unwrap(), self.col.as_ref().unwrap());
            for i in 0..q {
                let a = F::abscissa(i);
                out.push((
                    Dest::One(i),
                    AvssMsg::Echo { row: row.iter().map(|p| p.eval(a)).collect(), col: col.iter().map(|p| p.eval(a)).collect() },
                ));
            }
        }
        let own_ok = self.deal_valid() && self.consistency().0 >= q - f;
        if !self.ready_sent && (own_ok || self.ready_from.len() > f) {
            self.ready_sent = true;
            out.push((Dest::All, AvssMsg::Ready));
        }
        if self.done.is_none() && self.ready_from.len() > 2 * f {
            if own_ok {
                self.done = Some((self.row.clone().unwrap(), self.col.clone().unwrap()));
            } else {
                self.done = self.recover();
            }
        }
    }

    /// Rebuilds this member's row and column from echoed points.
    fn recover(&self) -> Option<(Vec<Polynomial<F>>, Vec<Polynomial<F>>)> {
        let p = &self.params;
        let received: Vec<(usize, &(Vec<F>, Vec<F>))> = self
            .echoes
            .iter()
            .enumerate()
            .filter_map(|(j, e)| e.as_ref().map(|e| (j, e)))
            .filter(|(_, e)| e.0.len() == self.batch && e.1.len() == self.batch)
            .collect();
        if received.len() < p.dx.max(p.dy) + 1 + 2 * p.f {
            return None;
        }
        let mut rows = Vec::with_capacity(self.batch);
        let mut cols = Vec::with_capacity(self.batch);
        for k in 0..self.batch {
            let col_pts: Vec<(F, F)> = received.iter().map(|(j, e)| (F::abscissa(*j), e.0[k])).collect();
            let row_pts: Vec<(F, F)> = received.iter().map(|(j, e)| (F::abscissa(*j), e.1[k])).collect();
            cols.push(robust_decode(&col_pts, p.dy, p.dy + 1 + 2 * p.f).ok()?);
            rows.push(robust_decode(&row_pts, p.dx, p.dx + 1 + 2 * p.f).ok()?);
        }
        Some((rows, cols))
    }
}

// ---------------------------------------------------------------------------
// Standalone sessions

pub mod standalone {
    //! One sharing plus commit/abort agreement plus reconstruction, run on
    //! the simulator.

    use std::collections::BTreeMap;

    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agreement::{Ba, BaMsg};
    use crate::codec;
    use crate::proto::mix64;
    use crate::simnet::{Behavior, Context, Node, Payload, SimError, Simulation, Strategy};

    #[derive(Clone, Debug)]
    pub enum SessionMsg<F> {
        Avss(AvssMsg<F>),
        Ba(BaMsg),
        RecShare(F),
    }

    impl<F: Field> Payload for SessionMsg<F> {
        fn field_elements(&self) -> usize {
            match self {
                SessionMsg::Avss(m) => m.field_elements(),
                SessionMsg::Ba(_) => 1,
                SessionMsg::RecShare(_) => 1,
            }
        }
        fn tag(&self) -> u8 {
            match self {
                SessionMsg::Avss(m) => m.tag(),
                SessionMsg::Ba(BaMsg::Coin { .. }) => codec::BA_COIN,
                SessionMsg::Ba(_) => codec::BA_VOTE,
                SessionMsg::RecShare(_) => codec::REC_SHARE,
            }
        }
        fn encode(&self, out: &mut Vec<u8>) {
            out.push(self.tag());
            match self {
                SessionMsg::Avss(m) => m.encode(out),
                SessionMsg::Ba(m) => codec::encode_ba(m, out),
                SessionMsg::RecShare(x) => codec::put_field(x, out),
            }
        }
        fn tamper(&mut self, rng: &mut ChaCha8Rng) -> bool {
            match self {
                SessionMsg::Avss(m) => m.tamper(rng),
                SessionMsg::Ba(m) => {
                    m.flip();
                    true
                }
                SessionMsg::RecShare(x) => {
                    *x = F::random(rng);
                    true
                }
            }
        }
    }

    /// How the dealer behaves.
    #[derive(Clone, Debug, PartialEq, Eq)]
    pub enum DealerMode {
        Honest,
        /// Members at these positions get row and column from an unrelated
        /// bivariate.
        Inconsistent(Vec<usize>),
        /// Members at these positions get a row from another bivariate (so
        /// their own deal fails its self-check).
        BrokenRows(Vec<usize>),
        Silent,
    }

    #[derive(Clone, Debug, PartialEq, Eq)]
    pub enum Outcome<F> {
        Pending,
        Aborted,
        /// Reconstructed secret.
        Committed(F),
    }

    pub struct AvssNode<F> {
        dealer: usize,
        secret: F,
        mode: DealerMode,
        member: AvssMember<F>,
        ba: Ba,
        rec_sent: bool,
        rec: Vec<Option<F>>,
        pub outcome: Outcome<F>,
        pub committed_share: Option<F>,
    }

    impl<F: Field> AvssNode<F> {
        fn relay(&mut self, out: Outgoing<AvssMsg<F>>, ctx: &mut Context<'_, SessionMsg<F>>) {
            for (d, m) in out {
                send(ctx, d, SessionMsg::Avss(m));
            }
        }

        fn relay_ba(&mut self, out: Outgoing<BaMsg>, ctx: &mut Context<'_, SessionMsg<F>>) {
            for (d, m) in out {
                send(ctx, d, SessionMsg::Ba(m));
            }
        }

        fn advance(&mut self, ctx: &mut Context<'_, SessionMsg<F>>) {
            if !self.ba.has_input() {
                if self.member.is_complete() {
                    let o = self.ba.input(true);
                    self.relay_ba(o, ctx);
                } else if self.member.dealer_faulty() {
                    let o = self.ba.input(false);
                    self.relay_ba(o, ctx);
                }
            }
            match self.ba.decided() {
                Some(false) => self.outcome = Outcome::Aborted,
                Some(true) if self.member.is_complete() && !self.rec_sent => {
                    self.rec_sent = true;
                    let s = self.member.shares().unwrap()[0].row0;
                    self.committed_share = Some(s);
                    send(ctx, Dest::All, SessionMsg::RecShare(s));
                }
                _ => {}
            }
            if self.outcome == Outcome::Pending && self.ba.decided() == Some(true) {
                let p = self.member.params();
                let got: Vec<ShamirShare<F>> = self
                    .rec
                    .iter()
                    .enumerate()
                    .filter_map(|(j, v)| {
                        v.map(|value| ShamirShare {
                            dealer: self.dealer as PlayerId,
                            session: SessionId::new(self.dealer as u32, 0, crate::proto::Purpose::Standalone, 0),
                            abscissa: F::abscissa(j),
                            value,
                            degree: p.dy,
                        })
                    })
                    .collect();
                if got.len() >= p.q - p.f {
                    if let Ok(v) = avss_rec(p.q, &got) {
                        self.outcome = Outcome::Committed(v);
                    }
                }
            }
        }
    }

    fn send<F: Field>(ctx: &mut Context<'_, SessionMsg<F>>, d: Dest, m: SessionMsg<F>) {
        match d {
            Dest::All => {
                for p in 0..ctx.n() as PlayerId {
                    ctx.send(p, m.clone());
                }
            }
            Dest::One(i) => ctx.send(i as PlayerId, m),
        }
    }

    impl<F: Field> Node for AvssNode<F> {
        type Msg = SessionMsg<F>;

        fn start(&mut self, ctx: &mut Context<'_, SessionMsg<F>>) {
            if ctx.me() as usize != self.dealer {
                return;
            }
            let p = *self.member.params();
            let out = match &self.mode {
                DealerMode::Silent => Vec::new(),
                DealerMode::Honest => avss_deal(&[self.secret], &p, ctx.rng()).1,
                DealerMode::Inconsistent(who) | DealerMode::BrokenRows(who) => {
                    let good = Bivariate::random(self.secret, p.dx, p.dy, ctx.rng());
                    let other = Bivariate::random(self.secret + F::one(), p.dx, p.dy, ctx.rng());
                    let broken_only_rows = matches!(self.mode, DealerMode::BrokenRows(_));
                    let mut out = Vec::new();
                    for j in 0..p.q {
                        let a = F::abscissa(j);
                        let hit = who.contains(&j);
                        let rb = if hit { &other } else { &good };
                        let cb = if hit && !broken_only_rows { &other } else { &good };
                        out.push((Dest::One(j), AvssMsg::ShareRow(vec![rb.row(a)])));
                        out.push((Dest::One(j), AvssMsg::ShareCol(vec![cb.col(a)])));
                    }
                    out
                }
            };
            self.relay(out, ctx);
        }

        fn handle(&mut self, from: PlayerId, msg: SessionMsg<F>, ctx: &mut Context<'_, SessionMsg<F>>) {
            let from = from as usize;
            match msg {
                SessionMsg::Avss(m) => {
                    if matches!(m, AvssMsg::ShareRow(_) | AvssMsg::ShareCol(_)) && from != self.dealer {
                        return;
                    }
                    let o = self.member.handle(from, m);
                    self.relay(o, ctx);
                }
                SessionMsg::Ba(m) => {
                    let o = self.ba.handle(from, m);
                    self.relay_ba(o, ctx);
                }
                SessionMsg::RecShare(v) => {
                    if from < self.rec.len() && self.rec[from].is_none() {
                        self.rec[from] = Some(v);
                    }
                }
            }
            self.advance(ctx);
        }
    }

    #[derive(Clone, Debug)]
    pub struct AvssReport<F> {
        /// Outcome at each good member.
        pub outcomes: Vec<Outcome<F>>,
        /// Committed row shares of good members, by position.
        pub shares: Vec<(usize, F)>,
    }

    impl<F: Field> AvssReport<F> {
        /// All good members reached the same final outcome.
        pub fn consistent(&self) -> bool {
            self.outcomes.windows(2).all(|w| w[0] == w[1]) && self.outcomes.iter().all(|o| *o != Outcome::Pending)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run_avss<F: Field>(
        params: AvssParams,
        dealer: usize,
        secret: F,
        mode: DealerMode,
        bad: &BTreeMap<PlayerId, Behavior>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<AvssReport<F>, SimError> {
        let q = params.q;
        let nodes = (0..q)
            .map(|j| AvssNode {
                dealer,
                secret,
                mode: mode.clone(),
                member: AvssMember::new(params, j, 1),
                ba: Ba::new(q, params.f, mix64(seed ^ 0x5e55)),
                rec_sent: false,
                rec: vec![None; q],
                outcome: Outcome::Pending,
                committed_share: None,
            })
            .collect();
        // a deviating dealer counts against the bad budget
        let mut bad = bad.clone();
        if mode != DealerMode::Honest {
            bad.entry(dealer as PlayerId).or_insert(Behavior::Honest);
        }
        let bound = params.f;
        let mut sim = Simulation::spawn(nodes, &bad, bound, strategy, seed)?.with_step_budget(20_000_000);
        sim.run_to_quiescence()?;
        let good: Vec<usize> =
            (0..q).filter(|&j| sim.is_good(j as PlayerId) && !(j == dealer && mode != DealerMode::Honest)).collect();
        Ok(AvssReport {
            outcomes: good.iter().map(|&j| sim.node(j as PlayerId).outcome.clone()).collect(),
            shares: good.iter().filter_map(|&j| sim.node(j as PlayerId).committed_share.map(|s| (j, s))).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use num_traits::Zero;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::standalone::*;
    use super::*;
    use crate::proto::Purpose;
    use crate::simnet::{Behavior, Strategy};
    use crate::{Fp31, F11};

    fn sid() -> SessionId {
        SessionId::new(0, 0, Purpose::Standalone, 0)
    }

    fn members(q: usize) -> Vec<PlayerId> {
        (0..q as PlayerId).collect()
    }

    #[test]
    fn degree_zero_shares_equal_secret() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = shamir_share(Fp31::from_u64(77), 0, &members(5), 0, sid(), &mut rng).unwrap();
        assert!(s.iter().all(|x| x.value == Fp31::from_u64(77)));
    }

    #[test]
    fn degree_too_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = shamir_share(Fp31::from_u64(1), 4, &members(4), 0, sid(), &mut rng).unwrap_err();
        assert_eq!(e, SharingError::DegreeTooHigh { degree: 4, recipients: 4 });
    }

    #[test]
    fn secrecy_exhaustive_f11() {
        // every single share of a degree-1 sharing is consistent with every
        // secret: for each (abscissa, value, candidate) a line exists
        for x in 1..11u64 {
            for y in 0..11u64 {
                for s in 0..11u64 {
                    let (x, y, s) = (F11::from_u64(x), F11::from_u64(y), F11::from_u64(s));
                    let slope = (y - s) * x.inv().unwrap();
                    let p = Polynomial::new(vec![s, slope]);
                    assert_eq!(p.eval(x), y);
                }
            }
        }
        // and the dealer's distribution is uniform over the share value
        let mut counts = [[0u32; 11]; 11];
        for s in 0..11u64 {
            for a1 in 0..11u64 {
                let p = Polynomial::new(vec![F11::from_u64(s), F11::from_u64(a1)]);
                counts[s as usize][p.eval(F11::from_u64(2)).value() as usize] += 1;
            }
        }
        assert!(counts.iter().flatten().all(|&c| c == 1));
    }

    #[test]
    fn robust_decode_corrects_three_of_sixteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let secret = Fp31::random(&mut rng);
            let mut shares = shamir_share(secret, 3, &members(16), 0, sid(), &mut rng).unwrap();
            for k in 0..3 {
                let i = (trial * 5 + k * 7) % 16;
                shares[i].value = Fp31::random(&mut rng);
            }
            assert_eq!(avss_rec(16, &shares).unwrap(), secret);
        }
    }

    #[test]
    fn mixed_sessions_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = shamir_share(Fp31::from_u64(1), 3, &members(16), 0, sid(), &mut rng).unwrap();
        let b = shamir_share(Fp31::from_u64(2), 3, &members(16), 1, sid(), &mut rng).unwrap();
        let mixed: Vec<_> = a[..8].iter().chain(&b[8..]).copied().collect();
        assert_eq!(avss_rec(16, &mixed), Err(SharingError::ReconstructFailed));
    }

    #[test]
    fn bivariate_rows_and_cols_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Bivariate::<Fp31>::random(Fp31::from_u64(9), 4, 2, &mut rng);
        let (x, y) = (Fp31::from_u64(3), Fp31::from_u64(7));
        assert_eq!(b.row(y).eval(x), b.eval(x, y));
        assert_eq!(b.col(x).eval(y), b.eval(x, y));
        assert_eq!(b.row(y).degree_bound(), 4);
        assert_eq!(b.col(x).degree_bound(), 2);
        // row shares S(0, α_j) have degree dy and reconstruct the secret
        let pts: Vec<_> = (0..3).map(|j| (Fp31::abscissa(j), b.row(Fp31::abscissa(j)).constant_term())).collect();
        assert_eq!(crate::field::interpolate_at(&pts, Fp31::zero()).unwrap(), Fp31::from_u64(9));
    }

    #[test]
    fn params_validation() {
        assert!(AvssParams::symmetric(16, 3, 3).validate().is_ok());
        assert!(AvssParams::symmetric(15, 3, 3).validate().is_err());
        assert!(AvssParams { q: 10, dx: 4, dy: 2, f: 1 }.validate().is_ok());
    }

    fn q16() -> AvssParams {
        AvssParams::symmetric(16, 3, 3)
    }

    #[test]
    fn honest_dealer_commits_secret() {
        let r = run_avss(q16(), 0, Fp31::from_u64(1234), DealerMode::Honest, &BTreeMap::new(), Strategy::RandomDelay, 1)
            .unwrap();
        assert!(r.outcomes.iter().all(|o| *o == Outcome::Committed(Fp31::from_u64(1234))));
        assert_eq!(r.shares.len(), 16);
    }

    #[test]
    fn honest_dealer_with_bad_echoers() {
        let bad: BTreeMap<_, _> = [(3, Behavior::Equivocate), (7, Behavior::Equivocate), (11, Behavior::Equivocate)].into();
        for seed in 0..10 {
            for s in [Strategy::Fifo, Strategy::RandomDelay, Strategy::MaxChain] {
                let r = run_avss(q16(), 0, Fp31::from_u64(55), DealerMode::Honest, &bad, s, seed).unwrap();
                assert!(r.outcomes.iter().all(|o| *o == Outcome::Committed(Fp31::from_u64(55))), "{r:?}");
            }
        }
    }

    #[test]
    fn inconsistent_deal_to_five_aborts_everywhere() {
        for seed in 0..10 {
            let r = run_avss(
                q16(),
                0,
                Fp31::from_u64(8),
                DealerMode::BrokenRows(vec![1, 2, 3, 4, 5]),
                &BTreeMap::new(),
                Strategy::RandomDelay,
                seed,
            )
            .unwrap();
            assert!(r.consistent(), "{r:?}");
            assert!(r.outcomes.iter().all(|o| *o == Outcome::Aborted));
        }
    }

    #[test]
    fn binding_under_adversarial_dealers() {
        let modes = [
            DealerMode::Honest,
            DealerMode::Inconsistent(vec![4, 9]),
            DealerMode::BrokenRows(vec![2]),
            DealerMode::Inconsistent(vec![1, 2, 3, 4, 5, 6]),
            DealerMode::Silent,
        ];
        for seed in 0..40u64 {
            let mode = modes[seed as usize % modes.len()].clone();
            let bad: BTreeMap<_, _> = [(5, Behavior::Equivocate), (12, Behavior::WrongShare)].into();
            let s = [Strategy::Fifo, Strategy::RandomDelay, Strategy::MaxChain][seed as usize % 3].clone();
            let r = run_avss(q16(), 0, Fp31::from_u64(99), mode.clone(), &bad, s, seed).unwrap();
            let committed: Vec<_> = r.outcomes.iter().filter_map(|o| match o {
                Outcome::Committed(v) => Some(*v),
                _ => None,
            }).collect();
            assert!(committed.windows(2).all(|w| w[0] == w[1]), "{mode:?} {r:?}");
            if mode == DealerMode::Honest {
                assert!(r.outcomes.iter().all(|o| *o == Outcome::Committed(Fp31::from_u64(99))));
            }
            if mode != DealerMode::Silent {
                assert!(r.consistent(), "{mode:?} {r:?}");
            }
        }
    }

    #[test]
    fn additivity_of_shares() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = shamir_share(Fp31::from_u64(10), 3, &members(8), 0, sid(), &mut rng).unwrap();
        let b = shamir_share(Fp31::from_u64(32), 3, &members(8), 1, sid(), &mut rng).unwrap();
        let sum: Vec<_> = a.iter().zip(&b).map(|(x, y)| ShamirShare { value: x.value + y.value, ..*x }).collect();
        assert_eq!(shamir_reconstruct(&sum[3..]).unwrap(), Fp31::from_u64(42));
    }

    proptest! {
        #[test]
        fn reconstruct_any_subset(secret in 0u64..2_147_483_647, d in 0usize..6, seed in any::<u64>(), start in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shares = shamir_share(Fp31::from_u64(secret), d, &members(16), 0, sid(), &mut rng).unwrap();
            let from = start.min(16 - d - 1);
            prop_assert_eq!(shamir_reconstruct(&shares[from..]).unwrap(), Fp31::from_u64(secret));
        }

        #[test]
        fn additivity(a in 0u64..1000, b in 0u64..1000, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sa = shamir_share(Fp31::from_u64(a), 2, &members(6), 0, sid(), &mut rng).unwrap();
            let sb = shamir_share(Fp31::from_u64(b), 2, &members(6), 1, sid(), &mut rng).unwrap();
            let sum: Vec<_> = sa.iter().zip(&sb).map(|(x, y)| ShamirShare { value: x.value + y.value, ..*x }).collect();
            prop_assert_eq!(shamir_reconstruct(&sum).unwrap(), Fp31::from_u64(a + b));
        }
    }
}
