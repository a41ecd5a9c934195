//! Generators for the benchmark circuit families.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Builder, CircuitError, CircuitGraph, GateOp, Wire};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    /// Balanced sum of all inputs; `n - 1` gates.
    AdditionTree,
    /// `sum_i x_i * x_(i+1 mod n)`; `2n - 1` gates.
    InnerProduct,
    /// `m` random ADD/MUL gates with fan-out at most 2.
    RandomDag { m: usize },
    /// Layered circuit of exactly the given depth.
    Layered { depth: u32 },
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::AdditionTree => "addition_tree".into(),
            Family::InnerProduct => "inner_product".into(),
            Family::RandomDag { m } => format!("random_dag_m{m}"),
            Family::Layered { depth } => format!("layered_d{depth}"),
        }
    }

    /// Parses `addition_tree`, `inner_product`, `random_dag:M`, `layered:D`.
    pub fn parse(s: &str) -> Option<Family> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("addition_tree", None) => Some(Family::AdditionTree),
            ("inner_product", None) => Some(Family::InnerProduct),
            ("random_dag", Some(a)) => a.parse().ok().map(|m| Family::RandomDag { m }),
            ("layered", Some(a)) => a.parse().ok().map(|depth| Family::Layered { depth }),
            _ => None,
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, n: usize, modulus: u64, rng: &mut R) -> Result<CircuitGraph, CircuitError> {
        match *self {
            Family::AdditionTree => addition_tree(n, modulus),
            Family::InnerProduct => inner_product(n, modulus),
            Family::RandomDag { m } => random_dag(n, m, modulus, rng),
            Family::Layered { depth } => layered(n, depth, modulus),
        }
    }
}

fn reduce(b: &mut Builder, mut level: Vec<Wire>, op: GateOp) -> Wire {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            next.push(match pair {
                [a, c] => b.gate(op, *a, *c),
                [a] => *a,
                _ => unreachable!(),
            });
        }
        level = next;
    }
    level[0]
}

fn too_small(n: usize, need: usize) -> CircuitError {
    CircuitError::Parse { line: 0, msg: format!("family needs n >= {need}, got {n}") }
}

pub fn addition_tree(n: usize, modulus: u64) -> Result<CircuitGraph, CircuitError> {
    if n < 2 {
        return Err(too_small(n, 2));
    }
    let mut b = Builder::new(n);
    let out = reduce(&mut b, (1..=n as u32).map(Wire::Input).collect(), GateOp::Add);
    b.finish(out, modulus)
}

pub fn inner_product(n: usize, modulus: u64) -> Result<CircuitGraph, CircuitError> {
    if n < 2 {
        return Err(too_small(n, 2));
    }
    let mut b = Builder::new(n);
    let prods: Vec<Wire> = (1..=n as u32)
        .map(|i| b.gate(GateOp::Mul, Wire::Input(i), Wire::Input(i % n as u32 + 1)))
        .collect();
    let out = reduce(&mut b, prods, GateOp::Add);
    b.finish(out, modulus)
}

/// Every node starts with two free output slots; each gate takes two
/// distinct nodes with a free slot and offers two of its own. The last gate
/// created is the output.
pub fn random_dag<R: Rng + ?Sized>(n: usize, m: usize, modulus: u64, rng: &mut R) -> Result<CircuitGraph, CircuitError> {
    if n < 2 || m == 0 {
        return Err(too_small(n, 2));
    }
    let mut b = Builder::new(n);
    let mut free: Vec<(Wire, u8)> = (1..=n as u32).map(|i| (Wire::Input(i), 2)).collect();
    let mut last = None;
    for _ in 0..m {
        let i = rng.gen_range(0..free.len());
        let mut j = rng.gen_range(0..free.len() - 1);
        if j >= i {
            j += 1;
        }
        let op = *[GateOp::Add, GateOp::Mul].choose(rng).expect("nonempty");
        let g = b.gate(op, free[i].0, free[j].0);
        for k in [i, j] {
            free[k].1 -= 1;
        }
        free.retain(|(_, slots)| *slots > 0);
        free.push((g, 2));
        last = Some(g);
    }
    b.finish(last.expect("m > 0"), modulus)
}

/// Depth-`d` circuit of width `w = min(n/2, 2^(d-1))`: one layer pairing
/// `2w` inputs, ring layers where gate `j` combines gates `j` and `j+1` of
/// the previous layer, then a binary reduction to one output. Ops alternate
/// between ADD and MUL by layer.
pub fn layered(n: usize, depth: u32, modulus: u64) -> Result<CircuitGraph, CircuitError> {
    if depth == 0 {
        return Err(too_small(n, 2));
    }
    let w = (n / 2).min(1usize << (depth - 1).min(30));
    if w == 0 {
        return Err(too_small(n, 2));
    }
    let w = 1usize << w.ilog2();
    let reduce_layers = w.ilog2();
    if reduce_layers + 1 > depth {
        unreachable!("width bounded by 2^(depth-1)");
    }
    let ring_layers = depth - 1 - reduce_layers;
    let op_at = |layer: u32| if layer % 2 == 0 { GateOp::Add } else { GateOp::Mul };
    let mut b = Builder::new(n);
    let mut level: Vec<Wire> = (0..w)
        .map(|j| b.gate(op_at(1), Wire::Input(2 * j as u32 + 1), Wire::Input(2 * j as u32 + 2)))
        .collect();
    let mut layer = 1;
    for _ in 0..ring_layers {
        layer += 1;
        level = if w == 1 {
            vec![b.gate(op_at(layer), level[0], level[0])]
        } else {
            (0..w).map(|j| b.gate(op_at(layer), level[j], level[(j + 1) % w])).collect()
        };
    }
    while level.len() > 1 {
        layer += 1;
        level = level.chunks(2).map(|p| b.gate(op_at(layer), p[0], p[1])).collect();
    }
    b.finish(level[0], modulus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::F101;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn xs(n: usize) -> Vec<F101> {
        (1..=n as u64).map(F101::from_u64).collect()
    }

    #[test]
    fn addition_tree_sums() {
        let g = addition_tree(5, 101).unwrap();
        assert_eq!(g.m, 4);
        assert_eq!(g.eval(&xs(5)), F101::from_u64(15));
        assert_eq!(g.depth(), 3);
    }

    #[test]
    fn inner_product_rotation() {
        let g = inner_product(4, 101).unwrap();
        assert_eq!(g.m, 7);
        // 1*2 + 2*3 + 3*4 + 4*1
        assert_eq!(g.eval(&xs(4)), F101::from_u64(24));
    }

    #[test]
    fn random_dag_respects_fanout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [4, 16, 32] {
            let g = random_dag(n, 4 * n, 101, &mut rng).unwrap();
            assert_eq!(g.m, 4 * n);
            assert!(g.nodes().iter().all(|v| v.parents.len() <= 2));
            assert_eq!(CircuitGraph::parse(&g.to_text()).unwrap(), g);
        }
    }

    #[test]
    fn layered_depth_is_exact() {
        for (n, d, m) in [(32, 2, 3), (32, 4, 15), (32, 8, 79), (4, 5, 9)] {
            let g = layered(n, d, 101).unwrap();
            assert_eq!(g.depth(), d, "n={n} d={d}");
            assert_eq!(g.node(g.output()).height, d);
            assert_eq!(g.m, m, "n={n} d={d}");
        }
    }

    #[test]
    fn family_names_parse() {
        for f in [Family::AdditionTree, Family::InnerProduct, Family::RandomDag { m: 9 }, Family::Layered { depth: 3 }] {
            let s = match f {
                Family::RandomDag { m } => format!("random_dag:{m}"),
                Family::Layered { depth } => format!("layered:{depth}"),
                _ => f.name(),
            };
            assert_eq!(Family::parse(&s), Some(f));
        }
    }
}
