//! Arithmetic circuits as quorum-assigned DAGs, plus the masked evaluation
//! protocol that runs them.
//!
//! Node ids are 1-based: inputs are `1..=n` (input `i` belongs to player
//! `i - 1`), gates are `n+1..=n+m`, and node `n + 1` is the output gate.
//! Node `v` is handled by quorum `v mod n` (with 0 read as `n`).

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;

pub mod families;
pub mod player;
pub mod run;

pub use families::Family;
pub use run::{run_mpc, MpcConfig, MpcReport};

pub type NodeId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("node {node} feeds {fanout} gates (at most 2 allowed)")]
    FanInViolation { node: NodeId, fanout: usize },
    #[error("cycle through node {0}")]
    CycleDetected(NodeId),
}

fn parse_err(line: usize, msg: impl Into<String>) -> CircuitError {
    CircuitError::Parse { line, msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateOp {
    Add,
    Mul,
}

impl GateOp {
    pub fn parse(s: &str) -> Option<GateOp> {
        match s.to_ascii_lowercase().as_str() {
            "add" | "+" => Some(GateOp::Add),
            "mul" | "*" => Some(GateOp::Mul),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateOp::Add => "ADD",
            GateOp::Mul => "MUL",
        }
    }

    pub fn apply<F: Field>(self, a: F, b: F) -> F {
        match self {
            GateOp::Add => a + b,
            GateOp::Mul => a * b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Input,
    Gate { op: GateOp, left: NodeId, right: NodeId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub parents: Vec<NodeId>,
    pub quorum: u32,
    pub height: u32,
}

impl CircuitNode {
    pub fn children(&self) -> Option<(NodeId, NodeId)> {
        match self.kind {
            NodeKind::Input => None,
            NodeKind::Gate { left, right, .. } => Some((left, right)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub n: usize,
    pub m: usize,
    pub modulus: u64,
    /// `nodes[v - 1]` is node `v`.
    nodes: Vec<CircuitNode>,
    /// Gate ids in an order where children precede parents.
    topo: Vec<NodeId>,
}

/// Quorum responsible for node `v` in an `n`-player circuit.
pub fn quorum_of(v: NodeId, n: usize) -> u32 {
    let r = v as usize % n;
    if r == 0 {
        n as u32
    } else {
        r as u32
    }
}

impl CircuitGraph {
    /// Builds a graph from `gates[k] = (op, left, right)` for gate id
    /// `n + 1 + k`.
    pub fn from_gates(n: usize, modulus: u64, gates: &[(GateOp, NodeId, NodeId)]) -> Result<Self, CircuitError> {
        if n == 0 {
            return Err(parse_err(0, "circuit needs at least one input"));
        }
        if gates.is_empty() {
            return Err(parse_err(0, "circuit needs at least one gate"));
        }
        let m = gates.len();
        let total = (n + m) as NodeId;
        let mut nodes: Vec<CircuitNode> = (1..=total)
            .map(|id| CircuitNode {
                id,
                kind: NodeKind::Input,
                parents: Vec::new(),
                quorum: if id == n as NodeId + 1 { 1 } else { quorum_of(id, n) },
                height: 0,
            })
            .collect();
        for (k, &(op, left, right)) in gates.iter().enumerate() {
            let id = (n + 1 + k) as NodeId;
            for c in [left, right] {
                if c == 0 || c > total {
                    return Err(parse_err(k + 2, format!("gate {id} references unknown node {c}")));
                }
                if c == id {
                    return Err(CircuitError::CycleDetected(id));
                }
            }
            nodes[id as usize - 1].kind = NodeKind::Gate { op, left, right };
            nodes[left as usize - 1].parents.push(id);
            nodes[right as usize - 1].parents.push(id);
        }
        for node in &nodes[n..] {
            if node.parents.len() > 2 {
                return Err(CircuitError::FanInViolation { node: node.id, fanout: node.parents.len() });
            }
        }
        // Kahn's algorithm over gates; inputs have no children.
        let mut pending: Vec<usize> = nodes.iter().map(|v| if v.children().is_some() { 2 } else { 0 }).collect();
        let mut ready: VecDeque<NodeId> = (1..=n as NodeId).collect();
        let mut topo = Vec::with_capacity(m);
        while let Some(v) = ready.pop_front() {
            let node = &nodes[v as usize - 1];
            if node.children().is_some() {
                topo.push(v);
            }
            let parents = node.parents.clone();
            let h = node.height;
            for p in parents {
                let pn = &mut nodes[p as usize - 1];
                pn.height = pn.height.max(h + 1);
                pending[p as usize - 1] -= 1;
                if pending[p as usize - 1] == 0 {
                    ready.push_back(p);
                }
            }
        }
        if topo.len() < m {
            let stuck = (n..n + m).find(|&i| pending[i] > 0).unwrap_or(n) as NodeId + 1;
            return Err(CircuitError::CycleDetected(stuck));
        }
        Ok(CircuitGraph { n, m, modulus, nodes, topo })
    }

    /// Parses the text format: header `n m p`, then `gate_id op left right`
    /// per gate. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, CircuitError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| parse_err(0, "empty circuit file"))?;
        let nums: Vec<u64> = header
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|_| parse_err(hl, format!("bad header token '{t}'"))))
            .collect::<Result<_, _>>()?;
        let [n, m, p] = nums[..] else {
            return Err(parse_err(hl, "header must be `n m p`"));
        };
        let (n, m) = (n as usize, m as usize);
        let mut gates: Vec<Option<(GateOp, NodeId, NodeId)>> = vec![None; m];
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(parse_err(ln, "expected `gate_id op child_a child_b`"));
            }
            let num = |t: &str| t.parse::<NodeId>().map_err(|_| parse_err(ln, format!("bad node id '{t}'")));
            let id = num(toks[0])?;
            let op = GateOp::parse(toks[1]).ok_or_else(|| parse_err(ln, format!("unknown op '{}'", toks[1])))?;
            let (a, b) = (num(toks[2])?, num(toks[3])?);
            if (id as usize) <= n || id as usize > n + m {
                return Err(parse_err(ln, format!("gate id {id} outside {}..={}", n + 1, n + m)));
            }
            let slot = &mut gates[id as usize - n - 1];
            if slot.is_some() {
                return Err(parse_err(ln, format!("gate {id} defined twice")));
            }
            *slot = Some((op, a, b));
        }
        let gates: Vec<_> = gates
            .into_iter()
            .enumerate()
            .map(|(k, g)| g.ok_or_else(|| parse_err(0, format!("gate {} missing", n + 1 + k))))
            .collect::<Result<_, _>>()?;
        Self::from_gates(n, p, &gates)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n, self.m, self.modulus);
        for node in &self.nodes[self.n..] {
            if let NodeKind::Gate { op, left, right } = node.kind {
                let _ = writeln!(s, "{} {} {} {}", node.id, op.name(), left, right);
            }
        }
        s
    }

    pub fn node(&self, v: NodeId) -> &CircuitNode {
        &self.nodes[v as usize - 1]
    }

    pub fn nodes(&self) -> &[CircuitNode] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.n as NodeId + 1
    }

    pub fn gates_topo(&self) -> &[NodeId] {
        &self.topo
    }

    /// Longest input-to-node path over all nodes.
    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|v| v.height).max().unwrap_or(0)
    }

    pub fn mul_count(&self) -> usize {
        self.nodes.iter().filter(|v| matches!(v.kind, NodeKind::Gate { op: GateOp::Mul, .. })).count()
    }

    /// Gates handled by quorum `k`, in id order.
    pub fn gates_of(&self, k: u32) -> Vec<NodeId> {
        self.nodes[self.n..].iter().filter(|v| v.quorum == k).map(|v| v.id).collect()
    }

    /// Values of all nodes on the given inputs; index `v - 1` holds node `v`.
    pub fn eval_all<F: Field>(&self, inputs: &[F]) -> Vec<F> {
        assert_eq!(inputs.len(), self.n, "one input per player");
        let mut vals = vec![F::from_u64(0); self.n + self.m];
        vals[..self.n].copy_from_slice(inputs);
        for &g in &self.topo {
            if let NodeKind::Gate { op, left, right } = self.node(g).kind {
                vals[g as usize - 1] = op.apply(vals[left as usize - 1], vals[right as usize - 1]);
            }
        }
        vals
    }

    pub fn eval<F: Field>(&self, inputs: &[F]) -> F {
        self.eval_all(inputs)[self.n]
    }
}

/// Assembles a circuit from gates listed in creation order, renumbering so
/// that gate `output` gets id `n + 1` and the rest follow in order.
#[derive(Clone, Debug, Default)]
pub struct Builder {
    n: usize,
    gates: Vec<(GateOp, Wire, Wire)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wire {
    /// Input `i`, 1-based.
    Input(u32),
    /// Gate by creation index.
    Gate(usize),
}

impl Builder {
    pub fn new(n: usize) -> Self {
        Builder { n, gates: Vec::new() }
    }

    pub fn gate(&mut self, op: GateOp, a: Wire, b: Wire) -> Wire {
        self.gates.push((op, a, b));
        Wire::Gate(self.gates.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn finish(self, output: Wire, modulus: u64) -> Result<CircuitGraph, CircuitError> {
        let Wire::Gate(out) = output else {
            return Err(parse_err(0, "output must be a gate"));
        };
        let n = self.n;
        let id_of_gate = |k: usize| -> NodeId {
            let rank = if k == out {
                0
            } else if k < out {
                k + 1
            } else {
                k
            };
            (n + 1 + rank) as NodeId
        };
        let id = |w: Wire| match w {
            Wire::Input(i) => i,
            Wire::Gate(k) => id_of_gate(k),
        };
        let mut gates = vec![(GateOp::Add, 0, 0); self.gates.len()];
        for (k, &(op, a, b)) in self.gates.iter().enumerate() {
            gates[id_of_gate(k) as usize - n - 1] = (op, id(a), id(b));
        }
        CircuitGraph::from_gates(n, modulus, &gates)
    }
}
