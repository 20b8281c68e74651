//! Communication graph, coupling gains and the accessible-average map.
//!
//! Agent indices are 0-based here. Scenario files use 1-based indices and are
//! converted once at the file boundary.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::vector::{Vec2, Vec4};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    NoAgents,
    IndexOutOfRange { index: usize, n: usize },
    SelfLoop { node: usize },
    DisconnectedGraph,
    EmptyAccessibleSet,
    NonPositiveGain { name: &'static str, value: f64 },
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NoAgents => write!(f, "graph must contain at least one agent"),
            ModelError::IndexOutOfRange { index, n } => {
                write!(f, "agent index {index} out of range for {n} agents")
            }
            ModelError::SelfLoop { node } => write!(f, "self loop on agent {node}"),
            ModelError::DisconnectedGraph => write!(f, "communication graph is not connected"),
            ModelError::EmptyAccessibleSet => write!(f, "accessible set is empty"),
            ModelError::NonPositiveGain { name, value } => {
                write!(f, "gain {name} must be positive and finite, got {value}")
            }
            ModelError::LengthMismatch { what, expected, got } => {
                write!(f, "{what}: expected {expected} entries, got {got}")
            }
        }
    }
}

/// Fixed, undirected, connected communication graph with the accessible set.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    accessible: Vec<usize>,
    delta: Vec<bool>,
    // (neighbor, edge index) per agent
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds and validates a graph. Edges are canonicalized to `i < j`,
    /// sorted and deduplicated; the accessible set is sorted and deduplicated.
    pub fn new(n: usize, edges: &[(usize, usize)], accessible: &[usize]) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::NoAgents);
        }
        let mut canon = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(ModelError::IndexOutOfRange { index, n });
                }
            }
            if i == j {
                return Err(ModelError::SelfLoop { node: i });
            }
            canon.push((i.min(j), i.max(j)));
        }
        canon.sort_unstable();
        canon.dedup();

        if accessible.is_empty() {
            return Err(ModelError::EmptyAccessibleSet);
        }
        let mut acc = accessible.to_vec();
        if let Some(&index) = acc.iter().find(|&&k| k >= n) {
            return Err(ModelError::IndexOutOfRange { index, n });
        }
        acc.sort_unstable();
        acc.dedup();

        let mut neighbors = vec![Vec::new(); n];
        for (e, &(i, j)) in canon.iter().enumerate() {
            neighbors[i].push((j, e));
            neighbors[j].push((i, e));
        }

        // connectivity by depth-first search from agent 0
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(w, _) in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(ModelError::DisconnectedGraph);
        }

        let mut delta = vec![false; n];
        for &k in &acc {
            delta[k] = true;
        }
        Ok(Self { n, edges: canon, accessible: acc, delta, neighbors })
    }

    /// Agent count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical edges, `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn accessible(&self) -> &[usize] {
        &self.accessible
    }

    /// Number of accessible agents.
    pub fn m(&self) -> usize {
        self.accessible.len()
    }

    pub fn is_accessible(&self, i: usize) -> bool {
        self.delta[i]
    }

    /// `(neighbor, edge index)` pairs of agent `i`.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    /// Index of the edge joining `i` and `j`, if any.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i.min(j), i.max(j))).ok()
    }
}

/// The 4x4 coupling block `[[a I, -b I], [b I, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMatrix {
    a: f64,
    b: f64,
}

impl CouplingMatrix {
    pub fn new(a: f64, b: f64) -> Result<Self, ModelError> {
        check_positive("a", a)?;
        check_positive("b", b)?;
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `M x`.
    pub fn apply(&self, x: &Vec4) -> Vec4 {
        let (a, b) = (self.a, self.b);
        Vec4([
            a * x[0] - b * x[2],
            a * x[1] - b * x[3],
            b * x[0],
            b * x[1],
        ])
    }

    pub fn to_dense(&self) -> [[f64; 4]; 4] {
        let (a, b) = (self.a, self.b);
        [
            [a, 0.0, -b, 0.0],
            [0.0, a, 0.0, -b],
            [b, 0.0, 0.0, 0.0],
            [0.0, b, 0.0, 0.0],
        ]
    }

    /// Solves `(M + shift I) r = rhs`.
    ///
    /// The system decouples into one 2x2 block `[[a + s, -b], [b, s]]` per
    /// planar axis with determinant `(a + s) s + b^2`. Returns `None` when that
    /// determinant is not a usable pivot.
    pub fn solve_shifted(&self, shift: f64, rhs: &Vec4) -> Option<Vec4> {
        let (a, b) = (self.a, self.b);
        let det = (a + shift) * shift + b * b;
        if !(det.is_finite() && det.abs() > f64::EPSILON) {
            return None;
        }
        let mut out = [0.0; 4];
        for axis in 0..2 {
            let (yq, yx) = (rhs[axis], rhs[axis + 2]);
            out[axis] = (shift * yq + b * yx) / det;
            out[axis + 2] = ((a + shift) * yx - b * yq) / det;
        }
        Some(Vec4(out))
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NonPositiveGain { name, value })
    }
}

/// Per-edge symmetric gains plus the wave impedance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    coupling: Vec<CouplingMatrix>,
    sigma: f64,
}

impl Gains {
    /// Same `a`, `b` on every edge.
    pub fn uniform(graph: &Graph, a: f64, b: f64, sigma: f64) -> Result<Self, ModelError> {
        let m = CouplingMatrix::new(a, b)?;
        check_positive("sigma", sigma)?;
        Ok(Self { coupling: vec![m; graph.edges().len()], sigma })
    }

    /// One `(a, b)` pair per canonical edge, in `graph.edges()` order.
    pub fn per_edge(graph: &Graph, ab: &[(f64, f64)], sigma: f64) -> Result<Self, ModelError> {
        if ab.len() != graph.edges().len() {
            return Err(ModelError::LengthMismatch {
                what: "edge gains",
                expected: graph.edges().len(),
                got: ab.len(),
            });
        }
        check_positive("sigma", sigma)?;
        let coupling = ab
            .iter()
            .map(|&(a, b)| CouplingMatrix::new(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { coupling, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Coupling matrix of edge `e`; both directions share it.
    pub fn coupling(&self, e: usize) -> &CouplingMatrix {
        &self.coupling[e]
    }

    pub fn edge_count(&self) -> usize {
        self.coupling.len()
    }
}

/// Constant display offsets: the real position of agent `i` is `q_i + d_i`.
/// Biases never enter the control computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bias(pub Vec<Vec2>);

impl Bias {
    pub fn zero(n: usize) -> Self {
        Bias(vec![Vec2::ZERO; n])
    }

    pub fn real_position(&self, i: usize, q: Vec2) -> Vec2 {
        q + self.0[i]
    }
}

/// Position and controller integrator of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotState {
    pub q: Vec2,
    pub xi: Vec2,
}

impl RobotState {
    pub fn new(q: Vec2, xi: Vec2) -> Self {
        Self { q, xi }
    }

    pub fn stacked(&self) -> Vec4 {
        Vec4::from_parts(self.q, self.xi)
    }

    pub fn from_stacked(x: &Vec4) -> Self {
        Self { q: x.q(), xi: x.xi() }
    }
}

/// Average position of the accessible agents.
pub fn average_accessible(positions: &[Vec2], graph: &Graph) -> Vec2 {
    let mut sum = Vec2::ZERO;
    for &i in graph.accessible() {
        sum += positions[i];
    }
    (1.0 / graph.m() as f64) * sum
}
