//! Cooperative control laws: the delay-free proportional-integral consensus
//! law and its delayed form driven by neighbor references.

use alloc::vec::Vec;

use crate::model::{CouplingMatrix, Gains, Graph, RobotState};
use crate::vector::{Vec2, Vec4};

/// Stacked reference `[r_q, r_xi]` robot `i` holds for neighbor `j`.
///
/// In delayed operation it comes out of the scattering endpoint solve; in the
/// delay-free law it is the neighbor's true state.
pub type NeighborReference = Vec4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    pub q_dot: Vec2,
    pub xi_dot: Vec2,
    /// Sum of coupling outputs over all neighbors.
    pub mu: Vec4,
}

impl ControlOutput {
    pub fn stacked(&self) -> Vec4 {
        Vec4::from_parts(self.q_dot, self.xi_dot)
    }
}

/// `p_ij = M_ij (r_ij - x_i)`.
pub fn coupling_output(x_i: &Vec4, r_ij: &NeighborReference, m: &CouplingMatrix) -> Vec4 {
    m.apply(&(*r_ij - *x_i))
}

/// Closes the feedback form: `[q_dot; xi_dot] = mu + [delta u_h; 0]`.
pub fn feedback_derivatives(mu: Vec4, accessible: bool, u_h: Vec2) -> ControlOutput {
    let mut q_dot = mu.q();
    if accessible {
        q_dot += u_h;
    }
    ControlOutput { q_dot, xi_dot: mu.xi(), mu }
}

/// Delayed law for one agent given a reference and coupling matrix per neighbor.
pub fn delayed_derivatives<'a>(
    x_i: &Vec4,
    refs: impl IntoIterator<Item = (NeighborReference, &'a CouplingMatrix)>,
    accessible: bool,
    u_h: Vec2,
) -> ControlOutput {
    let mut mu = Vec4::ZERO;
    for (r, m) in refs {
        mu += coupling_output(x_i, &r, m);
    }
    feedback_derivatives(mu, accessible, u_h)
}

/// Delay-free law for the whole network, written in its consensus form:
/// `xi_dot_i = sum b_ij (q_j - q_i)` and
/// `q_dot_i = sum a_ij (q_j - q_i) - sum b_ij (xi_j - xi_i) + delta_i u_h`.
pub fn delay_free_derivatives(
    states: &[RobotState],
    graph: &Graph,
    gains: &Gains,
    u_h: Vec2,
) -> Vec<ControlOutput> {
    (0..graph.n())
        .map(|i| {
            let mut q_dot = Vec2::ZERO;
            let mut xi_dot = Vec2::ZERO;
            for &(j, e) in graph.neighbors(i) {
                let m = gains.coupling(e);
                let dq = states[j].q - states[i].q;
                let dxi = states[j].xi - states[i].xi;
                q_dot += m.a() * dq - m.b() * dxi;
                xi_dot += m.b() * dq;
            }
            let mu = Vec4::from_parts(q_dot, xi_dot);
            if graph.is_accessible(i) {
                q_dot += u_h;
            }
            ControlOutput { q_dot, xi_dot, mu }
        })
        .collect()
}
