//! Wave-variable encoding, the endpoint solves that recover `(r, p)` from an
//! incoming wave and the local state, and constant delay lines.
//!
//! Each undirected edge `(i, j)` with `i < j` has a fixed orientation: robot `i`
//! is [`EdgeEndpointRole::SideI`] and transmits `s+`, robot `j` is
//! [`EdgeEndpointRole::SideJ`] and transmits `s-`.

use alloc::collections::VecDeque;
use core::fmt;

use crate::model::CouplingMatrix;
use crate::vector::Vec4;

/// Allowed distance of `T / dt` from the nearest integer.
pub const DELAY_GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum ScatteringError {
    SingularCoupling,
    NonIntegerDelay { delay: f64, dt: f64 },
    InvalidTiming { delay: f64, dt: f64 },
    CadenceViolation { last: f64, got: f64 },
}

impl fmt::Display for ScatteringError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScatteringError::SingularCoupling => write!(f, "M + sigma I is singular"),
            ScatteringError::NonIntegerDelay { delay, dt } => {
                write!(f, "delay {delay} s is not an integer multiple of dt {dt} s")
            }
            ScatteringError::InvalidTiming { delay, dt } => {
                write!(f, "invalid delay line timing: delay {delay} s, dt {dt} s")
            }
            ScatteringError::CadenceViolation { last, got } => {
                write!(f, "delay line timestamps must increase: {got} after {last}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeEndpointRole {
    /// Lower-indexed robot; sends `s+`, receives `s-`.
    SideI,
    /// Higher-indexed robot; receives `s+`, sends `s-`.
    SideJ,
}

impl EdgeEndpointRole {
    pub fn of(edge: (usize, usize), robot: usize) -> Self {
        if robot == edge.0 {
            EdgeEndpointRole::SideI
        } else {
            EdgeEndpointRole::SideJ
        }
    }
}

fn inv_root(sigma: f64) -> f64 {
    1.0 / libm::sqrt(2.0 * sigma)
}

/// `s+ = (-p + sigma r)/sqrt(2 sigma)`, `s- = (-p - sigma r)/sqrt(2 sigma)`.
pub fn encode_side_i(p: &Vec4, r: &Vec4, sigma: f64) -> (Vec4, Vec4) {
    let k = inv_root(sigma);
    (k * (sigma * *r - *p), k * (-*p - sigma * *r))
}

/// `s+ = (p + sigma r)/sqrt(2 sigma)`, `s- = (p - sigma r)/sqrt(2 sigma)`.
pub fn encode_side_j(p: &Vec4, r: &Vec4, sigma: f64) -> (Vec4, Vec4) {
    let k = inv_root(sigma);
    (k * (*p + sigma * *r), k * (*p - sigma * *r))
}

/// Inverse of [`encode_side_i`]; returns `(p, r)`.
pub fn decode_side_i(s_plus: &Vec4, s_minus: &Vec4, sigma: f64) -> (Vec4, Vec4) {
    let h = libm::sqrt(sigma / 2.0);
    let r = inv_root(sigma) * (*s_plus - *s_minus);
    let p = -h * (*s_plus + *s_minus);
    (p, r)
}

/// Inverse of [`encode_side_j`]; returns `(p, r)`.
pub fn decode_side_j(s_plus: &Vec4, s_minus: &Vec4, sigma: f64) -> (Vec4, Vec4) {
    let h = libm::sqrt(sigma / 2.0);
    let r = inv_root(sigma) * (*s_plus - *s_minus);
    let p = h * (*s_plus + *s_minus);
    (p, r)
}

/// Result of one endpoint solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointSolution {
    /// Reference for the neighbor, `r`.
    pub r: Vec4,
    /// Coupling output `M (r - x)`.
    pub p: Vec4,
    /// Outgoing wave: `s+` on side i, `s-` on side j.
    pub s_out: Vec4,
}

/// Side i receives `s-` and solves `(M + sigma I) r = M x - sqrt(2 sigma) s-`.
pub fn solve_endpoint_i(
    s_minus_in: &Vec4,
    x_i: &Vec4,
    m: &CouplingMatrix,
    sigma: f64,
) -> Result<EndpointSolution, ScatteringError> {
    let rhs = m.apply(x_i) - libm::sqrt(2.0 * sigma) * *s_minus_in;
    let r = m.solve_shifted(sigma, &rhs).ok_or(ScatteringError::SingularCoupling)?;
    let p = m.apply(&(r - *x_i));
    let (s_out, _) = encode_side_i(&p, &r, sigma);
    Ok(EndpointSolution { r, p, s_out })
}

/// Side j receives `s+` and solves `(M + sigma I) r = sqrt(2 sigma) s+ + M x`.
pub fn solve_endpoint_j(
    s_plus_in: &Vec4,
    x_j: &Vec4,
    m: &CouplingMatrix,
    sigma: f64,
) -> Result<EndpointSolution, ScatteringError> {
    let rhs = libm::sqrt(2.0 * sigma) * *s_plus_in + m.apply(x_j);
    let r = m.solve_shifted(sigma, &rhs).ok_or(ScatteringError::SingularCoupling)?;
    let p = m.apply(&(r - *x_j));
    let (_, s_out) = encode_side_j(&p, &r, sigma);
    Ok(EndpointSolution { r, p, s_out })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSample {
    pub s: Vec4,
    /// Time at which the sample entered the line.
    pub t: f64,
}

/// Constant-delay FIFO with zero pre-history.
///
/// A line of depth `D` returns, at each push, the sample pushed `D` calls
/// earlier. The first `D` pops return the zero wave. Depth zero is a
/// pass-through.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    dt: f64,
    buf: VecDeque<WaveSample>,
    depth: usize,
    last_t: Option<f64>,
}

impl DelayLine {
    /// Line for delay `delay` at step `dt`; `delay` must be an integer
    /// multiple of `dt`.
    pub fn new(delay: f64, dt: f64) -> Result<Self, ScatteringError> {
        Ok(Self::with_depth(delay_steps(delay, dt)?, dt))
    }

    /// Line holding exactly `depth` samples.
    pub fn with_depth(depth: usize, dt: f64) -> Self {
        let buf = (0..depth)
            .map(|k| WaveSample { s: Vec4::ZERO, t: -((depth - k) as f64) * dt })
            .collect();
        Self { dt, buf, depth, last_t: None }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn delay(&self) -> f64 {
        self.depth as f64 * self.dt
    }

    /// Sample the next [`push_pop`](Self::push_pop) will return, without
    /// advancing. `None` for a pass-through line.
    pub fn due(&self) -> Option<Vec4> {
        self.buf.front().map(|w| w.s)
    }

    /// Pushes `s_in` stamped `t` and returns the sample that was pushed
    /// `delay` earlier (zero before that).
    pub fn push_pop(&mut self, s_in: Vec4, t: f64) -> Result<Vec4, ScatteringError> {
        if let Some(last) = self.last_t {
            if t.is_nan() || t <= last {
                return Err(ScatteringError::CadenceViolation { last, got: t });
            }
        }
        self.last_t = Some(t);
        if self.depth == 0 {
            return Ok(s_in);
        }
        self.buf.push_back(WaveSample { s: s_in, t });
        Ok(self.buf.pop_front().map(|w| w.s).unwrap_or(Vec4::ZERO))
    }

    /// Samples currently travelling, oldest first.
    pub fn in_flight(&self) -> impl ExactSizeIterator<Item = &WaveSample> + '_ {
        self.buf.iter()
    }

    /// Overwrites every in-flight sample with `s`.
    pub fn fill(&mut self, s: Vec4) {
        for w in self.buf.iter_mut() {
            w.s = s;
        }
    }
}

/// `round(delay / dt)` after checking it is an integer within tolerance.
pub fn delay_steps(delay: f64, dt: f64) -> Result<usize, ScatteringError> {
    if !(dt > 0.0 && dt.is_finite() && delay >= 0.0 && delay.is_finite()) {
        return Err(ScatteringError::InvalidTiming { delay, dt });
    }
    let ratio = delay / dt;
    let steps = libm::round(ratio);
    if (ratio - steps).abs() >= DELAY_GRID_TOLERANCE {
        return Err(ScatteringError::NonIntegerDelay { delay, dt });
    }
    Ok(steps as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use core::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &Vec4, b: &Vec4, tol: f64) -> bool {
        (*a - *b).max_abs() < tol
    }

    #[test]
    fn encode_examples() {
        let z = Vec4::ZERO;
        assert_eq!(encode_side_i(&z, &z, 1.0), (z, z));
        assert_eq!(encode_side_j(&z, &z, 1.0), (z, z));
        let r = Vec4([1.0, 0.0, 0.0, 0.0]);
        let (sp, sm) = encode_side_i(&z, &r, 1.0);
        assert!(close(&sp, &Vec4([FRAC_1_SQRT_2, 0.0, 0.0, 0.0]), 1e-15));
        assert!(close(&sm, &Vec4([-FRAC_1_SQRT_2, 0.0, 0.0, 0.0]), 1e-15));
        let (sp, sm) = encode_side_j(&z, &r, 1.0);
        assert!(close(&sp, &Vec4([FRAC_1_SQRT_2, 0.0, 0.0, 0.0]), 1e-15));
        assert!(close(&sm, &Vec4([-FRAC_1_SQRT_2, 0.0, 0.0, 0.0]), 1e-15));
    }

    #[test]
    fn side_j_power_balance() {
        let p = Vec4([0.3, -1.2, 0.7, 2.0]);
        let r = Vec4([-0.4, 0.9, 1.1, -0.2]);
        for sigma in [0.1, 1.0, 7.5] {
            let (sp, sm) = encode_side_j(&p, &r, sigma);
            let lhs = sp.norm_sq() - sm.norm_sq();
            assert!((lhs - 2.0 * p.dot(&r)).abs() < 1e-12);
        }
    }

    #[test]
    fn endpoint_i_from_rest() {
        let m = CouplingMatrix::new(0.2, 0.05).unwrap();
        let sol = solve_endpoint_i(&Vec4::ZERO, &Vec4::ZERO, &m, 1.0).unwrap();
        assert_eq!(sol.r, Vec4::ZERO);
        assert_eq!(sol.p, Vec4::ZERO);
        assert_eq!(sol.s_out, Vec4::ZERO);
        let sol = solve_endpoint_j(&Vec4::ZERO, &Vec4::ZERO, &m, 1.0).unwrap();
        assert_eq!(sol.s_out, Vec4::ZERO);
    }

    #[test]
    fn endpoint_i_hand_solved() {
        // [[1.2, -0.05], [0.05, 1]] r = [0.2, 0.05] by Cramer's rule
        let det: f64 = 1.2 * 1.0 + 0.05 * 0.05;
        let rq: f64 = (0.2 * 1.0 + 0.05 * 0.05) / det;
        let rxi: f64 = (1.2 * 0.05 - 0.05 * 0.2) / det;
        assert!((rq - 0.16840).abs() < 1e-5 && (rxi - 0.04158).abs() < 1e-5);

        let m = CouplingMatrix::new(0.2, 0.05).unwrap();
        let sol = solve_endpoint_i(&Vec4::ZERO, &Vec4([1.0, 0.0, 0.0, 0.0]), &m, 1.0).unwrap();
        assert!(close(&sol.r, &Vec4([rq, 0.0, rxi, 0.0]), 1e-15));
    }

    #[test]
    fn endpoint_equilibria() {
        let m = CouplingMatrix::new(0.2, 0.05).unwrap();
        let x = Vec4([0.55, 0.6, -0.3, 0.1]);
        for sigma in [0.5, 1.0, 3.0] {
            let h = libm::sqrt(sigma / 2.0);
            let si = solve_endpoint_i(&(-h * x), &x, &m, sigma).unwrap();
            assert!(close(&si.r, &x, 1e-14));
            assert!(si.p.max_abs() < 1e-14);
            let sj = solve_endpoint_j(&(h * x), &x, &m, sigma).unwrap();
            assert!(close(&sj.r, &x, 1e-14));
            assert!(sj.p.max_abs() < 1e-14);
        }
    }

    #[test]
    fn delay_line_emerges_after_delay() {
        let mut line = DelayLine::new(0.5, 0.01).unwrap();
        assert_eq!(line.depth(), 50);
        let marker = Vec4([1.0, 2.0, 3.0, 4.0]);
        let mut outs = Vec::new();
        for k in 0..=50 {
            let s = if k == 0 { marker } else { Vec4::ZERO };
            outs.push(line.push_pop(s, k as f64 * 0.01).unwrap());
        }
        assert!(outs[..50].iter().all(|s| *s == Vec4::ZERO));
        assert_eq!(outs[50], marker);
    }

    #[test]
    fn zero_delay_passes_through() {
        let mut line = DelayLine::new(0.0, 0.01).unwrap();
        let s = Vec4([1.0, 0.0, 0.0, 0.0]);
        assert_eq!(line.due(), None);
        assert_eq!(line.push_pop(s, 0.0).unwrap(), s);
    }

    #[test]
    fn delay_line_rejects_bad_timing() {
        assert!(matches!(DelayLine::new(0.505, 0.01), Err(ScatteringError::NonIntegerDelay { .. })));
        assert!(matches!(DelayLine::new(0.5, 0.0), Err(ScatteringError::InvalidTiming { .. })));
        assert!(matches!(DelayLine::new(-0.5, 0.01), Err(ScatteringError::InvalidTiming { .. })));
        // 0.3 / 0.1 is not exactly 3 in binary but within tolerance
        assert_eq!(DelayLine::new(0.3, 0.1).unwrap().depth(), 3);

        let mut line = DelayLine::new(0.02, 0.01).unwrap();
        line.push_pop(Vec4::ZERO, 0.0).unwrap();
        line.push_pop(Vec4::ZERO, 0.01).unwrap();
        assert!(matches!(
            line.push_pop(Vec4::ZERO, 0.01),
            Err(ScatteringError::CadenceViolation { .. })
        ));
    }

    #[test]
    fn due_matches_next_pop_and_prehistory_is_negative_time() {
        let mut line = DelayLine::new(0.03, 0.01).unwrap();
        let stamps: Vec<f64> = line.in_flight().map(|w| w.t).collect();
        assert_eq!(stamps.len(), 3);
        assert!(stamps.iter().all(|&t| t < 0.0));
        for k in 0..10 {
            let s = Vec4([k as f64, 0.0, 0.0, 0.0]);
            let due = line.due().unwrap();
            assert_eq!(line.push_pop(s, k as f64 * 0.01).unwrap(), due);
        }
    }
}
