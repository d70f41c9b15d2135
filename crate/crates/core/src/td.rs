//! Steady-state TD(0) algebra: fixed-point systems, the virtual (averaged)
//! environment, and first-order perturbation/heterogeneity bounds.
//!
//! For an ergodic MRP `(P, R, gamma)` with stationary law `pi`,
//! `D = diag(pi)`, the expected TD(0) direction is
//! `g(theta) = b - A theta` with `A = Phi^T D (Phi - gamma P Phi)` and
//! `b = Phi^T D R`. Its unique zero `theta*` solves the projected Bellman
//! equation.
//!
//! The bound evaluators drop the unspecified `O(eps^2)` and higher-order
//! remainders; they are meaningful for small heterogeneity only.

use alloc::vec::Vec;

use crate::error::{invalid, numeric, Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{self, Matrix, Vector};
use crate::markov::{stationary_distribution, Mrp, RewardVector, TransitionMatrix};

/// Tolerance used for the stationary solve inside [`td_system`] by default.
pub const STATIONARY_TOL: f64 = 1e-12;

/// `||b||` below this is reported as a degenerate reward lower bound.
pub const DELTA2_WARN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TdSystem {
    pub a_bar: Matrix,
    pub b_bar: Vector,
    pub theta_star: Vector,
    pub pi: Vector,
    pub gamma: f64,
}

impl TdSystem {
    pub fn d_diag(&self) -> Matrix {
        Matrix::from_diagonal(&self.pi)
    }

    pub fn d(&self) -> usize {
        self.b_bar.len()
    }

    /// `Phi^T D Phi`.
    pub fn gram(&self, phi: &FeatureMatrix) -> Matrix {
        weighted_gram(phi, &self.pi)
    }

    pub fn summary(&self, phi: &FeatureMatrix) -> SpectralSummary {
        let (sym_min, sym_max) = linalg::symmetric_extremes(&linalg::symmetric_part(&self.a_bar));
        let (gram_min, gram_max) = linalg::symmetric_extremes(&self.gram(phi));
        SpectralSummary {
            a_norm: linalg::spectral_norm(&self.a_bar),
            b_norm: self.b_bar.norm(),
            theta_norm: self.theta_star.norm(),
            kappa: linalg::condition_number(&self.a_bar),
            sym_lambda_min: sym_min,
            sym_lambda_max: sym_max,
            gram_lambda_min: gram_min,
            gram_lambda_max: gram_max,
        }
    }
}

/// Spectral data of one [`TdSystem`], as exported in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub a_norm: f64,
    pub b_norm: f64,
    pub theta_norm: f64,
    pub kappa: f64,
    /// Extremes of `(A + A^T) / 2`.
    pub sym_lambda_min: f64,
    pub sym_lambda_max: f64,
    /// Extremes of `Phi^T D Phi`.
    pub gram_lambda_min: f64,
    pub gram_lambda_max: f64,
}

fn weighted_gram(phi: &FeatureMatrix, pi: &Vector) -> Matrix {
    let f = phi.matrix();
    let mut weighted = f.clone();
    for (s, &w) in pi.iter().enumerate() {
        weighted.row_mut(s).scale_mut(w);
    }
    f.transpose() * weighted
}

/// Builds the steady-state TD system of `m` under features `phi`.
pub fn td_system(m: &Mrp, phi: &FeatureMatrix, tol: f64) -> Result<TdSystem> {
    if phi.n() != m.n() {
        return Err(invalid!("features cover {} states, MRP has {}", phi.n(), m.n()));
    }
    let pi = stationary_distribution(m.p(), tol)?;
    let f = phi.matrix();
    let gamma = m.gamma();
    let d_mat = Matrix::from_diagonal(&pi);
    let phi_t_d = f.transpose() * &d_mat;
    let a_bar = &phi_t_d * (f - m.p().matrix() * f * gamma);
    let b_bar = &phi_t_d * m.r().values();

    let (sym_min, _) = linalg::symmetric_extremes(&linalg::symmetric_part(&a_bar));
    if !(sym_min > 0.0) {
        return Err(numeric!(
            "symmetric part of A has lambda_min = {sym_min}; expected positive definite"
        ));
    }
    let theta_star = linalg::solve(&a_bar, &b_bar)?;
    let residual = linalg::max_abs(&(&a_bar * &theta_star - &b_bar));
    if residual > 1e-10 {
        return Err(numeric!("fixed-point residual {residual} above 1e-10"));
    }
    Ok(TdSystem {
        a_bar,
        b_bar,
        theta_star,
        pi,
        gamma,
    })
}

/// The virtual environment: entrywise mean kernel and mean reward.
pub fn virtual_mrp(agents: &[Mrp]) -> Result<Mrp> {
    let first = agents
        .first()
        .ok_or_else(|| invalid!("virtual MRP of an empty family"))?;
    let (n, gamma) = (first.n(), first.gamma());
    if agents.iter().any(|m| m.n() != n || m.gamma() != gamma) {
        return Err(invalid!("agents must share state count and discount"));
    }
    let count = agents.len() as f64;
    let mut p = Matrix::zeros(n, n);
    let mut r = Vector::zeros(n);
    for m in agents {
        p += m.p().matrix();
        r += m.r().values();
    }
    p /= count;
    r /= count;
    // averaging can leave row sums a few ulps off one
    for s in 0..n {
        let sum: f64 = p.row(s).sum();
        p.row_mut(s).unscale_mut(sum);
    }
    let r_max = agents.iter().map(|m| m.r().r_max()).fold(0.0, f64::max);
    Mrp::new(TransitionMatrix::new(p)?, RewardVector::new(r, r_max)?, gamma)
}

/// `g(theta) = b - A theta`.
pub fn pseudo_gradient(sys: &TdSystem, theta: &Vector) -> Vector {
    &sys.b_bar - &sys.a_bar * theta
}

/// `(1/N) sum_i g_i(theta)`.
pub fn mean_pseudo_gradient(systems: &[TdSystem], theta: &Vector) -> Vector {
    let mut acc = Vector::zeros(theta.len());
    for sys in systems {
        acc += pseudo_gradient(sys, theta);
    }
    acc / systems.len() as f64
}

/// `||Phi theta - Phi theta_ref||^2` weighted by the stationary law of
/// `sys_virtual`.
pub fn weighted_value_error(sys_virtual: &TdSystem, phi: &FeatureMatrix, theta: &Vector, theta_ref: &Vector) -> f64 {
    let diff = phi.matrix() * (theta - theta_ref);
    diff.iter().zip(sys_virtual.pi.iter()).map(|(v, w)| w * v * v).sum()
}

/// Constants feeding the perturbation bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub epsilon: f64,
    pub epsilon1: f64,
    pub n: usize,
    pub gamma: f64,
    pub r_max: f64,
    /// Uniform bound on the fixed-point norms.
    pub h: f64,
    /// `min_i ||A_i||`.
    pub delta1: f64,
    /// `min_i ||b_i||`.
    pub delta2: f64,
    /// `max_i kappa(A_i)`.
    pub kappa_max: f64,
}

impl BoundInputs {
    /// Measures `delta1`, `delta2`, `kappa_max` and `h = 1.1 max ||theta_i*||`
    /// from solved systems.
    pub fn measure(systems: &[TdSystem], epsilon: f64, epsilon1: f64, n: usize, r_max: f64) -> Result<Self> {
        let first = systems
            .first()
            .ok_or_else(|| invalid!("bound inputs need at least one system"))?;
        let mut inp = Self {
            epsilon,
            epsilon1,
            n,
            gamma: first.gamma,
            r_max,
            h: 0.0,
            delta1: f64::INFINITY,
            delta2: f64::INFINITY,
            kappa_max: 0.0,
        };
        for sys in systems {
            inp.delta1 = inp.delta1.min(linalg::spectral_norm(&sys.a_bar));
            inp.delta2 = inp.delta2.min(sys.b_bar.norm());
            inp.kappa_max = inp.kappa_max.max(linalg::condition_number(&sys.a_bar));
            inp.h = inp.h.max(1.1 * sys.theta_star.norm());
        }
        Ok(inp)
    }

    /// Whether `delta2` is so small that the reward-gap ratio is meaningless.
    pub fn delta2_degenerate(&self) -> bool {
        self.delta2 < DELTA2_WARN
    }

    /// `A(eps) = gamma sqrt(n) eps + (1 + gamma) 2 (n - 1) eps`.
    pub fn kernel_gap_bound(&self) -> f64 {
        self.gamma * linalg::sqrt(self.n as f64) * self.epsilon
            + (1.0 + self.gamma) * stationary_gap_bound(self.n, self.epsilon)
    }

    /// `b(eps, eps1) = R_max 2 (n - 1) eps + eps1`.
    pub fn reward_gap_bound(&self) -> f64 {
        self.r_max * stationary_gap_bound(self.n, self.epsilon) + self.epsilon1
    }

    /// `kappa A / delta1`; the fixed-point bound needs this below one.
    pub fn regime_ratio(&self) -> f64 {
        self.kappa_max * self.kernel_gap_bound() / self.delta1
    }
}

/// First-order stationary-distribution gap `||pi_i - pi_j||_1 <= 2 (n-1) eps`.
pub fn stationary_gap_bound(n: usize, epsilon: f64) -> f64 {
    2.0 * (n as f64 - 1.0) * epsilon
}

/// Output of [`fixed_point_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBounds {
    /// Bound on `||A_i - A_j||`.
    pub a_eps: f64,
    /// Bound on `||b_i - b_j||`.
    pub b_eps: f64,
    /// Bound on `||theta_i* - theta_j*||`.
    pub gamma_bound: f64,
}

/// Fixed-point perturbation bounds. Errors with [`Error::BoundRegime`] when
/// `kappa A / delta1 >= 1`, where the fixed-point bound is vacuous.
pub fn fixed_point_bounds(inp: &BoundInputs) -> Result<PerturbationBounds> {
    let a_eps = inp.kernel_gap_bound();
    let b_eps = inp.reward_gap_bound();
    let ratio = inp.regime_ratio();
    if !(ratio < 1.0) {
        return Err(Error::BoundRegime { ratio });
    }
    let gamma_bound = inp.kappa_max * inp.h / (1.0 - ratio) * (a_eps / inp.delta1 + b_eps / inp.delta2);
    Ok(PerturbationBounds {
        a_eps,
        b_eps,
        gamma_bound,
    })
}

/// Pseudo-gradient heterogeneity bound
/// `B(eps, eps1) = H (eps1 + gamma sqrt(n) eps + 2 (n - 1) eps)`.
pub fn heterogeneity_b(inp: &BoundInputs) -> f64 {
    inp.h
        * (inp.epsilon1
            + inp.gamma * linalg::sqrt(inp.n as f64) * inp.epsilon
            + stationary_gap_bound(inp.n, inp.epsilon))
}

/// Solves every agent's system and the virtual one.
pub fn family_systems(agents: &[Mrp], phi: &FeatureMatrix) -> Result<(Vec<TdSystem>, TdSystem)> {
    let systems = agents
        .iter()
        .map(|m| td_system(m, phi, STATIONARY_TOL))
        .collect::<Result<Vec<_>>>()?;
    let virtual_sys = td_system(&virtual_mrp(agents)?, phi, STATIONARY_TOL)?;
    Ok((systems, virtual_sys))
}
