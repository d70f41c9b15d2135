//! Observation generation and mixing times.

use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{invalid, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{self, Matrix, Vector};
use crate::markov::{stationary_distribution, Mrp, TransitionMatrix};
use crate::rng::uniform01;

/// Default iteration cap for [`mixing_time`].
pub const MIXING_CAP: usize = 100_000;

/// One transition `(s, R(s), s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub s: usize,
    pub reward: f64,
    pub s_next: usize,
}

/// Inverse-CDF sampler over one MRP's rows and its stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct MrpSampler {
    n: usize,
    row_cdf: Vec<f64>,
    pi_cdf: Vec<f64>,
    rewards: Vec<f64>,
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// First index whose cumulative mass exceeds `u`. Rounding can leave the
/// total a hair under one, so the last index absorbs the remainder.
fn invert(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl MrpSampler {
    pub fn new(m: &Mrp, pi: &Vector) -> Result<Self> {
        let n = m.n();
        if pi.len() != n {
            return Err(invalid!(
                "stationary vector has length {}, MRP has {n} states",
                pi.len()
            ));
        }
        if pi.iter().any(|&x| !(x >= 0.0)) || (pi.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid!("stationary vector is not a probability vector"));
        }
        let p = m.p().matrix();
        let mut row_cdf = Vec::with_capacity(n * n);
        for s in 0..n {
            row_cdf.extend(cumulative((0..n).map(|t| p[(s, t)])));
        }
        Ok(Self {
            n,
            row_cdf,
            pi_cdf: cumulative(pi.iter().copied()),
            rewards: m.r().values().iter().copied().collect(),
        })
    }

    /// Sampler using the stationary law computed from `m`.
    pub fn from_mrp(m: &Mrp) -> Result<Self> {
        Self::new(m, &stationary_distribution(m.p(), 1e-12)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Transition out of `s`, consuming one draw.
    pub fn step_from<R: RngCore + ?Sized>(&self, s: usize, rng: &mut R) -> Observation {
        let row = &self.row_cdf[s * self.n..(s + 1) * self.n];
        Observation {
            s,
            reward: self.rewards[s],
            s_next: invert(row, uniform01(rng)),
        }
    }

    /// `s ~ pi`, `s' ~ P(s, .)`, consuming two draws.
    pub fn iid_draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> Observation {
        let s = invert(&self.pi_cdf, uniform01(rng));
        self.step_from(s, rng)
    }
}

/// One agent's persistent trajectory. The state survives across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentChain {
    pub agent: usize,
    pub state: usize,
}

impl AgentChain {
    pub fn new(agent: usize, s0: usize) -> Self {
        Self { agent, state: s0 }
    }

    /// Emits `(current, R(current), next)` and moves to `next`.
    pub fn markov_step<R: RngCore + ?Sized>(&mut self, sampler: &MrpSampler, rng: &mut R) -> Observation {
        let obs = sampler.step_from(self.state, rng);
        self.state = obs.s_next;
        obs
    }
}

/// `(1/2) sum |p1 - p2|`.
pub fn tv_distance(p1: &[f64], p2: &[f64]) -> f64 {
    0.5 * p1.iter().zip(p2).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn worst_row_tv(pt: &Matrix, pi: &[f64]) -> f64 {
    (0..pt.nrows())
        .map(|s| {
            let row: Vec<f64> = pt.row(s).iter().copied().collect();
            tv_distance(&row, pi)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingTime {
    pub tau: usize,
    /// True when the cap was reached before the threshold.
    pub saturated: bool,
}

/// Smallest `t >= 1` with `max_s tv(P^t(s, .), pi) <= eps_bar`, by iterated
/// multiplication. Returns `cap` flagged as saturated if never reached.
pub fn mixing_time(p: &TransitionMatrix, eps_bar: f64, cap: usize) -> Result<MixingTime> {
    if !(eps_bar > 0.0 && eps_bar < 1.0) {
        return Err(invalid!("eps_bar must lie in (0, 1), got {eps_bar}"));
    }
    if cap == 0 {
        return Err(invalid!("mixing-time cap must be positive"));
    }
    let pi: Vec<f64> = stationary_distribution(p, 1e-12)?.iter().copied().collect();
    let mut pt = p.matrix().clone();
    for t in 1..=cap {
        if worst_row_tv(&pt, &pi) <= eps_bar {
            return Ok(MixingTime {
                tau: t,
                saturated: false,
            });
        }
        pt = &pt * p.matrix();
    }
    Ok(MixingTime {
        tau: cap,
        saturated: true,
    })
}

/// Slowest mixing time over a family.
pub fn family_mixing_time(kernels: &[&TransitionMatrix], eps_bar: f64, cap: usize) -> Result<MixingTime> {
    let mut worst = MixingTime {
        tau: 0,
        saturated: false,
    };
    for p in kernels {
        let mt = mixing_time(p, eps_bar, cap)?;
        if mt.tau > worst.tau {
            worst = mt;
        }
        worst.saturated |= mt.saturated;
    }
    Ok(worst)
}

/// `d(t) = max_s tv(P^t(s, .), pi)` for `t = 1..=horizon`.
pub fn mixing_profile(p: &TransitionMatrix, horizon: usize) -> Result<Vec<f64>> {
    let pi: Vec<f64> = stationary_distribution(p, 1e-12)?.iter().copied().collect();
    let mut pt = p.matrix().clone();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(worst_row_tv(&pt, &pi));
        pt = &pt * p.matrix();
    }
    Ok(out)
}

/// Geometric envelope `d(t) <= m rho^t`, reported for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFit {
    pub m: f64,
    /// Second-largest eigenvalue modulus.
    pub rho: f64,
}

/// Profile values at or below this are ignored by [`fit_geometric`].
pub const FIT_FLOOR: f64 = 1e-12;

/// `rho` is the second-largest eigenvalue modulus; `m` is the smallest
/// constant making the envelope hold over `1..=horizon` (above the floor).
pub fn fit_geometric(p: &TransitionMatrix, horizon: usize) -> Result<GeometricFit> {
    let moduli = linalg::eigenvalue_moduli(p.matrix())?;
    let rho = moduli.get(1).copied().unwrap_or(0.0);
    let mut m: f64 = 0.0;
    for (i, d) in mixing_profile(p, horizon)?.into_iter().enumerate() {
        // distances at the rounding floor carry no rate information
        if d <= FIT_FLOOR {
            continue;
        }
        let envelope = libm::pow(rho, (i + 1) as f64);
        m = m.max(if envelope > 0.0 { d / envelope } else { f64::INFINITY });
    }
    Ok(GeometricFit { m, rho })
}

/// `ceil(tau_mix(alpha_T^2) / K)` over the slowest agent.
pub fn prescribed_tau(
    kernels: &[&TransitionMatrix],
    alpha_final: f64,
    local_steps: usize,
    cap: usize,
) -> Result<MixingTime> {
    if local_steps == 0 {
        return Err(invalid!("local_steps must be positive"));
    }
    let mt = family_mixing_time(kernels, alpha_final * alpha_final, cap)?;
    Ok(MixingTime {
        tau: mt.tau.div_ceil(local_steps),
        saturated: mt.saturated,
    })
}

/// Per-sample TD components `A(O) = phi(s) (phi(s) - gamma phi(s'))^T` and
/// `b(O) = r phi(s)`.
pub fn td_components(obs: &Observation, phi: &FeatureMatrix, gamma: f64) -> (Matrix, Vector) {
    let f = phi.row(obs.s);
    let f_next = phi.row(obs.s_next);
    let a = &f * (&f - f_next * gamma).transpose();
    let b = f * obs.reward;
    (a, b)
}
