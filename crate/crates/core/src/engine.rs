//! FedTD(0): federated TD(0) with K local steps per round and server-side
//! averaging of the local displacements.
//!
//! Each round every agent restarts from the broadcast model, runs K local
//! TD(0) steps on its own observations and reports its displacement. The
//! server moves along the mean displacement scaled by the global step size
//! and projects onto a Euclidean ball.
//!
//! Local iterates are tracked as a displacement from the broadcast model,
//! starting from an exact zero. With one agent, one local step and a unit
//! global step the update is then bit-identical to plain TD(0).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{self, Matrix, Vector};
use crate::markov::Mrp;
use crate::rng::StreamKey;
use crate::sampling::{AgentChain, MrpSampler, Observation};
use crate::td::{weighted_value_error, TdSystem};

/// Iterate norm above which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Margin below one required of the spectral radius in [`schur_stable`].
pub const SCHUR_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// `s ~ pi_i`, `s' ~ P_i(s, .)` afresh at every local step.
    Iid,
    /// One persistent trajectory per agent.
    Markov,
    /// Deterministic expected direction `b_i - A_i theta`.
    MeanPath,
}

impl SamplingMode {
    /// `u64` draws per local step.
    pub fn draws_per_step(self) -> u64 {
        match self {
            SamplingMode::Iid => 2,
            SamplingMode::Markov => 1,
            SamplingMode::MeanPath => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalSchedule {
    Constant(f64),
    /// `alpha_g(t) = alpha_t / (K alpha_l)` with
    /// `alpha_t = 8 / (nu (a + t + 1))`, `a` the averaging offset.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Disabled,
    Ball(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedConfig {
    pub n_agents: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub local_step_size: f64,
    pub global_schedule: GlobalSchedule,
    pub projection: Projection,
    pub sampling_mode: SamplingMode,
    pub seed: u64,
    /// Offset `a` in the averaging weights `w_t = a + t`.
    pub averaging_offset: f64,
    /// Common starting state of the Markov chains.
    pub initial_state: usize,
}

impl FedConfig {
    /// Defaults: unit constant global step, no projection, offset 3,
    /// chains starting in state 0.
    pub fn new(
        n_agents: usize,
        local_steps: usize,
        rounds: usize,
        local_step_size: f64,
        sampling_mode: SamplingMode,
        seed: u64,
    ) -> Self {
        Self {
            n_agents,
            local_steps,
            rounds,
            local_step_size,
            global_schedule: GlobalSchedule::Constant(1.0),
            projection: Projection::Disabled,
            sampling_mode,
            seed,
            averaging_offset: 3.0,
            initial_state: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if self.n_agents == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(invalid!("n_agents, local_steps and rounds must all be at least 1"));
        }
        if !positive(self.local_step_size) {
            return Err(invalid!(
                "local step size must be positive, got {}",
                self.local_step_size
            ));
        }
        if let GlobalSchedule::Constant(a) = self.global_schedule {
            if !positive(a) {
                return Err(invalid!("global step size must be positive, got {a}"));
            }
        }
        if let Projection::Ball(r) = self.projection {
            if !positive(r) {
                return Err(invalid!("projection radius must be positive, got {r}"));
            }
        }
        if !positive(self.averaging_offset) {
            return Err(invalid!("averaging offset must be positive"));
        }
        Ok(())
    }
}

/// Ball radius `1.1 max(||theta_i*||, ||theta*||)`.
pub fn default_projection_radius(systems: &[TdSystem], virtual_sys: &TdSystem) -> f64 {
    1.1 * systems
        .iter()
        .chain(core::iter::once(virtual_sys))
        .map(|s| s.theta_star.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// `theta_bar_t` for `t = 0..=T`.
    pub global_iterates: Vec<Vector>,
    /// `agent_errors[t][i] = ||theta_bar_t - theta_i*||^2`.
    pub agent_errors: Vec<Vec<f64>>,
    /// `||theta_bar_t - theta*||^2` against the virtual fixed point.
    pub virtual_errors: Vec<f64>,
    /// `||V(theta_bar_t) - V(theta_1*)||^2` weighted by the virtual law.
    pub dbar_value_err_agent1: Vec<f64>,
    /// Weighted average of `theta_bar_1..theta_bar_T`.
    pub averaged_iterate: Vector,
    /// `||V(averaged) - V(theta_i*)||^2` weighted by the virtual law, per agent.
    pub dbar_value_errors: Vec<f64>,
    /// Global step used in each round.
    pub global_steps: Vec<f64>,
}

impl RunTrace {
    pub fn rounds(&self) -> usize {
        self.global_iterates.len() - 1
    }

    /// Error series against agent `i`.
    pub fn agent_series(&self, i: usize) -> Vec<f64> {
        self.agent_errors.iter().map(|row| row[i]).collect()
    }
}

/// Mean of the last quarter of a per-round series (at least one entry).
/// Entry 0 is the initial iterate and never counts.
pub fn plateau(series: &[f64]) -> f64 {
    let rounds = series.len().saturating_sub(1);
    if rounds == 0 {
        return series.first().copied().unwrap_or(f64::NAN);
    }
    let count = rounds.div_ceil(4);
    let tail = &series[series.len() - count..];
    tail.iter().sum::<f64>() / count as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// `theta + alpha_l (r + gamma phi(s')^T theta - phi(s)^T theta) phi(s)`.
pub fn local_td_step(theta: &Vector, obs: &Observation, phi: &FeatureMatrix, gamma: f64, alpha_l: f64) -> Vector {
    let f = phi.row(obs.s);
    let td = obs.reward + gamma * phi.value(obs.s_next, theta) - phi.value(obs.s, theta);
    let mut out = theta.clone();
    for k in 0..out.len() {
        out[k] += alpha_l * td * f[k];
    }
    out
}

/// Projection onto the origin-centred ball of the given radius.
pub fn project_ball(theta: &Vector, radius: f64) -> Vector {
    let norm = theta.norm();
    if norm <= radius {
        theta.clone()
    } else {
        theta * (radius / norm)
    }
}

/// Whether every eigenvalue of `I - alpha A_hat` lies strictly inside the
/// unit circle (with margin [`SCHUR_MARGIN`]).
pub fn schur_stable(a_hat: &Matrix, alpha: f64) -> Result<bool> {
    Ok(iteration_radius(a_hat, alpha)? < 1.0 - SCHUR_MARGIN)
}

/// Spectral radius of `I - alpha A_hat`.
pub fn iteration_radius(a_hat: &Matrix, alpha: f64) -> Result<f64> {
    let n = a_hat.nrows();
    if a_hat.ncols() != n {
        return Err(invalid!("matrix must be square"));
    }
    linalg::spectral_radius(&(Matrix::identity(n, n) - a_hat * alpha))
}

/// Largest `alpha` keeping `I - alpha A` Schur stable:
/// `min 2 Re(lambda) / |lambda|^2` over the eigenvalues of `A`.
/// Zero if some eigenvalue has non-positive real part.
pub fn max_stable_step(a_hat: &Matrix) -> f64 {
    a_hat
        .complex_eigenvalues()
        .iter()
        .map(|l| if l.re > 0.0 { 2.0 * l.re / l.norm_sqr() } else { 0.0 })
        .fold(f64::INFINITY, f64::min)
}

/// `A_hat = (A_1 + A_2) / 2` for a pair of systems.
pub fn pair_mean_matrix(sys1: &TdSystem, sys2: &TdSystem) -> Matrix {
    (&sys1.a_bar + &sys2.a_bar) * 0.5
}

/// Limits `lim theta_bar_t - theta_i*` of the two-agent mean-path recursion
/// with one local step and effective step `alpha`:
/// `e1 = A_hat^-1 A_2 (theta_2* - theta_1*) / 2`,
/// `e2 = A_hat^-1 A_1 (theta_1* - theta_2*) / 2`.
pub fn meanpath_bias_closed_form(sys1: &TdSystem, sys2: &TdSystem, alpha: f64) -> Result<(Vector, Vector)> {
    if sys1.d() != sys2.d() {
        return Err(invalid!("systems have different dimensions"));
    }
    let a_hat = pair_mean_matrix(sys1, sys2);
    let radius = iteration_radius(&a_hat, alpha)?;
    if !(radius < 1.0 - SCHUR_MARGIN) {
        return Err(Error::Unstable {
            spectral_radius: radius,
        });
    }
    let gap = &sys2.theta_star - &sys1.theta_star;
    let e1 = linalg::solve(&a_hat, &(&sys2.a_bar * &gap))? * 0.5;
    let e2 = linalg::solve(&a_hat, &(&sys1.a_bar * &gap))? * -0.5;
    Ok((e1, e2))
}

/// Step sizes prescribed by the convergence analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySteps {
    /// `lambda_min(Phi^T D_bar Phi)`.
    pub omega_bar: f64,
    /// `(1 - gamma) omega_bar`.
    pub nu: f64,
    pub alpha_l: f64,
    /// Effective steps `alpha_t`, `t = 0..T`.
    pub alpha_t: Vec<f64>,
    /// Global steps `alpha_t / (K alpha_l)`.
    pub alpha_g: Vec<f64>,
}

/// `alpha_l = (1 - gamma) omega_bar / (96 K)`, capped in Markov mode at
/// `1 / (2 sqrt(2) (1 + gamma) (K - 1))` (no cap for `K = 1`);
/// `alpha_t = 8 / (nu (a + t + 1))`.
pub fn theory_step_sizes(
    virtual_sys: &TdSystem,
    phi: &FeatureMatrix,
    local_steps: usize,
    rounds: usize,
    averaging_offset: f64,
    mode: SamplingMode,
) -> Result<TheorySteps> {
    if local_steps == 0 {
        return Err(invalid!("local_steps must be positive"));
    }
    if !(averaging_offset > 0.0) {
        return Err(invalid!("averaging offset must be positive"));
    }
    let (omega_bar, _) = linalg::symmetric_extremes(&virtual_sys.gram(phi));
    if !(omega_bar > 0.0) {
        return Err(domain!("virtual Gram matrix is singular (lambda_min = {omega_bar})"));
    }
    let gamma = virtual_sys.gamma;
    let nu = (1.0 - gamma) * omega_bar;
    let k = local_steps as f64;
    let mut alpha_l = 0.5 * nu / (48.0 * k);
    if mode == SamplingMode::Markov && local_steps > 1 {
        let cap = 1.0 / (2.0 * core::f64::consts::SQRT_2 * (1.0 + gamma) * (k - 1.0));
        alpha_l = alpha_l.min(cap);
    }
    let alpha_t: Vec<f64> = (0..rounds)
        .map(|t| 8.0 / (nu * (averaging_offset + t as f64 + 1.0)))
        .collect();
    let alpha_g = alpha_t.iter().map(|a| a / (k * alpha_l)).collect();
    Ok(TheorySteps {
        omega_bar,
        nu,
        alpha_l,
        alpha_t,
        alpha_g,
    })
}

/// Per-agent mutable state carried across rounds.
#[derive(Debug, Clone)]
pub struct AgentSlot {
    pub chain: AgentChain,
    /// Displacement `theta_{t,K} - theta_bar_t` of the latest round.
    pub delta: Vec<f64>,
    scratch: Vec<f64>,
}

/// Runs a closure over every agent slot. Implementations may parallelize;
/// the closure touches only its own slot.
pub trait AgentExecutor {
    fn for_each(&self, slots: &mut [AgentSlot], f: &(dyn Fn(&mut AgentSlot) + Sync));
}

/// Runs agents one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl AgentExecutor for Sequential {
    fn for_each(&self, slots: &mut [AgentSlot], f: &(dyn Fn(&mut AgentSlot) + Sync)) {
        for slot in slots {
            f(slot);
        }
    }
}

struct RoundContext<'a> {
    phi: &'a [f64],
    d: usize,
    gamma: f64,
    alpha_l: f64,
    local_steps: usize,
    mode: SamplingMode,
    samplers: &'a [MrpSampler],
    systems: &'a [TdSystem],
    key: StreamKey,
    r_max: &'a [f64],
}

impl RoundContext<'_> {
    fn run_agent(&self, slot: &mut AgentSlot, theta_bar: &[f64], round: usize) {
        let agent = slot.chain.agent;
        let d = self.d;
        slot.delta.iter_mut().for_each(|x| *x = 0.0);
        if self.mode == SamplingMode::MeanPath {
            let sys = &self.systems[agent];
            for _ in 0..self.local_steps {
                for k in 0..d {
                    slot.scratch[k] = theta_bar[k] + slot.delta[k];
                }
                for j in 0..d {
                    let mut g = sys.b_bar[j];
                    for k in 0..d {
                        g -= sys.a_bar[(j, k)] * slot.scratch[k];
                    }
                    slot.delta[j] += self.alpha_l * g;
                }
            }
            return;
        }
        let sampler = &self.samplers[agent];
        let mut rng = self.key.round_stream(agent, round);
        for _ in 0..self.local_steps {
            let obs = match self.mode {
                SamplingMode::Iid => sampler.iid_draw(&mut rng),
                _ => slot.chain.markov_step(sampler, &mut rng),
            };
            for k in 0..d {
                slot.scratch[k] = theta_bar[k] + slot.delta[k];
            }
            let f = &self.phi[obs.s * d..(obs.s + 1) * d];
            let f_next = &self.phi[obs.s_next * d..(obs.s_next + 1) * d];
            let td = obs.reward + self.gamma * dot(f_next, &slot.scratch) - dot(f, &slot.scratch);
            for k in 0..d {
                slot.delta[k] += self.alpha_l * td * f[k];
            }
            debug_assert!({
                let theta_norm = linalg::sqrt(slot.scratch.iter().map(|x| x * x).sum::<f64>());
                let step = (self.alpha_l * td).abs() * linalg::sqrt(dot(f, f));
                step <= self.alpha_l * (self.r_max[agent] + (1.0 + self.gamma) * theta_norm) * (1.0 + 1e-9)
                    + f64::MIN_POSITIVE
            });
        }
    }
}

/// Runs FedTD(0) on the calling thread.
pub fn run_fedtd(
    agents: &[Mrp],
    phi: &FeatureMatrix,
    systems: &[TdSystem],
    virtual_sys: &TdSystem,
    cfg: &FedConfig,
) -> Result<RunTrace> {
    run_fedtd_with(agents, phi, systems, virtual_sys, cfg, &Sequential)
}

/// Runs FedTD(0), delegating the per-round agent loops to `exec`. The result
/// does not depend on how `exec` schedules the agents.
pub fn run_fedtd_with(
    agents: &[Mrp],
    phi: &FeatureMatrix,
    systems: &[TdSystem],
    virtual_sys: &TdSystem,
    cfg: &FedConfig,
    exec: &dyn AgentExecutor,
) -> Result<RunTrace> {
    cfg.validate()?;
    let n_agents = cfg.n_agents;
    if agents.len() != n_agents || systems.len() != n_agents {
        return Err(invalid!(
            "config has {} agents but family has {} MRPs and {} systems",
            n_agents,
            agents.len(),
            systems.len()
        ));
    }
    let (n, d) = (phi.n(), phi.d());
    if agents.iter().any(|m| m.n() != n) || systems.iter().chain([virtual_sys]).any(|s| s.d() != d) {
        return Err(invalid!("family, features and systems disagree on dimensions"));
    }
    if cfg.initial_state >= n {
        return Err(invalid!(
            "initial state {} out of range for {n} states",
            cfg.initial_state
        ));
    }
    let gamma = agents[0].gamma();

    let global_steps: Vec<f64> = match cfg.global_schedule {
        GlobalSchedule::Constant(a) => vec![a; cfg.rounds],
        GlobalSchedule::Theory => {
            let (omega_bar, _) = linalg::symmetric_extremes(&virtual_sys.gram(phi));
            let nu = (1.0 - gamma) * omega_bar;
            if !(nu > 0.0) {
                return Err(domain!("theory schedule needs a positive nu, got {nu}"));
            }
            let k = cfg.local_steps as f64;
            (0..cfg.rounds)
                .map(|t| 8.0 / (nu * (cfg.averaging_offset + t as f64 + 1.0)) / (k * cfg.local_step_size))
                .collect()
        }
    };

    let samplers = if cfg.sampling_mode == SamplingMode::MeanPath {
        Vec::new()
    } else {
        agents
            .iter()
            .zip(systems)
            .map(|(m, s)| MrpSampler::new(m, &s.pi))
            .collect::<Result<Vec<_>>>()?
    };
    let r_max: Vec<f64> = agents.iter().map(|m| m.r().r_max()).collect();
    let phi_rows = phi.to_row_major();
    let ctx = RoundContext {
        phi: &phi_rows,
        d,
        gamma,
        alpha_l: cfg.local_step_size,
        local_steps: cfg.local_steps,
        mode: cfg.sampling_mode,
        samplers: &samplers,
        systems,
        key: StreamKey::new(cfg.seed, cfg.local_steps, cfg.sampling_mode.draws_per_step()),
        r_max: &r_max,
    };

    let mut slots: Vec<AgentSlot> = (0..n_agents)
        .map(|i| AgentSlot {
            chain: AgentChain::new(i, cfg.initial_state),
            delta: vec![0.0; d],
            scratch: vec![0.0; d],
        })
        .collect();

    let mut theta = Vector::zeros(d);
    let mut trace = RunTrace {
        global_iterates: Vec::with_capacity(cfg.rounds + 1),
        agent_errors: Vec::with_capacity(cfg.rounds + 1),
        virtual_errors: Vec::with_capacity(cfg.rounds + 1),
        dbar_value_err_agent1: Vec::with_capacity(cfg.rounds + 1),
        averaged_iterate: Vector::zeros(d),
        dbar_value_errors: Vec::new(),
        global_steps,
    };
    let record = |trace: &mut RunTrace, theta: &Vector| {
        trace
            .agent_errors
            .push(systems.iter().map(|s| (theta - &s.theta_star).norm_squared()).collect());
        trace
            .virtual_errors
            .push((theta - &virtual_sys.theta_star).norm_squared());
        trace
            .dbar_value_err_agent1
            .push(weighted_value_error(virtual_sys, phi, theta, &systems[0].theta_star));
        trace.global_iterates.push(theta.clone());
    };
    record(&mut trace, &theta);

    let mut weighted_sum = Vector::zeros(d);
    let mut weight_total = 0.0;
    let mut sum = vec![0.0; d];
    for t in 0..cfg.rounds {
        let theta_bar: Vec<f64> = theta.iter().copied().collect();
        exec.for_each(&mut slots, &|slot: &mut AgentSlot| ctx.run_agent(slot, &theta_bar, t));

        sum.iter_mut().for_each(|x| *x = 0.0);
        for slot in &slots {
            for k in 0..d {
                sum[k] += slot.delta[k];
            }
        }
        let scale = trace.global_steps[t] / n_agents as f64;
        for k in 0..d {
            theta[k] += scale * sum[k];
        }
        if let Projection::Ball(radius) = cfg.projection {
            theta = project_ball(&theta, radius);
        }
        let norm = theta.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Diverged { round: t + 1, norm });
        }
        record(&mut trace, &theta);
        let w = cfg.averaging_offset + (t + 1) as f64;
        weighted_sum += &theta * w;
        weight_total += w;
    }
    trace.averaged_iterate = weighted_sum / weight_total;
    trace.dbar_value_errors = systems
        .iter()
        .map(|s| weighted_value_error(virtual_sys, phi, &trace.averaged_iterate, &s.theta_star))
        .collect();
    Ok(trace)
}
