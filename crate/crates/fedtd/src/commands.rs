//! The `fedtd` subcommands. Each writes its artifacts under `out`, prints a
//! short human-readable log to `log`, and returns its report.

use std::io::Write;
use std::path::{Path, PathBuf};

use fedtd_core::engine::{
    default_projection_radius, iteration_radius, max_stable_step, meanpath_bias_closed_form, pair_mean_matrix, plateau,
    run_fedtd_with, theory_step_sizes, AgentExecutor, FedConfig, GlobalSchedule, Projection, RunTrace, SamplingMode,
    Sequential,
};
use fedtd_core::features::FeatureMatrix;
use fedtd_core::linalg;
use fedtd_core::markov::{is_ergodic, measure_family, Mrp};
use fedtd_core::sampling::{fit_geometric, mixing_time, prescribed_tau};
use fedtd_core::td::{family_systems, td_system, virtual_mrp, SpectralSummary, TdSystem, STATIONARY_TOL};
use fedtd_core::Error as CoreError;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{verify_bounds, BoundReport, Status, DEFAULT_SLACK};
use crate::error::HarnessError;
use crate::family::{self, FamilyFile, PairHeterogeneity};
use crate::output::{line_chart, mean_and_std, write_trace, Series};
use crate::parallel::{self, RayonAgents};
use crate::spec::{ExperimentSpec, StepSpec};

/// Number of random parameters probed by `verify-bounds`.
pub const BOUND_THETA_SAMPLES: usize = 1000;

/// A solved family: agents, features, per-agent systems and the virtual one.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub agents: Vec<Mrp>,
    pub phi: FeatureMatrix,
    pub systems: Vec<TdSystem>,
    pub virtual_sys: TdSystem,
}

impl Prepared {
    pub fn new(agents: Vec<Mrp>, phi: FeatureMatrix) -> Result<Self, HarnessError> {
        let (systems, virtual_sys) = family_systems(&agents, &phi)?;
        Ok(Self {
            agents,
            phi,
            systems,
            virtual_sys,
        })
    }

    pub fn from_spec(spec: &ExperimentSpec, family_path: Option<&Path>) -> Result<Self, HarnessError> {
        let agents = family::resolve(&spec.family, family_path)?;
        Self::new(agents, family::features(&spec.family)?)
    }

    /// The first `count` agents with their own virtual environment.
    pub fn prefix(&self, count: usize) -> Result<Self, HarnessError> {
        if count == self.agents.len() {
            return Ok(self.clone());
        }
        let agents = self.agents[..count].to_vec();
        let virtual_sys = td_system(&virtual_mrp(&agents)?, &self.phi, STATIONARY_TOL)?;
        Ok(Self {
            agents,
            phi: self.phi.clone(),
            systems: self.systems[..count].to_vec(),
            virtual_sys,
        })
    }

    pub fn projection_radius(&self) -> f64 {
        default_projection_radius(&self.systems, &self.virtual_sys)
    }

    pub fn run(&self, cfg: &FedConfig, exec: &dyn AgentExecutor) -> Result<RunTrace, CoreError> {
        run_fedtd_with(&self.agents, &self.phi, &self.systems, &self.virtual_sys, cfg, exec)
    }
}

/// Local step from the spec, resolving `"theory"`.
pub fn resolve_local_step(spec: &ExperimentSpec, prep: &Prepared) -> Result<f64, HarnessError> {
    match spec.run.local_step_size {
        StepSpec::Value(a) => Ok(a),
        StepSpec::Named(_) => Ok(theory_step_sizes(
            &prep.virtual_sys,
            &prep.phi,
            spec.run.local_steps,
            spec.run.rounds,
            spec.run.averaging_offset,
            spec.sampling_mode(),
        )?
        .alpha_l),
    }
}

fn out_dir(spec: &ExperimentSpec, out: Option<&Path>) -> Result<PathBuf, HarnessError> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| spec.outputs.dir.clone());
    std::fs::create_dir_all(&dir)
        .map_err(|e| HarnessError::Spec(format!("cannot create output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    pub path: PathBuf,
    pub epsilon_hat: f64,
    pub epsilon1_hat: f64,
    pub pairs: Vec<PairHeterogeneity>,
    pub all_ergodic: bool,
}

pub fn cmd_generate(
    spec: &ExperimentSpec,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<GenerateReport, HarnessError> {
    let agents = family::generate(&spec.family)?;
    let dir = out_dir(spec, out)?;
    let path = dir.join("family.json");
    FamilyFile::from_agents(&agents).save(&path)?;

    let pairs = family::pairwise(&agents);
    for p in &pairs {
        writeln!(
            log,
            "pair ({}, {}): epsilon_hat = {:e}, epsilon1_hat = {:e}",
            p.i, p.j, p.epsilon, p.epsilon1
        )?;
    }
    let mut all_ergodic = true;
    for (i, m) in agents.iter().enumerate() {
        let ok = is_ergodic(m.p());
        all_ergodic &= ok;
        writeln!(log, "agent {i}: {}", if ok { "ergodic" } else { "NOT ergodic" })?;
    }
    let het = measure_family(&agents);
    writeln!(
        log,
        "family: {} agents, epsilon_hat = {:e} (<= {}), epsilon1_hat = {:e} (<= {}); wrote {}",
        agents.len(),
        het.epsilon,
        spec.family.epsilon,
        het.epsilon1,
        spec.family.epsilon1,
        path.display()
    )?;
    Ok(GenerateReport {
        path,
        epsilon_hat: het.epsilon,
        epsilon1_hat: het.epsilon1,
        pairs,
        all_ergodic,
    })
}

// --------------------------------------------------------------------- run

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub diverged: bool,
    pub diverged_round: Option<usize>,
    pub diverged_norm: Option<f64>,
    pub csv: Option<String>,
    pub plateau_agent1: Option<f64>,
    pub plateau_virtual: Option<f64>,
    pub final_err_agent1: Option<f64>,
    pub averaged_iterate: Option<Vec<f64>>,
    pub dbar_value_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub spec: ExperimentSpec,
    pub local_step_size: f64,
    pub projection_radius: Option<f64>,
    pub seeds: Vec<SeedSummary>,
    pub diverged_seeds: usize,
    pub mean_plateau_agent1: Option<f64>,
    pub mean_plateau_virtual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemReport {
    pub agent: Option<usize>,
    pub a_norm: f64,
    pub b_norm: f64,
    pub theta_norm: f64,
    pub kappa: f64,
    pub sym_lambda_min: f64,
    pub sym_lambda_max: f64,
    pub gram_lambda_min: f64,
    pub gram_lambda_max: f64,
    pub theta_star: Vec<f64>,
}

impl SystemReport {
    fn new(agent: Option<usize>, sys: &TdSystem, phi: &FeatureMatrix) -> Self {
        let SpectralSummary {
            a_norm,
            b_norm,
            theta_norm,
            kappa,
            sym_lambda_min,
            sym_lambda_max,
            gram_lambda_min,
            gram_lambda_max,
        } = sys.summary(phi);
        Self {
            agent,
            a_norm,
            b_norm,
            theta_norm,
            kappa,
            sym_lambda_min,
            sym_lambda_max,
            gram_lambda_min,
            gram_lambda_max,
            theta_star: sys.theta_star.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemsFile {
    pub epsilon_hat: f64,
    pub epsilon1_hat: f64,
    pub agents: Vec<SystemReport>,
    #[serde(rename = "virtual")]
    pub virtual_sys: SystemReport,
}

fn systems_file(prep: &Prepared) -> SystemsFile {
    let het = measure_family(&prep.agents);
    SystemsFile {
        epsilon_hat: het.epsilon,
        epsilon1_hat: het.epsilon1,
        agents: prep
            .systems
            .iter()
            .enumerate()
            .map(|(i, s)| SystemReport::new(Some(i), s, &prep.phi))
            .collect(),
        virtual_sys: SystemReport::new(None, &prep.virtual_sys, &prep.phi),
    }
}

/// Runs `(config, tag)` jobs on the pool. A single job gets agent-level
/// parallelism instead. Output order follows input order.
fn run_jobs(jobs: &[(FedConfig, usize)], preps: &[Prepared]) -> Result<Vec<Result<RunTrace, CoreError>>, HarnessError> {
    let pool = parallel::pool()?;
    Ok(pool.install(|| {
        if jobs.len() == 1 {
            let (cfg, p) = &jobs[0];
            vec![preps[*p].run(cfg, &RayonAgents)]
        } else {
            jobs.par_iter()
                .map(|(cfg, p)| preps[*p].run(cfg, &Sequential))
                .collect()
        }
    }))
}

fn seed_summary(
    seed: u64,
    result: &Result<RunTrace, CoreError>,
    csv: Option<String>,
) -> Result<SeedSummary, HarnessError> {
    match result {
        Ok(trace) => Ok(SeedSummary {
            seed,
            diverged: false,
            diverged_round: None,
            diverged_norm: None,
            csv,
            plateau_agent1: Some(plateau(&trace.agent_series(0))),
            plateau_virtual: Some(plateau(&trace.virtual_errors)),
            final_err_agent1: trace.agent_errors.last().map(|r| r[0]),
            averaged_iterate: Some(trace.averaged_iterate.iter().copied().collect()),
            dbar_value_errors: Some(trace.dbar_value_errors.clone()),
        }),
        Err(CoreError::Diverged { round, norm }) => Ok(SeedSummary {
            seed,
            diverged: true,
            diverged_round: Some(*round),
            diverged_norm: Some(*norm),
            csv: None,
            plateau_agent1: None,
            plateau_virtual: None,
            final_err_agent1: None,
            averaged_iterate: None,
            dbar_value_errors: None,
        }),
        Err(e) => Err(e.clone().into()),
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn cmd_run(
    spec: &ExperimentSpec,
    family_path: Option<&Path>,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<RunSummary, HarnessError> {
    let prep = Prepared::from_spec(spec, family_path)?;
    let dir = out_dir(spec, out)?;
    let alpha_l = resolve_local_step(spec, &prep)?;
    let radius = prep.projection_radius();
    let n_agents = prep.agents.len();
    let jobs: Vec<(FedConfig, usize)> = spec
        .run
        .seeds
        .iter()
        .map(|&seed| (spec.fed_config(n_agents, seed, alpha_l, radius), 0))
        .collect();
    let results = run_jobs(&jobs, std::slice::from_ref(&prep))?;

    let mut seeds = Vec::new();
    let mut curves = Vec::new();
    for (&seed, result) in spec.run.seeds.iter().zip(&results) {
        let csv = if let Ok(trace) = result {
            let name = format!("trace_seed{seed}.csv");
            write_trace(std::fs::File::create(dir.join(&name))?, trace)?;
            curves.push(trace.agent_series(0));
            Some(name)
        } else {
            None
        };
        let s = seed_summary(seed, result, csv)?;
        match (s.diverged, s.plateau_agent1) {
            (true, _) => writeln!(log, "seed {seed}: diverged at round {}", s.diverged_round.unwrap_or(0))?,
            (false, Some(p)) => writeln!(log, "seed {seed}: plateau err_sq_agent1 = {p:e}")?,
            _ => {}
        }
        seeds.push(s);
    }

    let diverged_seeds = seeds.iter().filter(|s| s.diverged).count();
    let summary = RunSummary {
        spec: spec.clone(),
        local_step_size: alpha_l,
        projection_radius: match jobs[0].0.projection {
            Projection::Ball(r) => Some(r),
            Projection::Disabled => None,
        },
        mean_plateau_agent1: mean_of(seeds.iter().filter_map(|s| s.plateau_agent1)),
        mean_plateau_virtual: mean_of(seeds.iter().filter_map(|s| s.plateau_virtual)),
        seeds,
        diverged_seeds,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("systems.json"), &systems_file(&prep))?;
    if spec.outputs.emit_svg && !curves.is_empty() {
        let (mean, std) = mean_and_std(&curves);
        let svg = line_chart(
            &format!("||theta_bar_t - theta_1*||^2, N = {n_agents}, {} seeds", curves.len()),
            &[Series {
                label: format!("N={n_agents}"),
                values: mean,
                band: Some(std),
            }],
        );
        std::fs::write(dir.join("error.svg"), svg)?;
    }
    if diverged_seeds == summary.seeds.len() {
        return Err(HarnessError::AllDiverged(format!(
            "all {diverged_seeds} seeds diverged"
        )));
    }
    Ok(summary)
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n_agents: usize,
    pub seed: u64,
    pub diverged: bool,
    pub plateau: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub n_agents: usize,
    pub mean_plateau: Option<f64>,
    pub std_plateau: Option<f64>,
    /// `plateau(1) / plateau(N)`.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub local_step_size: f64,
    pub rows: Vec<SweepRow>,
    pub points: Vec<SweepPoint>,
    /// Mean plateau strictly decreasing in N (in sorted N order).
    pub monotone_decreasing: bool,
}

pub fn cmd_sweep(
    spec: &ExperimentSpec,
    family_path: Option<&Path>,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<SweepResult, HarnessError> {
    spec.validate_sweep()?;
    let full = Prepared::from_spec(spec, family_path)?;
    let dir = out_dir(spec, out)?;
    let mut counts = spec.run.sweep_agents.clone();
    counts.sort_unstable();
    counts.dedup();
    let preps = counts.iter().map(|&n| full.prefix(n)).collect::<Result<Vec<_>, _>>()?;
    // one step size for the whole grid, resolved on the full family
    let alpha_l = resolve_local_step(spec, &full)?;

    let mut jobs = Vec::new();
    for (p, prep) in preps.iter().enumerate() {
        for &seed in &spec.run.seeds {
            jobs.push((
                spec.fed_config(prep.agents.len(), seed, alpha_l, prep.projection_radius()),
                p,
            ));
        }
    }
    let results = run_jobs(&jobs, &preps)?;

    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (p, &n) in counts.iter().enumerate() {
        let mut curves = Vec::new();
        for (k, &seed) in spec.run.seeds.iter().enumerate() {
            let result = &results[p * spec.run.seeds.len() + k];
            if let Ok(trace) = result {
                write_trace(
                    std::fs::File::create(dir.join(format!("sweep_N{n}_seed{seed}.csv")))?,
                    trace,
                )?;
                curves.push(trace.agent_series(0));
            } else if let Err(e) = result {
                if !matches!(e, CoreError::Diverged { .. }) {
                    return Err(e.clone().into());
                }
            }
            rows.push(SweepRow {
                n_agents: n,
                seed,
                diverged: result.is_err(),
                plateau: result.as_ref().ok().map(|t| plateau(&t.agent_series(0))),
            });
        }
        if !curves.is_empty() {
            series.push(Series {
                label: format!("N={n}"),
                values: mean_and_std(&curves).0,
                band: None,
            });
        }
    }
    if rows.iter().all(|r| r.diverged) {
        return Err(HarnessError::AllDiverged(format!("all {} runs diverged", rows.len())));
    }

    let mut points: Vec<SweepPoint> = counts
        .iter()
        .map(|&n| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.n_agents == n)
                .filter_map(|r| r.plateau)
                .collect();
            let mean = mean_of(vals.iter().copied());
            let std = mean.map(|m| (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt());
            SweepPoint {
                n_agents: n,
                mean_plateau: mean,
                std_plateau: std,
                speedup: None,
            }
        })
        .collect();
    let base = points.iter().find(|p| p.n_agents == 1).and_then(|p| p.mean_plateau);
    for p in &mut points {
        p.speedup = base.zip(p.mean_plateau).map(|(b, m)| b / m);
    }
    let monotone_decreasing = points.windows(2).all(|w| match (w[0].mean_plateau, w[1].mean_plateau) {
        (Some(a), Some(b)) => b < a,
        _ => false,
    });
    for p in &points {
        writeln!(
            log,
            "N = {:>3}: mean plateau = {}, speedup = {}",
            p.n_agents,
            p.mean_plateau.map_or("diverged".into(), |v| format!("{v:e}")),
            p.speedup.map_or("-".into(), |v| format!("{v:.3}"))
        )?;
    }
    writeln!(log, "monotone decreasing in N: {monotone_decreasing}")?;

    let result = SweepResult {
        local_step_size: alpha_l,
        rows,
        points,
        monotone_decreasing,
    };
    write_json(&dir.join("sweep.json"), &result)?;
    if spec.outputs.emit_svg && !series.is_empty() {
        std::fs::write(
            dir.join("sweep.svg"),
            line_chart("mean ||theta_bar_t - theta_1*||^2 by N", &series),
        )?;
    }
    Ok(result)
}

// ----------------------------------------------------------- verify-bounds

pub fn cmd_verify_bounds(
    spec: &ExperimentSpec,
    family_path: Option<&Path>,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<BoundReport, HarnessError> {
    let prep = Prepared::from_spec(spec, family_path)?;
    let dir = out_dir(spec, out)?;
    let report = verify_bounds(
        &prep.agents,
        &prep.phi,
        &prep.systems,
        &prep.virtual_sys,
        DEFAULT_SLACK,
        BOUND_THETA_SAMPLES,
        spec.family.seed,
    )?;
    writeln!(
        log,
        "epsilon_hat = {:e}, epsilon1_hat = {:e}, kappa*A/delta1 = {:e}",
        report.epsilon_hat, report.epsilon1_hat, report.regime_ratio
    )?;
    if report.delta2_degenerate {
        writeln!(
            log,
            "warning: min ||b_i|| = {:e} is nearly zero; reward-gap ratios are unreliable",
            report.delta2
        )?;
    }
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::NotApplicable => "not applicable",
        };
        match c.limit {
            Some(limit) => writeln!(
                log,
                "{:<32} {status:<15} empirical {:e} vs limit {:e}",
                c.name, c.empirical, limit
            )?,
            None => writeln!(log, "{:<32} {status:<15} empirical {:e}", c.name, c.empirical)?,
        }
    }
    write_json(&dir.join("bounds.json"), &report)?;
    Ok(report)
}

// -------------------------------------------------------------- bias-check

#[derive(Debug, Clone, Serialize)]
pub struct BiasPoint {
    pub alpha: f64,
    pub spectral_radius: f64,
    pub closed_form_e1: Vec<f64>,
    pub closed_form_e2: Vec<f64>,
    pub simulated_e1: Vec<f64>,
    pub simulated_e2: Vec<f64>,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    pub rounds: usize,
    pub points: Vec<BiasPoint>,
    pub max_deviation: f64,
    /// Largest difference between simulated limits across step sizes.
    pub alpha_spread: f64,
}

pub fn cmd_bias_check(
    spec: &ExperimentSpec,
    family_path: Option<&Path>,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<BiasReport, HarnessError> {
    if spec.family.n_agents != 2 {
        return Err(HarnessError::Spec(format!(
            "bias-check needs exactly 2 agents, spec has {}",
            spec.family.n_agents
        )));
    }
    let prep = Prepared::from_spec(spec, family_path)?;
    let dir = out_dir(spec, out)?;
    let report = bias_check(&prep, &spec.run.bias_alphas, spec.run.bias_rounds)?;
    for p in &report.points {
        writeln!(
            log,
            "alpha = {:e}: radius {:.6}, max |simulated - closed form| = {:e}",
            p.alpha, p.spectral_radius, p.deviation
        )?;
    }
    writeln!(
        log,
        "max deviation {:e}, spread across alpha {:e}",
        report.max_deviation, report.alpha_spread
    )?;
    write_json(&dir.join("bias.json"), &report)?;
    Ok(report)
}

/// Two-agent mean-path runs with one local step against the closed-form
/// limit. Empty `alphas` means `{1/4, 1/2, 3/4}` of the largest stable step.
pub fn bias_check(prep: &Prepared, alphas: &[f64], rounds: usize) -> Result<BiasReport, HarnessError> {
    let [s1, s2] = prep.systems.as_slice() else {
        return Err(HarnessError::Spec("bias check needs exactly 2 agents".into()));
    };
    let a_hat = pair_mean_matrix(s1, s2);
    let alphas: Vec<f64> = if alphas.is_empty() {
        let top = max_stable_step(&a_hat);
        vec![0.25 * top, 0.5 * top, 0.75 * top]
    } else {
        alphas.to_vec()
    };
    let mut points = Vec::new();
    for &alpha in &alphas {
        let spectral_radius = iteration_radius(&a_hat, alpha)?;
        let (e1, e2) = meanpath_bias_closed_form(s1, s2, alpha)?;
        let mut cfg = FedConfig::new(2, 1, rounds, alpha, SamplingMode::MeanPath, 0);
        cfg.global_schedule = GlobalSchedule::Constant(1.0);
        let trace = prep.run(&cfg, &Sequential).map_err(|e| match e {
            CoreError::Diverged { .. } => HarnessError::Unstable(e.to_string()),
            e => e.into(),
        })?;
        let last = trace.global_iterates.last().expect("at least one iterate");
        let sim1 = last - &s1.theta_star;
        let sim2 = last - &s2.theta_star;
        let deviation = linalg::max_abs(&(&sim1 - &e1)).max(linalg::max_abs(&(&sim2 - &e2)));
        points.push(BiasPoint {
            alpha,
            spectral_radius,
            closed_form_e1: e1.iter().copied().collect(),
            closed_form_e2: e2.iter().copied().collect(),
            simulated_e1: sim1.iter().copied().collect(),
            simulated_e2: sim2.iter().copied().collect(),
            deviation,
        });
    }
    let max_deviation = points.iter().map(|p| p.deviation).fold(0.0, f64::max);
    let mut alpha_spread: f64 = 0.0;
    for a in &points {
        for b in &points {
            for (x, y) in a.simulated_e1.iter().zip(&b.simulated_e1) {
                alpha_spread = alpha_spread.max((x - y).abs());
            }
        }
    }
    Ok(BiasReport {
        rounds,
        points,
        max_deviation,
        alpha_spread,
    })
}

// ------------------------------------------------------------------ mixing

#[derive(Debug, Clone, Serialize)]
pub struct AgentMixing {
    pub agent: usize,
    pub tau: usize,
    pub saturated: bool,
    pub fitted_m: f64,
    pub fitted_rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub eps_bar: f64,
    pub cap: usize,
    pub agents: Vec<AgentMixing>,
    pub family_tau: usize,
    pub family_saturated: bool,
    pub virtual_tau: usize,
    /// `ceil(tau_mix(alpha_T^2) / K)` under the theory schedule, when
    /// `alpha_T^2 < 1`.
    pub prescribed_tau: Option<usize>,
    pub alpha_final: f64,
}

pub fn cmd_mixing(
    spec: &ExperimentSpec,
    family_path: Option<&Path>,
    out: Option<&Path>,
    log: &mut dyn Write,
) -> Result<MixingReport, HarnessError> {
    let prep = Prepared::from_spec(spec, family_path)?;
    let dir = out_dir(spec, out)?;
    let m = &spec.mixing;
    let mut agents = Vec::new();
    for (i, a) in prep.agents.iter().enumerate() {
        let mt = mixing_time(a.p(), m.eps_bar, m.cap)?;
        let fit = fit_geometric(a.p(), m.fit_horizon)?;
        writeln!(
            log,
            "agent {i}: tau_mix({}) = {}{}, fitted m = {:e}, rho = {:.6}",
            m.eps_bar,
            mt.tau,
            if mt.saturated { " (saturated)" } else { "" },
            fit.m,
            fit.rho
        )?;
        agents.push(AgentMixing {
            agent: i,
            tau: mt.tau,
            saturated: mt.saturated,
            fitted_m: fit.m,
            fitted_rho: fit.rho,
        });
    }
    let family_tau = agents.iter().map(|a| a.tau).max().unwrap_or(0);
    let family_saturated = agents.iter().any(|a| a.saturated);
    let virtual_tau = mixing_time(&virtual_mrp(&prep.agents)?.p().clone(), m.eps_bar, m.cap)?.tau;
    writeln!(
        log,
        "family max tau_mix = {family_tau}; virtual chain tau_mix = {virtual_tau}"
    )?;

    let steps = theory_step_sizes(
        &prep.virtual_sys,
        &prep.phi,
        spec.run.local_steps,
        spec.run.rounds,
        spec.run.averaging_offset,
        spec.sampling_mode(),
    )?;
    let alpha_final = *steps.alpha_t.last().expect("rounds >= 1");
    let kernels: Vec<_> = prep.agents.iter().map(|a| a.p()).collect();
    let prescribed = if alpha_final * alpha_final < 1.0 {
        Some(prescribed_tau(&kernels, alpha_final, spec.run.local_steps, m.cap)?.tau)
    } else {
        None
    };
    match prescribed {
        Some(t) => writeln!(log, "theory-prescribed tau = {t} (alpha_T = {alpha_final:e})")?,
        None => writeln!(
            log,
            "theory-prescribed tau undefined: alpha_T^2 = {:e} >= 1",
            alpha_final * alpha_final
        )?,
    }
    let report = MixingReport {
        eps_bar: m.eps_bar,
        cap: m.cap,
        agents,
        family_tau,
        family_saturated,
        virtual_tau,
        prescribed_tau: prescribed,
        alpha_final,
    };
    write_json(&dir.join("mixing.json"), &report)?;
    Ok(report)
}
