//! Experiment specification: one JSON file with `family`, `run` and
//! `outputs` blocks (plus an optional `mixing` block).

use std::path::{Path, PathBuf};

use fedtd_core::engine::{FedConfig, GlobalSchedule, Projection, SamplingMode};
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub family: FamilyBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub outputs: OutputBlock,
    #[serde(default)]
    pub mixing: MixingBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    #[serde(default = "one")]
    pub r_max: f64,
    pub epsilon: f64,
    pub epsilon1: f64,
    pub n_agents: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Value(f64),
    Named(NamedStep),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedStep {
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleSpec {
    Constant(f64),
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionSpec {
    /// `1.1 max(||theta_i*||, ||theta*||)`.
    Auto,
    Disabled,
    Radius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Iid,
    Markov,
    Meanpath,
}

impl From<ModeSpec> for SamplingMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Iid => SamplingMode::Iid,
            ModeSpec::Markov => SamplingMode::Markov,
            ModeSpec::Meanpath => SamplingMode::MeanPath,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    /// Defaults to the family size.
    #[serde(default)]
    pub n_agents: Option<usize>,
    pub local_steps: usize,
    pub rounds: usize,
    pub local_step_size: StepSpec,
    #[serde(default = "default_schedule")]
    pub global_schedule: ScheduleSpec,
    /// Defaults to `auto` for sampled modes and `disabled` for mean-path.
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
    pub sampling_mode: ModeSpec,
    pub seeds: Vec<u64>,
    #[serde(default = "default_offset")]
    pub averaging_offset: f64,
    #[serde(default)]
    pub initial_state: usize,
    /// Agent counts for `sweep`; each run uses the first N agents.
    #[serde(default)]
    pub sweep_agents: Vec<usize>,
    /// Effective steps for `bias-check`; defaults to fractions of the
    /// largest stable step.
    #[serde(default)]
    pub bias_alphas: Vec<f64>,
    #[serde(default = "default_bias_rounds")]
    pub bias_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            emit_svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingBlock {
    #[serde(default = "default_eps_bar")]
    pub eps_bar: f64,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Horizon for the geometric-envelope fit.
    #[serde(default = "default_fit_horizon")]
    pub fit_horizon: usize,
}

impl Default for MixingBlock {
    fn default() -> Self {
        Self {
            eps_bar: default_eps_bar(),
            cap: default_cap(),
            fit_horizon: default_fit_horizon(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_schedule() -> ScheduleSpec {
    ScheduleSpec::Constant(1.0)
}
fn default_offset() -> f64 {
    3.0
}
fn default_bias_rounds() -> usize {
    100_000
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_eps_bar() -> f64 {
    0.01
}
fn default_cap() -> usize {
    fedtd_core::sampling::MIXING_CAP
}
fn default_fit_horizon() -> usize {
    50
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), HarnessError> {
    if cond {
        Ok(())
    } else {
        Err(HarnessError::Spec(msg()))
    }
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Spec(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::Spec(format!("malformed spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let f = &self.family;
        check(f.n >= 2, || format!("family.n must be at least 2, got {}", f.n))?;
        check(f.d >= 1 && f.d <= f.n, || {
            format!("family.d must lie in [1, n], got {}", f.d)
        })?;
        check(f.gamma > 0.0 && f.gamma < 1.0, || {
            format!("gamma must lie in (0, 1), got {}", f.gamma)
        })?;
        check(f.r_max.is_finite() && f.r_max > 0.0, || "r_max must be positive".into())?;
        check(f.epsilon.is_finite() && f.epsilon >= 0.0, || {
            "epsilon must be non-negative".into()
        })?;
        check(f.epsilon1.is_finite() && f.epsilon1 >= 0.0, || {
            "epsilon1 must be non-negative".into()
        })?;
        check(f.n_agents >= 1, || "family.n_agents must be at least 1".into())?;

        let r = &self.run;
        check(!r.seeds.is_empty(), || "run.seeds must not be empty".into())?;
        if let Some(n) = r.n_agents {
            check(n == f.n_agents, || {
                format!("run.n_agents = {n} disagrees with family.n_agents = {}", f.n_agents)
            })?;
        }
        check(r.local_steps >= 1, || "run.local_steps must be at least 1".into())?;
        check(r.rounds >= 1, || "run.rounds must be at least 1".into())?;
        if let StepSpec::Value(a) = r.local_step_size {
            check(a.is_finite() && a > 0.0, || {
                format!("local_step_size must be positive, got {a}")
            })?;
        }
        if let ScheduleSpec::Constant(a) = r.global_schedule {
            check(a.is_finite() && a > 0.0, || {
                format!("global step must be positive, got {a}")
            })?;
        }
        if let Some(ProjectionSpec::Radius(h)) = r.projection {
            check(h.is_finite() && h > 0.0, || {
                format!("projection radius must be positive, got {h}")
            })?;
        }
        check(r.averaging_offset > 0.0, || "averaging_offset must be positive".into())?;
        check(r.initial_state < f.n, || {
            format!("initial_state {} out of range", r.initial_state)
        })?;
        check(r.sweep_agents.iter().all(|&n| n >= 1 && n <= f.n_agents), || {
            format!("sweep_agents entries must lie in [1, {}]", f.n_agents)
        })?;
        check(r.bias_alphas.iter().all(|a| a.is_finite() && *a > 0.0), || {
            "bias_alphas must be positive".into()
        })?;
        check(r.bias_rounds >= 1, || "bias_rounds must be at least 1".into())?;

        let m = &self.mixing;
        check(m.eps_bar > 0.0 && m.eps_bar < 1.0, || {
            "mixing.eps_bar must lie in (0, 1)".into()
        })?;
        check(m.cap >= 1 && m.fit_horizon >= 1, || {
            "mixing cap and horizon must be positive".into()
        })?;
        Ok(())
    }

    /// Sweep list check: at least two entries, one of them `1`.
    pub fn validate_sweep(&self) -> Result<(), HarnessError> {
        let list = &self.run.sweep_agents;
        check(list.len() >= 2 && list.contains(&1), || {
            "run.sweep_agents needs at least two entries including 1".into()
        })
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        self.run.sampling_mode.into()
    }

    /// Engine configuration for `n_agents` agents and one seed. `alpha_l`
    /// is the resolved local step; `radius` the resolved automatic radius.
    pub fn fed_config(&self, n_agents: usize, seed: u64, alpha_l: f64, auto_radius: f64) -> FedConfig {
        let r = &self.run;
        let mode = self.sampling_mode();
        let projection = match r.projection {
            Some(ProjectionSpec::Radius(h)) => Projection::Ball(h),
            Some(ProjectionSpec::Disabled) => Projection::Disabled,
            Some(ProjectionSpec::Auto) => Projection::Ball(auto_radius),
            None if mode == SamplingMode::MeanPath => Projection::Disabled,
            None => Projection::Ball(auto_radius),
        };
        FedConfig {
            n_agents,
            local_steps: r.local_steps,
            rounds: r.rounds,
            local_step_size: alpha_l,
            global_schedule: match r.global_schedule {
                ScheduleSpec::Constant(a) => GlobalSchedule::Constant(a),
                ScheduleSpec::Theory => GlobalSchedule::Theory,
            },
            projection,
            sampling_mode: mode,
            seed,
            averaging_offset: r.averaging_offset,
            initial_state: r.initial_state,
        }
    }
}
