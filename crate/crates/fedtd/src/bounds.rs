//! Empirical heterogeneity gaps against the first-order bounds.

use fedtd_core::features::FeatureMatrix;
use fedtd_core::linalg::{self, Vector};
use fedtd_core::markov::{measure_family, Mrp};
use fedtd_core::rng::{seeded, uniform, uniform01, RngCore};
use fedtd_core::td::{
    fixed_point_bounds, heterogeneity_b, mean_pseudo_gradient, pseudo_gradient, stationary_gap_bound, BoundInputs,
    TdSystem,
};
use fedtd_core::Error as CoreError;
use serde::Serialize;

/// Multiplier applied to each first-order bound before comparing.
pub const DEFAULT_SLACK: f64 = 1.5;

/// Absolute tolerance added to every limit; it only matters when a bound is
/// zero and the empirical gap is rounding noise.
pub const ABS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub empirical: f64,
    pub bound: Option<f64>,
    /// `slack * bound + ABS_TOL`.
    pub limit: Option<f64>,
    /// `limit - empirical`; negative on failure.
    pub margin: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundCheck {
    fn against(name: &'static str, empirical: f64, bound: f64, slack: f64) -> Self {
        let limit = slack * bound + ABS_TOL;
        Self {
            name,
            empirical,
            bound: Some(bound),
            limit: Some(limit),
            margin: Some(limit - empirical),
            status: if empirical <= limit { Status::Pass } else { Status::Fail },
            note: None,
        }
    }

    fn not_applicable(name: &'static str, empirical: f64, note: String) -> Self {
        Self {
            name,
            empirical,
            bound: None,
            limit: None,
            margin: None,
            status: Status::NotApplicable,
            note: Some(note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Realized levels; the bounds are evaluated at these.
    pub epsilon_hat: f64,
    pub epsilon1_hat: f64,
    pub n: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub h: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub kappa_max: f64,
    pub regime_ratio: f64,
    pub delta2_degenerate: bool,
    pub slack: f64,
    pub checks: Vec<BoundCheck>,
    pub failures: usize,
}

fn max_pairwise<T>(items: &[T], gap: impl Fn(&T, &T) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in items.iter().enumerate() {
        for b in &items[i + 1..] {
            worst = worst.max(gap(a, b));
        }
    }
    worst
}

/// Random point in the ball of radius `h`.
fn ball_point(d: usize, h: f64, rng: &mut impl RngCore) -> Vector {
    let mut v = Vector::from_fn(d, |_, _| uniform(rng, -1.0, 1.0));
    let norm = v.norm();
    if norm > 0.0 {
        v *= h * uniform01(rng).powf(1.0 / d as f64) / norm;
    }
    v
}

/// Evaluates every first-order inequality on a solved family.
/// `theta_samples` points in the ball of radius `H` feed the
/// pseudo-gradient heterogeneity check.
pub fn verify_bounds(
    agents: &[Mrp],
    phi: &FeatureMatrix,
    systems: &[TdSystem],
    virtual_sys: &TdSystem,
    slack: f64,
    theta_samples: usize,
    seed: u64,
) -> Result<BoundReport, CoreError> {
    let het = measure_family(agents);
    let n = agents[0].n();
    let r_max = agents.iter().map(|m| m.r().r_max()).fold(0.0, f64::max);
    let inp = BoundInputs::measure(systems, het.epsilon, het.epsilon1, n, r_max)?;
    let a_eps = inp.kernel_gap_bound();
    let b_eps = inp.reward_gap_bound();
    let mut checks = vec![
        BoundCheck::against(
            "stationary_l1_gap",
            max_pairwise(systems, |a, b| linalg::norm1(&(&a.pi - &b.pi))),
            stationary_gap_bound(n, het.epsilon),
            slack,
        ),
        BoundCheck::against(
            "a_bar_gap",
            max_pairwise(systems, |a, b| linalg::spectral_norm(&(&a.a_bar - &b.a_bar))),
            a_eps,
            slack,
        ),
        BoundCheck::against(
            "b_bar_gap",
            max_pairwise(systems, |a, b| (&a.b_bar - &b.b_bar).norm()),
            b_eps,
            slack,
        ),
    ];
    let theta_gap = max_pairwise(systems, |a, b| (&a.theta_star - &b.theta_star).norm());
    let virtual_a = systems
        .iter()
        .map(|s| linalg::spectral_norm(&(&s.a_bar - &virtual_sys.a_bar)))
        .fold(0.0, f64::max);
    let virtual_b = systems
        .iter()
        .map(|s| (&s.b_bar - &virtual_sys.b_bar).norm())
        .fold(0.0, f64::max);
    let virtual_theta = systems
        .iter()
        .map(|s| (&s.theta_star - &virtual_sys.theta_star).norm())
        .fold(0.0, f64::max);
    match fixed_point_bounds(&inp) {
        Ok(bounds) => {
            checks.push(BoundCheck::against(
                "theta_star_gap",
                theta_gap,
                bounds.gamma_bound,
                slack,
            ));
            checks.push(BoundCheck::against("a_bar_virtual_gap", virtual_a, a_eps, slack));
            checks.push(BoundCheck::against("b_bar_virtual_gap", virtual_b, b_eps, slack));
            checks.push(BoundCheck::against(
                "theta_star_virtual_gap",
                virtual_theta,
                bounds.gamma_bound,
                slack,
            ));
        }
        Err(CoreError::BoundRegime { ratio }) => {
            let note = format!("kappa*A/delta1 = {ratio} >= 1");
            checks.push(BoundCheck::not_applicable("theta_star_gap", theta_gap, note.clone()));
            checks.push(BoundCheck::against("a_bar_virtual_gap", virtual_a, a_eps, slack));
            checks.push(BoundCheck::against("b_bar_virtual_gap", virtual_b, b_eps, slack));
            checks.push(BoundCheck::not_applicable(
                "theta_star_virtual_gap",
                virtual_theta,
                note,
            ));
        }
        Err(e) => return Err(e),
    }

    let mut rng = seeded(seed);
    let mut grad_gap: f64 = 0.0;
    for _ in 0..theta_samples {
        let theta = ball_point(phi.d(), inp.h, &mut rng);
        let gap = (pseudo_gradient(virtual_sys, &theta) - mean_pseudo_gradient(systems, &theta)).norm();
        grad_gap = grad_gap.max(gap);
    }
    checks.push(BoundCheck::against(
        "pseudo_gradient_heterogeneity",
        grad_gap,
        heterogeneity_b(&inp),
        slack,
    ));

    // exact spectral facts about the virtual Gram matrix, no slack
    let summary = virtual_sys.summary(phi);
    checks.push(BoundCheck::against(
        "virtual_gram_lambda_max",
        summary.gram_lambda_max,
        1.0,
        1.0,
    ));
    let omega_bar = summary.gram_lambda_min;
    checks.push(BoundCheck {
        name: "virtual_gram_lambda_min",
        empirical: omega_bar,
        bound: Some(0.0),
        limit: Some(0.0),
        margin: Some(omega_bar),
        status: if omega_bar > 0.0 { Status::Pass } else { Status::Fail },
        note: Some("lower bound: must be strictly positive".into()),
    });

    let failures = checks.iter().filter(|c| c.status == Status::Fail).count();
    Ok(BoundReport {
        epsilon_hat: het.epsilon,
        epsilon1_hat: het.epsilon1,
        n,
        gamma: inp.gamma,
        r_max,
        h: inp.h,
        delta1: inp.delta1,
        delta2: inp.delta2,
        kappa_max: inp.kappa_max,
        regime_ratio: inp.regime_ratio(),
        delta2_degenerate: inp.delta2_degenerate(),
        slack,
        checks,
        failures,
    })
}
