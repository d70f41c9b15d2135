//! Markov reward processes: validation, stationary distributions, exact value
//! functions, and generation/measurement of heterogeneous families.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{domain, invalid, numeric, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{uniform, uniform01};

/// Row sums of a transition matrix must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-12;

const MAX_GENERATION_ATTEMPTS: usize = 100;
const POWER_ITERATION_CAP: usize = 200_000;

/// Row-stochastic `n x n` matrix, `n >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(Matrix);

impl TransitionMatrix {
    pub fn new(entries: Matrix) -> Result<Self> {
        let n = entries.nrows();
        if n != entries.ncols() {
            return Err(invalid!(
                "transition matrix must be square, got {}x{}",
                n,
                entries.ncols()
            ));
        }
        if n < 2 {
            return Err(invalid!("transition matrix needs at least 2 states"));
        }
        for s in 0..n {
            let mut sum = 0.0;
            for t in 0..n {
                let p = entries[(s, t)];
                if !p.is_finite() || p < 0.0 {
                    return Err(invalid!("entry ({s},{t}) = {p} is not a probability"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid!("row {s} sums to {sum}"));
            }
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid!("transition matrix rows must all have length {n}"));
        }
        Self::new(Matrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.0[(s, t)]
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.0.row(s).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|s| self.row(s)).collect()
    }
}

/// Per-state rewards bounded in magnitude by `r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    values: Vector,
    r_max: f64,
}

impl RewardVector {
    pub fn new(values: Vector, r_max: f64) -> Result<Self> {
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(invalid!("r_max must be positive, got {r_max}"));
        }
        if let Some((s, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > r_max)
        {
            return Err(invalid!("reward R({s}) = {v} exceeds r_max = {r_max}"));
        }
        Ok(Self { values, r_max })
    }

    pub fn from_slice(values: &[f64], r_max: f64) -> Result<Self> {
        Self::new(Vector::from_column_slice(values), r_max)
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One agent's environment under the evaluated policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Mrp {
    p: TransitionMatrix,
    r: RewardVector,
    gamma: f64,
}

impl Mrp {
    pub fn new(p: TransitionMatrix, r: RewardVector, gamma: f64) -> Result<Self> {
        if p.n() != r.len() {
            return Err(invalid!(
                "kernel has {} states but reward vector has {}",
                p.n(),
                r.len()
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid!("discount must lie in (0,1), got {gamma}"));
        }
        Ok(Self { p, r, gamma })
    }

    pub fn p(&self) -> &TransitionMatrix {
        &self.p
    }

    pub fn r(&self) -> &RewardVector {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n(&self) -> usize {
        self.p.n()
    }
}

/// Declared heterogeneity levels: `epsilon` bounds the entrywise relative
/// kernel difference, `epsilon1` the Euclidean reward difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeterogeneitySpec {
    pub epsilon: f64,
    pub epsilon1: f64,
}

impl HeterogeneitySpec {
    pub fn new(epsilon: f64, epsilon1: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(invalid!("epsilon must lie in [0,1), got {epsilon}"));
        }
        if !(epsilon1 >= 0.0 && epsilon1.is_finite()) {
            return Err(invalid!("epsilon1 must be non-negative, got {epsilon1}"));
        }
        Ok(Self { epsilon, epsilon1 })
    }
}

/// Splices per-action kernels and rewards into the MRP induced by a
/// deterministic policy.
pub fn apply_policy(
    kernels: &[TransitionMatrix],
    rewards: &[RewardVector],
    policy: &[usize],
    gamma: f64,
) -> Result<Mrp> {
    if kernels.is_empty() || kernels.len() != rewards.len() {
        return Err(invalid!(
            "need one reward vector per action ({} kernels, {} reward vectors)",
            kernels.len(),
            rewards.len()
        ));
    }
    let n = kernels[0].n();
    if kernels.iter().any(|k| k.n() != n) || rewards.iter().any(|r| r.len() != n) {
        return Err(invalid!("all kernels and rewards must share {n} states"));
    }
    if policy.len() != n {
        return Err(invalid!("policy covers {} states, expected {n}", policy.len()));
    }
    if let Some((s, a)) = policy.iter().enumerate().find(|(_, &a)| a >= kernels.len()) {
        return Err(invalid!("policy maps state {s} to undefined action {a}"));
    }
    let p = Matrix::from_fn(n, n, |s, t| kernels[policy[s]].get(s, t));
    let r = Vector::from_fn(n, |s, _| rewards[policy[s]].values()[s]);
    let r_max = rewards.iter().map(|r| r.r_max()).fold(0.0, f64::max);
    Mrp::new(TransitionMatrix(p), RewardVector::new(r, r_max)?, gamma)
}

/// Exact irreducible + aperiodic test: some power `P^k` with `k` up to the
/// Wielandt bound `n^2 - 2n + 2` is strictly positive. Works on the boolean
/// positivity pattern by repeated squaring; once `P^k > 0` every higher power
/// is positive too, so squaring past the bound suffices.
pub fn is_ergodic(p: &TransitionMatrix) -> bool {
    let n = p.n();
    let bound = n * n - 2 * n + 2;
    let mut pattern: Vec<bool> = (0..n * n).map(|i| p.get(i / n, i % n) > 0.0).collect();
    let mut power = 1usize;
    loop {
        if pattern.iter().all(|&b| b) {
            return true;
        }
        if power >= bound {
            return false;
        }
        pattern = bool_square(&pattern, n);
        power *= 2;
    }
}

fn bool_square(a: &[bool], n: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for i in 0..n {
        for k in 0..n {
            if !a[i * n + k] {
                continue;
            }
            let row = &a[k * n..(k + 1) * n];
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o |= b;
            }
        }
    }
    out
}

/// Unique stationary distribution of an ergodic chain.
///
/// Solves `(P^T - I) pi = 0` stacked with the normalization row `1^T pi = 1`
/// in the least-squares sense; falls back to power iteration if the direct
/// solution misses `tol`.
pub fn stationary_distribution(p: &TransitionMatrix, tol: f64) -> Result<Vector> {
    if !is_ergodic(p) {
        return Err(domain!("chain is not irreducible and aperiodic"));
    }
    let n = p.n();
    let mut system = Matrix::zeros(n + 1, n);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = p.get(j, i) - if i == j { 1.0 } else { 0.0 };
        }
        system[(n, i)] = 1.0;
    }
    let mut rhs = Vector::zeros(n + 1);
    rhs[n] = 1.0;
    let direct = system
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .ok()
        .filter(|pi| is_stationary(p, pi, tol));
    if let Some(pi) = direct {
        return Ok(pi);
    }

    let mut pi = Vector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITERATION_CAP {
        let next = (pi.transpose() * p.matrix()).transpose();
        let change = linalg::norm1(&(&next - &pi));
        pi = next;
        if change <= 1e-12 {
            break;
        }
    }
    let total = pi.sum();
    pi /= total;
    if is_stationary(p, &pi, tol) {
        Ok(pi)
    } else {
        Err(numeric!("stationary solve missed tolerance {tol}"))
    }
}

fn is_stationary(p: &TransitionMatrix, pi: &Vector, tol: f64) -> bool {
    let residual = (pi.transpose() * p.matrix()).transpose() - pi;
    linalg::max_abs(&residual) <= tol && (pi.sum() - 1.0).abs() <= tol && pi.iter().all(|&x| x > 0.0)
}

/// Solves the Bellman equation `(I - gamma P) V = R`.
pub fn exact_value_function(m: &Mrp) -> Vector {
    let n = m.n();
    let lhs = Matrix::identity(n, n) - m.p().matrix() * m.gamma();
    // I - gamma P is strictly diagonally dominant for gamma < 1
    linalg::solve(&lhs, m.r().values()).expect("I - gamma P is invertible for gamma < 1")
}

/// Entrywise relative kernel divergence of `pj` from `pi`:
/// `max |pi - pj| / pi` over the support of `pi`, or infinity if `pj` puts
/// mass outside that support.
pub fn kernel_heterogeneity(pi: &TransitionMatrix, pj: &TransitionMatrix) -> f64 {
    let n = pi.n();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for t in 0..n {
            let a = pi.get(s, t);
            let b = pj.get(s, t);
            if a > 0.0 {
                worst = worst.max((a - b).abs() / a);
            } else if b > 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}

/// Euclidean distance between two reward vectors.
pub fn reward_heterogeneity(ri: &RewardVector, rj: &RewardVector) -> f64 {
    (ri.values() - rj.values()).norm()
}

/// Realized heterogeneity of a family, maximized over ordered pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyHeterogeneity {
    pub epsilon: f64,
    pub epsilon1: f64,
}

pub fn measure_family(agents: &[Mrp]) -> FamilyHeterogeneity {
    let mut out = FamilyHeterogeneity {
        epsilon: 0.0,
        epsilon1: 0.0,
    };
    for (i, a) in agents.iter().enumerate() {
        for (j, b) in agents.iter().enumerate() {
            if i == j {
                continue;
            }
            out.epsilon = out.epsilon.max(kernel_heterogeneity(a.p(), b.p()));
            if i < j {
                out.epsilon1 = out.epsilon1.max(reward_heterogeneity(a.r(), b.r()));
            }
        }
    }
    out
}

/// `sum_i w_i P_i` for simplex weights.
pub fn convex_combination(ps: &[TransitionMatrix], weights: &[f64]) -> Result<TransitionMatrix> {
    if ps.is_empty() || ps.len() != weights.len() {
        return Err(invalid!(
            "need one weight per matrix ({} matrices, {} weights)",
            ps.len(),
            weights.len()
        ));
    }
    let n = ps[0].n();
    if ps.iter().any(|p| p.n() != n) {
        return Err(invalid!("matrices must share dimension {n}"));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(invalid!("weights must lie on the simplex (sum {total})"));
    }
    let mut out = Matrix::zeros(n, n);
    for (p, &w) in ps.iter().zip(weights) {
        out += p.matrix() * w;
    }
    TransitionMatrix::new(out)
}

/// Dense random MRP: kernel rows uniform on `(0, 1]` then normalized, rewards
/// uniform on `[0, r_max]`.
pub fn random_mrp<R: RngCore + ?Sized>(n: usize, gamma: f64, r_max: f64, rng: &mut R) -> Result<Mrp> {
    if n < 2 {
        return Err(invalid!("need at least 2 states, got {n}"));
    }
    let mut p = Matrix::zeros(n, n);
    for s in 0..n {
        for t in 0..n {
            p[(s, t)] = 1.0 - uniform01(rng);
        }
        normalize_row(&mut p, s);
    }
    let r = Vector::from_fn(n, |_, _| r_max * uniform01(rng));
    Mrp::new(TransitionMatrix::new(p)?, RewardVector::new(r, r_max)?, gamma)
}

fn normalize_row(p: &mut Matrix, s: usize) {
    let sum: f64 = p.row(s).sum();
    for t in 0..p.ncols() {
        p[(s, t)] /= sum;
    }
}

/// Builds `count` agents around `base`: agent 0 is `base`, the rest get
/// multiplicatively perturbed kernels (support preserved) and additively
/// perturbed rewards. Whole draws are rejected until the measured family
/// heterogeneity is within `spec`.
pub fn perturb_family<R: RngCore + ?Sized>(
    base: &Mrp,
    spec: HeterogeneitySpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Mrp>> {
    if count == 0 {
        return Err(invalid!("family needs at least one agent"));
    }
    if !is_ergodic(base.p()) {
        return Err(domain!("base chain is not irreducible and aperiodic"));
    }
    let mut best: Option<FamilyHeterogeneity> = None;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let mut family = Vec::with_capacity(count);
        family.push(base.clone());
        for _ in 1..count {
            family.push(perturb_one(base, spec, rng)?);
        }
        let realized = measure_family(&family);
        if realized.epsilon <= spec.epsilon && realized.epsilon1 <= spec.epsilon1 {
            return Ok(family);
        }
        if best.is_none_or(|b| realized.epsilon < b.epsilon) {
            best = Some(realized);
        }
    }
    let best = best.expect("at least one attempt");
    Err(Error::Generation {
        attempts: MAX_GENERATION_ATTEMPTS,
        best_epsilon: best.epsilon,
        best_epsilon1: best.epsilon1,
    })
}

fn perturb_one<R: RngCore + ?Sized>(base: &Mrp, spec: HeterogeneitySpec, rng: &mut R) -> Result<Mrp> {
    let n = base.n();
    let p = if spec.epsilon > 0.0 {
        let spread = spec.epsilon / 3.0;
        let mut p = base.p().matrix().clone();
        for s in 0..n {
            for t in 0..n {
                if p[(s, t)] > 0.0 {
                    p[(s, t)] *= uniform(rng, 1.0 - spread, 1.0 + spread);
                }
            }
            normalize_row(&mut p, s);
        }
        TransitionMatrix::new(p)?
    } else {
        base.p().clone()
    };

    let r_max = base.r().r_max();
    let r = if spec.epsilon1 > 0.0 {
        let mut direction = Vector::from_fn(n, |_, _| uniform(rng, -1.0, 1.0));
        let len = direction.norm();
        if len > 0.0 {
            direction /= len;
        }
        let radius = 0.5 * spec.epsilon1 * uniform01(rng);
        let values = (base.r().values() + direction * radius).map(|v| v.clamp(-r_max, r_max));
        RewardVector::new(values, r_max)?
    } else {
        base.r().clone()
    };
    Mrp::new(p, r, base.gamma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{any, prop_assert, prop_assume, proptest, ProptestConfig};

    fn tm(rows: &[&[f64]]) -> TransitionMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    }

    fn two_state(p: f64, q: f64) -> TransitionMatrix {
        tm(&[&[1.0 - p, p], &[q, 1.0 - q]])
    }

    /// Brute-force positivity of float powers P^1..P^max_k.
    fn first_positive_power(p: &TransitionMatrix, max_k: usize) -> Option<usize> {
        let mut m = p.matrix().clone();
        for k in 1..=max_k {
            if m.iter().all(|&x| x > 0.0) {
                return Some(k);
            }
            m = &m * p.matrix();
        }
        None
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.5, -0.5], vec![0.5, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.0]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0]]).is_err());
    }

    #[test]
    fn mrp_rejects_gamma_outside_unit_interval() {
        let r = RewardVector::from_slice(&[0.0, 1.0], 1.0).unwrap();
        assert!(Mrp::new(two_state(0.5, 0.5), r.clone(), 1.0).is_err());
        assert!(Mrp::new(two_state(0.5, 0.5), r.clone(), 0.0).is_err());
        assert!(Mrp::new(two_state(0.5, 0.5), r, 0.5).is_ok());
    }

    #[test]
    fn reward_bound_enforced() {
        assert!(RewardVector::from_slice(&[0.0, 1.5], 1.0).is_err());
    }

    #[test]
    fn apply_policy_single_action_is_identity() {
        let p = two_state(0.3, 0.1);
        let r = RewardVector::from_slice(&[1.0, -1.0], 1.0).unwrap();
        let m = apply_policy(core::slice::from_ref(&p), core::slice::from_ref(&r), &[0, 0], 0.9).unwrap();
        assert_eq!(m.p(), &p);
        assert_eq!(m.r(), &r);
    }

    #[test]
    fn apply_policy_splices_rows() {
        let k0 = tm(&[&[0.9, 0.1], &[0.8, 0.2]]);
        let k1 = tm(&[&[0.3, 0.7], &[0.4, 0.6]]);
        let r0 = RewardVector::from_slice(&[1.0, 2.0], 5.0).unwrap();
        let r1 = RewardVector::from_slice(&[3.0, 4.0], 5.0).unwrap();
        let m = apply_policy(&[k0, k1], &[r0, r1], &[0, 1], 0.9).unwrap();
        assert_eq!(m.p().rows(), vec![vec![0.9, 0.1], vec![0.4, 0.6]]);
        assert_eq!(m.r().values().as_slice(), &[1.0, 4.0]);
    }

    #[test]
    fn apply_policy_undefined_action_is_error() {
        let k0 = two_state(0.5, 0.5);
        let r0 = RewardVector::from_slice(&[1.0, 2.0], 5.0).unwrap();
        assert!(matches!(
            apply_policy(&[k0], &[r0], &[0, 1], 0.9),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ergodicity_examples() {
        assert!(is_ergodic(&two_state(0.5, 0.5)));
        assert!(!is_ergodic(&tm(&[&[0.0, 1.0], &[1.0, 0.0]])));
        let cycle = tm(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        // float-power oracle: the pattern turns positive within 5 steps
        assert!(first_positive_power(&cycle, 5).is_some());
        assert!(is_ergodic(&cycle));
        // reducible: absorbing state
        assert!(!is_ergodic(&tm(&[&[1.0, 0.0], &[0.5, 0.5]])));
    }

    #[test]
    fn ergodicity_agrees_with_float_powers() {
        // Wielandt's extremal matrix reaches positivity exactly at n^2-2n+2
        let n = 5;
        let mut rows = vec![vec![0.0; n]; n];
        for (i, row) in rows.iter_mut().enumerate().take(n - 1) {
            row[i + 1] = 1.0;
        }
        rows[n - 1][0] = 0.5;
        rows[n - 1][1] = 0.5;
        let p = TransitionMatrix::from_rows(&rows).unwrap();
        assert_eq!(first_positive_power(&p, 40), Some(n * n - 2 * n + 2));
        assert!(is_ergodic(&p));

        let mut rng = seeded(3);
        for _ in 0..30 {
            let n = 4;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let mut r: Vec<f64> = (0..n)
                        .map(|_| {
                            if uniform01(&mut rng) < 0.4 {
                                uniform01(&mut rng) + 0.1
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if r.iter().all(|&x| x == 0.0) {
                        r[0] = 1.0;
                    }
                    let s: f64 = r.iter().sum();
                    r.iter().map(|x| x / s).collect()
                })
                .collect();
            let p = TransitionMatrix::from_rows(&rows).unwrap();
            assert_eq!(is_ergodic(&p), first_positive_power(&p, 10).is_some());
        }
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let p = tm(&[&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], &[0.3, 0.5, 0.2]]);
        let pi = stationary_distribution(&p, 1e-12).unwrap();
        for x in pi.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_two_state_closed_form() {
        let pi = stationary_distribution(&two_state(0.3, 0.1), 1e-12).unwrap();
        // (q/(p+q), p/(p+q))
        assert_abs_diff_eq!(pi[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn stationary_rejects_periodic() {
        let p = tm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(stationary_distribution(&p, 1e-12), Err(Error::Domain(_))));
    }

    #[test]
    fn value_function_examples() {
        let p = two_state(0.4, 0.2);
        let zero = RewardVector::from_slice(&[0.0, 0.0], 1.0).unwrap();
        let v = exact_value_function(&Mrp::new(p, zero, 0.9).unwrap());
        assert_eq!(v.iter().fold(0.0f64, |a, x| a.max(x.abs())), 0.0);

        // a chain that stays put: V = R / (1 - gamma)
        let stay = tm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let one = RewardVector::from_slice(&[1.0, 1.0], 1.0).unwrap();
        let v = exact_value_function(&Mrp::new(stay, one, 0.5).unwrap());
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn value_function_matches_truncated_series() {
        let mut rng = seeded(11);
        for _ in 0..10 {
            let m = random_mrp(4, 0.9, 1.0, &mut rng).unwrap();
            let v = exact_value_function(&m);
            // residual of the linear system
            let lhs = Matrix::identity(4, 4) - m.p().matrix() * 0.9;
            assert!(linalg::max_abs(&(lhs * &v - m.r().values())) <= 1e-10);
            // truncated Neumann series sum_{t<=200} gamma^t P^t R
            let mut term = m.r().values().clone();
            let mut series = term.clone();
            for _ in 0..200 {
                term = m.p().matrix() * term * 0.9;
                series += &term;
            }
            assert!(linalg::max_abs(&(series - v)) <= 1e-8);
        }
    }

    #[test]
    fn kernel_heterogeneity_examples() {
        let a = tm(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let b = tm(&[&[0.45, 0.55], &[0.5, 0.5]]);
        assert_eq!(kernel_heterogeneity(&a, &a), 0.0);
        assert_abs_diff_eq!(kernel_heterogeneity(&a, &b), 0.1, epsilon = 1e-12);
        let sparse = tm(&[&[1.0, 0.0], &[0.5, 0.5]]);
        assert_eq!(kernel_heterogeneity(&sparse, &a), f64::INFINITY);
    }

    #[test]
    fn reward_heterogeneity_examples() {
        let a = RewardVector::from_slice(&[1.0, 0.0], 1.0).unwrap();
        let b = RewardVector::from_slice(&[0.0, 1.0], 1.0).unwrap();
        assert_eq!(reward_heterogeneity(&a, &a), 0.0);
        assert_abs_diff_eq!(reward_heterogeneity(&a, &b), 2f64.sqrt(), epsilon = 1e-15);

        let mut rng = seeded(5);
        let x: Vec<f64> = (0..20).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let oracle = libm::sqrt(x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        let got = reward_heterogeneity(
            &RewardVector::from_slice(&x, 1.0).unwrap(),
            &RewardVector::from_slice(&y, 1.0).unwrap(),
        );
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-14);
    }

    #[test]
    fn convex_combination_examples() {
        let p = two_state(0.3, 0.1);
        assert_eq!(convex_combination(core::slice::from_ref(&p), &[1.0]).unwrap(), p);
        let k = convex_combination(&[p.clone(), p.clone(), p.clone()], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for s in 0..2 {
            for t in 0..2 {
                assert_abs_diff_eq!(k.get(s, t), p.get(s, t), epsilon = 1e-15);
            }
        }
        assert!(convex_combination(&[p.clone(), p.clone()], &[0.6, 0.6]).is_err());
        assert!(convex_combination(&[p.clone(), p], &[1.2, -0.2]).is_err());
    }

    #[test]
    fn zero_heterogeneity_copies_base() {
        let mut rng = seeded(1);
        let base = random_mrp(6, 0.9, 1.0, &mut rng).unwrap();
        let fam = perturb_family(&base, HeterogeneitySpec::new(0.0, 0.0).unwrap(), 4, &mut rng).unwrap();
        assert!(fam.iter().all(|m| m == &base));
    }

    #[test]
    fn perturbed_family_within_declared_levels() {
        let mut rng = seeded(2);
        let base = random_mrp(8, 0.9, 1.0, &mut rng).unwrap();
        let spec = HeterogeneitySpec::new(0.1, 0.2).unwrap();
        let fam = perturb_family(&base, spec, 3, &mut rng).unwrap();
        assert_eq!(fam[0], base);
        for a in &fam {
            assert!(is_ergodic(a.p()));
            for b in &fam {
                assert!(kernel_heterogeneity(a.p(), b.p()) <= 0.1);
                assert!(reward_heterogeneity(a.r(), b.r()) <= 0.2);
            }
        }
    }

    #[test]
    fn perturbation_preserves_sparse_support() {
        let base_p = tm(&[&[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let base = Mrp::new(base_p, RewardVector::from_slice(&[0.1, 0.2, 0.3], 1.0).unwrap(), 0.9).unwrap();
        let fam = perturb_family(&base, HeterogeneitySpec::new(0.2, 0.1).unwrap(), 5, &mut seeded(4)).unwrap();
        for m in &fam {
            assert!(is_ergodic(m.p()));
            assert!(kernel_heterogeneity(base.p(), m.p()).is_finite());
        }
    }

    #[test]
    fn impossible_levels_exhaust_attempts() {
        // with 40 agents the spread of f1/f2 on the 0.01 entry always exceeds eps
        let base = Mrp::new(
            tm(&[&[0.01, 0.99], &[0.5, 0.5]]),
            RewardVector::from_slice(&[0.0, 1.0], 1.0).unwrap(),
            0.9,
        )
        .unwrap();
        let err = perturb_family(&base, HeterogeneitySpec::new(0.9, 0.1).unwrap(), 40, &mut seeded(9));
        match err {
            Err(Error::Generation {
                attempts, best_epsilon, ..
            }) => {
                assert_eq!(attempts, 100);
                assert!(best_epsilon > 0.9);
            }
            other => panic!("expected generation failure, got {other:?}"),
        }
    }

    #[test]
    fn stationary_distributions_close_under_small_perturbation() {
        // first-order stationary perturbation bound 2(n-1)eps, 1.5 slack
        let mut rng = seeded(21);
        for &(n, eps) in &[(5usize, 0.05), (10, 0.02), (30, 0.01)] {
            let base = random_mrp(n, 0.9, 1.0, &mut rng).unwrap();
            let fam = perturb_family(&base, HeterogeneitySpec::new(eps, 0.1).unwrap(), 4, &mut rng).unwrap();
            let pis: Vec<Vector> = fam
                .iter()
                .map(|m| stationary_distribution(m.p(), 1e-12).unwrap())
                .collect();
            for a in &pis {
                for b in &pis {
                    assert!(linalg::norm1(&(a - b)) <= 1.5 * 2.0 * (n as f64 - 1.0) * eps);
                }
            }
        }
    }

    fn random_stochastic(n: usize, density: f64, rng: &mut impl RngCore) -> TransitionMatrix {
        let mut p = Matrix::zeros(n, n);
        for s in 0..n {
            for t in 0..n {
                if uniform01(rng) < density || t == (s + 1) % n {
                    p[(s, t)] = uniform(rng, 0.1, 1.0);
                }
            }
            normalize_row(&mut p, s);
        }
        TransitionMatrix::new(p).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn stationary_is_consistent(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = seeded(seed);
            let p = random_stochastic(n, 0.3, &mut rng);
            prop_assume!(is_ergodic(&p));
            let pi = stationary_distribution(&p, 1e-12).unwrap();
            let residual = (pi.transpose() * p.matrix()).transpose() - &pi;
            prop_assert!(linalg::max_abs(&residual) <= 1e-12);
            prop_assert!(pi.min() > 0.0);
        }

        #[test]
        fn convex_combinations_of_ergodic_chains_are_ergodic(seed in any::<u64>(), n in 2usize..8) {
            let mut rng = seeded(seed);
            let mut ps = Vec::new();
            while ps.len() < 2 {
                let p = random_stochastic(n, 0.25, &mut rng);
                if is_ergodic(&p) {
                    ps.push(p);
                }
            }
            let w0 = uniform01(&mut rng);
            let c = convex_combination(&ps, &[w0, 1.0 - w0]).unwrap();
            prop_assert!(is_ergodic(&c));
        }
    }
}
