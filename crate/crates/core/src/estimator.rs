//! Maximum compound collective conditional likelihood estimation, plus the
//! brute-force and structural oracles used to check it.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::likelihood::{log_cccl_gradient_with, log_cccl_with, Dataset};
use crate::model::{from_logits, to_logits, LogitPoint, ModelSpec, ParameterPoint};
use crate::numeric::{log_sum_exp, sup_norm};
use crate::par::{map_range, Exec};

/// Armijo sufficient-increase constant.
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// A small gradient only ends the ascent once the quasi-Newton step is
/// small too; a supremum at infinity has vanishing gradient but unit steps.
const STEP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Uniform,
    /// Free logits drawn uniformly from `[-2, 2]` with the config seed.
    Random,
    Supplied(LogitPoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Sup-norm bound on the projected gradient.
    pub gradient_tolerance: f64,
    pub relative_objective_tolerance: f64,
    /// Free logits are kept in `[-logit_clip, logit_clip]`.
    pub logit_clip: f64,
    pub init: Init,
    pub seed: u64,
    /// Number of recent step pairs used to scale the ascent direction;
    /// 0 gives plain gradient ascent.
    pub memory: usize,
    /// Select, among the parameters with the same class posterior, the one
    /// whose attribute marginals match the empirical marginals.
    pub anchor_marginals: bool,
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-8,
            relative_objective_tolerance: 1e-12,
            logit_clip: 30.0,
            init: Init::Uniform,
            seed: 0,
            memory: 7,
            anchor_marginals: true,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.gradient_tolerance) || !positive(self.relative_objective_tolerance) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if !positive(self.logit_clip) {
            return Err(Error::Validation("logit clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimate: ParameterPoint,
    pub logits: LogitPoint,
    pub log_cccl: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
    /// Some free logit sits at the clip bound.
    pub boundary_flag: bool,
    /// Objective after each accepted iteration, starting with the initial
    /// point.
    pub objective_trace: Vec<f64>,
    pub anchored: bool,
}

fn projected(g: &[f64], x: &[f64], clip: f64) -> Vec<f64> {
    g.iter()
        .zip(x)
        .map(|(&gk, &xk)| {
            if (xk >= clip && gk > 0.0) || (xk <= -clip && gk < 0.0) {
                0.0
            } else {
                gk
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion. `pairs` hold (step, change in the negated gradient),
/// so the result approximates the Newton ascent step.
fn scaled_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qk, yk)| *qk -= a * yk);
        alphas.push((rho, a));
    }
    if let Some((s, y)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qk, sk)| *qk += (a - b) * sk);
    }
    q
}

struct Objective<'a> {
    dataset: &'a Dataset,
    exec: Exec,
}

impl Objective<'_> {
    fn eval(&self, free: &[f64]) -> Result<(f64, Vec<f64>)> {
        let l = LogitPoint::from_free(self.dataset.spec(), free)?;
        let e = log_cccl_gradient_with(self.dataset, &l, self.exec)?;
        Ok((e.log_value, e.gradient))
    }

    fn value(&self, free: &[f64]) -> Result<f64> {
        let l = LogitPoint::from_free(self.dataset.spec(), free)?;
        log_cccl_with(self.dataset, &l, self.exec)
    }
}

fn initial_point(spec: &ModelSpec, config: &FitConfig) -> Result<Vec<f64>> {
    match &config.init {
        Init::Uniform => Ok(vec![0.0; spec.free_dim()]),
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            Ok((0..spec.free_dim())
                .map(|_| rng.random_range(-2.0..=2.0))
                .collect())
        }
        Init::Supplied(l) => {
            from_logits(spec, l)?;
            Ok(l.free_coords())
        }
    }
}

/// Maximizes log-CCCL over the clipped logit box by scaled gradient ascent
/// with Armijo backtracking.
pub fn fit_mccle(dataset: &Dataset, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = dataset.spec();
    let clip = config.logit_clip;
    let objective = Objective {
        dataset,
        exec: config.exec,
    };

    let mut x: Vec<f64> = initial_point(spec, config)?
        .into_iter()
        .map(|v| v.clamp(-clip, clip))
        .collect();
    let (mut f, mut g) = objective.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::Validation(format!(
            "objective is {f} at the initial point"
        )));
    }
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let pg = projected(&g, &x, clip);
        let mut dir = scaled_direction(&pg, &pairs);
        if dot(&dir, &pg) <= 0.0 {
            pairs.clear();
            dir = pg.clone();
        }
        if sup_norm(&pg) <= config.gradient_tolerance
            && (pairs.is_empty() || sup_norm(&dir) <= STEP_TOL)
        {
            converged = true;
            break;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if pairs.is_empty() {
                    break;
                }
                pairs.clear();
                dir = pg.clone();
            }
            let mut step = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(&dir)
                    .map(|(xk, dk)| (xk + step * dk).clamp(-clip, clip))
                    .collect();
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let predicted = dot(&g, &moved);
                if predicted < 0.0 {
                    break;
                }
                let f_trial = objective.value(&trial)?;
                if f_trial.is_finite() && f_trial >= f + ARMIJO_C * predicted {
                    accepted = Some((trial, moved, f_trial));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((x_new, s, f_new)) = accepted else {
            // No ascent is numerically possible from here.
            converged = true;
            break;
        };
        iterations += 1;
        let (_, g_new) = objective.eval(&x_new)?;
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if config.memory > 0 && sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }
        let change = (f_new - f).abs() / f.abs().max(f64::MIN_POSITIVE);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if change <= config.relative_objective_tolerance {
            converged = true;
            break;
        }
    }

    let final_gradient_norm = sup_norm(&projected(&g, &x, clip));
    let mut boundary_flag = x.iter().any(|v| v.abs() >= clip);
    let mut logits = LogitPoint::from_free(spec, &x)?;
    let mut estimate = from_logits(spec, &logits)?;
    let mut anchored = false;
    if config.anchor_marginals && spec.n() > 0 {
        if let Some(targets) = empirical_marginals(dataset) {
            if let Some(tilted) = anchor_to_marginals(spec, &estimate, &targets) {
                if let Ok(l) = to_logits(spec, &tilted) {
                    boundary_flag |= l.free_coords().iter().any(|v| v.abs() >= clip);
                    f = log_cccl_with(dataset, &l, config.exec)?;
                    logits = l;
                    estimate = tilted;
                    anchored = true;
                }
            }
        }
    }

    Ok(FitResult {
        estimate,
        logits,
        log_cccl: f,
        iterations,
        final_gradient_norm,
        converged,
        boundary_flag,
        objective_trace: trace,
        anchored,
    })
}

/// Best of a uniform-start fit and `restarts` random-start fits. Ties keep
/// the earlier fit.
pub fn fit_with_restarts(
    dataset: &Dataset,
    config: &FitConfig,
    restarts: usize,
) -> Result<FitResult> {
    let mut best = fit_mccle(
        dataset,
        &FitConfig {
            init: Init::Uniform,
            ..config.clone()
        },
    )?;
    for k in 0..restarts {
        let cfg = FitConfig {
            init: Init::Random,
            seed: config.seed.wrapping_add(k as u64 + 1),
            ..config.clone()
        };
        let fit = fit_mccle(dataset, &cfg)?;
        if fit.log_cccl > best.log_cccl {
            best = fit;
        }
    }
    Ok(best)
}

/// Per-attribute empirical value frequencies over all records, or `None`
/// when some value never occurs.
pub fn empirical_marginals(dataset: &Dataset) -> Option<Vec<Vec<f64>>> {
    let spec = dataset.spec();
    let mut counts: Vec<Vec<f64>> = spec.arities().iter().map(|&ri| vec![0.0; ri]).collect();
    for rec in dataset.records() {
        for (c, &a) in counts.iter_mut().zip(&rec.attrs) {
            c[a - 1] += 1.0;
        }
    }
    let n = dataset.len() as f64;
    if counts.iter().flatten().any(|&c| c == 0.0) {
        return None;
    }
    Some(
        counts
            .into_iter()
            .map(|c| c.into_iter().map(|v| v / n).collect())
            .collect(),
    )
}

/// Applies the attribute-wise tilt `p(x) -> p(x) prod_i a_i(x_i)` to a
/// parameter. The class posterior is unchanged by any such tilt.
fn tilt(theta: &ParameterPoint, factors: &[Vec<f64>]) -> ParameterPoint {
    let r0 = theta.prior.len();
    let mut log_prior: Vec<f64> = theta.prior.iter().map(|p| p.ln()).collect();
    let mut cond = theta.cond.clone();
    for (rows, a) in cond.iter_mut().zip(factors) {
        for (x0, row) in rows.iter_mut().enumerate() {
            row.iter_mut().zip(a).for_each(|(p, ak)| *p *= ak);
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
            log_prior[x0] += z.ln();
        }
    }
    let lse = log_sum_exp(&log_prior);
    ParameterPoint {
        prior: (0..r0).map(|x0| (log_prior[x0] - lse).exp()).collect(),
        cond,
    }
}

fn model_marginal(theta: &ParameterPoint, i: usize) -> Vec<f64> {
    let ri = theta.cond[i][0].len();
    (0..ri)
        .map(|v| {
            theta
                .prior
                .iter()
                .zip(&theta.cond[i])
                .map(|(p, row)| p * row[v])
                .sum()
        })
        .collect()
}

/// Iterative proportional fitting of the tilt factors so the model's
/// attribute marginals equal `targets`.
fn anchor_to_marginals(
    spec: &ModelSpec,
    theta: &ParameterPoint,
    targets: &[Vec<f64>],
) -> Option<ParameterPoint> {
    let mut factors: Vec<Vec<f64>> = spec.arities().iter().map(|&ri| vec![1.0; ri]).collect();
    for _ in 0..10_000 {
        let mut worst: f64 = 0.0;
        for i in 0..spec.n() {
            let current = model_marginal(&tilt(theta, &factors), i);
            for ((a, t), m) in factors[i].iter_mut().zip(&targets[i]).zip(&current) {
                worst = worst.max((t - m).abs());
                *a *= t / m;
            }
            let top = factors[i].iter().copied().fold(0.0, f64::max);
            factors[i].iter_mut().for_each(|a| *a /= top);
        }
        if !factors.iter().flatten().all(|a| a.is_finite() && *a > 0.0) {
            return None;
        }
        if worst < 1e-13 {
            break;
        }
    }
    let out = tilt(theta, &factors);
    out.is_interior().then_some(out)
}

/// All compositions of `total` into `parts` positive integers, in
/// lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

const GRID_MAX_DIM: usize = 6;
const GRID_MAX_POINTS: u64 = 500_000_000;

/// Exhaustive maximization of log-CCCL over a product of interior simplex
/// grids: each block ranges over the vectors `m / (resolution - 1)` with
/// positive integer `m`. Ties go to the smallest grid index.
pub fn grid_oracle(dataset: &Dataset, resolution: usize) -> Result<(ParameterPoint, f64)> {
    grid_oracle_with(dataset, resolution, Exec::default())
}

pub fn grid_oracle_with(
    dataset: &Dataset,
    resolution: usize,
    exec: Exec,
) -> Result<(ParameterPoint, f64)> {
    let spec = dataset.spec();
    if spec.free_dim() > GRID_MAX_DIM {
        return Err(Error::Refused(format!(
            "grid oracle supports at most {GRID_MAX_DIM} free parameters, model has {}",
            spec.free_dim()
        )));
    }
    if resolution < 5 {
        return Err(Error::Refused(format!(
            "grid resolution must be >= 5, got {resolution}"
        )));
    }
    let steps = resolution - 1;
    let block_sizes: Vec<usize> = std::iter::once(spec.r0())
        .chain(
            spec.arities()
                .iter()
                .flat_map(|&ri| std::iter::repeat_n(ri, spec.r0())),
        )
        .collect();
    let grids: Vec<Vec<Vec<f64>>> = block_sizes
        .iter()
        .map(|&k| {
            compositions(steps, k)
                .into_iter()
                .map(|m| m.into_iter().map(|c| c as f64 / steps as f64).collect())
                .collect()
        })
        .collect();
    let total = grids
        .iter()
        .try_fold(1u64, |acc, g| acc.checked_mul(g.len() as u64))
        .filter(|&t| t <= GRID_MAX_POINTS)
        .ok_or_else(|| Error::Refused("grid has too many points".into()))? as usize;

    let point_at = |mut idx: usize| {
        let mut blocks = Vec::with_capacity(grids.len());
        for g in grids.iter().rev() {
            blocks.push(g[idx % g.len()].clone());
            idx /= g.len();
        }
        blocks.reverse();
        let mut it = blocks.into_iter();
        let prior = it.next().expect("prior block");
        let cond = spec
            .arities()
            .iter()
            .map(|_| {
                (0..spec.r0())
                    .map(|_| it.next().expect("row block"))
                    .collect()
            })
            .collect();
        ParameterPoint { prior, cond }
    };

    const CHUNK: usize = 1024;
    let n_chunks = total.div_ceil(CHUNK);
    let bests = map_range(exec, n_chunks, |c| -> Result<(usize, f64)> {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
            let logits = to_logits(spec, &point_at(idx))?;
            let v = log_cccl_with(dataset, &logits, Exec::Sequential)?;
            if v > best.1 || best.0 == usize::MAX {
                best = (idx, v);
            }
        }
        Ok(best)
    });
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for b in bests {
        let b = b?;
        if best.0 == usize::MAX || b.1 > best.1 {
            best = b;
        }
    }
    Ok((point_at(best.0), best.1))
}

/// Coordinates in which the concavity of log-CCCL is probed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeChart {
    /// The gauge-fixed logits of the normalized parameter.
    Logit,
    /// Unnormalized log-parameters: the class score is
    /// `b0[x0] + sum_i b_i[x0][x_i]`, linear in the coordinates. Every such
    /// point corresponds to a normalized parameter with the same posterior.
    LogLinear,
}

/// Maps free log-linear coordinates to the normalized logit chart.
pub fn log_linear_to_logits(spec: &ModelSpec, free: &[f64]) -> Result<LogitPoint> {
    let raw = LogitPoint::from_free(spec, free)?;
    let mut out = raw.clone();
    for x0 in 0..spec.r0() {
        out.prior[x0] += raw
            .cond
            .iter()
            .map(|rows| log_sum_exp(&rows[x0]))
            .sum::<f64>();
    }
    let last = out.prior[spec.r0() - 1];
    out.prior.iter_mut().for_each(|v| *v -= last);
    Ok(out)
}

fn chart_value(dataset: &Dataset, free: &[f64], chart: ProbeChart) -> Result<f64> {
    let logits = match chart {
        ProbeChart::Logit => LogitPoint::from_free(dataset.spec(), free)?,
        ProbeChart::LogLinear => log_linear_to_logits(dataset.spec(), free)?,
    };
    log_cccl_with(dataset, &logits, Exec::Sequential)
}

/// `(f(a) + f(b)) / 2 - f((a + b) / 2)`; positive values violate midpoint
/// concavity.
pub fn midpoint_gap(dataset: &Dataset, a: &[f64], b: &[f64], chart: ProbeChart) -> Result<f64> {
    let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let fa = chart_value(dataset, a, chart)?;
    let fb = chart_value(dataset, b, chart)?;
    let fm = chart_value(dataset, &mid, chart)?;
    Ok(0.5 * (fa + fb) - fm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub chart: ProbeChart,
    pub trials: usize,
    /// Trials whose gap exceeds `tolerance`.
    pub violations: usize,
    pub worst_gap: f64,
    pub tolerance: f64,
}

pub const PROBE_TOLERANCE: f64 = 1e-9;
/// Probe points have free coordinates uniform on `[-PROBE_RANGE, PROBE_RANGE]`.
pub const PROBE_RANGE: f64 = 4.0;

pub fn concavity_probe(
    dataset: &Dataset,
    trials: usize,
    seed: u64,
    chart: ProbeChart,
) -> Result<ProbeReport> {
    let d = dataset.spec().free_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|_| {
            let mut draw = || -> Vec<f64> {
                (0..d)
                    .map(|_| rng.random_range(-PROBE_RANGE..=PROBE_RANGE))
                    .collect()
            };
            (draw(), draw())
        })
        .collect();
    let gaps = map_range(Exec::default(), trials, |k| {
        midpoint_gap(dataset, &pairs[k].0, &pairs[k].1, chart)
    });
    let mut report = ProbeReport {
        chart,
        trials,
        violations: 0,
        worst_gap: f64::NEG_INFINITY,
        tolerance: PROBE_TOLERANCE,
    };
    for gap in gaps {
        let gap = gap?;
        if gap > PROBE_TOLERANCE {
            report.violations += 1;
        }
        report.worst_gap = report.worst_gap.max(gap);
    }
    Ok(report)
}

/// Minimizer of `f_curv (x - f_min)^2 + g_curv (x - g_min)^2`, which lies
/// between the two individual minimizers.
pub fn sum_minimizer_between(f_min: f64, g_min: f64, f_curv: f64, g_curv: f64) -> Result<f64> {
    if !(f_curv.is_finite() && g_curv.is_finite() && f_curv > 0.0 && g_curv > 0.0) {
        return Err(Error::Domain(format!(
            "curvatures must be positive and finite, got {f_curv} and {g_curv}"
        )));
    }
    if !(f_min.is_finite() && g_min.is_finite()) {
        return Err(Error::Domain("minimizers must be finite".into()));
    }
    let t = g_curv / (f_curv + g_curv);
    let x = f_min + t * (g_min - f_min);
    Ok(x.clamp(f_min.min(g_min), f_min.max(g_min)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetweennessReport {
    pub trials: usize,
    pub outside_interval: usize,
    /// Largest distance between the closed form and a bisection root of the
    /// summed derivative.
    pub max_deviation: f64,
}

/// Root of `f' + g'` for the two quadratics, by bisection to machine
/// precision.
fn summed_derivative_root(f_min: f64, g_min: f64, f_curv: f64, g_curv: f64) -> f64 {
    let deriv = |x: f64| 2.0 * f_curv * (x - f_min) + 2.0 * g_curv * (x - g_min);
    let (mut lo, mut hi) = (f_min.min(g_min) - 1.0, f_min.max(g_min) + 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Random convex quadratic pairs: minimizers uniform on `[-10, 10]`,
/// curvatures log-uniform on `[1e-3, 1e3]`.
pub fn betweenness_check(trials: usize, seed: u64) -> Result<BetweennessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BetweennessReport {
        trials,
        outside_interval: 0,
        max_deviation: 0.0,
    };
    for _ in 0..trials {
        let f_min = rng.random_range(-10.0..=10.0);
        let g_min = rng.random_range(-10.0..=10.0);
        let f_curv = 10f64.powf(rng.random_range(-3.0..=3.0));
        let g_curv = 10f64.powf(rng.random_range(-3.0..=3.0));
        let x = sum_minimizer_between(f_min, g_min, f_curv, g_curv)?;
        if x < f_min.min(g_min) || x > f_min.max(g_min) {
            report.outside_interval += 1;
        }
        let root = summed_derivative_root(f_min, g_min, f_curv, g_curv);
        report.max_deviation = report.max_deviation.max((x - root).abs());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{log_cccl, Observation};
    use crate::model::class_posterior;

    fn binomial(n1: usize, n2: usize, censored: bool) -> Dataset {
        let spec = ModelSpec::new(2, vec![]).unwrap();
        let mut recs = vec![Observation::observed(1, vec![]); n1];
        recs.extend((0..n2).map(|_| {
            if censored {
                Observation::censored(1, vec![])
            } else {
                Observation::observed(2, vec![])
            }
        }));
        Dataset::new(spec, recs).unwrap()
    }

    #[test]
    fn recovers_binomial_mle() {
        for censored in [false, true] {
            let fit = fit_mccle(&binomial(6, 4, censored), &FitConfig::default()).unwrap();
            assert!(
                (fit.estimate.prior[0] - 0.6).abs() < 1e-6,
                "{:?}",
                fit.estimate
            );
            assert!(fit.converged);
            assert!(!fit.boundary_flag);
        }
    }

    #[test]
    fn one_sided_data_runs_to_the_boundary() {
        let fit = fit_mccle(&binomial(10, 0, false), &FitConfig::default()).unwrap();
        assert!(fit.estimate.prior[0] >= 1.0 - 1e-3);
        assert!(fit.boundary_flag);
        assert!(fit.converged);
    }

    #[test]
    fn objective_trace_is_nondecreasing() {
        let spec = ModelSpec::new(3, vec![2, 3]).unwrap();
        let recs = (0..60)
            .map(|k| {
                let attrs = vec![1 + k % 2, 1 + (k * 7 / 3) % 3];
                if k % 4 == 0 {
                    Observation::censored(1 + k % 2, attrs)
                } else {
                    Observation::observed(1 + (k * 5) % 3, attrs)
                }
            })
            .collect();
        let ds = Dataset::new(spec, recs).unwrap();
        let fit = fit_mccle(&ds, &FitConfig::default()).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(fit.log_cccl >= fit.objective_trace[0]);
    }

    #[test]
    fn empty_dataset_and_bad_config_are_rejected() {
        let spec = ModelSpec::new(2, vec![]).unwrap();
        assert!(matches!(
            fit_mccle(&Dataset::empty(spec), &FitConfig::default()),
            Err(Error::EmptyDataset)
        ));
        let cfg = FitConfig {
            gradient_tolerance: 0.0,
            ..FitConfig::default()
        };
        assert!(fit_mccle(&binomial(1, 1, false), &cfg).is_err());
    }

    #[test]
    fn anchoring_keeps_posterior_and_matches_marginals() {
        let spec = ModelSpec::new(3, vec![2, 3]).unwrap();
        let free: Vec<f64> = (0..spec.free_dim())
            .map(|k| (k as f64 * 1.3).cos())
            .collect();
        let theta = from_logits(&spec, &LogitPoint::from_free(&spec, &free).unwrap()).unwrap();
        let targets = vec![vec![0.3, 0.7], vec![0.2, 0.5, 0.3]];
        let anchored = anchor_to_marginals(&spec, &theta, &targets).unwrap();
        for (i, target) in targets.iter().enumerate() {
            for (m, t) in model_marginal(&anchored, i).iter().zip(target) {
                assert!((m - t).abs() < 1e-12);
            }
        }
        for a in 1..=2 {
            for b in 1..=3 {
                let p = class_posterior(&spec, &theta, &[a, b]).unwrap();
                let q = class_posterior(&spec, &anchored, &[a, b]).unwrap();
                for (x, y) in p.iter().zip(&q) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn anchoring_a_truth_to_its_own_marginals_is_identity() {
        let spec = ModelSpec::new(2, vec![3]).unwrap();
        let theta = ParameterPoint::new(
            &spec,
            vec![0.35, 0.65],
            vec![vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]]],
        )
        .unwrap();
        let targets = vec![model_marginal(&theta, 0)];
        let anchored = anchor_to_marginals(&spec, &theta, &targets).unwrap();
        for (a, b) in anchored.free_coords().iter().zip(theta.free_coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_oracle_examples() {
        let ds = binomial(6, 4, false);
        let (best, value) = grid_oracle(&ds, 101).unwrap();
        assert!((best.prior[0] - 0.6).abs() <= 0.01);
        assert_eq!(
            value,
            log_cccl(&ds, &to_logits(ds.spec(), &best).unwrap()).unwrap()
        );
        let fit = fit_mccle(&ds, &FitConfig::default()).unwrap();
        assert!(fit.log_cccl >= value - 1e-9);

        let sym = binomial(5, 5, false);
        let (best, _) = grid_oracle(&sym, 11).unwrap();
        assert!((best.prior[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_oracle_refusals() {
        let big = Dataset::empty(ModelSpec::new(3, vec![3]).unwrap());
        assert!(matches!(grid_oracle(&big, 11), Err(Error::Refused(_))));
        assert!(matches!(
            grid_oracle(&binomial(1, 1, false), 4),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn grid_oracle_is_deterministic_across_execution_modes() {
        let spec = ModelSpec::new(2, vec![2]).unwrap();
        let ds = Dataset::new(
            spec,
            vec![
                Observation::observed(1, vec![1]),
                Observation::observed(2, vec![2]),
                Observation::censored(1, vec![1]),
            ],
        )
        .unwrap();
        let a = grid_oracle_with(&ds, 21, Exec::Sequential).unwrap();
        let b = grid_oracle_with(&ds, 21, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(4, 2), vec![vec![1, 3], vec![2, 2], vec![3, 1]]);
        assert_eq!(compositions(50, 3).len(), 49 * 48 / 2);
    }

    #[test]
    fn degenerate_segment_has_zero_gap() {
        let spec = ModelSpec::new(3, vec![2]).unwrap();
        let ds = Dataset::new(spec.clone(), vec![Observation::censored(1, vec![2])]).unwrap();
        let a: Vec<f64> = (0..spec.free_dim()).map(|k| k as f64 * 0.4 - 1.0).collect();
        for chart in [ProbeChart::Logit, ProbeChart::LogLinear] {
            assert_eq!(midpoint_gap(&ds, &a, &a, chart).unwrap(), 0.0);
        }
    }

    #[test]
    fn log_linear_chart_preserves_posterior() {
        let spec = ModelSpec::new(3, vec![2, 3]).unwrap();
        let free: Vec<f64> = (0..spec.free_dim())
            .map(|k| (k as f64).sin() * 2.0)
            .collect();
        let theta = from_logits(&spec, &log_linear_to_logits(&spec, &free).unwrap()).unwrap();
        let raw = LogitPoint::from_free(&spec, &free).unwrap();
        for a in 1..=2 {
            for b in 1..=3 {
                let scores: Vec<f64> = (0..3)
                    .map(|x0| raw.prior[x0] + raw.cond[0][x0][a - 1] + raw.cond[1][x0][b - 1])
                    .collect();
                let expect = crate::numeric::softmax(&scores);
                let got = class_posterior(&spec, &theta, &[a, b]).unwrap();
                for (x, y) in expect.iter().zip(&got) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn betweenness_examples() {
        assert_eq!(sum_minimizer_between(2.0, 2.0, 0.3, 7.0).unwrap(), 2.0);
        assert_eq!(sum_minimizer_between(0.0, 1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(sum_minimizer_between(0.0, 1.0, 3.0, 1.0).unwrap(), 0.25);
        assert!(matches!(
            sum_minimizer_between(0.0, 1.0, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sum_minimizer_between(0.0, 1.0, 1.0, -2.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bisection_root_matches_closed_form() {
        let r = betweenness_check(200, 3).unwrap();
        assert_eq!(r.outside_interval, 0);
        assert!(r.max_deviation <= 1e-12, "{}", r.max_deviation);
    }
}
