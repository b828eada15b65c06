//! Sampling censored data from a known naive Bayes truth, and the
//! consistency experiment that tracks estimation error as the sample grows.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{fit_mccle, FitConfig};
use crate::likelihood::{Dataset, Observation, Status};
use crate::model::{class_posterior, ModelSpec, ParameterPoint};
use crate::numeric::sup_norm;
use crate::par::{map_range, Exec};

/// Cap on attribute configurations enumerated by [`posterior_error`].
pub const POSTERIOR_CONFIG_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub spec: ModelSpec,
    pub truth: ParameterPoint,
    /// Probability that a record is exposed to censoring.
    pub censoring_fraction: f64,
    pub sample_size: usize,
    pub seed: u64,
    /// When set, `sample_size` fully observed records are drawn and exactly
    /// this many censored records are added, so the number of expansion
    /// terms stays bounded while the observed part grows.
    pub pinned_censored: Option<usize>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate(&self.spec, crate::model::SIMPLEX_TOL)?;
        if !self.truth.is_interior() {
            return Err(Error::Boundary(
                "the true parameter must be interior".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.censoring_fraction) {
            return Err(Error::Validation(format!(
                "censoring fraction {} outside [0, 1]",
                self.censoring_fraction
            )));
        }
        if self.sample_size < 1 {
            return Err(Error::Validation("sample size must be >= 1".into()));
        }
        Ok(())
    }

    /// Expected share of censored records under the sampling mechanism.
    pub fn expected_censored_fraction(&self) -> f64 {
        let r0 = self.spec.r0();
        let exceed: f64 = self
            .truth
            .prior
            .iter()
            .enumerate()
            .map(|(k, p)| p * k as f64 / (r0 - 1) as f64)
            .sum();
        self.censoring_fraction * exceed
    }
}

struct Sampler {
    prior: WeightedIndex<f64>,
    rows: Vec<Vec<WeightedIndex<f64>>>,
    r0: usize,
}

impl Sampler {
    fn new(config: &SimulationConfig) -> Result<Self> {
        let bad = |e| Error::Validation(format!("cannot sample from parameter: {e}"));
        Ok(Self {
            prior: WeightedIndex::new(&config.truth.prior).map_err(bad)?,
            rows: config
                .truth
                .cond
                .iter()
                .map(|rows| {
                    rows.iter()
                        .map(|r| WeightedIndex::new(r).map_err(bad))
                        .collect()
                })
                .collect::<Result<_>>()?,
            r0: config.spec.r0(),
        })
    }

    /// One record; `exposed` decides whether a censoring time is drawn.
    fn draw(&self, rng: &mut ChaCha8Rng, exposure: f64) -> Observation {
        let x0 = self.prior.sample(rng);
        let attrs = self
            .rows
            .iter()
            .map(|rows| 1 + rows[x0].sample(rng))
            .collect();
        let class = x0 + 1;
        if rng.random::<f64>() < exposure {
            let c = rng.random_range(1..self.r0);
            if c < class {
                return Observation::censored(c, attrs);
            }
        }
        Observation::observed(class, attrs)
    }
}

fn observed_first(spec: ModelSpec, mut records: Vec<Observation>) -> Result<Dataset> {
    records.sort_by_key(|r| r.status == Status::Censored);
    Dataset::new(spec, records)
}

/// Draws a dataset: class from the prior, attributes from their class rows,
/// then with probability `censoring_fraction` a censoring time uniform on
/// `1..r0-1`; the record is censored at that time if it is below the class.
/// Observed records come first.
pub fn sample_dataset(config: &SimulationConfig) -> Result<Dataset> {
    config.validate()?;
    let sampler = Sampler::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let records: Vec<Observation> = match config.pinned_censored {
        None => (0..config.sample_size)
            .map(|_| sampler.draw(&mut rng, config.censoring_fraction))
            .collect(),
        Some(n2) => {
            let mut recs: Vec<Observation> = (0..config.sample_size)
                .map(|_| sampler.draw(&mut rng, 0.0))
                .collect();
            let mut extra = 0;
            while extra < n2 {
                let rec = sampler.draw(&mut rng, 1.0);
                if rec.status == Status::Censored {
                    recs.push(rec);
                    extra += 1;
                }
            }
            recs
        }
    };
    observed_first(config.spec.clone(), records)
}

/// Sup-norm distance between the free coordinates of two parameters.
pub fn parameter_error(theta_hat: &ParameterPoint, theta_star: &ParameterPoint) -> f64 {
    let diff: Vec<f64> = theta_hat
        .free_coords()
        .iter()
        .zip(theta_star.free_coords())
        .map(|(a, b)| a - b)
        .collect();
    sup_norm(&diff)
}

fn posterior_gap(
    spec: &ModelSpec,
    a: &ParameterPoint,
    b: &ParameterPoint,
    attrs: &[usize],
) -> Result<f64> {
    let p = class_posterior(spec, a, attrs)?;
    let q = class_posterior(spec, b, attrs)?;
    Ok(p.iter()
        .zip(&q)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Largest absolute posterior difference over every attribute configuration
/// and class.
pub fn posterior_error(
    spec: &ModelSpec,
    theta_hat: &ParameterPoint,
    theta_star: &ParameterPoint,
) -> Result<f64> {
    let count = spec
        .attribute_configurations()
        .filter(|&c| c <= POSTERIOR_CONFIG_CAP)
        .ok_or_else(|| {
            Error::Refused(format!(
                "more than {POSTERIOR_CONFIG_CAP} attribute configurations; use sampled configurations"
            ))
        })?;
    let mut attrs = vec![1usize; spec.n()];
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        worst = worst.max(posterior_gap(spec, theta_hat, theta_star, &attrs)?);
        for (a, &ri) in attrs.iter_mut().zip(spec.arities()) {
            *a += 1;
            if *a <= ri {
                break;
            }
            *a = 1;
        }
    }
    Ok(worst)
}

/// Like [`posterior_error`] but over `samples` uniformly drawn
/// configurations.
pub fn posterior_error_sampled(
    spec: &ModelSpec,
    theta_hat: &ParameterPoint,
    theta_star: &ParameterPoint,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let attrs: Vec<usize> = spec
            .arities()
            .iter()
            .map(|&ri| rng.random_range(1..=ri))
            .collect();
        worst = worst.max(posterior_gap(spec, theta_hat, theta_star, &attrs)?);
    }
    Ok(worst)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one experiment cell, derived from the base seed, the sample size
/// and the replicate index.
pub fn cell_seed(base_seed: u64, sample_size: usize, replicate: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ sample_size as u64) ^ replicate as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub spec: ModelSpec,
    pub truth: ParameterPoint,
    pub censoring_fraction: f64,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub base_seed: u64,
    pub pinned_censored: Option<usize>,
    pub fit: FitConfig,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub sample_size: usize,
    pub replicate: usize,
    pub seed: u64,
    pub param_err: f64,
    pub posterior_err: f64,
    pub n_observed: usize,
    pub n_censored: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub sample_size: usize,
    pub param_err: Summary,
    pub posterior_err: Summary,
    pub non_converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Ordered by sample size (in grid order), then replicate.
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<Aggregate>,
    /// Posterior error was computed on sampled configurations.
    pub posterior_sampled: bool,
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut values: Vec<f64>) -> Summary {
    values.sort_by(f64::total_cmp);
    Summary {
        median: quantile(&values, 0.5),
        iqr: quantile(&values, 0.75) - quantile(&values, 0.25),
    }
}

const SAMPLED_CONFIGS: usize = 100_000;

/// Samples, fits and scores every (sample size, replicate) cell. Cells run
/// in parallel; the report is assembled in grid order.
pub fn run_consistency_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.replicates == 0 || config.sample_sizes.is_empty() {
        return Err(Error::Validation(
            "experiment needs sample sizes and replicates".into(),
        ));
    }
    let posterior_sampled = config
        .spec
        .attribute_configurations()
        .is_none_or(|c| c > POSTERIOR_CONFIG_CAP);
    let cells_total = config.sample_sizes.len() * config.replicates;
    let fit_cfg = FitConfig {
        exec: Exec::Sequential,
        ..config.fit.clone()
    };
    let results = map_range(config.exec, cells_total, |k| -> Result<CellResult> {
        let sample_size = config.sample_sizes[k / config.replicates];
        let replicate = k % config.replicates;
        let seed = cell_seed(config.base_seed, sample_size, replicate);
        let sim = SimulationConfig {
            spec: config.spec.clone(),
            truth: config.truth.clone(),
            censoring_fraction: config.censoring_fraction,
            sample_size,
            seed,
            pinned_censored: config.pinned_censored,
        };
        let data = sample_dataset(&sim)?;
        let fit = fit_mccle(&data, &fit_cfg)?;
        let posterior_err = if posterior_sampled {
            posterior_error_sampled(
                &config.spec,
                &fit.estimate,
                &config.truth,
                SAMPLED_CONFIGS,
                seed,
            )?
        } else {
            posterior_error(&config.spec, &fit.estimate, &config.truth)?
        };
        Ok(CellResult {
            sample_size,
            replicate,
            seed,
            param_err: parameter_error(&fit.estimate, &config.truth),
            posterior_err,
            n_observed: data.n_observed(),
            n_censored: data.n_censored(),
            converged: fit.converged,
            iterations: fit.iterations,
        })
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregates = cells
        .chunks(config.replicates)
        .map(|group| Aggregate {
            sample_size: group[0].sample_size,
            param_err: summarize(group.iter().map(|c| c.param_err).collect()),
            posterior_err: summarize(group.iter().map(|c| c.posterior_err).collect()),
            non_converged: group.iter().filter(|c| !c.converged).count(),
        })
        .collect();
    Ok(ExperimentReport {
        cells,
        aggregates,
        posterior_sampled,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl ExperimentReport {
    /// Per-cell table: `N,seed,param_err,posterior_err,n_censored,converged`.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "N",
            "seed",
            "param_err",
            "posterior_err",
            "n_censored",
            "converged",
        ])
        .map_err(csv_error)?;
        for c in &self.cells {
            w.write_record([
                c.sample_size.to_string(),
                c.seed.to_string(),
                c.param_err.to_string(),
                c.posterior_err.to_string(),
                c.n_censored.to_string(),
                c.converged.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_summary_csv<W: Write>(
        &self,
        out: W,
        pick: impl Fn(&Aggregate) -> &Summary,
    ) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["N", "median_err", "iqr"])
            .map_err(csv_error)?;
        for a in &self.aggregates {
            let s = pick(a);
            w.write_record([
                a.sample_size.to_string(),
                s.median.to_string(),
                s.iqr.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregate of the parameter error: `N,median_err,iqr`.
    pub fn write_aggregate_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_summary_csv(out, |a| &a.param_err)
    }

    /// Same columns as [`Self::write_aggregate_csv`], for the posterior error.
    pub fn write_posterior_aggregate_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_summary_csv(out, |a| &a.posterior_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_prior(p: f64) -> (ModelSpec, ParameterPoint) {
        let spec = ModelSpec::new(2, vec![]).unwrap();
        let theta = ParameterPoint::new(&spec, vec![p, 1.0 - p], vec![]).unwrap();
        (spec, theta)
    }

    pub(crate) fn three_class_truth() -> (ModelSpec, ParameterPoint) {
        let spec = ModelSpec::new(3, vec![2, 3]).unwrap();
        let theta = ParameterPoint::new(
            &spec,
            vec![0.3, 0.3, 0.4],
            vec![
                vec![vec![0.8, 0.2], vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![
                    vec![0.6, 0.3, 0.1],
                    vec![0.2, 0.6, 0.2],
                    vec![0.1, 0.3, 0.6],
                ],
            ],
        )
        .unwrap();
        (spec, theta)
    }

    fn sim(
        spec: ModelSpec,
        truth: ParameterPoint,
        pc: f64,
        n: usize,
        seed: u64,
    ) -> SimulationConfig {
        SimulationConfig {
            spec,
            truth,
            censoring_fraction: pc,
            sample_size: n,
            seed,
            pinned_censored: None,
        }
    }

    #[test]
    fn no_censoring_means_all_observed() {
        let (spec, truth) = three_class_truth();
        let ds = sample_dataset(&sim(spec, truth, 0.0, 500, 1)).unwrap();
        assert_eq!(ds.n_censored(), 0);
        assert_eq!(ds.len(), 500);
    }

    #[test]
    fn sampling_is_deterministic() {
        let (spec, truth) = three_class_truth();
        let cfg = sim(spec, truth, 0.4, 300, 9);
        assert_eq!(sample_dataset(&cfg).unwrap(), sample_dataset(&cfg).unwrap());
        let other = SimulationConfig {
            seed: 10,
            ..cfg.clone()
        };
        assert_ne!(
            sample_dataset(&cfg).unwrap(),
            sample_dataset(&other).unwrap()
        );
    }

    #[test]
    fn class_frequency_concentrates() {
        // sd of the frequency is sqrt(0.24 / 1e5) ~ 0.00155, so 0.01 is > 6 sd.
        let (spec, truth) = binary_prior(0.6);
        let ds = sample_dataset(&sim(spec, truth, 0.0, 100_000, 5)).unwrap();
        let freq = ds.records().iter().filter(|r| r.value == 1).count() as f64 / 1e5;
        assert!((freq - 0.6).abs() < 0.01, "{freq}");
    }

    #[test]
    fn censored_records_are_valid_and_last() {
        let (spec, truth) = three_class_truth();
        let cfg = sim(spec, truth, 0.7, 2000, 3);
        let ds = sample_dataset(&cfg).unwrap();
        let first_censored = ds
            .records()
            .iter()
            .position(|r| r.status == Status::Censored)
            .unwrap();
        assert!(ds.records()[first_censored..]
            .iter()
            .all(|r| r.status == Status::Censored));
        assert!(ds.records()[first_censored..]
            .iter()
            .all(|r| (1..=2).contains(&r.value)));
        // Realized censored share within 3 standard errors of the analytic value.
        let p = cfg.expected_censored_fraction();
        let se = (p * (1.0 - p) / 2000.0).sqrt();
        let realized = ds.n_censored() as f64 / 2000.0;
        assert!((realized - p).abs() < 3.0 * se, "{realized} vs {p}");
    }

    #[test]
    fn pinned_censoring_count() {
        let (spec, truth) = three_class_truth();
        let cfg = SimulationConfig {
            pinned_censored: Some(4),
            ..sim(spec, truth, 0.3, 50, 2)
        };
        let ds = sample_dataset(&cfg).unwrap();
        assert_eq!((ds.n_observed(), ds.n_censored()), (50, 4));
    }

    #[test]
    fn invalid_configs() {
        let (spec, truth) = three_class_truth();
        assert!(sample_dataset(&sim(spec.clone(), truth.clone(), 1.5, 10, 0)).is_err());
        assert!(sample_dataset(&sim(spec.clone(), truth.clone(), 0.5, 0, 0)).is_err());
        let (bspec, edge) = (
            ModelSpec::new(2, vec![]).unwrap(),
            ParameterPoint {
                prior: vec![1.0, 0.0],
                cond: vec![],
            },
        );
        assert!(matches!(
            sample_dataset(&sim(bspec, edge, 0.0, 10, 0)),
            Err(Error::Boundary(_))
        ));
    }

    #[test]
    fn posterior_error_examples() {
        let (spec, truth) = three_class_truth();
        assert_eq!(posterior_error(&spec, &truth, &truth).unwrap(), 0.0);
        let u = ParameterPoint::uniform(&spec);
        assert_eq!(posterior_error(&spec, &u, &u).unwrap(), 0.0);

        // r0 = 2, n = 1, prior 0.6 -> 0.61: brute force over both configurations.
        let spec = ModelSpec::new(2, vec![2]).unwrap();
        let rows = vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]]];
        let star = ParameterPoint::new(&spec, vec![0.6, 0.4], rows.clone()).unwrap();
        let hat = ParameterPoint::new(&spec, vec![0.61, 0.39], rows).unwrap();
        let bayes = |p: f64, a: f64, b: f64| p * a / (p * a + (1.0 - p) * b);
        let expect = (bayes(0.61, 0.9, 0.2) - bayes(0.6, 0.9, 0.2))
            .abs()
            .max((bayes(0.61, 0.1, 0.8) - bayes(0.6, 0.1, 0.8)).abs());
        assert!((posterior_error(&spec, &hat, &star).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn posterior_error_refuses_huge_spaces() {
        let spec = ModelSpec::new(2, vec![10; 7]).unwrap();
        let u = ParameterPoint::uniform(&spec);
        assert!(matches!(
            posterior_error(&spec, &u, &u),
            Err(Error::Refused(_))
        ));
        assert_eq!(posterior_error_sampled(&spec, &u, &u, 100, 1).unwrap(), 0.0);
    }

    #[test]
    fn quantiles() {
        let s = summarize(vec![4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.iqr, 2.0);
    }

    #[test]
    fn cell_seeds_differ() {
        assert_ne!(cell_seed(1, 100, 0), cell_seed(1, 100, 1));
        assert_ne!(cell_seed(1, 100, 0), cell_seed(1, 1000, 0));
        assert_eq!(cell_seed(7, 10, 3), cell_seed(7, 10, 3));
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let (spec, truth) = three_class_truth();
        let cfg = ExperimentConfig {
            spec,
            truth,
            censoring_fraction: 0.3,
            sample_sizes: vec![50, 200],
            replicates: 3,
            base_seed: 11,
            pinned_censored: None,
            fit: FitConfig::default(),
            exec: Exec::Parallel,
        };
        let a = run_consistency_experiment(&cfg).unwrap();
        let b = run_consistency_experiment(&ExperimentConfig {
            exec: Exec::Sequential,
            ..cfg
        })
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 6);
        let mut buf = Vec::new();
        a.write_cells_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,seed,param_err,posterior_err,n_censored,converged\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
