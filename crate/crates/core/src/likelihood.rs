//! The log compound collective conditional likelihood (log-CCCL): observed
//! records contribute `log p(x0 | attrs)`, censored records contribute
//! `log P(X0 > c | attrs)`.
//!
//! Everything is evaluated in log space. The survival sums use a max-shifted
//! log-sum-exp, so nothing underflows at large sample sizes.

use crate::error::{Error, Result};
use crate::model::{from_logits, LogitPoint, ModelSpec};
use crate::numeric::log_sum_exp;
use crate::par::{map_chunks, Exec};

/// Default cap on the number of completions enumerated by the expansion
/// oracle.
pub const DEFAULT_EXPANSION_CAP: u64 = 1_000_000;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Observed,
    Censored,
}

/// One training record. For observed records `value` is the class (1..=r0);
/// for censored records it is the threshold `c` with `X0 > c` known.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pub status: Status,
    pub value: usize,
    pub attrs: Vec<usize>,
}

impl Observation {
    pub fn observed(class: usize, attrs: Vec<usize>) -> Self {
        Self {
            status: Status::Observed,
            value: class,
            attrs,
        }
    }

    pub fn censored(threshold: usize, attrs: Vec<usize>) -> Self {
        Self {
            status: Status::Censored,
            value: threshold,
            attrs,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        match self.status {
            Status::Observed if self.value < 1 || self.value > spec.r0() => {
                return Err(Error::Domain(format!(
                    "observed class {} outside 1..={}",
                    self.value,
                    spec.r0()
                )))
            }
            Status::Censored if self.value > spec.r0() - 1 => {
                return Err(Error::Domain(format!(
                    "censored threshold must be <= r0-1 = {}, got {}",
                    spec.r0() - 1,
                    self.value
                )))
            }
            _ => {}
        }
        spec.check_attrs(&self.attrs)
    }
}

/// Records validated against a model spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: ModelSpec,
    records: Vec<Observation>,
}

impl Dataset {
    pub fn new(spec: ModelSpec, records: Vec<Observation>) -> Result<Self> {
        for (k, rec) in records.iter().enumerate() {
            rec.validate(&spec)
                .map_err(|e| Error::Domain(format!("record {}: {e}", k + 1)))?;
        }
        Ok(Self { spec, records })
    }

    pub fn empty(spec: ModelSpec) -> Self {
        Self {
            spec,
            records: Vec::new(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_observed(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == Status::Observed)
            .count()
    }

    pub fn n_censored(&self) -> usize {
        self.len() - self.n_observed()
    }

    /// Appends the records of `other`; both must share a spec.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.spec != other.spec {
            return Err(Error::Validation("datasets have different specs".into()));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(Dataset {
            spec: self.spec.clone(),
            records,
        })
    }

    /// Same records in a new order; `order` must be a permutation.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            records: order.iter().map(|&k| self.records[k].clone()).collect(),
        }
    }
}

/// Log-CCCL value and its gradient with respect to the free logit
/// coordinates (layout of [`LogitPoint::free_coords`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CcclEvaluation {
    pub log_value: f64,
    pub gradient: Vec<f64>,
}

fn check_point(dataset: &Dataset, logits: &LogitPoint) -> Result<()> {
    from_logits(dataset.spec(), logits).map(|_| ())
}

/// Offsets of each attribute's free block in the flat gradient.
fn attribute_offsets(spec: &ModelSpec) -> Vec<usize> {
    let mut off = spec.r0() - 1;
    spec.arities()
        .iter()
        .map(|&ri| {
            let o = off;
            off += spec.r0() * (ri - 1);
            o
        })
        .collect()
}

struct Workspace<'a> {
    spec: &'a ModelSpec,
    log_probs: LogitPoint,
    probs: Vec<Vec<Vec<f64>>>,
    offsets: Vec<usize>,
}

impl Workspace<'_> {
    /// Adds the contributions of `records` to a fresh accumulator.
    fn accumulate(&self, records: &[Observation], want_gradient: bool) -> (f64, Vec<f64>) {
        let r0 = self.spec.r0();
        let mut grad = if want_gradient {
            vec![0.0; self.spec.free_dim()]
        } else {
            Vec::new()
        };
        let mut value = 0.0;
        let mut scores = vec![0.0; r0];
        let mut resid = vec![0.0; r0];
        for rec in records {
            for (x0, s) in scores.iter_mut().enumerate() {
                *s = self.log_probs.prior[x0]
                    + self
                        .log_probs
                        .cond
                        .iter()
                        .zip(&rec.attrs)
                        .map(|(rows, &a)| rows[x0][a - 1])
                        .sum::<f64>();
            }
            let lse = log_sum_exp(&scores);
            let (term, first) = match rec.status {
                Status::Observed => (scores[rec.value - 1] - lse, rec.value - 1),
                Status::Censored if rec.value == 0 => continue,
                Status::Censored => (log_sum_exp(&scores[rec.value..]) - lse, rec.value),
            };
            value += term;
            if !want_gradient {
                continue;
            }
            // d term / d score[x0] = truncated posterior - posterior
            let tail = lse + term;
            for x0 in 0..r0 {
                let q = (scores[x0] - lse).exp();
                let w = match rec.status {
                    Status::Observed => f64::from(x0 == first),
                    Status::Censored if x0 >= first => (scores[x0] - tail).exp(),
                    Status::Censored => 0.0,
                };
                resid[x0] = w - q;
            }
            for (g, e) in grad.iter_mut().zip(&resid[..r0 - 1]) {
                *g += e;
            }
            for (i, &a) in rec.attrs.iter().enumerate() {
                let ri = self.spec.arities()[i];
                for (x0, e) in resid.iter().enumerate() {
                    let base = self.offsets[i] + x0 * (ri - 1);
                    let row = &self.probs[i][x0];
                    for v in 0..ri - 1 {
                        let indicator = f64::from(a - 1 == v);
                        grad[base + v] += e * (indicator - row[v]);
                    }
                }
            }
        }
        (value, grad)
    }
}

fn evaluate(
    dataset: &Dataset,
    logits: &LogitPoint,
    want_gradient: bool,
    exec: Exec,
) -> Result<CcclEvaluation> {
    let spec = dataset.spec();
    let theta = from_logits(spec, logits)?;
    let ws = Workspace {
        spec,
        log_probs: logits.log_probs(),
        probs: theta.cond,
        offsets: attribute_offsets(spec),
    };
    let parts = map_chunks(exec, dataset.records(), CHUNK, |chunk| {
        ws.accumulate(chunk, want_gradient)
    });
    let mut log_value = 0.0;
    let mut gradient = if want_gradient {
        vec![0.0; spec.free_dim()]
    } else {
        Vec::new()
    };
    for (v, g) in parts {
        log_value += v;
        for (acc, x) in gradient.iter_mut().zip(g) {
            *acc += x;
        }
    }
    Ok(CcclEvaluation {
        log_value,
        gradient,
    })
}

pub fn log_cccl(dataset: &Dataset, logits: &LogitPoint) -> Result<f64> {
    log_cccl_with(dataset, logits, Exec::default())
}

pub fn log_cccl_with(dataset: &Dataset, logits: &LogitPoint, exec: Exec) -> Result<f64> {
    evaluate(dataset, logits, false, exec).map(|e| e.log_value)
}

pub fn log_cccl_gradient(dataset: &Dataset, logits: &LogitPoint) -> Result<CcclEvaluation> {
    log_cccl_gradient_with(dataset, logits, Exec::default())
}

pub fn log_cccl_gradient_with(
    dataset: &Dataset,
    logits: &LogitPoint,
    exec: Exec,
) -> Result<CcclEvaluation> {
    evaluate(dataset, logits, true, exec)
}

/// Number of complete-data likelihood terms in the expansion of the CCCL:
/// the product over censored records of `r0 - c`.
pub fn expansion_term_count(dataset: &Dataset, cap: u64) -> Result<u64> {
    let r0 = dataset.spec().r0() as u64;
    dataset
        .records()
        .iter()
        .filter(|r| r.status == Status::Censored)
        .try_fold(1u64, |m, r| {
            m.checked_mul(r0 - r.value as u64)
                .filter(|&m| m <= cap)
                .ok_or(Error::CapExceeded { cap })
        })
}

/// Log-CCCL computed by enumerating every completion of the censored
/// classes and summing the resulting complete-data conditional likelihoods.
///
/// Cost grows with the term count, so this is a verification path only.
pub fn log_cccl_by_expansion(dataset: &Dataset, logits: &LogitPoint, cap: u64) -> Result<f64> {
    check_point(dataset, logits)?;
    let m = expansion_term_count(dataset, cap)?;
    let theta = from_logits(dataset.spec(), logits)?;
    let log_posterior = |rec: &Observation| {
        let attrs0: Vec<usize> = rec.attrs.iter().map(|a| a - 1).collect();
        let joint: Vec<f64> = theta
            .log_joint_scores(&attrs0)
            .iter()
            .map(|s| s.exp())
            .collect();
        let total: f64 = joint.iter().sum();
        joint.iter().map(|p| (p / total).ln()).collect::<Vec<f64>>()
    };
    let mut base = 0.0;
    // For each censored record, the log posteriors of its admissible classes.
    let mut choices: Vec<Vec<f64>> = Vec::new();
    for rec in dataset.records() {
        let lp = log_posterior(rec);
        match rec.status {
            Status::Observed => base += lp[rec.value - 1],
            Status::Censored => choices.push(lp[rec.value..].to_vec()),
        }
    }
    let mut digits = vec![0usize; choices.len()];
    let mut terms = Vec::with_capacity(m as usize);
    for _ in 0..m {
        terms.push(base + digits.iter().zip(&choices).map(|(&d, c)| c[d]).sum::<f64>());
        for (d, c) in digits.iter_mut().zip(&choices) {
            *d += 1;
            if *d < c.len() {
                break;
            }
            *d = 0;
        }
    }
    Ok(log_sum_exp(&terms))
}
