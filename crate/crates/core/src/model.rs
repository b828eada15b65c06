//! The naive Bayes model: state spaces, the parameter simplex product, the
//! gauge-fixed logit chart and the posterior quantities the likelihood is
//! built from.
//!
//! Class and attribute values are 1-based throughout the public API.

use crate::error::{Error, Result};
use crate::numeric::{log_softmax_into, log_sum_exp, softmax};

/// Tolerance on probability-vector sums.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Arities of the class variable and of each attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    r0: usize,
    r: Vec<usize>,
}

impl ModelSpec {
    pub fn new(r0: usize, r: Vec<usize>) -> Result<Self> {
        if r0 < 2 {
            return Err(Error::Validation(format!(
                "class arity must be >= 2, got {r0}"
            )));
        }
        if let Some((i, &ri)) = r.iter().enumerate().find(|(_, &ri)| ri < 2) {
            return Err(Error::Validation(format!(
                "arity of attribute {} must be >= 2, got {ri}",
                i + 1
            )));
        }
        Ok(Self { r0, r })
    }

    /// Parses `"r0,r1,...,rn"`.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|s| {
                s.trim().parse::<usize>().map_err(|_| {
                    Error::Validation(format!("bad arity '{}' in spec '{text}'", s.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (&r0, r) = values
            .split_first()
            .ok_or_else(|| Error::Validation("empty spec".into()))?;
        Self::new(r0, r.to_vec())
    }

    pub fn r0(&self) -> usize {
        self.r0
    }

    pub fn arities(&self) -> &[usize] {
        &self.r
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    /// Number of free coordinates: `r0 - 1` for the prior plus `r0 (r_i - 1)`
    /// per attribute.
    pub fn free_dim(&self) -> usize {
        self.r0 - 1 + self.r.iter().map(|ri| self.r0 * (ri - 1)).sum::<usize>()
    }

    /// Number of joint attribute configurations, `None` on overflow.
    pub fn attribute_configurations(&self) -> Option<u64> {
        self.r
            .iter()
            .try_fold(1u64, |acc, &ri| acc.checked_mul(ri as u64))
    }

    pub fn check_attrs(&self, attrs: &[usize]) -> Result<()> {
        if attrs.len() != self.n() {
            return Err(Error::Domain(format!(
                "expected {} attribute values, got {}",
                self.n(),
                attrs.len()
            )));
        }
        for (i, (&a, &ri)) in attrs.iter().zip(&self.r).enumerate() {
            if a < 1 || a > ri {
                return Err(Error::Domain(format!(
                    "attribute {} value {a} outside 1..={ri}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Canonical `"r0,r1,...,rn"` text.
    pub fn to_arg(&self) -> String {
        std::iter::once(self.r0)
            .chain(self.r.iter().copied())
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A point of the parameter space: the class prior and, for every attribute
/// and class value, the class-conditional distribution of the attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    /// Length `r0`.
    pub prior: Vec<f64>,
    /// `cond[i][x0][v]` is `p(x_{i+1} = v + 1 | x0 + 1)`.
    pub cond: Vec<Vec<Vec<f64>>>,
}

fn check_block(block: &[f64], len: usize, name: &str, tol: f64) -> Result<()> {
    if block.len() != len {
        return Err(Error::Validation(format!(
            "{name} has {} entries, expected {len}",
            block.len()
        )));
    }
    if let Some(p) = block.iter().find(|p| !p.is_finite()) {
        return Err(Error::Validation(format!(
            "{name} has non-finite entry {p}"
        )));
    }
    if let Some(p) = block.iter().find(|&&p| p < 0.0) {
        return Err(Error::Simplex {
            block: format!("{name} (negative entry {p})"),
            sum: block.iter().sum(),
        });
    }
    let sum: f64 = block.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Simplex {
            block: name.to_string(),
            sum,
        });
    }
    Ok(())
}

impl ParameterPoint {
    pub fn new(spec: &ModelSpec, prior: Vec<f64>, cond: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let theta = Self { prior, cond };
        theta.validate(spec, SIMPLEX_TOL)?;
        Ok(theta)
    }

    pub fn uniform(spec: &ModelSpec) -> Self {
        let r0 = spec.r0();
        Self {
            prior: vec![1.0 / r0 as f64; r0],
            cond: spec
                .arities()
                .iter()
                .map(|&ri| vec![vec![1.0 / ri as f64; ri]; r0])
                .collect(),
        }
    }

    /// Checks shape, finiteness, nonnegativity and simplex sums within `tol`.
    pub fn validate(&self, spec: &ModelSpec, tol: f64) -> Result<()> {
        check_block(&self.prior, spec.r0(), "prior", tol)?;
        if self.cond.len() != spec.n() {
            return Err(Error::Validation(format!(
                "parameter has {} attributes, spec has {}",
                self.cond.len(),
                spec.n()
            )));
        }
        for (i, (rows, &ri)) in self.cond.iter().zip(spec.arities()).enumerate() {
            if rows.len() != spec.r0() {
                return Err(Error::Validation(format!(
                    "attribute {} has {} class rows, expected {}",
                    i + 1,
                    rows.len(),
                    spec.r0()
                )));
            }
            for (x0, row) in rows.iter().enumerate() {
                check_block(
                    row,
                    ri,
                    &format!("attribute {} given class {}", i + 1, x0 + 1),
                    tol,
                )?;
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.prior.as_slice()).chain(
            self.cond
                .iter()
                .flat_map(|rows| rows.iter().map(|r| r.as_slice())),
        )
    }

    /// Every probability strictly positive.
    pub fn is_interior(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|&p| p > 0.0))
    }

    /// The free coordinates: every entry but the last of each block.
    pub fn free_coords(&self) -> Vec<f64> {
        self.blocks()
            .flat_map(|b| b[..b.len() - 1].iter().copied())
            .collect()
    }

    /// Unnormalized log joint score `log p(x0) + sum_i log p(x_i | x0)` for
    /// every class, with 0-based attribute indices.
    pub(crate) fn log_joint_scores(&self, attrs0: &[usize]) -> Vec<f64> {
        (0..self.prior.len())
            .map(|x0| {
                self.prior[x0].ln()
                    + self
                        .cond
                        .iter()
                        .zip(attrs0)
                        .map(|(rows, &v)| rows[x0][v].ln())
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Unconstrained chart of the interior: each block holds log-ratios against
/// its last entry, which is pinned to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPoint {
    pub prior: Vec<f64>,
    pub cond: Vec<Vec<Vec<f64>>>,
}

impl LogitPoint {
    /// All-zero logits, the chart image of the uniform parameter.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let r0 = spec.r0();
        Self {
            prior: vec![0.0; r0],
            cond: spec
                .arities()
                .iter()
                .map(|&ri| vec![vec![0.0; ri]; r0])
                .collect(),
        }
    }

    /// Builds a point from its free coordinates, in block order: prior, then
    /// attribute 1 rows for classes 1..r0, attribute 2, and so on.
    pub fn from_free(spec: &ModelSpec, free: &[f64]) -> Result<Self> {
        if free.len() != spec.free_dim() {
            return Err(Error::Validation(format!(
                "expected {} free coordinates, got {}",
                spec.free_dim(),
                free.len()
            )));
        }
        let mut point = Self::zeros(spec);
        let mut it = free.iter();
        for block in point.blocks_mut() {
            let k = block.len() - 1;
            for slot in &mut block[..k] {
                *slot = *it.next().expect("length checked");
            }
        }
        Ok(point)
    }

    pub fn free_coords(&self) -> Vec<f64> {
        self.blocks()
            .flat_map(|b| b[..b.len() - 1].iter().copied())
            .collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        std::iter::once(self.prior.as_slice()).chain(
            self.cond
                .iter()
                .flat_map(|rows| rows.iter().map(|r| r.as_slice())),
        )
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        std::iter::once(&mut self.prior)
            .chain(self.cond.iter_mut().flat_map(|rows| rows.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let ok =
            self.prior.len() == spec.r0()
                && self.cond.len() == spec.n()
                && self.cond.iter().zip(spec.arities()).all(|(rows, &ri)| {
                    rows.len() == spec.r0() && rows.iter().all(|r| r.len() == ri)
                });
        if !ok {
            return Err(Error::Validation(
                "logit point does not match the model spec".into(),
            ));
        }
        if !self.blocks().all(|b| b[b.len() - 1] == 0.0) {
            return Err(Error::Validation(
                "last logit of every block must be 0".into(),
            ));
        }
        Ok(())
    }

    /// Log-probabilities of every block (prior, then conditional rows).
    pub(crate) fn log_probs(&self) -> LogitPoint {
        let mut out = self.clone();
        log_softmax_into(&self.prior, &mut out.prior);
        for (rows_out, rows) in out.cond.iter_mut().zip(&self.cond) {
            for (o, l) in rows_out.iter_mut().zip(rows) {
                log_softmax_into(l, o);
            }
        }
        out
    }
}

pub fn to_logits(spec: &ModelSpec, theta: &ParameterPoint) -> Result<LogitPoint> {
    theta.validate(spec, SIMPLEX_TOL)?;
    if !theta.is_interior() {
        return Err(Error::Boundary("parameter has a zero probability".into()));
    }
    let ratio = |b: &[f64]| {
        let last = b[b.len() - 1];
        let mut out: Vec<f64> = b.iter().map(|p| (p / last).ln()).collect();
        *out.last_mut().unwrap() = 0.0;
        out
    };
    Ok(LogitPoint {
        prior: ratio(&theta.prior),
        cond: theta
            .cond
            .iter()
            .map(|rows| rows.iter().map(|r| ratio(r)).collect())
            .collect(),
    })
}

pub fn from_logits(spec: &ModelSpec, logits: &LogitPoint) -> Result<ParameterPoint> {
    logits.check_shape(spec)?;
    if !logits.is_finite() {
        return Err(Error::Validation("non-finite logit".into()));
    }
    Ok(ParameterPoint {
        prior: softmax(&logits.prior),
        cond: logits
            .cond
            .iter()
            .map(|rows| rows.iter().map(|r| softmax(r)).collect())
            .collect(),
    })
}

fn check_theta(spec: &ModelSpec, theta: &ParameterPoint) -> Result<()> {
    theta.validate(spec, SIMPLEX_TOL)
}

/// `p(x0 | attrs)` for `x0 = 1..r0` (index `x0 - 1`).
pub fn class_posterior(
    spec: &ModelSpec,
    theta: &ParameterPoint,
    attrs: &[usize],
) -> Result<Vec<f64>> {
    spec.check_attrs(attrs)?;
    check_theta(spec, theta)?;
    let attrs0: Vec<usize> = attrs.iter().map(|a| a - 1).collect();
    let scores = theta.log_joint_scores(&attrs0);
    if log_sum_exp(&scores) == f64::NEG_INFINITY {
        return Err(Error::Domain(
            "attribute configuration has probability zero under every class".into(),
        ));
    }
    Ok(softmax(&scores))
}

/// `P(X0 > c | attrs)`, the tail sum of the class posterior.
pub fn survival_posterior(
    spec: &ModelSpec,
    theta: &ParameterPoint,
    attrs: &[usize],
    c: i64,
) -> Result<f64> {
    if c < 0 || c > spec.r0() as i64 {
        return Err(Error::Domain(format!(
            "censoring threshold {c} outside 0..={}",
            spec.r0()
        )));
    }
    let post = class_posterior(spec, theta, attrs)?;
    if c == 0 {
        return Ok(1.0);
    }
    Ok(post[c as usize..].iter().sum())
}
