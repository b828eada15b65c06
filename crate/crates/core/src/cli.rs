//! Command-line interface: `train`, `predict`, `simulate` and `check`.
//!
//! Exit codes: 0 on success, 1 on invalid input or a failed check, 2 on an
//! internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimator::{
    betweenness_check, concavity_probe, fit_with_restarts, FitConfig, ProbeChart,
};
use crate::io::{
    dataset_hash, load_model, read_dataset_file, save_model, write_dataset, FitSummary, ModelFile,
    Provenance,
};
use crate::likelihood::{expansion_term_count, DEFAULT_EXPANSION_CAP};
use crate::model::{class_posterior, ModelSpec};
use crate::par::Exec;
use crate::simulation::{
    run_consistency_experiment, sample_dataset, ExperimentConfig, SimulationConfig,
};
use crate::verify::{
    expansion_deviation, gradient_deviation, random_points, EXPANSION_TOL, FD_TOL,
};

#[derive(Debug, Parser)]
#[command(
    name = "nbcensor",
    version,
    about = "Naive Bayes training with right-censored classes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model by maximizing the compound collective conditional likelihood.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Arities "r0,r1,...,rn".
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "max-iters", default_value_t = 5000)]
        max_iters: usize,
        /// Gradient sup-norm tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Extra fits from random starts; the best objective is kept.
        #[arg(long, default_value_t = 0)]
        restarts: usize,
    },
    /// Print the class posterior for one attribute vector.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Attribute values "a1,...,an" (empty for a model without attributes).
        #[arg(long, default_value = "")]
        attrs: String,
        /// Also print P(X0 > c | attrs) for c = 0..r0-1.
        #[arg(long)]
        survival: bool,
    },
    /// Sample a dataset from a true model, or run the consistency experiment.
    Simulate {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "censor", default_value_t = 0.0)]
        censor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "n")]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sample sizes "N1,N2,...".
        #[arg(long)]
        consistency: Option<String>,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep the number of censored records fixed at this value.
        #[arg(long = "pin-censored")]
        pin_censored: Option<usize>,
    },
    /// Run the likelihood and structural checks on a dataset.
    Check {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        spec: String,
        #[arg(long = "expansion-cap", default_value_t = DEFAULT_EXPANSION_CAP)]
        expansion_cap: u64,
        #[arg(long, default_value_t = 1000)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    ChecksFailed,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Validation(format!("bad {what} value '{}'", s.trim())))
        })
        .collect()
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[allow(clippy::too_many_arguments)]
fn train(
    out: &mut dyn Write,
    data: PathBuf,
    spec: &str,
    model_out: PathBuf,
    seed: u64,
    max_iters: usize,
    tol: f64,
    restarts: usize,
) -> Result<Outcome> {
    let spec = ModelSpec::parse(spec)?;
    let dataset = read_dataset_file(&data, &spec)?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let config = FitConfig {
        max_iterations: max_iters,
        gradient_tolerance: tol,
        seed,
        ..FitConfig::default()
    };
    let fit = fit_with_restarts(&dataset, &config, restarts)?;
    let model = ModelFile {
        spec,
        parameters: fit.estimate.clone(),
        provenance: Provenance {
            data_hash: Some(dataset_hash(&dataset)),
            fit: Some(FitSummary {
                log_cccl: fit.log_cccl,
                iterations: fit.iterations,
                final_gradient_norm: fit.final_gradient_norm,
                converged: fit.converged,
                boundary: fit.boundary_flag,
            }),
            ..Provenance::default()
        },
    };
    save_model(&model, &model_out)?;
    writeln!(out, "log_cccl={}", fit.log_cccl)?;
    writeln!(out, "iterations={}", fit.iterations)?;
    writeln!(out, "converged={}", fit.converged)?;
    writeln!(out, "boundary={}", fit.boundary_flag)?;
    writeln!(out, "prior={}", fmt_list(&fit.estimate.prior))?;
    Ok(Outcome::Ok)
}

fn predict(out: &mut dyn Write, model: PathBuf, attrs: &str, survival: bool) -> Result<Outcome> {
    let model = load_model(&model)?;
    let attrs: Vec<usize> = parse_list(attrs, "attribute")?;
    let post = class_posterior(&model.spec, &model.parameters, &attrs)?;
    let mut best = 0;
    for (k, p) in post.iter().enumerate() {
        if *p > post[best] {
            best = k;
        }
    }
    writeln!(out, "posterior={}", fmt_list(&post))?;
    writeln!(out, "class={}", best + 1)?;
    if survival {
        let curve: Vec<f64> = (0..model.spec.r0())
            .map(|c| if c == 0 { 1.0 } else { post[c..].iter().sum() })
            .collect();
        writeln!(out, "survival={}", fmt_list(&curve))?;
    }
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    out: &mut dyn Write,
    spec: &str,
    truth: PathBuf,
    censor: f64,
    seed: u64,
    n: Option<usize>,
    data_out: Option<PathBuf>,
    consistency: Option<String>,
    replicates: usize,
    report: Option<PathBuf>,
    pin_censored: Option<usize>,
) -> Result<Outcome> {
    let spec = ModelSpec::parse(spec)?;
    let truth = load_model(&truth)?;
    if truth.spec != spec {
        return Err(Error::Validation(format!(
            "truth model has spec {}, expected {}",
            truth.spec.to_arg(),
            spec.to_arg()
        )));
    }
    match (data_out, consistency) {
        (Some(path), None) => {
            let n = n.ok_or_else(|| Error::Validation("--n is required with --out".into()))?;
            let dataset = sample_dataset(&SimulationConfig {
                spec,
                truth: truth.parameters,
                censoring_fraction: censor,
                sample_size: n,
                seed,
                pinned_censored: pin_censored,
            })?;
            write_dataset(&dataset, std::fs::File::create(&path)?)?;
            writeln!(out, "records={}", dataset.len())?;
            writeln!(out, "censored={}", dataset.n_censored())?;
        }
        (None, Some(grid)) => {
            let dir = report.ok_or_else(|| {
                Error::Validation("--report is required with --consistency".into())
            })?;
            let sample_sizes: Vec<usize> = parse_list(&grid, "sample size")?;
            let report = run_consistency_experiment(&ExperimentConfig {
                spec,
                truth: truth.parameters,
                censoring_fraction: censor,
                sample_sizes,
                replicates,
                base_seed: seed,
                pinned_censored: pin_censored,
                fit: FitConfig::default(),
                exec: Exec::default(),
            })?;
            std::fs::create_dir_all(&dir)?;
            report.write_cells_csv(std::fs::File::create(dir.join("cells.csv"))?)?;
            report.write_aggregate_csv(std::fs::File::create(dir.join("aggregate.csv"))?)?;
            report.write_posterior_aggregate_csv(std::fs::File::create(
                dir.join("posterior_aggregate.csv"),
            )?)?;
            for a in &report.aggregates {
                writeln!(
                    out,
                    "N={} median_param_err={} median_posterior_err={} non_converged={}",
                    a.sample_size, a.param_err.median, a.posterior_err.median, a.non_converged
                )?;
            }
        }
        _ => {
            return Err(Error::Validation(
                "give exactly one of --out (single dataset) or --consistency (experiment)".into(),
            ))
        }
    }
    Ok(Outcome::Ok)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn check(
    out: &mut dyn Write,
    err: &mut dyn Write,
    data: PathBuf,
    spec: &str,
    cap: u64,
    probes: usize,
    seed: u64,
) -> Result<Outcome> {
    let spec = ModelSpec::parse(spec)?;
    let dataset = read_dataset_file(&data, &spec)?;
    let points = random_points(&dataset, 5, seed);
    let mut all_pass = true;

    match expansion_term_count(&dataset, cap) {
        Ok(m) => {
            let dev = expansion_deviation(&dataset, &points, cap)?;
            let pass = dev <= EXPANSION_TOL;
            all_pass &= pass;
            writeln!(
                out,
                "expansion: {} terms={m} max_abs_diff={dev:e}",
                verdict(pass)
            )?;
        }
        Err(Error::CapExceeded { cap }) => {
            writeln!(
                err,
                "notice: expansion has more than {cap} terms, skipping the expansion check"
            )?;
            writeln!(out, "expansion: SKIPPED")?;
        }
        Err(e) => return Err(e),
    }

    let dev = gradient_deviation(&dataset, &points)?;
    let pass = dev <= FD_TOL;
    all_pass &= pass;
    writeln!(out, "gradient: {} max_abs_diff={dev:e}", verdict(pass))?;

    let censored = dataset.n_censored() > 0;
    let natural = concavity_probe(&dataset, probes, seed, ProbeChart::LogLinear)?;
    let logit = concavity_probe(&dataset, probes, seed, ProbeChart::Logit)?;
    if censored {
        writeln!(
            out,
            "concavity: REPORT censored data, log-linear violations={}/{} worst_gap={:e}",
            natural.violations, natural.trials, natural.worst_gap
        )?;
    } else {
        let pass = natural.violations == 0;
        all_pass &= pass;
        writeln!(
            out,
            "concavity: {} log-linear violations={}/{} worst_gap={:e}",
            verdict(pass),
            natural.violations,
            natural.trials,
            natural.worst_gap
        )?;
    }
    writeln!(
        out,
        "concavity-logit-chart: REPORT violations={}/{} worst_gap={:e}",
        logit.violations, logit.trials, logit.worst_gap
    )?;

    let between = betweenness_check(1000, seed)?;
    let pass = between.outside_interval == 0 && between.max_deviation <= 1e-12;
    all_pass &= pass;
    writeln!(
        out,
        "betweenness: {} outside={}/{} max_dev={:e}",
        verdict(pass),
        between.outside_interval,
        between.trials,
        between.max_deviation
    )?;

    Ok(if all_pass {
        Outcome::Ok
    } else {
        Outcome::ChecksFailed
    })
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<Outcome> {
    match cli.command {
        Command::Train {
            data,
            spec,
            out: model_out,
            seed,
            max_iters,
            tol,
            restarts,
        } => train(out, data, &spec, model_out, seed, max_iters, tol, restarts),
        Command::Predict {
            model,
            attrs,
            survival,
        } => predict(out, model, &attrs, survival),
        Command::Simulate {
            spec,
            truth,
            censor,
            seed,
            n,
            out: data_out,
            consistency,
            replicates,
            report,
            pin_censored,
        } => simulate(
            out,
            &spec,
            truth,
            censor,
            seed,
            n,
            data_out,
            consistency,
            replicates,
            report,
            pin_censored,
        ),
        Command::Check {
            data,
            spec,
            expansion_cap,
            probes,
            seed,
        } => check(out, err, data, &spec, expansion_cap, probes, seed),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::ChecksFailed) => {
            let _ = writeln!(err, "error: one or more checks failed");
            1
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}
