//! Monte Carlo studies: simulate many panels, run each configured estimator
//! on every panel and aggregate the average log markup against its true
//! value.
//!
//! Replication `r` simulates with seed [`replication_seed`]`(master, r)` and
//! owns all of its state, so the summary depends only on the config and not
//! on how many replications run at once.
//!
//! Output files (in the configured directory):
//! * `replications.csv`: `replication,seed,estimator,status,avg_log_markup,alpha,rho,nu,objective_value,converged,iterations,error`
//! * `summary.json`: the [`MCSummary`] without the raw records
//! * `histogram.csv`: `estimator,bin_lower,bin_upper,count` on bins shared by all estimators

mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{StudyConfig, WeightingChoice, KEYS};

use crate::baseline::estimate_baseline_table;
use crate::dgp::{simulate_panel, DgpConfig};
use crate::error::{Error, Result};
use crate::gcf::{build_lagged_frame, estimate_table, EstimateOptions, EstimationResult};

/// Population mean of the log markup in the generating process.
pub const TRUE_AVG_LOG_MARKUP: f64 = 0.25;

/// Seed for replication `index`: the first output of ChaCha20 keyed by the
/// master seed on stream `index`.
pub fn replication_seed(master_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Estimators in the order they are run and reported.
pub fn estimator_labels(config: &StudyConfig) -> Vec<String> {
    let mut labels: Vec<String> = config
        .gcf_degrees
        .iter()
        .map(|d| format!("gcf-d{d}"))
        .collect();
    if config.baseline {
        labels.push("baseline".into());
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub estimator: String,
    /// Present for successful fits.
    pub result: Option<EstimationResult>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    pub fn avg_log_markup(&self) -> Option<f64> {
        self.result.as_ref().map(|r| r.avg_log_markup)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// Replications attempted.
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    /// Successful fits whose optimizer met the gradient tolerance.
    pub converged: usize,
    pub mean: f64,
    pub bias: f64,
    pub mse: f64,
    pub sd: f64,
}

impl EstimatorSummary {
    /// Aggregates over successful fits; statistics are NaN when there are none.
    pub fn from_estimates(estimator: &str, estimates: &[Option<f64>], converged: usize) -> Self {
        let ok: Vec<f64> = estimates.iter().flatten().copied().collect();
        let n = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / n;
        let mse = ok
            .iter()
            .map(|x| (x - TRUE_AVG_LOG_MARKUP).powi(2))
            .sum::<f64>()
            / n;
        let sd = if ok.len() > 1 {
            (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        Self {
            estimator: estimator.into(),
            replications: estimates.len(),
            successes: ok.len(),
            failures: estimates.len() - ok.len(),
            converged,
            mean,
            bias: mean - TRUE_AVG_LOG_MARKUP,
            mse,
            sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCSummary {
    pub config: StudyConfig,
    pub true_avg_log_markup: f64,
    pub estimators: Vec<EstimatorSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

impl MCSummary {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn options(config: &StudyConfig) -> EstimateOptions {
    EstimateOptions {
        weighting: config.weighting.mode(&config.dgp),
        optimizer: config.optimizer,
        ..EstimateOptions::default()
    }
}

/// Panel configuration for one replication.
pub fn replication_dgp(config: &StudyConfig, index: usize) -> DgpConfig {
    DgpConfig {
        seed: replication_seed(config.master_seed, index),
        ..config.dgp.clone()
    }
}

/// Simulates replication `index` and runs every configured estimator on it.
pub fn run_replication(config: &StudyConfig, index: usize) -> Vec<ReplicationRecord> {
    let dgp = replication_dgp(config, index);
    let labels = estimator_labels(config);
    let record = |label: &str, res: Result<EstimationResult>| match res {
        Ok(mut r) => {
            r.seed = Some(dgp.seed);
            ReplicationRecord {
                replication: index,
                seed: dgp.seed,
                estimator: label.into(),
                result: Some(r),
                error: None,
            }
        }
        Err(e) => {
            warn!("replication {index} (seed {}), {label}: {e}", dgp.seed);
            ReplicationRecord {
                replication: index,
                seed: dgp.seed,
                estimator: label.into(),
                result: None,
                error: Some(e.to_string()),
            }
        }
    };

    let table = simulate_panel(&dgp).and_then(|p| build_lagged_frame(&p));
    let table = match table {
        Ok(t) => t,
        Err(e) => {
            let msg = e.to_string();
            warn!(
                "replication {index} (seed {}): simulation failed: {msg}",
                dgp.seed
            );
            return labels
                .iter()
                .map(|l| {
                    record(
                        l,
                        Err(Error::Numerical(format!("simulation failed: {msg}"))),
                    )
                })
                .collect();
        }
    };
    let opts = options(config);
    let mut out = Vec::with_capacity(labels.len());
    for &d in &config.gcf_degrees {
        let res = estimate_table(&table, &config.plan(d), &opts);
        out.push(record(&format!("gcf-d{d}"), res));
    }
    if config.baseline {
        let res = estimate_baseline_table(&table, &config.baseline_config(), &opts);
        out.push(record("baseline", res));
    }
    info!("replication {index} done");
    out
}

/// Aggregates raw records into per-estimator statistics.
pub fn summarize(config: &StudyConfig, records: Vec<ReplicationRecord>) -> MCSummary {
    let estimators = estimator_labels(config)
        .iter()
        .map(|label| {
            let mine: Vec<&ReplicationRecord> =
                records.iter().filter(|r| &r.estimator == label).collect();
            let est: Vec<Option<f64>> = mine.iter().map(|r| r.avg_log_markup()).collect();
            let converged = mine
                .iter()
                .filter(|r| r.result.as_ref().is_some_and(|x| x.converged))
                .count();
            EstimatorSummary::from_estimates(label, &est, converged)
        })
        .collect();
    MCSummary {
        config: config.clone(),
        true_avg_log_markup: TRUE_AVG_LOG_MARKUP,
        estimators,
        records,
    }
}

/// Runs the study in memory without writing files.
pub fn simulate_study(config: &StudyConfig) -> Result<MCSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<ReplicationRecord>> = pool.install(|| {
        (0..config.n_replications)
            .into_par_iter()
            .map(|i| run_replication(config, i))
            .collect()
    });
    Ok(summarize(config, per_rep.into_iter().flatten().collect()))
}

/// Runs the study and writes its output files to `config.output_dir`.
pub fn run_study(config: &StudyConfig) -> Result<MCSummary> {
    let summary = simulate_study(config)?;
    write_outputs(&summary, &config.output_dir)?;
    Ok(summary)
}

pub fn raw_path(dir: &Path) -> PathBuf {
    dir.join("replications.csv")
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

pub fn histogram_path(dir: &Path) -> PathBuf {
    dir.join("histogram.csv")
}

pub fn write_outputs(summary: &MCSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_raw(&summary.records, &raw_path(dir))?;
    fs::write(summary_path(dir), summary.to_json()?)?;
    write_histogram(summary, &histogram_path(dir))?;
    Ok(())
}

fn write_raw(records: &[ReplicationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "replication",
        "seed",
        "estimator",
        "status",
        "avg_log_markup",
        "alpha",
        "rho",
        "nu",
        "objective_value",
        "converged",
        "iterations",
        "error",
    ])?;
    for r in records {
        let mut row = vec![
            r.replication.to_string(),
            r.seed.to_string(),
            r.estimator.clone(),
        ];
        match &r.result {
            Some(x) => row.extend([
                "ok".to_string(),
                x.avg_log_markup.to_string(),
                x.theta_hat.alpha.to_string(),
                x.theta_hat.rho.to_string(),
                x.theta_hat.nu.to_string(),
                x.objective_value.to_string(),
                x.converged.to_string(),
                x.iterations.to_string(),
                String::new(),
            ]),
            None => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(r.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Raw record as read back from `replications.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawRow {
    pub replication: usize,
    pub seed: u64,
    pub estimator: String,
    pub status: String,
    pub avg_log_markup: Option<f64>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub nu: Option<f64>,
    pub objective_value: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub error: String,
}

pub fn read_raw(path: &Path) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Shared equal-width bin edges covering every successful estimate.
pub fn histogram_edges(summary: &MCSummary, bins: usize) -> Vec<f64> {
    let xs: Vec<f64> = summary
        .records
        .iter()
        .filter_map(|r| r.avg_log_markup())
        .collect();
    let lo = xs.iter().copied().fold(TRUE_AVG_LOG_MARKUP, f64::min);
    let hi = xs.iter().copied().fold(TRUE_AVG_LOG_MARKUP, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    (0..=bins).map(|i| lo + width * i as f64).collect()
}

/// Counts per estimator and bin; the last bin is closed on the right.
pub fn histogram_counts(summary: &MCSummary, edges: &[f64]) -> Vec<(String, Vec<usize>)> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    summary
        .estimators
        .iter()
        .map(|e| {
            let mut counts = vec![0; bins];
            for x in summary
                .records
                .iter()
                .filter(|r| r.estimator == e.estimator)
                .filter_map(|r| r.avg_log_markup())
            {
                let b = (((x - lo) / (hi - lo)) * bins as f64).floor() as usize;
                counts[b.min(bins - 1)] += 1;
            }
            (e.estimator.clone(), counts)
        })
        .collect()
}

fn write_histogram(summary: &MCSummary, path: &Path) -> Result<()> {
    let edges = histogram_edges(summary, summary.config.histogram_bins);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["estimator", "bin_lower", "bin_upper", "count"])?;
    for (label, counts) in histogram_counts(summary, &edges) {
        for (i, c) in counts.iter().enumerate() {
            w.write_record([
                label.clone(),
                edges[i].to_string(),
                edges[i + 1].to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Renders the estimator table of a summary.
pub fn format_table(summary: &MCSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>10} {:>10} {:>6} {:>9}",
        "estimator", "mean", "bias", "mse", "S", "failures"
    );
    for e in &summary.estimators {
        let _ = writeln!(
            s,
            "{:<12} {:>10.4} {:>10.4} {:>10.5} {:>6} {:>9}",
            e.estimator, e.mean, e.bias, e.mse, e.successes, e.failures
        );
    }
    s
}

/// Reads `summary.json` and renders its table.
pub fn report(summary_path: &Path) -> Result<String> {
    let text = fs::read_to_string(summary_path)
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    let summary = MCSummary::from_json(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", summary_path.display())))?;
    Ok(format_table(&summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| replication_seed(7, i)).collect();
        let b: Vec<u64> = (0..100).map(|i| replication_seed(7, i)).collect();
        assert_eq!(a, b);
        let mut s = a.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 100);
        assert_ne!(replication_seed(7, 0), replication_seed(8, 0));
    }

    #[test]
    fn aggregates_count_failures() {
        let s = EstimatorSummary::from_estimates("x", &[Some(0.3), None, Some(0.2)], 2);
        assert_eq!((s.replications, s.successes, s.failures), (3, 2, 1));
        assert!((s.mean - 0.25).abs() < 1e-15);
        assert!(s.bias.abs() < 1e-15);
        assert!((s.mse - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn empty_summary_table_has_header_only() {
        let summary = MCSummary {
            config: StudyConfig::default(),
            true_avg_log_markup: TRUE_AVG_LOG_MARKUP,
            estimators: vec![],
            records: vec![],
        };
        let t = format_table(&summary);
        assert_eq!(t.lines().count(), 1);
        assert!(t.starts_with("estimator"));
    }
}
