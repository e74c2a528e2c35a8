//! Parameter sweeps with replicated tests.
//!
//! Cells are the Cartesian product of the sweep lists. Replicate `r` uses
//! the same derived seed in every cell, so cells differ only in their
//! parameters. Each (cell, replicate) job is independent; aggregation uses
//! counts and sums in index order, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{marginal_hsic_test_with, run_test_with, Diagnostics, TestConfig, TestReport};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, streams};
use crate::simgen::{generate, GenParams, Generator};
use crate::stats::ks_uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The weighted test of the do-null.
    #[default]
    BdHsic,
    /// Plain HSIC of X against Y.
    MarginalHsic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: Generator,
    /// Parameters shared by every cell.
    pub base: GenParams,
    /// Field name of [`GenParams`] → values to sweep.
    pub sweep: BTreeMap<String, Vec<Value>>,
    pub test: TestConfig,
    pub method: Method,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Continuous,
            base: GenParams::default(),
            sweep: BTreeMap::new(),
            test: TestConfig::default(),
            method: Method::BdHsic,
            replicates: 100,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::param("replicates must be ≥ 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha must lie in (0, 1)"));
        }
        self.test.validate()?;
        for p in self.cells()? {
            p.validate()?;
        }
        Ok(())
    }

    /// Generator parameters for every cell, in sweep order (last key
    /// varies fastest, keys sorted by name).
    pub fn cells(&self) -> Result<Vec<GenParams>> {
        let base = serde_json::to_value(&self.base)?;
        let fields = base.as_object().expect("GenParams serializes to an object");
        for (k, v) in &self.sweep {
            if !fields.contains_key(k) || k == "seed" {
                return Err(Error::param(format!("cannot sweep {k:?}")));
            }
            if v.is_empty() {
                return Err(Error::param(format!("sweep list {k:?} is empty")));
            }
        }
        let mut combos: Vec<Value> = vec![base];
        for (k, values) in &self.sweep {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c[k.as_str()] = v.clone();
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|c| {
                serde_json::from_value(c).map_err(|e| Error::param(format!("sweep value: {e}")))
            })
            .collect()
    }

    /// Seed for replicate `r`, shared by every cell.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(derive_seed(self.seed, streams::REPLICATE), r as u64)
    }
}

/// Short stable digest of a configuration.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(config)?);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// One line of the per-test record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub config_hash: String,
    pub cell: usize,
    pub replicate: usize,
    pub seed: u64,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub ess: Option<f64>,
    pub rejected: Option<bool>,
    pub ground_truth_null: Option<bool>,
    pub diagnostics: Option<Diagnostics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: usize,
    pub params: GenParams,
    pub replicates: usize,
    pub completed: usize,
    pub rejections: usize,
    /// `rejections / completed`.
    pub rejection_rate: f64,
    pub mean_ess: f64,
    pub min_ess: f64,
    pub mean_statistic: f64,
    pub p_values: Vec<f64>,
    pub ground_truth_null: Option<bool>,
    /// Uniformity of the p-values, for cells where the null holds.
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    /// Some replicate failed.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub cells: Vec<CellResult>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
    /// Seconds; reported on stderr only, never written to result files.
    #[serde(skip)]
    pub wall_clock: f64,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, Exec::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, exec: Exec) -> Result<ExperimentResult> {
    let start = std::time::Instant::now();
    config.validate()?;
    let hash = config_hash(config)?;
    let cells = config.cells()?;
    let reps = config.replicates;
    let jobs = cells.len() * reps;
    // parallelize across jobs; a lone job parallelizes internally instead
    let inner = if jobs > 1 { Exec::Sequential } else { exec };
    let outcomes: Vec<(Result<TestReport>, Option<bool>)> = exec.map(jobs, |j| {
        let (c, r) = (j / reps, j % reps);
        let seed = config.replicate_seed(r);
        let params = GenParams {
            seed,
            ..cells[c].clone()
        };
        let data = match generate(config.generator, &params) {
            Ok(d) => d,
            Err(e) => return (Err(e), None),
        };
        let test = TestConfig {
            seed,
            ..config.test.clone()
        };
        let report = match config.method {
            Method::BdHsic => run_test_with(&data, &test, None, inner).map(|(r, _)| r),
            Method::MarginalHsic => marginal_hsic_test_with(&data, &test, inner),
        };
        (report, Some(data.ground_truth_null))
    });

    let mut records = Vec::with_capacity(jobs);
    let mut results = Vec::with_capacity(cells.len());
    for (c, params) in cells.iter().enumerate() {
        let mut p_values = Vec::new();
        let (mut ess_sum, mut ess_min, mut stat_sum) = (0.0, f64::INFINITY, 0.0);
        let mut rejections = 0;
        let mut failed = false;
        let mut truth = None;
        for r in 0..reps {
            let (outcome, null) = &outcomes[c * reps + r];
            truth = truth.or(*null);
            let mut rec = ReplicateRecord {
                config_hash: hash.clone(),
                cell: c,
                replicate: r,
                seed: config.replicate_seed(r),
                statistic: None,
                p_value: None,
                ess: None,
                rejected: None,
                ground_truth_null: *null,
                diagnostics: None,
                error: None,
            };
            match outcome {
                Ok(rep) => {
                    let res = &rep.result;
                    let rejected = res.p_value <= config.alpha;
                    rejections += rejected as usize;
                    p_values.push(res.p_value);
                    ess_sum += res.ess;
                    ess_min = ess_min.min(res.ess);
                    stat_sum += res.statistic;
                    rec.statistic = Some(res.statistic);
                    rec.p_value = Some(res.p_value);
                    rec.ess = Some(res.ess);
                    rec.rejected = Some(rejected);
                    rec.diagnostics = Some(rep.diagnostics.clone());
                }
                Err(e) => {
                    failed = true;
                    log::warn!("cell {c}, replicate {r}: {e}");
                    rec.error = Some(e.to_string());
                }
            }
            records.push(rec);
        }
        let completed = p_values.len();
        let per = |s: f64| if completed > 0 { s / completed as f64 } else { f64::NAN };
        let ks = match truth {
            Some(true) if completed > 0 => Some(ks_uniform(&p_values)?),
            _ => None,
        };
        results.push(CellResult {
            cell: c,
            params: GenParams {
                seed: config.seed,
                ..params.clone()
            },
            replicates: reps,
            completed,
            rejections,
            rejection_rate: per(rejections as f64),
            mean_ess: per(ess_sum),
            min_ess: if completed > 0 { ess_min } else { f64::NAN },
            mean_statistic: per(stat_sum),
            p_values,
            ground_truth_null: truth,
            ks_statistic: ks.map(|k| k.statistic),
            ks_p_value: ks.map(|k| k.p_value),
            failed,
        });
    }
    Ok(ExperimentResult {
        config_hash: hash,
        cells: results,
        records,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}

/// Write `records.jsonl`, `summary.csv` and `result.json` into `dir`.
pub fn write_experiment(dir: &Path, config: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("records.jsonl"))?);
    for r in &result.records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(result)?)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "cell", "generator", "n", "beta_xy", "beta_xz", "beta_yz", "theta", "phi", "d_x", "d_y",
        "d_z", "dependence", "sampler", "replicates", "completed", "failed", "rejections",
        "rejection_rate", "mean_ess", "min_ess", "mean_statistic", "ground_truth_null",
        "ks_statistic", "ks_p_value",
    ])?;
    let name = |v: Value| v.as_str().unwrap_or_default().to_string();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &result.cells {
        let p = &c.params;
        w.write_record([
            c.cell.to_string(),
            name(serde_json::to_value(config.generator)?),
            p.n.to_string(),
            p.beta_xy.to_string(),
            p.beta_xz.to_string(),
            p.beta_yz.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";"),
            p.theta.to_string(),
            p.phi.to_string(),
            p.d_x.to_string(),
            p.d_y.to_string(),
            p.d_z.to_string(),
            name(serde_json::to_value(p.dependence)?),
            name(serde_json::to_value(p.sampler)?),
            c.replicates.to_string(),
            c.completed.to_string(),
            c.failed.to_string(),
            c.rejections.to_string(),
            c.rejection_rate.to_string(),
            c.mean_ess.to_string(),
            c.min_ess.to_string(),
            c.mean_statistic.to_string(),
            c.ground_truth_null.map(|b| b.to_string()).unwrap_or_default(),
            opt(c.ks_statistic),
            opt(c.ks_p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
