//! CSV and metadata files of a finished run.
//!
//! Floats are written with 17 significant digits so values read back are
//! bit-identical. Files are first written under a temporary name and only
//! renamed once all of them succeeded; on failure nothing is left behind.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nmqsd_core::ensemble::FitSkipped;
use nmqsd_core::EnsembleResult;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::runner::EnsembleRun;

pub const SIGMA_Z_FILE: &str = "sigma_z.csv";
pub const QNORMS_FILE: &str = "qnorms.csv";
pub const NQ_HIST_FILE: &str = "nq_hist.csv";
pub const META_FILE: &str = "run_meta.toml";

#[derive(Debug, Error)]
#[error("writing {path}: {source}")]
pub struct OutputError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

/// Float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sigma_z_csv(result: &EnsembleResult) -> String {
    let mut s = String::from("t,mean_sigma_z,stderr\n");
    for i in 0..result.times.len() {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_float(result.times[i]),
            fmt_float(result.mean_sigma_z[i]),
            fmt_float(result.stderr[i])
        );
    }
    s
}

/// Long format: one row per time and order.
pub fn qnorms_csv(result: &EnsembleResult) -> String {
    let mut s = String::from("t,n,mean_trace_norm\n");
    for (t, norms) in result.times.iter().zip(&result.mean_q_trace_norms) {
        for (n, v) in norms.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", fmt_float(*t), n, fmt_float(*v));
        }
    }
    s
}

/// Histogram of final `N_Q` over its domain: `0..n_max`, plus `n_max`
/// itself when saturated trajectories are included.
pub fn nq_hist_csv(result: &EnsembleResult, include_saturated: bool) -> String {
    let dist = result.nq_distribution(include_saturated);
    let top = if include_saturated || result.n_max == 0 {
        result.n_max + 1
    } else {
        result.n_max
    };
    let mut s = String::from("n_q,count,probability_density\n");
    for k in 0..top.min(dist.counts.len()) {
        let _ = writeln!(s, "{},{},{}", k, dist.counts[k], fmt_float(dist.density[k]));
    }
    s
}

#[derive(Serialize)]
struct Meta<'a> {
    version: String,
    config: &'a RunConfig,
    results: MetaResults,
    errors: MetaErrors,
    nq_fit: MetaFit,
}

#[derive(Serialize)]
struct MetaResults {
    total: u64,
    accepted: u64,
    rejected: u64,
    rejection_rate: f64,
    mean_final_n_q: f64,
    mean_abs_noise_accepted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_abs_noise_rejected: Option<f64>,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct MetaErrors {
    e_nz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_n_reduced_n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total: Option<f64>,
}

#[derive(Serialize)]
struct MetaFit {
    include_saturated: bool,
    domain_total: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    from: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<&'static str>,
}

pub fn version_string() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn run_meta(run: &EnsembleRun) -> String {
    let r = &run.result;
    let dist = r.nq_distribution(run.config.include_saturated);
    let mut fit = MetaFit {
        include_saturated: run.config.include_saturated,
        domain_total: dist.domain_total,
        rate: None,
        intercept: None,
        r_squared: None,
        from: None,
        points: None,
        skipped: None,
    };
    match dist.fit {
        Ok(f) => {
            fit.rate = Some(f.rate);
            fit.intercept = Some(f.intercept);
            fit.r_squared = Some(f.r_squared);
            fit.from = Some(f.from);
            fit.points = Some(f.points);
        }
        Err(why) => {
            fit.skipped = Some(match why {
                FitSkipped::TooFewSamples => "too_few_samples",
                FitSkipped::SingleBin => "single_bin",
                FitSkipped::ShortTail => "short_tail",
            });
        }
    }
    let meta = Meta {
        version: version_string(),
        config: &run.config,
        results: MetaResults {
            total: r.total(),
            accepted: r.accepted,
            rejected: r.rejected,
            rejection_rate: r.rejection_rate,
            mean_final_n_q: r.mean_final_n_q,
            mean_abs_noise_accepted: r.mean_abs_noise_accepted,
            mean_abs_noise_rejected: r.mean_abs_noise_rejected,
            wall_time_s: run.wall_time.as_secs_f64(),
        },
        errors: MetaErrors {
            e_nz: r.time_averaged_stderr(),
            e_dt: run.errors.map(|e| e.e_dt),
            e_n: run.errors.map(|e| e.e_n),
            e_n_reduced_n_max: run.errors.map(|e| e.reduced_n_max),
            total: run.errors.map(|e| e.total()),
        },
        nq_fit: fit,
    };
    toml::to_string(&meta).expect("metadata is always serializable")
}

/// Writes the three CSV files and `run_meta.toml` into `dir`, creating it
/// if needed. Returns the paths written.
pub fn write_outputs(run: &EnsembleRun, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = [
        (SIGMA_Z_FILE, sigma_z_csv(&run.result)),
        (QNORMS_FILE, qnorms_csv(&run.result)),
        (
            NQ_HIST_FILE,
            nq_hist_csv(&run.result, run.config.include_saturated),
        ),
        (META_FILE, run_meta(run)),
    ];
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    for (name, body) in &files {
        let tmp = dir.join(format!(".{name}.partial"));
        if let Err(source) = fs::write(&tmp, body) {
            let _ = fs::remove_file(&tmp);
            cleanup(staged.iter().map(|(t, _)| t));
            return Err(OutputError { path: tmp, source });
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut done: Vec<PathBuf> = Vec::new();
    for (tmp, dest) in &staged {
        if let Err(source) = fs::rename(tmp, dest) {
            cleanup(staged.iter().map(|(t, _)| t));
            cleanup(done.iter());
            return Err(OutputError {
                path: dest.clone(),
                source,
            });
        }
        done.push(dest.clone());
    }
    Ok(done)
}

fn cleanup<'a>(paths: impl Iterator<Item = &'a PathBuf>) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}
