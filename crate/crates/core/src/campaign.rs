//! Monte Carlo campaigns over seeded trials.
//!
//! A campaign sweeps one parameter and, at every sweep point, draws `trials`
//! channels and runs every listed method on each. The channel of a trial
//! depends only on `(seed, trial)` and the geometry parameters, so all
//! methods at a point see the same realization and results do not depend on
//! the number of workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{run_method, AllocStats, MethodId};
use crate::channel::generate_trial;
use crate::params::{ParamError, SystemParams};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid system parameters: {0}")]
    Params(#[from] ParamError),
    #[error("campaign lists no methods")]
    NoMethods,
    #[error("sweep has no values")]
    EmptySweep,
    #[error("sweep value {value} is not valid for {axis}")]
    BadSweepValue { axis: SweepAxis, value: f64 },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RateReq,
    NumUsers,
    NumRrh,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::RateReq => "rate_req",
            SweepAxis::NumUsers => "num_users",
            SweepAxis::NumRrh => "num_rrh",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub system: SystemParams,
    pub methods: Vec<MethodId>,
    /// Defaults to the system's own `rate_req` as a single point.
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn sweep(&self) -> Sweep {
        self.sweep.clone().unwrap_or(Sweep {
            axis: SweepAxis::RateReq,
            values: vec![self.system.rate_req],
        })
    }

    /// System parameters at one sweep point.
    pub fn point(&self, axis: SweepAxis, value: f64) -> Result<SystemParams, CampaignError> {
        let mut p = self.system.clone();
        let bad = || CampaignError::BadSweepValue { axis, value };
        match axis {
            SweepAxis::RateReq => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(bad());
                }
                p.rate_req = value;
            }
            SweepAxis::NumUsers | SweepAxis::NumRrh => {
                if !(value >= 1.0 && value.fract() == 0.0 && value < 1e6) {
                    return Err(bad());
                }
                if axis == SweepAxis::NumUsers {
                    p.num_users = value as usize;
                } else {
                    p.num_rrh = value as usize;
                }
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        self.system.validate()?;
        if self.methods.is_empty() {
            return Err(CampaignError::NoMethods);
        }
        let sweep = self.sweep();
        if sweep.values.is_empty() {
            return Err(CampaignError::EmptySweep);
        }
        for &v in &sweep.values {
            self.point(sweep.axis, v)?;
        }
        Ok(())
    }
}

/// One CSV row: one method on one trial at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: MethodId,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub trial: u64,
    pub seed: u64,
    #[serde(rename = "total_power_mW")]
    pub total_power_mw: f64,
    pub n_nonmux: usize,
    pub n_mutsic: usize,
    pub n_singsic_srrh: usize,
    pub n_singsic_drrh: usize,
    pub n_unalloc: usize,
    pub audit_ok: bool,
    pub wall_ms: f64,
    #[serde(skip)]
    pub stats: AllocStats,
}

impl TrialRecord {
    pub fn num_subcarriers(&self) -> usize {
        self.n_nonmux + self.n_mutsic + self.n_singsic_srrh + self.n_singsic_drrh + self.n_unalloc
    }

    fn sort_key(&self) -> (SweepAxis, u64, MethodId, u64) {
        (self.sweep_axis, self.sweep_value.to_bits(), self.method, self.trial)
    }
}

/// Runs every method on every trial of every sweep point on `workers`
/// threads. With `timing` off, `wall_ms` is written as zero so that output
/// files are reproducible byte for byte.
pub fn run_campaign(config: &CampaignConfig, workers: usize, timing: bool) -> Result<Vec<TrialRecord>, CampaignError> {
    config.validate()?;
    let sweep = config.sweep();
    let mut jobs = Vec::new();
    for &value in &sweep.values {
        let params = config.point(sweep.axis, value)?;
        for trial in 0..params.trials as u64 {
            jobs.push((value, params.clone(), trial));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let mut records: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|(value, params, trial)| run_trial(config, sweep.axis, *value, params, *trial, timing))
            .collect()
    });
    records.sort_by_key(TrialRecord::sort_key);
    Ok(records)
}

fn run_trial(
    config: &CampaignConfig,
    axis: SweepAxis,
    value: f64,
    params: &SystemParams,
    trial: u64,
    timing: bool,
) -> Vec<TrialRecord> {
    let (_, channel) = generate_trial(params, trial);
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let run = run_method(method, &channel, params);
            let wall_ms = if timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let mut rec = TrialRecord {
                method,
                sweep_axis: axis,
                sweep_value: value,
                trial,
                seed: params.seed,
                total_power_mw: f64::NAN,
                n_nonmux: 0,
                n_mutsic: 0,
                n_singsic_srrh: 0,
                n_singsic_drrh: 0,
                n_unalloc: params.num_subcarriers,
                audit_ok: false,
                wall_ms,
                stats: AllocStats::default(),
            };
            match run {
                Ok(run) => {
                    let c = run.audit.counts;
                    if !run.audit.ok() {
                        log::warn!("{method} {axis}={value} trial {trial}: {:?}", run.audit.violations);
                    }
                    rec.total_power_mw = run.audit.total_power;
                    rec.n_nonmux = c.non_mux;
                    rec.n_mutsic = c.mutual_sic;
                    rec.n_singsic_srrh = c.single_sic_srrh;
                    rec.n_singsic_drrh = c.single_sic_drrh;
                    rec.n_unalloc = c.unallocated;
                    rec.audit_ok = run.audit.ok();
                    rec.stats = run.state.stats;
                }
                Err(e) => log::warn!("{method} {axis}={value} trial {trial}: {e}"),
            }
            rec
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<(), CampaignError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>, CampaignError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Aggregate of one (method, sweep point).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: MethodId,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub trials: usize,
    pub failed: usize,
    /// W, over trials that passed the audit
    pub mean_power_w: f64,
    pub std_power_w: f64,
    pub mean_nonmux: f64,
    pub mean_mutsic: f64,
    pub mean_singsic_srrh: f64,
    pub mean_singsic_drrh: f64,
    pub mean_unalloc: f64,
    /// Multiplexed subcarriers over all subcarriers.
    pub noma_fraction: f64,
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(SweepAxis, u64, MethodId), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.sweep_axis, r.sweep_value.to_bits(), r.method))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rows| {
            let first = rows[0];
            let n = rows.len() as f64;
            let mean = |f: fn(&TrialRecord) -> usize| rows.iter().map(|r| f(r) as f64).sum::<f64>() / n;
            let powers: Vec<f64> = rows
                .iter()
                .filter(|r| r.audit_ok)
                .map(|r| r.total_power_mw * 1e-3)
                .collect();
            let (mean_power_w, std_power_w) = mean_std(&powers);
            let s = mean(TrialRecord::num_subcarriers);
            let mux = mean(|r| r.n_mutsic + r.n_singsic_srrh + r.n_singsic_drrh);
            SummaryRow {
                method: first.method,
                sweep_axis: first.sweep_axis,
                sweep_value: first.sweep_value,
                trials: rows.len(),
                failed: rows.len() - powers.len(),
                mean_power_w,
                std_power_w,
                mean_nonmux: mean(|r| r.n_nonmux),
                mean_mutsic: mean(|r| r.n_mutsic),
                mean_singsic_srrh: mean(|r| r.n_singsic_srrh),
                mean_singsic_drrh: mean(|r| r.n_singsic_drrh),
                mean_unalloc: mean(|r| r.n_unalloc),
                noma_fraction: if s > 0.0 { mux / s } else { 0.0 },
            }
        })
        .collect()
}

/// Sample mean and standard deviation; NaN for an empty sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Plain-text table of a summary.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<26} {:>9} {:>12} {:>6} {:>11} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "method",
        "axis",
        "value",
        "trials",
        "mean_W",
        "std_W",
        "nonmux",
        "mutsic",
        "ss_srrh",
        "ss_drrh",
        "unalloc",
        "noma%"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<26} {:>9} {:>12} {:>6} {:>11.4} {:>10.4} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6.1}",
            r.method.name(),
            r.sweep_axis.to_string(),
            r.sweep_value,
            r.trials,
            r.mean_power_w,
            r.std_power_w,
            r.mean_nonmux,
            r.mean_mutsic,
            r.mean_singsic_srrh,
            r.mean_singsic_drrh,
            r.mean_unalloc,
            100.0 * r.noma_fraction
        );
    }
    let failed: usize = rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        let _ = writeln!(
            out,
            "* {failed} trial(s) failed the audit; they count toward subcarrier means but not toward power statistics."
        );
    }
    out
}
