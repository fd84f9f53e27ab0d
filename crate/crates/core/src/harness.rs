//! Campaign runner and performance indices.
//!
//! A campaign runs `M` independently seeded trials per controller and reduces
//! them to three indices: the mean error norm over the whole run, the mean
//! error norm over the final window, and the mean settling time.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::write_inputs_csv;
use crate::agent::{run_experiment, PopulationEvent, StateRow, TrialRecord, TrialSample, TrialStatus};
use crate::config::{ExperimentConfig, Mode};
use crate::controllers::{write_decisions_csv, ControllerKind};
use crate::error::{config_err, Error, Result};
use crate::rng::mix_seed;

pub const VERSION: &str = match option_env!("RATIOMETRIC_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

const TIME_EPS: f64 = 1e-9;

fn norm2(s: &TrialSample) -> f64 {
    s.e_a.hypot(s.e_b)
}

fn norm_inf(s: &TrialSample) -> f64 {
    s.e_a.abs().max(s.e_b.abs())
}

/// Trapezoidal integral of the piecewise-linear interpolant of `f` over `[a, b]`.
fn integrate_between(samples: &[TrialSample], a: f64, b: f64, f: fn(&TrialSample) -> f64) -> f64 {
    let mut total = 0.0;
    for w in samples.windows(2) {
        let (t0, t1) = (w[0].time, w[1].time);
        let lo = t0.max(a);
        let hi = t1.min(b);
        if hi <= lo {
            continue;
        }
        let (y0, y1) = (f(&w[0]), f(&w[1]));
        let at = |t: f64| y0 + (y1 - y0) * (t - t0) / (t1 - t0);
        total += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexValue {
    pub value: f64,
    /// False when the series ends before `T_sim`; `value` then covers the
    /// available span only.
    pub complete: bool,
}

/// Time-averaged Euclidean error norm over `[0, t_sim]`.
pub fn error_norm_index(samples: &[TrialSample], t_sim: f64) -> Result<IndexValue> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.time, l.time),
        _ => return Err(Error::RecordTooShort("no samples".into())),
    };
    if samples.len() == 1 {
        return Ok(IndexValue { value: norm2(&samples[0]), complete: t_sim <= first + TIME_EPS });
    }
    let end = last.min(t_sim);
    let start = first.max(0.0);
    let value = integrate_between(samples, start, end, norm2) / (end - start);
    Ok(IndexValue { value, complete: last + TIME_EPS >= t_sim && first <= TIME_EPS })
}

/// Time-averaged Euclidean error norm over the last `window` minutes of the record.
pub fn final_error_index(samples: &[TrialSample], window: f64) -> Result<f64> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.time, l.time),
        _ => return Err(Error::RecordTooShort("no samples".into())),
    };
    if last - first + TIME_EPS < window {
        return Err(Error::RecordTooShort(format!("span {} min is shorter than the {window} min window", last - first)));
    }
    Ok(integrate_between(samples, last - window, last, norm2) / window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "time", rename_all = "snake_case")]
pub enum Settling {
    Settled(f64),
    Unsettled,
}

impl Settling {
    pub fn time(&self) -> Option<f64> {
        match self {
            Settling::Settled(t) => Some(*t),
            Settling::Unsettled => None,
        }
    }
}

/// Earliest sampled time after which `||e||_inf <= threshold` holds at every
/// remaining sample.
pub fn settling_time(samples: &[TrialSample], threshold: f64) -> Settling {
    let mut settled = None;
    for s in samples.iter().rev() {
        if norm_inf(s) > threshold {
            break;
        }
        settled = Some(s.time);
    }
    settled.map_or(Settling::Unsettled, Settling::Settled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialIndices {
    pub trial: usize,
    pub seed: u64,
    pub completed: bool,
    pub failure: Option<String>,
    pub e_bar: f64,
    pub e_bar_f: Option<f64>,
    pub settling: Settling,
}

pub fn trial_indices(trial: usize, record: &TrialRecord, cfg: &ExperimentConfig) -> TrialIndices {
    let e_bar = error_norm_index(&record.samples, record.t_sim).map(|v| v.value).unwrap_or(f64::NAN);
    let failure = match &record.status {
        TrialStatus::Completed => None,
        TrialStatus::Failed { reason, .. } => Some(reason.clone()),
    };
    TrialIndices {
        trial,
        seed: record.seed,
        completed: record.completed(),
        failure,
        e_bar,
        e_bar_f: final_error_index(&record.samples, cfg.final_window).ok(),
        settling: settling_time(&record.samples, cfg.epsilon),
    }
}

/// Campaign summary for one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub controller: ControllerKind,
    pub mode: Mode,
    pub trials: usize,
    pub failed: usize,
    pub e_bar: f64,
    pub e_bar_f: f64,
    /// Mean over the completed trials that settled; `None` if none did.
    pub t_s_mean: Option<f64>,
    pub settled: usize,
    pub unsettled: usize,
    pub per_trial: Vec<TrialIndices>,
}

impl PerformanceReport {
    /// Failed trials are excluded from every mean.
    pub fn from_trials(controller: ControllerKind, mode: Mode, per_trial: Vec<TrialIndices>) -> Self {
        let ok: Vec<&TrialIndices> = per_trial.iter().filter(|t| t.completed).collect();
        let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        let e_bar = mean(&ok.iter().map(|t| t.e_bar).collect::<Vec<_>>());
        let e_bar_f = mean(&ok.iter().filter_map(|t| t.e_bar_f).collect::<Vec<_>>());
        let ts: Vec<f64> = ok.iter().filter_map(|t| t.settling.time()).collect();
        Self {
            controller,
            mode,
            trials: per_trial.len(),
            failed: per_trial.len() - ok.len(),
            e_bar,
            e_bar_f,
            t_s_mean: if ts.is_empty() { None } else { Some(mean(&ts)) },
            settled: ts.len(),
            unsettled: ok.len() - ts.len(),
            per_trial,
        }
    }

    pub fn settled_fraction(&self) -> f64 {
        self.settled as f64 / self.trials as f64
    }
}

/// Seed of trial `j`; shared by every controller in a campaign.
pub fn trial_seed(campaign_seed: u64, j: usize) -> u64 {
    mix_seed(campaign_seed, j as u64)
}

/// Runs one trial of `kind` with `seed`.
pub fn run_trial(cfg: &ExperimentConfig, kind: ControllerKind, mode: Mode, seed: u64) -> Result<TrialRecord> {
    let mut controller = cfg.controllers.build(kind, &cfg.params, cfg.target_ratio);
    run_experiment(cfg, mode, controller.as_mut(), seed)
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub report: PerformanceReport,
    pub records: Vec<TrialRecord>,
}

/// Runs `m` trials per controller. Trials run in parallel; a trial whose
/// engine errors out is kept as a failed record.
pub fn run_campaign(
    cfg: &ExperimentConfig,
    controllers: &[ControllerKind],
    m: usize,
    mode: Mode,
    campaign_seed: u64,
) -> Result<Vec<CampaignResult>> {
    if m == 0 {
        return Err(config_err("a campaign needs at least one trial"));
    }
    cfg.validate()?;
    let mut out = Vec::with_capacity(controllers.len());
    for &kind in controllers {
        let records: Vec<TrialRecord> = (0..m)
            .into_par_iter()
            .map(|j| {
                let seed = trial_seed(campaign_seed, j);
                run_trial(cfg, kind, mode, seed).unwrap_or_else(|e| failed_record(cfg, kind, mode, seed, e))
            })
            .collect();
        let per_trial = records.iter().enumerate().map(|(j, r)| trial_indices(j, r, cfg)).collect();
        for r in records.iter().filter(|r| !r.completed()) {
            log::warn!("{kind} trial with seed {} failed: {:?}", r.seed, r.status);
        }
        out.push(CampaignResult { report: PerformanceReport::from_trials(kind, mode, per_trial), records });
    }
    Ok(out)
}

fn failed_record(cfg: &ExperimentConfig, kind: ControllerKind, mode: Mode, seed: u64, e: Error) -> TrialRecord {
    TrialRecord {
        controller: kind.to_string(),
        seed,
        mode,
        t_sim: cfg.t_sim(),
        sampling_period: cfg.timing.sampling_period,
        samples: vec![],
        decisions: vec![],
        commands: vec![],
        events: vec![],
        states: vec![],
        lineage: vec![],
        status: TrialStatus::Failed { time: 0.0, reason: e.to_string() },
    }
}

// ---------------------------------------------------------------------------
// Serialization

const TRIAL_HEADER: [&str; 9] = ["time_min", "e_A", "e_B", "u_a", "u_p", "N", "n_A", "n_B", "n_C"];

/// Sampled series with columns `time_min,e_A,e_B,u_a,u_p,N,n_A,n_B,n_C`.
pub fn write_trial_csv<W: Write>(out: W, samples: &[TrialSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_HEADER)?;
    for s in samples {
        w.write_record([
            s.time.to_string(),
            s.e_a.to_string(),
            s.e_b.to_string(),
            s.u_a.to_string(),
            s.u_p.to_string(),
            s.n.to_string(),
            s.n_a.to_string(),
            s.n_b.to_string(),
            s.n_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_csv<R: Read>(input: R) -> Result<Vec<TrialSample>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TRIAL_HEADER) {
        return Err(config_err("unexpected trial CSV header"));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| config_err(format!("column {}: {e}", TRIAL_HEADER[i])))
        };
        let n = |i: usize| -> Result<usize> {
            row[i].parse::<usize>().map_err(|e| config_err(format!("column {}: {e}", TRIAL_HEADER[i])))
        };
        out.push(TrialSample {
            time: f(0)?,
            e_a: f(1)?,
            e_b: f(2)?,
            u_a: f(3)?,
            u_p: f(4)?,
            n: n(5)?,
            n_a: n(6)?,
            n_b: n(7)?,
            n_c: n(8)?,
        });
    }
    Ok(out)
}

/// Per-cell states with columns `time_min,cell_id,mrna_laci,mrna_tetr,laci,tetr,atc,iptg`.
pub fn write_states_csv<W: Write>(out: W, rows: &[StateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_min", "cell_id", "mrna_laci", "mrna_tetr", "laci", "tetr", "atc", "iptg"])?;
    for r in rows {
        let mut rec = vec![r.time.to_string(), r.cell_id.to_string()];
        rec.extend(r.state.to_array().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Population events with columns `time_min,kind,cell_id,daughter_1,daughter_2`.
pub fn write_events_csv<W: Write>(out: W, events: &[PopulationEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_min", "kind", "cell_id", "daughter_1", "daughter_2"])?;
    for e in events {
        match e {
            PopulationEvent::Division { time, parent, daughters } => w.write_record([
                time.to_string(),
                "division".into(),
                parent.to_string(),
                daughters[0].to_string(),
                daughters[1].to_string(),
            ])?,
            PopulationEvent::FlushOut { time, cell } => {
                w.write_record([time.to_string(), "flush_out".into(), cell.to_string(), String::new(), String::new()])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes `trial_<label>.csv`, `inputs_<label>.csv`, `decisions_<label>.csv`,
/// `events_<label>.csv` and, if states were recorded, `states_<label>.csv`.
pub fn write_trial_bundle(dir: &Path, label: &str, record: &TrialRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trial_csv(create(dir, &format!("trial_{label}.csv"))?, &record.samples)?;
    write_inputs_csv(create(dir, &format!("inputs_{label}.csv"))?, &record.commands)?;
    write_decisions_csv(create(dir, &format!("decisions_{label}.csv"))?, &record.controller, &record.decisions)?;
    write_events_csv(create(dir, &format!("events_{label}.csv"))?, &record.events)?;
    if !record.states.is_empty() {
        write_states_csv(create(dir, &format!("states_{label}.csv"))?, &record.states)?;
    }
    Ok(())
}

/// Columns `controller,e_bar,e_bar_f,t_s_mean`; an empty `t_s_mean` means no
/// trial settled.
pub fn write_table_csv<W: Write>(out: W, reports: &[PerformanceReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["controller", "e_bar", "e_bar_f", "t_s_mean"])?;
    for r in reports {
        w.write_record([
            r.controller.to_string(),
            r.e_bar.to_string(),
            r.e_bar_f.to_string(),
            r.t_s_mean.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub mode: Mode,
    pub seed: u64,
    pub trials: usize,
    pub controllers: Vec<ControllerKind>,
    pub trial_seeds: Vec<u64>,
    pub note: String,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, mode: Mode, seed: u64, trials: usize, controllers: &[ControllerKind]) -> Self {
        Self {
            version: VERSION.to_string(),
            command: command.to_string(),
            mode,
            seed,
            trials,
            controllers: controllers.to_vec(),
            trial_seeds: (0..trials).map(|j| trial_seed(seed, j)).collect(),
            note: "every controller runs on the same trial seeds, hence the same initial conditions".into(),
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub reports: Vec<PerformanceReport>,
}

pub fn write_report_json(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
