//! Population-level closed-loop simulation.
//!
//! One engine serves both modes. In fixed mode the population never changes;
//! in agent mode cells divide on per-cell deadlines and the chamber flushes
//! random cells out whenever it is over capacity. Space is not modeled: every
//! cell sees the same (delayed) environmental input.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::{ActuationScheduler, DelayedCommand};
use crate::config::{ExperimentConfig, Mode};
use crate::controllers::{Controller, DecisionLogEntry};
use crate::error::{config_err, Error, Result};
use crate::model::{CellState, InducerInput};
use crate::population::{CellId, PopulationSnapshot};
use crate::rng::{stream, SimRng, StreamKind};
use crate::stochastic::{build_reaction_network, em_step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChamberConfig {
    pub capacity: usize,
    /// Mean cell-cycle length (min).
    pub mean_division_time: f64,
    /// Coefficient of variation of the cell-cycle length.
    pub division_time_cv: f64,
    /// Split mRNA counts binomially at division; otherwise halve them exactly.
    pub partition_noise: bool,
    /// Initial population in agent mode.
    pub initial_agents: usize,
    pub growth: bool,
    pub flush: bool,
}

impl Default for ChamberConfig {
    fn default() -> Self {
        Self {
            capacity: 50,
            mean_division_time: 30.0,
            division_time_cv: 0.1,
            partition_noise: true,
            initial_agents: 20,
            growth: true,
            flush: true,
        }
    }
}

impl ChamberConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(config_err("chamber capacity must be >= 2"));
        }
        if !(self.mean_division_time > 0.0) {
            return Err(config_err("mean_division_time must be > 0"));
        }
        if !(self.division_time_cv >= 0.0) {
            return Err(config_err("division_time_cv must be >= 0"));
        }
        if self.initial_agents == 0 {
            return Err(config_err("initial_agents must be >= 1"));
        }
        Ok(())
    }

    /// Cell-cycle length drawn from a normal distribution truncated below at
    /// half the mean.
    pub fn sample_cycle<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mean = self.mean_division_time;
        let sd = self.division_time_cv * mean;
        if sd == 0.0 {
            return mean;
        }
        let normal = Normal::new(mean, sd).expect("finite sd");
        loop {
            let d = normal.sample(rng);
            if d >= 0.5 * mean {
                return d;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub id: CellId,
    pub parent: Option<CellId>,
    pub generation: u64,
    pub state: CellState,
    pub next_division_time: f64,
    rng: SimRng,
}

impl Agent {
    pub fn new(id: CellId, parent: Option<CellId>, generation: u64, state: CellState, next_division_time: f64, master_seed: u64) -> Self {
        Self { id, parent, generation, state, next_division_time, rng: stream(master_seed, StreamKind::Cell, id, generation) }
    }
}

/// Splits `agent` into two daughters at time `t`. mRNA counts are rounded and
/// partitioned; protein and inducer concentrations are copied.
pub fn divide<R: Rng + ?Sized>(
    agent: &Agent,
    t: f64,
    next_id: &mut CellId,
    chamber: &ChamberConfig,
    master_seed: u64,
    rng: &mut R,
) -> (Agent, Agent) {
    let mut split = |m: f64| -> (f64, f64) {
        if chamber.partition_noise {
            let n = m.round().max(0.0) as u64;
            let k = if n == 0 { 0 } else { Binomial::new(n, 0.5).expect("valid p").sample(rng) };
            (k as f64, (n - k) as f64)
        } else {
            (0.5 * m, 0.5 * m)
        }
    };
    let (l1, l2) = split(agent.state.mrna_laci);
    let (t1, t2) = split(agent.state.mrna_tetr);
    let mut daughter = |mrna_laci, mrna_tetr| {
        let id = *next_id;
        *next_id += 1;
        let state = CellState { mrna_laci, mrna_tetr, ..agent.state };
        let deadline = t + chamber.sample_cycle(rng);
        Agent::new(id, Some(agent.id), agent.generation + 1, state, deadline, master_seed)
    };
    let d1 = daughter(l1, t1);
    let d2 = daughter(l2, t2);
    (d1, d2)
}

/// Removes uniformly random agents until at most `capacity` remain; returns
/// the removed ids in removal order.
pub fn flush_out<R: Rng + ?Sized>(agents: &mut Vec<Agent>, capacity: usize, rng: &mut R) -> Vec<CellId> {
    let mut removed = Vec::new();
    while agents.len() > capacity {
        let i = rng.gen_range(0..agents.len());
        removed.push(agents.remove(i).id);
    }
    removed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSample {
    pub time: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub u_a: f64,
    pub u_p: f64,
    pub n: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub n_c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationEvent {
    Division { time: f64, parent: CellId, daughters: [CellId; 2] },
    FlushOut { time: f64, cell: CellId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed { time: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub time: f64,
    pub cell_id: CellId,
    pub state: CellState,
}

/// Everything logged during one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub controller: String,
    pub seed: u64,
    pub mode: Mode,
    pub t_sim: f64,
    pub sampling_period: f64,
    pub samples: Vec<TrialSample>,
    pub decisions: Vec<DecisionLogEntry>,
    pub commands: Vec<DelayedCommand>,
    pub events: Vec<PopulationEvent>,
    pub states: Vec<StateRow>,
    pub lineage: Vec<(CellId, Option<CellId>)>,
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn completed(&self) -> bool {
        self.status == TrialStatus::Completed
    }
}

fn initial_agents(cfg: &ExperimentConfig, mode: Mode, seed: u64, chamber_rng: &mut SimRng) -> Vec<Agent> {
    let mut ic_rng = stream(seed, StreamKind::InitialConditions, 0, 0);
    let n = match mode {
        Mode::Fixed => cfg.fixed_population,
        Mode::Agent => cfg.chamber.initial_agents,
    };
    (0..n as CellId)
        .map(|id| {
            let state = cfg.initial.sample(&mut ic_rng);
            let deadline = if mode == Mode::Agent && cfg.chamber.growth {
                // Desynchronized cell-cycle phases.
                let phase: f64 = chamber_rng.gen_range(f64::EPSILON..=1.0);
                phase * cfg.chamber.sample_cycle(chamber_rng)
            } else {
                f64::INFINITY
            };
            Agent::new(id, None, 0, state, deadline, seed)
        })
        .collect()
}

/// Runs one closed-loop experiment from t = 0 to the experiment cap.
///
/// Per SDE tick: every agent takes one Euler-Maruyama step under the current
/// environmental input, then due divisions are processed and the chamber is
/// flushed to capacity. Measurements are taken every `T_s`, control updates
/// every `T_c`, and commands take effect after the actuation delay.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mode: Mode,
    controller: &mut dyn Controller,
    seed: u64,
) -> Result<TrialRecord> {
    cfg.validate()?;
    let dt = cfg.noise.sde_step;
    let t_sim = cfg.t_sim();
    let steps_per_sample = (cfg.timing.sampling_period / dt).round() as usize;
    let samples_per_control = cfg.timing.samples_per_actuation();
    let total_steps = (t_sim / dt).round() as usize;
    let net = build_reaction_network(&cfg.params);
    let noise = cfg.noise;
    let growth = mode == Mode::Agent && cfg.chamber.growth;
    let flush = mode == Mode::Agent && cfg.chamber.flush;

    let mut chamber_rng = stream(seed, StreamKind::Chamber, 0, 0);
    let mut controller_rng = stream(seed, StreamKind::Controller, 0, 0);
    let mut actuation_rng = stream(seed, StreamKind::Actuation, 0, 0);

    let mut agents = initial_agents(cfg, mode, seed, &mut chamber_rng);
    let mut next_id = agents.len() as CellId;
    let mut scheduler = ActuationScheduler::new(&cfg.timing, InducerInput::default());

    let mut record = TrialRecord {
        controller: controller.name().to_string(),
        seed,
        mode,
        t_sim,
        sampling_period: cfg.timing.sampling_period,
        samples: Vec::with_capacity(total_steps / steps_per_sample + 1),
        decisions: Vec::new(),
        commands: Vec::new(),
        events: Vec::new(),
        states: Vec::new(),
        lineage: agents.iter().map(|a| (a.id, a.parent)).collect(),
        status: TrialStatus::Completed,
    };

    for i in 0..=total_steps {
        let t = i as f64 * dt;
        if i % steps_per_sample == 0 {
            let sample_index = i / steps_per_sample;
            let snapshot = PopulationSnapshot::new(t, agents.iter().map(|a| (a.id, a.state)).collect());
            if snapshot.is_empty() {
                record.status = TrialStatus::Failed { time: t, reason: Error::PopulationExtinct.to_string() };
                break;
            }
            let error = snapshot.error_signal(cfg.target_ratio)?;
            if sample_index.is_multiple_of(samples_per_control) && i < total_steps {
                let decision = controller.decide(&snapshot, &error, cfg.timing.actuation_period, &mut controller_rng)?;
                let cmd = scheduler.schedule(decision.input, t, &mut actuation_rng);
                record.commands.push(cmd);
                record.decisions.push(DecisionLogEntry {
                    time: t,
                    e_a: error.e_a,
                    e_b: error.e_b,
                    input: decision.input,
                    cost: decision.cost,
                });
            }
            let u = scheduler.input_at(t);
            let counts = snapshot.counts();
            record.samples.push(TrialSample {
                time: t,
                e_a: error.e_a,
                e_b: error.e_b,
                u_a: u.u_a,
                u_p: u.u_p,
                n: counts.total(),
                n_a: counts.n_a,
                n_b: counts.n_b,
                n_c: counts.n_c,
            });
            if cfg.record_states {
                record
                    .states
                    .extend(snapshot.cells().iter().map(|&(cell_id, state)| StateRow { time: t, cell_id, state }));
            }
        }
        if i == total_steps {
            break;
        }

        let u = scheduler.input_at(t);
        let diverged = agents
            .par_iter_mut()
            .map(|a| match em_step(&a.state, &u, &net, &noise, &mut a.rng) {
                Ok(x) => {
                    a.state = x;
                    false
                }
                Err(_) => true,
            })
            .reduce(|| false, |a, b| a || b);
        let t_next = (i + 1) as f64 * dt;
        if diverged {
            record.status = TrialStatus::Failed {
                time: t_next,
                reason: Error::IntegrationDiverged { time: t_next }.to_string(),
            };
            break;
        }

        if growth && agents.iter().any(|a| a.next_division_time <= t_next) {
            let mut next = Vec::with_capacity(agents.len() + 4);
            for a in agents.drain(..) {
                if a.next_division_time <= t_next {
                    let (d1, d2) = divide(&a, t_next, &mut next_id, &cfg.chamber, seed, &mut chamber_rng);
                    record.events.push(PopulationEvent::Division { time: t_next, parent: a.id, daughters: [d1.id, d2.id] });
                    record.lineage.push((d1.id, Some(a.id)));
                    record.lineage.push((d2.id, Some(a.id)));
                    next.push(d1);
                    next.push(d2);
                } else {
                    next.push(a);
                }
            }
            agents = next;
        }
        if flush {
            for cell in flush_out(&mut agents, cfg.chamber.capacity, &mut chamber_rng) {
                record.events.push(PopulationEvent::FlushOut { time: t_next, cell });
            }
        }
    }
    Ok(record)
}
