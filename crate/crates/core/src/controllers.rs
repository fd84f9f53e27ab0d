//! Feedback laws for the ratiometric problem.
//!
//! * Bang-Bang on a T-junction: full aTc or full IPTG.
//! * PI on a Dial-a-Wave mixer, with error-dependent saturation of `u_a` and
//!   conditional integration as anti-windup.
//! * MPC on a Dial-a-Wave mixer: a mutation-free genetic algorithm searches
//!   piecewise-constant `u_a` sequences, each scored by predicting a
//!   representative subset of cells with the deterministic model.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actuation::{daw_constrain, tjunction_select, ActuatorKind, Amplitudes, Inducer};
use crate::error::{config_err, Error, Result};
use crate::model::{rk4_step, CellState, InducerInput, ToggleSwitchParams};
use crate::population::{classify, errors, CellClass, ClassCounts, ErrorSignal, PopulationSnapshot};
use crate::rng::SimRng;

/// Output of one controller update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub input: InducerInput,
    /// Predicted cost of the chosen sequence (MPC only).
    pub cost: Option<f64>,
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;

    fn actuator(&self) -> ActuatorKind;

    /// Computes the next command. `dt` is the time since the previous update.
    fn decide(
        &mut self,
        snapshot: &PopulationSnapshot,
        error: &ErrorSignal,
        dt: f64,
        rng: &mut SimRng,
    ) -> Result<ControlDecision>;
}

// ---------------------------------------------------------------------------
// Bang-Bang

pub fn bangbang_step(e: &ErrorSignal, amps: Amplitudes) -> InducerInput {
    let which = if e.e_b.abs() >= e.e_a.abs() {
        if e.e_b <= 0.0 {
            Inducer::Iptg
        } else {
            Inducer::Atc
        }
    } else if e.e_a <= 0.0 {
        Inducer::Atc
    } else {
        Inducer::Iptg
    };
    tjunction_select(which, amps)
}

#[derive(Debug, Clone)]
pub struct BangBang {
    pub amps: Amplitudes,
}

impl Controller for BangBang {
    fn name(&self) -> &'static str {
        "bangbang"
    }

    fn actuator(&self) -> ActuatorKind {
        ActuatorKind::TJunction
    }

    fn decide(&mut self, _: &PopulationSnapshot, e: &ErrorSignal, _: f64, _: &mut SimRng) -> Result<ControlDecision> {
        Ok(ControlDecision { input: bangbang_step(e, self.amps), cost: None })
    }
}

// ---------------------------------------------------------------------------
// PI

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiGains {
    pub k_p_a: f64,
    pub k_i_a: f64,
    pub k_p_p: f64,
    pub k_i_p: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self { k_p_a: 66.67, k_i_a: 1.2, k_p_p: 2.25, k_i_p: 0.006 }
    }
}

impl PiGains {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("k_p_a", self.k_p_a), ("k_i_a", self.k_i_a), ("k_p_p", self.k_p_p), ("k_i_p", self.k_i_p)] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(config_err(format!("PI gain {name} must be >= 0, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PiController {
    pub gains: PiGains,
    pub amps: Amplitudes,
    /// Running integral of e_B (error min).
    pub integral_b: f64,
    /// Running integral of e_A (error min).
    pub integral_a: f64,
}

impl PiController {
    pub fn new(gains: PiGains, amps: Amplitudes) -> Self {
        Self { gains, amps, integral_b: 0.0, integral_a: 0.0 }
    }

    /// Unsaturated control law evaluated with the current integrals.
    pub fn raw_output(&self, e: &ErrorSignal) -> f64 {
        let g = &self.gains;
        g.k_p_a * e.e_b + g.k_i_a * self.integral_b - (g.k_p_p * e.e_a + g.k_i_p * self.integral_a)
    }

    /// Upper bound on `u_a`: half the reservoir when `|e_B| < |e_A|`.
    pub fn upper_limit(&self, e: &ErrorSignal) -> f64 {
        if e.e_b.abs() < e.e_a.abs() {
            0.5 * self.amps.u_a
        } else {
            self.amps.u_a
        }
    }

    /// One PI update. The output uses the integrals accumulated so far; the
    /// integrals are then advanced by `e dt` unless the output is saturated and
    /// integrating would push it further into saturation.
    pub fn step(&mut self, e: &ErrorSignal, dt: f64) -> InducerInput {
        let raw = self.raw_output(e);
        let upper = self.upper_limit(e);
        let u_a = raw.clamp(0.0, upper);
        let g = &self.gains;
        let push = (g.k_i_a * e.e_b - g.k_i_p * e.e_a) * dt;
        let winding = (raw > upper && push > 0.0) || (raw < 0.0 && push < 0.0);
        if !winding {
            self.integral_b += e.e_b * dt;
            self.integral_a += e.e_a * dt;
        }
        daw_constrain(u_a, self.amps)
    }
}

impl Controller for PiController {
    fn name(&self) -> &'static str {
        "pi"
    }

    fn actuator(&self) -> ActuatorKind {
        ActuatorKind::DialAWave
    }

    fn decide(&mut self, _: &PopulationSnapshot, e: &ErrorSignal, dt: f64, _: &mut SimRng) -> Result<ControlDecision> {
        Ok(ControlDecision { input: self.step(e, dt), cost: None })
    }
}

// ---------------------------------------------------------------------------
// MPC

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon T_p (min).
    pub prediction_horizon: f64,
    /// Control interval T_c (min).
    pub control_interval: f64,
    /// Weight of |e_B| in the running cost.
    pub alpha: f64,
    pub subset_size: usize,
    /// Chromosome length N_p. Only the first ceil(T_p / T_c) genes are scored.
    pub ga_sequence_len: usize,
    /// Generations M_max.
    pub ga_generations: usize,
    pub ga_population_size: usize,
    /// Number of evenly spaced `u_a` levels a gene may take, endpoints included.
    pub ga_levels: usize,
    pub elite_fraction: f64,
    /// RK4 step of the prediction model (min).
    pub prediction_step: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            prediction_horizon: 75.0,
            control_interval: 15.0,
            alpha: 0.6,
            subset_size: 10,
            ga_sequence_len: 20,
            ga_generations: 10,
            ga_population_size: 20,
            ga_levels: 13,
            elite_fraction: 0.2,
            prediction_step: 0.5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_interval > 0.0 && self.control_interval <= self.prediction_horizon) {
            return Err(config_err("MPC requires 0 < T_c <= T_p"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.subset_size == 0 || self.ga_population_size == 0 {
            return Err(config_err("subset_size and ga_population_size must be >= 1"));
        }
        if !(2..=256).contains(&self.ga_levels) {
            return Err(config_err("ga_levels must lie in [2, 256]"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(config_err("elite_fraction must lie in (0, 1]"));
        }
        if self.ga_sequence_len < self.active_genes() {
            return Err(config_err(format!(
                "ga_sequence_len {} shorter than the {} intervals in the horizon",
                self.ga_sequence_len,
                self.active_genes()
            )));
        }
        self.steps_per_interval()?;
        Ok(())
    }

    /// Number of control intervals covering the prediction horizon.
    pub fn active_genes(&self) -> usize {
        (self.prediction_horizon / self.control_interval - 1e-9).ceil() as usize
    }

    fn steps_per_interval(&self) -> Result<usize> {
        let h = self.prediction_step;
        let ratio = self.control_interval / h;
        if !(h > 0.0 && ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(config_err(format!(
                "prediction_step {h} must divide the control interval {}",
                self.control_interval
            )));
        }
        Ok(ratio.round() as usize)
    }

    fn total_steps(&self) -> usize {
        (self.prediction_horizon / self.prediction_step).round() as usize
    }

    pub fn levels(&self, amps: Amplitudes) -> Vec<f64> {
        let n = self.ga_levels;
        (0..n).map(|i| amps.u_a * i as f64 / (n - 1) as f64).collect()
    }
}

/// Stratified sample of `k` cells whose A/B/C proportions track the whole
/// population. Stratum sizes follow the largest-remainder rule, so each
/// subset ratio is within `1/k` of the population ratio.
pub fn select_representative_subset<R: Rng + ?Sized>(
    snapshot: &PopulationSnapshot,
    k: usize,
    rng: &mut R,
) -> Vec<CellState> {
    let n = snapshot.len();
    if k >= n {
        return snapshot.cells().iter().map(|(_, c)| *c).collect();
    }
    let counts = snapshot.counts();
    let strata = [(CellClass::A, counts.n_a), (CellClass::B, counts.n_b), (CellClass::C, counts.n_c)];
    let quotas: Vec<f64> = strata.iter().map(|&(_, m)| k as f64 * m as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // Ties broken by stratum order A, B, C.
    order.sort_by(|&i, &j| (quotas[j] - quotas[j].floor()).total_cmp(&(quotas[i] - quotas[i].floor())));
    let mut remaining = k - alloc.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if alloc[i] < strata[i].1 {
            alloc[i] += 1;
            remaining -= 1;
        }
    }

    let mut out = Vec::with_capacity(k);
    for (s, &(class, _)) in strata.iter().enumerate() {
        let members: Vec<CellState> =
            snapshot.cells().iter().map(|(_, c)| *c).filter(|c| classify(c) == class).collect();
        out.extend(members.choose_multiple(rng, alloc[s]).copied());
    }
    out
}

fn running_cost(counts: ClassCounts, target: f64, alpha: f64) -> f64 {
    let n = counts.total() as f64;
    let e = errors(counts.n_a as f64 / n, counts.n_b as f64 / n, target, 0.0);
    alpha * e.e_b.abs() + (1.0 - alpha) * e.e_a.abs()
}

#[allow(clippy::too_many_arguments)]
/// Advances `cells` over steps `[from, to)` under a constant input, returning
/// the accumulated left-rectangle cost.
fn predict_interval(
    cells: &mut [CellState],
    input: &InducerInput,
    steps: usize,
    h: f64,
    target: f64,
    alpha: f64,
    params: &ToggleSwitchParams,
    mut acc: f64,
) -> f64 {
    for _ in 0..steps {
        acc += h * running_cost(ClassCounts::of(cells.iter()), target, alpha);
        for c in cells.iter_mut() {
            *c = rk4_step(c, input, h, params);
        }
    }
    acc
}

fn interval_steps(cfg: &MpcConfig) -> Result<Vec<usize>> {
    let spi = cfg.steps_per_interval()?;
    let total = cfg.total_steps();
    Ok((0..cfg.active_genes()).map(|k| spi.min(total.saturating_sub(k * spi))).collect())
}

/// Predicted cost of applying the DAW levels `sequence` (one `u_a` per
/// control interval) to `subset`:
/// `sum over steps of h * (alpha |e_B| + (1 - alpha) |e_A|)` up to T_p.
pub fn mpc_cost(
    subset: &[CellState],
    sequence: &[f64],
    cfg: &MpcConfig,
    target: f64,
    amps: Amplitudes,
    params: &ToggleSwitchParams,
) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::PopulationExtinct);
    }
    let steps = interval_steps(cfg)?;
    if sequence.len() < steps.len() {
        return Err(config_err(format!(
            "input sequence has {} intervals, horizon needs {}",
            sequence.len(),
            steps.len()
        )));
    }
    let mut cells = subset.to_vec();
    let mut acc = 0.0;
    for (k, &n) in steps.iter().enumerate() {
        let u = daw_constrain(sequence[k], amps);
        acc = predict_interval(&mut cells, &u, n, cfg.prediction_step, target, cfg.alpha, params, acc);
    }
    Ok(acc)
}

/// Scores gene sequences, reusing predictions of shared prefixes. Results are
/// bit-identical to [`mpc_cost`] on the same levels.
pub struct PrefixCachedCost<'a> {
    subset: &'a [CellState],
    levels: Vec<f64>,
    cfg: MpcConfig,
    target: f64,
    amps: Amplitudes,
    params: &'a ToggleSwitchParams,
    steps: Vec<usize>,
    cache: HashMap<Vec<u8>, (Vec<CellState>, f64)>,
}

impl<'a> PrefixCachedCost<'a> {
    pub fn new(
        subset: &'a [CellState],
        levels: Vec<f64>,
        cfg: &MpcConfig,
        target: f64,
        amps: Amplitudes,
        params: &'a ToggleSwitchParams,
    ) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::PopulationExtinct);
        }
        Ok(Self { subset, levels, cfg: *cfg, target, amps, params, steps: interval_steps(cfg)?, cache: HashMap::new() })
    }

    pub fn cost(&mut self, genes: &[u8]) -> Result<f64> {
        let n = self.steps.len();
        if genes.len() < n {
            return Err(config_err("chromosome shorter than the prediction horizon"));
        }
        let mut start = n;
        while start > 0 && !self.cache.contains_key(&genes[..start]) {
            start -= 1;
        }
        let (mut cells, mut acc) = if start == 0 {
            (self.subset.to_vec(), 0.0)
        } else {
            self.cache[&genes[..start]].clone()
        };
        for k in start..n {
            let u = daw_constrain(self.levels[genes[k] as usize], self.amps);
            acc = predict_interval(
                &mut cells,
                &u,
                self.steps[k],
                self.cfg.prediction_step,
                self.target,
                self.cfg.alpha,
                self.params,
                acc,
            );
            self.cache.insert(genes[..=k].to_vec(), (cells.clone(), acc));
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaSettings {
    pub population_size: usize,
    pub generations: usize,
    pub elite_fraction: f64,
    pub sequence_len: usize,
    /// Leading genes that influence the cost; crossover cuts fall inside them.
    pub active_len: usize,
    pub n_levels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Vec<u8>,
    pub best_cost: f64,
    pub initial_best_cost: f64,
    pub evaluations: usize,
}

/// Genetic search without mutation: uniform random initialization, elite
/// selection, one-point crossover between elites.
pub fn genetic_search<R, F>(settings: &GaSettings, rng: &mut R, mut eval: F) -> Result<GaOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&[u8]) -> Result<f64>,
{
    let p = settings.population_size.max(1);
    let len = settings.sequence_len.max(settings.active_len).max(1);
    let mut evaluations = 0;
    let mut population: Vec<(Vec<u8>, f64)> = Vec::with_capacity(p);
    for _ in 0..p {
        let genes: Vec<u8> = (0..len).map(|_| rng.gen_range(0..settings.n_levels) as u8).collect();
        let cost = eval(&genes)?;
        evaluations += 1;
        population.push((genes, cost));
    }
    population.sort_by(|a, b| a.1.total_cmp(&b.1));
    let initial_best_cost = population[0].1;

    let n_elite = ((settings.elite_fraction * p as f64).round() as usize).clamp(1, p);
    for _ in 0..settings.generations {
        population.truncate(n_elite);
        while population.len() < p {
            let a = rng.gen_range(0..n_elite);
            let b = rng.gen_range(0..n_elite);
            let cut = if settings.active_len > 1 { rng.gen_range(1..settings.active_len) } else { 0 };
            let mut child = population[a].0.clone();
            child[cut..].copy_from_slice(&population[b].0[cut..]);
            let cost = eval(&child)?;
            evaluations += 1;
            population.push((child, cost));
        }
        population.sort_by(|a, b| a.1.total_cmp(&b.1));
    }
    let (best, best_cost) = population.swap_remove(0);
    Ok(GaOutcome { best, best_cost, initial_best_cost, evaluations })
}

#[derive(Debug, Clone)]
pub struct MpcController {
    pub cfg: MpcConfig,
    pub amps: Amplitudes,
    pub params: ToggleSwitchParams,
    pub target: f64,
}

/// One MPC update: stratified subset, GA search over DAW sequences, first move.
/// Returns the command and the predicted cost of the chosen sequence.
pub fn mpc_step(
    snapshot: &PopulationSnapshot,
    cfg: &MpcConfig,
    target: f64,
    rng: &mut SimRng,
    amps: Amplitudes,
    params: &ToggleSwitchParams,
) -> Result<ControlDecision> {
    if snapshot.is_empty() {
        log::warn!("MPC subset is empty at t = {}; falling back to bang-bang", snapshot.time());
        let e = errors(0.0, 0.0, target, snapshot.time());
        return Ok(ControlDecision { input: bangbang_step(&e, amps), cost: None });
    }
    let subset = select_representative_subset(snapshot, cfg.subset_size, rng);
    let levels = cfg.levels(amps);
    let mut scorer = PrefixCachedCost::new(&subset, levels.clone(), cfg, target, amps, params)?;
    let settings = GaSettings {
        population_size: cfg.ga_population_size,
        generations: cfg.ga_generations,
        elite_fraction: cfg.elite_fraction,
        sequence_len: cfg.ga_sequence_len,
        active_len: cfg.active_genes(),
        n_levels: cfg.ga_levels,
    };
    let outcome = genetic_search(&settings, rng, |g| scorer.cost(g))?;
    Ok(ControlDecision {
        input: daw_constrain(levels[outcome.best[0] as usize], amps),
        cost: Some(outcome.best_cost),
    })
}

impl Controller for MpcController {
    fn name(&self) -> &'static str {
        "mpc"
    }

    fn actuator(&self) -> ActuatorKind {
        ActuatorKind::DialAWave
    }

    fn decide(&mut self, snapshot: &PopulationSnapshot, _: &ErrorSignal, _: f64, rng: &mut SimRng) -> Result<ControlDecision> {
        mpc_step(snapshot, &self.cfg, self.target, rng, self.amps, &self.params)
    }
}

// ---------------------------------------------------------------------------
// Configuration and construction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    BangBang,
    Pi,
    Mpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::BangBang, ControllerKind::Pi, ControllerKind::Mpc];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::BangBang => "bangbang",
            ControllerKind::Pi => "pi",
            ControllerKind::Mpc => "mpc",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bangbang" | "bang-bang" | "bb" => Ok(ControllerKind::BangBang),
            "pi" => Ok(ControllerKind::Pi),
            "mpc" => Ok(ControllerKind::Mpc),
            other => Err(config_err(format!("unknown controller '{other}'"))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSettings {
    pub bangbang_amplitudes: Amplitudes,
    pub pi_amplitudes: Amplitudes,
    pub pi_gains: PiGains,
    pub mpc_amplitudes: Amplitudes,
    pub mpc: MpcConfig,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            bangbang_amplitudes: Amplitudes::new(60.0, 0.5),
            pi_amplitudes: Amplitudes::new(100.0, 1.0),
            pi_gains: PiGains::default(),
            mpc_amplitudes: Amplitudes::new(60.0, 0.5),
            mpc: MpcConfig::default(),
        }
    }
}

impl ControllerSettings {
    pub fn validate(&self) -> Result<()> {
        self.bangbang_amplitudes.validate()?;
        self.pi_amplitudes.validate()?;
        self.mpc_amplitudes.validate()?;
        self.pi_gains.validate()?;
        self.mpc.validate()
    }

    pub fn build(&self, kind: ControllerKind, params: &ToggleSwitchParams, target: f64) -> Box<dyn Controller> {
        match kind {
            ControllerKind::BangBang => Box::new(BangBang { amps: self.bangbang_amplitudes }),
            ControllerKind::Pi => Box::new(PiController::new(self.pi_gains, self.pi_amplitudes)),
            ControllerKind::Mpc => Box::new(MpcController {
                cfg: self.mpc,
                amps: self.mpc_amplitudes,
                params: *params,
                target,
            }),
        }
    }
}

/// One logged controller update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub time: f64,
    pub e_a: f64,
    pub e_b: f64,
    pub input: InducerInput,
    pub cost: Option<f64>,
}

/// CSV columns `time_min,controller,e_A,e_B,u_a,u_p,cost_if_mpc`.
pub fn write_decisions_csv<W: Write>(out: W, controller: &str, log: &[DecisionLogEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_min", "controller", "e_A", "e_B", "u_a", "u_p", "cost_if_mpc"])?;
    for d in log {
        w.write_record([
            d.time.to_string(),
            controller.to_string(),
            d.e_a.to_string(),
            d.e_b.to_string(),
            d.input.u_a.to_string(),
            d.input.u_p.to_string(),
            d.cost.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::CellId;
    use crate::rng::{stream, StreamKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    const BB: Amplitudes = Amplitudes::new(60.0, 0.5);
    const DAW: Amplitudes = Amplitudes::new(100.0, 1.0);

    fn e(e_a: f64, e_b: f64) -> ErrorSignal {
        ErrorSignal { e_a, e_b, time: 0.0 }
    }

    fn a_cell() -> CellState {
        CellState { mrna_laci: 2.2, mrna_tetr: 38.0, laci: 120.0, tetr: 1150.0, atc: 0.0, iptg: 0.0 }
    }

    fn b_cell() -> CellState {
        CellState { mrna_laci: 95.0, mrna_tetr: 2.4, laci: 3800.0, tetr: 70.0, atc: 0.0, iptg: 0.0 }
    }

    fn c_cell() -> CellState {
        CellState { mrna_laci: 5.0, mrna_tetr: 5.0, laci: 200.0, tetr: 250.0, atc: 0.0, iptg: 0.0 }
    }

    fn rng(seed: u64) -> SimRng {
        stream(seed, StreamKind::Controller, 0, 0)
    }

    #[test]
    fn bangbang_cases() {
        assert_eq!(bangbang_step(&e(-0.4, 0.4), BB), InducerInput::new(60.0, 0.0));
        assert_eq!(bangbang_step(&e(0.3, -0.1), BB), InducerInput::new(0.0, 0.5));
        assert_eq!(bangbang_step(&e(0.0, 0.0), BB), InducerInput::new(0.0, 0.5));
        assert_eq!(bangbang_step(&e(-0.3, 0.1), BB), InducerInput::new(60.0, 0.0));
        assert_eq!(bangbang_step(&e(0.1, -0.3), BB), InducerInput::new(0.0, 0.5));
    }

    proptest! {
        #[test]
        fn bangbang_has_two_outputs(ea in -1.0f64..1.0, eb in -1.0f64..1.0) {
            let u = bangbang_step(&e(ea, eb), BB);
            prop_assert!(u == InducerInput::new(60.0, 0.0) || u == InducerInput::new(0.0, 0.5));
        }

        #[test]
        fn pi_respects_bounds(errs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..60)) {
            let mut pi = PiController::new(PiGains::default(), DAW);
            for (ea, eb) in errs {
                let u = pi.step(&e(ea, eb), 15.0);
                prop_assert!(u.u_a >= 0.0 && u.u_a <= 100.0 && u.u_p >= 0.0 && u.u_p <= 1.0);
                prop_assert!((u.u_a / 100.0 + u.u_p - 1.0).abs() < 1e-12);
                if eb.abs() < ea.abs() {
                    prop_assert!(u.u_a <= 50.0);
                }
                prop_assert!(pi.integral_a.is_finite() && pi.integral_b.is_finite());
            }
        }

        #[test]
        fn zero_gain_pi_is_constant(errs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30)) {
            let gains = PiGains { k_p_a: 0.0, k_i_a: 0.0, k_p_p: 0.0, k_i_p: 0.0 };
            let mut pi = PiController::new(gains, DAW);
            for (ea, eb) in errs {
                prop_assert_eq!(pi.step(&e(ea, eb), 15.0), InducerInput::new(0.0, 1.0));
            }
        }
    }

    #[test]
    fn pi_zero_error() {
        let mut pi = PiController::new(PiGains::default(), DAW);
        assert_eq!(pi.step(&e(0.0, 0.0), 15.0), InducerInput::new(0.0, 1.0));
    }

    #[test]
    fn pi_hand_evaluated_step() {
        let mut pi = PiController::new(PiGains::default(), DAW);
        let u = pi.step(&e(-0.4, 0.4), 15.0);
        assert_relative_eq!(u.u_a, 27.568, epsilon = 1e-10);
        assert_relative_eq!(u.u_p, 0.72432, epsilon = 1e-12);
        assert_relative_eq!(pi.integral_b, 6.0, epsilon = 1e-12);
        assert_relative_eq!(pi.integral_a, -6.0, epsilon = 1e-12);
    }

    #[test]
    fn pi_anti_windup_freezes_integrators() {
        let mut pi = PiController::new(PiGains::default(), DAW);
        let err = e(-1.0, 1.0);
        let mut frozen = None;
        for _ in 0..20 {
            let u = pi.step(&err, 15.0);
            if u.u_a == 100.0 {
                let now = (pi.integral_b, pi.integral_a);
                if let Some(prev) = frozen {
                    assert_eq!(prev, now);
                }
                frozen = Some(now);
            }
        }
        assert!(frozen.is_some());
        // Resumes integrating once the output leaves saturation.
        let before = pi.integral_b;
        let u = pi.step(&e(0.0, -0.1), 15.0);
        assert!(u.u_a > 0.0 && u.u_a < 100.0);
        assert!(pi.integral_b < before);
    }

    fn snapshot(cells: Vec<CellState>) -> PopulationSnapshot {
        PopulationSnapshot::new(0.0, cells.into_iter().enumerate().map(|(i, c)| (i as CellId, c)).collect())
    }

    #[test]
    fn subset_exact_stratification() {
        let mut cells = vec![a_cell(); 12];
        cells.extend(vec![b_cell(); 18]);
        let snap = snapshot(cells);
        let sub = select_representative_subset(&snap, 10, &mut rng(1));
        let c = ClassCounts::of(sub.iter());
        assert_eq!((c.n_a, c.n_b, c.n_c), (4, 6, 0));
    }

    #[test]
    fn subset_of_everything() {
        let snap = snapshot(vec![a_cell(), b_cell(), c_cell(), b_cell()]);
        let sub = select_representative_subset(&snap, 4, &mut rng(1));
        assert_eq!(ClassCounts::of(sub.iter()), snap.counts());
        let sub = select_representative_subset(&snap, 9, &mut rng(1));
        assert_eq!(sub.len(), 4);
    }

    #[test]
    fn subset_ratio_error_bounded_over_random_populations() {
        let mut r = rng(77);
        for _ in 0..1000 {
            let n = r.gen_range(1..=60);
            let cells: Vec<CellState> = (0..n)
                .map(|_| match r.gen_range(0..3) {
                    0 => a_cell(),
                    1 => b_cell(),
                    _ => c_cell(),
                })
                .collect();
            let snap = snapshot(cells);
            let k = r.gen_range(1..=n);
            let sub = select_representative_subset(&snap, k, &mut r);
            assert_eq!(sub.len(), k);
            let (pa, pb) = snap.ratios().unwrap();
            let (sa, sb) = ClassCounts::of(sub.iter()).ratios().unwrap();
            let tol = 1.0 / k as f64 + 1e-12;
            assert!((pa - sa).abs() <= tol && (pb - sb).abs() <= tol, "n={n} k={k}");
        }
    }

    fn short_cfg(horizon: f64) -> MpcConfig {
        MpcConfig { prediction_horizon: horizon, control_interval: 15.0, ga_sequence_len: 5, ..Default::default() }
    }

    #[test]
    fn cost_zero_at_target() {
        // One deep A cell and one deep B cell with no input stay put; r = 0.5.
        let cfg = short_cfg(45.0);
        let amps = Amplitudes::new(60.0, 0.5);
        let p = ToggleSwitchParams::default();
        // Hold at u_a = 30 (u_p = 0.25): both cells remain in their basins.
        let c = mpc_cost(&[a_cell(), b_cell()], &[30.0; 3], &cfg, 0.5, amps, &p).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn cost_one_step_hand_integration() {
        // Both cells stay in A over 15 min: r_A = 1, r_B = 0 throughout.
        let cfg = MpcConfig { alpha: 0.6, ..short_cfg(15.0) };
        let amps = Amplitudes::new(60.0, 0.5);
        let p = ToggleSwitchParams::default();
        let c = mpc_cost(&[a_cell(), a_cell()], &[0.0], &cfg, 0.6, amps, &p).unwrap();
        // e_B = 0.6, e_A = -0.6; integrand 0.6 * 0.6 + 0.4 * 0.6 = 0.6 over 15 min.
        assert_relative_eq!(c, 9.0, epsilon = 1e-9);

        // One A cell and one C cell that stays C: r_A = 0.5, r_B = 0.
        let c = mpc_cost(&[a_cell(), c_cell()], &[0.0], &cfg, 0.6, amps, &p).unwrap();
        // e_B = 0.6, e_A = -0.1; integrand 0.6 * 0.6 + 0.4 * 0.1 = 0.4.
        assert_relative_eq!(c, 15.0 * 0.4, epsilon = 1e-9);
    }

    #[test]
    fn cost_alpha_weights() {
        let amps = Amplitudes::new(60.0, 0.5);
        let p = ToggleSwitchParams::default();
        let cells = [a_cell(), a_cell(), b_cell()];
        // r_A = 2/3, r_B = 1/3, target 0.6: e_B = 0.2667, e_A = -0.2667
        let only_b = MpcConfig { alpha: 1.0, ..short_cfg(15.0) };
        let c = mpc_cost(&cells, &[0.0], &only_b, 0.6, amps, &p).unwrap();
        assert_relative_eq!(c, 15.0 * (0.6 - 1.0 / 3.0), epsilon = 1e-9);
    }

    #[test]
    fn cost_rejects_short_sequence() {
        let err = mpc_cost(&[a_cell()], &[0.0, 0.0], &short_cfg(75.0), 0.6, BB, &ToggleSwitchParams::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn cost_monotone_in_horizon() {
        let amps = Amplitudes::new(60.0, 0.5);
        let p = ToggleSwitchParams::default();
        let cells = [a_cell(), c_cell(), b_cell()];
        let seq = [10.0, 50.0, 20.0, 0.0, 60.0, 30.0];
        let mut last = 0.0;
        for k in 1..=6 {
            let c = mpc_cost(&cells, &seq, &short_cfg(15.0 * k as f64), 0.6, amps, &p).unwrap();
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn cached_cost_matches_direct_cost() {
        let amps = Amplitudes::new(60.0, 0.5);
        let p = ToggleSwitchParams::default();
        let cfg = MpcConfig { ga_levels: 5, ..Default::default() };
        let cells = [a_cell(), c_cell(), b_cell(), c_cell()];
        let levels = cfg.levels(amps);
        let mut cached = PrefixCachedCost::new(&cells, levels.clone(), &cfg, 0.6, amps, &p).unwrap();
        let mut r = rng(4);
        for _ in 0..40 {
            let genes: Vec<u8> = (0..cfg.ga_sequence_len).map(|_| r.gen_range(0..3) as u8).collect();
            let seq: Vec<f64> = genes.iter().map(|&g| levels[g as usize]).collect();
            assert_eq!(cached.cost(&genes).unwrap(), mpc_cost(&cells, &seq, &cfg, 0.6, amps, &p).unwrap());
        }
    }

    #[test]
    fn ga_degenerate_single_candidate() {
        let settings = GaSettings { population_size: 1, generations: 0, elite_fraction: 0.2, sequence_len: 5, active_len: 5, n_levels: 13 };
        let out = genetic_search(&settings, &mut rng(3), |_| Ok(1.0)).unwrap();
        let mut r = rng(3);
        let expected: Vec<u8> = (0..5).map(|_| r.gen_range(0..13usize) as u8).collect();
        assert_eq!(out.best, expected);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn ga_elitism() {
        let settings = GaSettings { population_size: 20, generations: 10, elite_fraction: 0.2, sequence_len: 20, active_len: 5, n_levels: 13 };
        for seed in 0..20 {
            let out = genetic_search(&settings, &mut rng(seed), |g| {
                Ok(g[..5].iter().enumerate().map(|(i, &x)| (x as f64 - i as f64).powi(2)).sum())
            })
            .unwrap();
            assert!(out.best_cost <= out.initial_best_cost);
        }
    }

    #[test]
    fn mpc_step_is_deterministic_and_bounded() {
        let mut cells = vec![a_cell(); 5];
        cells.extend(vec![c_cell(); 10]);
        cells.extend(vec![b_cell(); 3]);
        let snap = snapshot(cells);
        let cfg = MpcConfig { ga_generations: 2, ga_population_size: 6, ..Default::default() };
        let p = ToggleSwitchParams::default();
        let a = mpc_step(&snap, &cfg, 0.6, &mut rng(9), BB, &p).unwrap();
        let b = mpc_step(&snap, &cfg, 0.6, &mut rng(9), BB, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.input.u_a >= 0.0 && a.input.u_a <= 60.0);
        assert!((a.input.u_a / 60.0 + a.input.u_p / 0.5 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mpc_extinct_falls_back_to_bangbang() {
        let snap = snapshot(vec![]);
        let d = mpc_step(&snap, &MpcConfig::default(), 0.6, &mut rng(0), BB, &ToggleSwitchParams::default()).unwrap();
        assert_eq!(d.input, InducerInput::new(60.0, 0.0));
        assert_eq!(d.cost, None);
    }

    #[test]
    fn mpc_config_checks() {
        MpcConfig::default().validate().unwrap();
        assert_eq!(MpcConfig::default().active_genes(), 5);
        assert!(MpcConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(MpcConfig { control_interval: 90.0, ..Default::default() }.validate().is_err());
        assert!(MpcConfig { prediction_step: 0.7, ..Default::default() }.validate().is_err());
        assert!(MpcConfig { ga_sequence_len: 3, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn controller_kind_parsing() {
        assert_eq!("bangbang".parse::<ControllerKind>().unwrap(), ControllerKind::BangBang);
        assert_eq!("PI".parse::<ControllerKind>().unwrap(), ControllerKind::Pi);
        assert!("lqr".parse::<ControllerKind>().is_err());
    }
}
