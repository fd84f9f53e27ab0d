//! Chemical-Langevin single-cell dynamics integrated with Euler-Maruyama.
//!
//! Each additive term of the deterministic model is one reaction, so the drift
//! `S a(x)` reproduces [`ode_rhs`](crate::model::ode_rhs) exactly and the
//! diffusion `S diag(sqrt(a(x)))` adds one independent Wiener increment per
//! reaction.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::model::{
    clamp_nonneg, production_terms, CellState, Derivative, InducerInput, ToggleSwitchParams,
    STATE_DIM,
};
use crate::population::CellId;

pub const N_REACTIONS: usize = 12;

/// Reaction order: for each of mRNA_LacI, mRNA_TetR, LacI, TetR a production
/// then a degradation; then aTc influx, aTc efflux, IPTG influx, IPTG efflux.
pub const STOICHIOMETRY: [[i8; N_REACTIONS]; STATE_DIM] = [
    [1, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, -1, 0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, -1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, -1, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 1, -1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, -1],
];

/// Index of the first inducer-exchange reaction.
pub const FIRST_EXCHANGE_REACTION: usize = 8;

#[derive(Debug, Clone)]
pub struct ReactionNetwork {
    params: ToggleSwitchParams,
}

pub fn build_reaction_network(params: &ToggleSwitchParams) -> ReactionNetwork {
    ReactionNetwork { params: *params }
}

impl ReactionNetwork {
    pub fn params(&self) -> &ToggleSwitchParams {
        &self.params
    }

    pub fn stoichiometry(&self) -> &'static [[i8; N_REACTIONS]; STATE_DIM] {
        &STOICHIOMETRY
    }

    /// Per-reaction rates (1/min), clamped at zero.
    pub fn propensities(&self, x: &CellState, u: &InducerInput) -> [f64; N_REACTIONS] {
        let p = &self.params;
        let prod = production_terms(x, p);
        let a = [
            prod[0],
            p.gamma_l_m * x.mrna_laci,
            prod[1],
            p.gamma_t_m * x.mrna_tetr,
            prod[2],
            p.gamma_l_p * x.laci,
            prod[3],
            p.gamma_t_p * x.tetr,
            p.k_atc * u.u_a,
            p.k_atc * x.atc,
            p.k_iptg * u.u_p,
            p.k_iptg * x.iptg,
        ];
        a.map(clamp_nonneg)
    }

    /// `S a(x)`.
    pub fn drift(&self, x: &CellState, u: &InducerInput) -> Derivative {
        stoich_apply(&self.propensities(x, u))
    }
}

fn stoich_apply(v: &[f64; N_REACTIONS]) -> Derivative {
    let mut out = [0.0; STATE_DIM];
    for (row, coeffs) in STOICHIOMETRY.iter().enumerate() {
        let mut acc = 0.0;
        for (j, &s) in coeffs.iter().enumerate() {
            match s {
                0 => {}
                1 => acc += v[j],
                -1 => acc -= v[j],
                s => acc += f64::from(s) * v[j],
            }
        }
        out[row] = acc;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Multiplier on the diffusion term; 0 recovers the ODE.
    pub noise_scale: f64,
    /// Euler-Maruyama step (min).
    pub sde_step: f64,
    /// Apply noise to the four inducer-exchange reactions as well. Off by
    /// default: inducer concentrations are not molecule counts, so the
    /// square-root diffusion term has no physical scale there.
    pub inducer_noise: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { seed: 0, noise_scale: 1.0, sde_step: 0.05, inducer_noise: false }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(config_err(format!("noise_scale must be >= 0, got {}", self.noise_scale)));
        }
        if !(self.sde_step > 0.0 && self.sde_step.is_finite()) {
            return Err(config_err(format!("sde_step must be > 0, got {}", self.sde_step)));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step of the chemical Langevin equation.
///
/// Twelve standard normals are drawn on every call regardless of
/// `noise_scale`, so stream positions do not depend on the noise level.
pub fn em_step<R: Rng + ?Sized>(
    state: &CellState,
    input: &InducerInput,
    net: &ReactionNetwork,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<CellState> {
    let dt = cfg.sde_step;
    let a = net.propensities(state, input);
    let drift = stoich_apply(&a);
    let xi: [f64; N_REACTIONS] = std::array::from_fn(|_| rng.sample(StandardNormal));

    let x = state.to_array();
    let mut out = [0.0; STATE_DIM];
    if cfg.noise_scale == 0.0 {
        for i in 0..STATE_DIM {
            out[i] = clamp_nonneg(x[i] + drift[i] * dt);
        }
    } else {
        let sqrt_dt = dt.sqrt();
        let mut kicks = [0.0; N_REACTIONS];
        for j in 0..N_REACTIONS {
            if cfg.inducer_noise || j < FIRST_EXCHANGE_REACTION {
                kicks[j] = a[j].sqrt() * sqrt_dt * xi[j];
            }
        }
        let diffusion = stoich_apply(&kicks);
        for i in 0..STATE_DIM {
            out[i] = clamp_nonneg(x[i] + drift[i] * dt + cfg.noise_scale * diffusion[i]);
        }
    }
    let next = CellState::from_array(out);
    if !next.is_finite() {
        return Err(Error::IntegrationDiverged { time: f64::NAN });
    }
    Ok(next)
}

/// One constant-input piece of a schedule, active on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub start: f64,
    pub end: f64,
    pub input: InducerInput,
}

/// Piecewise-constant input schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSchedule {
    segments: Vec<ScheduleSegment>,
}

impl InputSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(config_err("input schedule has no segments"));
        }
        if segments[0].start != 0.0 {
            return Err(config_err(format!("input schedule starts at {} instead of 0", segments[0].start)));
        }
        for s in &segments {
            if !(s.end > s.start) {
                return Err(config_err(format!("empty schedule segment [{}, {})", s.start, s.end)));
            }
        }
        for w in segments.windows(2) {
            if (w[0].end - w[1].start).abs() > 1e-9 {
                return Err(config_err(format!(
                    "input schedule gap or overlap between {} and {}",
                    w[0].end, w[1].start
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(input: InducerInput, horizon: f64) -> Self {
        Self { segments: vec![ScheduleSegment { start: 0.0, end: horizon.max(f64::MIN_POSITIVE), input }] }
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Input active at time `t`; the last segment is closed on the right.
    pub fn at(&self, t: f64) -> InducerInput {
        self.segments
            .iter()
            .find(|s| t < s.end)
            .unwrap_or_else(|| self.segments.last().expect("non-empty"))
            .input
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub cell_id: CellId,
    pub samples: Vec<(f64, CellState)>,
}

/// Integrates one cell over `[0, horizon]`, logging its state every
/// `sample_interval` minutes (and at t = 0).
#[allow(clippy::too_many_arguments)]
pub fn simulate_cell<R: Rng + ?Sized>(
    cell_id: CellId,
    state: &CellState,
    schedule: &InputSchedule,
    horizon: f64,
    sample_interval: f64,
    net: &ReactionNetwork,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    cfg.validate()?;
    if horizon > 0.0 && schedule.end() + 1e-9 < horizon {
        return Err(config_err(format!(
            "input schedule ends at {} before the horizon {horizon}",
            schedule.end()
        )));
    }
    let dt = cfg.sde_step;
    let steps = (horizon / dt).round() as usize;
    let sample_every = ((sample_interval / dt).round() as usize).max(1);

    let mut x = *state;
    let mut samples = vec![(0.0, x)];
    for i in 0..steps {
        let t = i as f64 * dt;
        x = em_step(&x, &schedule.at(t), net, cfg, rng)
            .map_err(|_| Error::IntegrationDiverged { time: t + dt })?;
        if (i + 1) % sample_every == 0 || i + 1 == steps {
            samples.push(((i + 1) as f64 * dt, x));
        }
    }
    Ok(Trajectory { cell_id, samples })
}

/// Writes trajectories as CSV with columns
/// `time_min,cell_id,mrna_laci,mrna_tetr,laci,tetr,atc,iptg`.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_min", "cell_id", "mrna_laci", "mrna_tetr", "laci", "tetr", "atc", "iptg"])?;
    for tr in trajectories {
        for (t, x) in &tr.samples {
            let mut row = vec![t.to_string(), tr.cell_id.to_string()];
            row.extend(x.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{euler_step, ode_rhs};
    use crate::rng::{stream, StreamKind};
    use proptest::prelude::*;

    fn net() -> ReactionNetwork {
        build_reaction_network(&ToggleSwitchParams::default())
    }

    fn sample_state() -> CellState {
        CellState { mrna_laci: 4.0, mrna_tetr: 5.0, laci: 220.0, tetr: 310.0, atc: 3.0, iptg: 0.05 }
    }

    #[test]
    fn production_column_is_unit() {
        let s = net().stoichiometry();
        let col: Vec<i8> = (0..STATE_DIM).map(|i| s[i][0]).collect();
        assert_eq!(col, vec![1, 0, 0, 0, 0, 0]);
        // Every reaction touches exactly one species.
        #[allow(clippy::needless_range_loop)]
        for j in 0..N_REACTIONS {
            assert_eq!((0..STATE_DIM).filter(|&i| s[i][j] != 0).count(), 1);
        }
    }

    #[test]
    fn loss_propensities_vanish_at_origin() {
        let a = net().propensities(&CellState::default(), &InducerInput::new(50.0, 0.5));
        for j in [1, 3, 5, 7, 9, 11] {
            assert_eq!(a[j], 0.0);
        }
        assert!(a[0] > 0.0 && a[8] > 0.0);
    }

    proptest! {
        #[test]
        fn drift_equals_ode_rhs(
            m in proptest::array::uniform2(0.0f64..200.0),
            prot in proptest::array::uniform2(0.0f64..5000.0),
            ind in (0.0f64..100.0, 0.0f64..1.0),
            u in (0.0f64..100.0, 0.0f64..1.0),
        ) {
            let x = CellState { mrna_laci: m[0], mrna_tetr: m[1], laci: prot[0], tetr: prot[1], atc: ind.0, iptg: ind.1 };
            let u = InducerInput::new(u.0, u.1);
            let p = ToggleSwitchParams::default();
            prop_assert_eq!(net().drift(&x, &u), ode_rhs(&x, &u, &p));
        }
    }

    #[test]
    fn zero_noise_is_explicit_euler() {
        let cfg = NoiseConfig { noise_scale: 0.0, ..Default::default() };
        let u = InducerInput::new(40.0, 0.3);
        let mut rng = stream(1, StreamKind::Cell, 0, 0);
        let x = sample_state();
        let y = em_step(&x, &u, &net(), &cfg, &mut rng).unwrap();
        assert_eq!(y, euler_step(&x, &u, cfg.sde_step, &ToggleSwitchParams::default()));
    }

    #[test]
    fn same_seed_same_step() {
        let cfg = NoiseConfig::default();
        let u = InducerInput::new(40.0, 0.3);
        let a = em_step(&sample_state(), &u, &net(), &cfg, &mut stream(3, StreamKind::Cell, 0, 0)).unwrap();
        let b = em_step(&sample_state(), &u, &net(), &cfg, &mut stream(3, StreamKind::Cell, 0, 0)).unwrap();
        let c = em_step(&sample_state(), &u, &net(), &cfg, &mut stream(4, StreamKind::Cell, 0, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn states_stay_nonnegative() {
        let cfg = NoiseConfig { sde_step: 0.1, ..Default::default() };
        let mut rng = stream(11, StreamKind::Cell, 0, 0);
        let mut x = CellState { mrna_laci: 0.1, mrna_tetr: 0.1, laci: 1.0, tetr: 1.0, atc: 0.0, iptg: 0.0 };
        for _ in 0..5000 {
            x = em_step(&x, &InducerInput::new(0.0, 0.01), &net(), &cfg, &mut rng).unwrap();
            assert!(x.is_nonnegative());
        }
    }

    #[test]
    fn inducer_noise_flag_controls_exchange() {
        let cfg = NoiseConfig::default();
        assert!(!cfg.inducer_noise);
        let p = ToggleSwitchParams::default();
        let u = InducerInput::new(60.0, 0.5);
        let x = sample_state();
        let y = em_step(&x, &u, &net(), &cfg, &mut stream(5, StreamKind::Cell, 0, 0)).unwrap();
        let e = euler_step(&x, &u, cfg.sde_step, &p);
        assert_eq!(y.atc, e.atc);
        assert_eq!(y.iptg, e.iptg);
        assert_ne!(y.laci, e.laci);

        let noisy = NoiseConfig { inducer_noise: true, ..cfg };
        let z = em_step(&x, &u, &net(), &noisy, &mut stream(5, StreamKind::Cell, 0, 0)).unwrap();
        assert_ne!(z.atc, e.atc);
        assert_ne!(z.iptg, e.iptg);
        // Same draws for the gene reactions.
        assert_eq!(z.laci, y.laci);
    }

    #[test]
    fn one_step_horizon_matches_em_step() {
        let cfg = NoiseConfig::default();
        let u = InducerInput::new(10.0, 0.2);
        let sched = InputSchedule::constant(u, 1.0);
        let tr = simulate_cell(0, &sample_state(), &sched, cfg.sde_step, 5.0, &net(), &cfg, &mut stream(2, StreamKind::Cell, 0, 0)).unwrap();
        let direct = em_step(&sample_state(), &u, &net(), &cfg, &mut stream(2, StreamKind::Cell, 0, 0)).unwrap();
        assert_eq!(tr.samples.len(), 2);
        assert_eq!(tr.samples[1].1, direct);
    }

    #[test]
    fn empty_horizon_keeps_initial_state() {
        let cfg = NoiseConfig::default();
        let sched = InputSchedule::constant(InducerInput::default(), 1.0);
        let tr = simulate_cell(0, &sample_state(), &sched, 0.0, 5.0, &net(), &cfg, &mut stream(2, StreamKind::Cell, 0, 0)).unwrap();
        assert_eq!(tr.samples, vec![(0.0, sample_state())]);
    }

    #[test]
    fn schedule_gap_is_rejected() {
        let seg = |start, end| ScheduleSegment { start, end, input: InducerInput::default() };
        assert!(InputSchedule::new(vec![seg(0.0, 10.0), seg(12.0, 20.0)]).is_err());
        assert!(InputSchedule::new(vec![seg(1.0, 10.0)]).is_err());
        let ok = InputSchedule::new(vec![seg(0.0, 10.0), seg(10.0, 20.0)]).unwrap();
        let cfg = NoiseConfig::default();
        let short = simulate_cell(0, &sample_state(), &ok, 30.0, 5.0, &net(), &cfg, &mut stream(0, StreamKind::Cell, 0, 0));
        assert!(matches!(short, Err(Error::Config(_))));
    }

    #[test]
    fn schedule_switches_at_breakpoints() {
        let a = InducerInput::new(60.0, 0.0);
        let b = InducerInput::new(0.0, 0.5);
        let s = InputSchedule::new(vec![
            ScheduleSegment { start: 0.0, end: 15.0, input: a },
            ScheduleSegment { start: 15.0, end: 30.0, input: b },
        ])
        .unwrap();
        assert_eq!(s.at(0.0), a);
        assert_eq!(s.at(14.99), a);
        assert_eq!(s.at(15.0), b);
        assert_eq!(s.at(30.0), b);
    }

    #[test]
    fn independent_cell_streams_are_reproducible() {
        let cfg = NoiseConfig::default();
        let sched = InputSchedule::constant(InducerInput::new(20.0, 0.3), 60.0);
        let run = |cell: u64| {
            let mut rng = stream(99, StreamKind::Cell, cell, 0);
            simulate_cell(cell, &sample_state(), &sched, 60.0, 5.0, &net(), &cfg, &mut rng).unwrap()
        };
        let (a1, a2, b) = (run(1), run(1), run(2));
        assert_eq!(a1.samples, a2.samples);
        assert_ne!(a1.samples, b.samples);
        assert_eq!(a1.samples.len(), 13);
    }

    #[test]
    fn trajectory_csv_layout() {
        let tr = Trajectory { cell_id: 3, samples: vec![(0.0, sample_state())] };
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &[tr]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time_min,cell_id,mrna_laci,mrna_tetr,laci,tetr,atc,iptg");
        assert_eq!(lines.next().unwrap(), "0,3,4,5,220,310,3,0.05");
    }
}
