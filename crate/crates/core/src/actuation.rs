//! Microfluidic actuation: input-class constraints of the two actuator types,
//! the sampling/actuation timing contract, and delayed application of commands.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::model::InducerInput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConstraints {
    /// Measurement period T_s (min).
    pub sampling_period: f64,
    /// Minimum spacing between control updates T_c (min).
    pub actuation_period: f64,
    /// Actuation delay bounds (s).
    pub delay_min: f64,
    pub delay_max: f64,
    /// Experiment length cap (min).
    pub max_experiment: f64,
}

impl Default for TimingConstraints {
    fn default() -> Self {
        Self {
            sampling_period: 5.0,
            actuation_period: 15.0,
            delay_min: 20.0,
            delay_max: 40.0,
            max_experiment: 1440.0,
        }
    }
}

impl TimingConstraints {
    pub fn without_delay(self) -> Self {
        Self { delay_min: 0.0, delay_max: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_period > 0.0) {
            return Err(config_err("sampling_period must be > 0"));
        }
        let ratio = self.actuation_period / self.sampling_period;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(config_err(format!(
                "actuation_period {} is not an integer multiple of sampling_period {}",
                self.actuation_period, self.sampling_period
            )));
        }
        if !(0.0 <= self.delay_min && self.delay_min <= self.delay_max) {
            return Err(config_err("delay bounds must satisfy 0 <= delay_min <= delay_max"));
        }
        if self.delay_max >= self.sampling_period * 60.0 {
            return Err(config_err("delay_max must be shorter than one sampling period"));
        }
        if !(self.max_experiment > 0.0) {
            return Err(config_err("max_experiment must be > 0"));
        }
        Ok(())
    }

    /// Control updates happen every this many measurements.
    pub fn samples_per_actuation(&self) -> usize {
        (self.actuation_period / self.sampling_period).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorKind {
    TJunction,
    DialAWave,
}

/// Reservoir amplitudes `U_a`, `U_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Amplitudes {
    pub u_a: f64,
    pub u_p: f64,
}

impl Amplitudes {
    pub const fn new(u_a: f64, u_p: f64) -> Self {
        Self { u_a, u_p }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_a > 0.0 && self.u_a <= InducerInput::MAX_ATC) {
            return Err(config_err(format!("U_a must lie in (0, 100], got {}", self.u_a)));
        }
        if !(self.u_p > 0.0 && self.u_p <= InducerInput::MAX_IPTG) {
            return Err(config_err(format!("U_p must lie in (0, 1], got {}", self.u_p)));
        }
        Ok(())
    }
}

/// Dial-a-Wave mixing: `u_p = (1 - u_a / U_a) U_p`.
pub fn daw_constrain(u_a: f64, amps: Amplitudes) -> InducerInput {
    let clamped = if u_a.is_nan() { 0.0 } else { u_a.clamp(0.0, amps.u_a) };
    if clamped != u_a {
        log::warn!("DAW level {u_a} outside [0, {}], clamped to {clamped}", amps.u_a);
    }
    InducerInput::new(clamped, (1.0 - clamped / amps.u_a) * amps.u_p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inducer {
    Atc,
    Iptg,
}

/// T-junction: exactly one inducer at its full amplitude.
pub fn tjunction_select(which: Inducer, amps: Amplitudes) -> InducerInput {
    match which {
        Inducer::Atc => InducerInput::new(amps.u_a, 0.0),
        Inducer::Iptg => InducerInput::new(0.0, amps.u_p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedCommand {
    pub input: InducerInput,
    pub issue_time: f64,
    pub effective_time: f64,
}

/// Holds the environmental input and applies commands once their delay elapses.
#[derive(Debug, Clone)]
pub struct ActuationScheduler {
    delay_min_s: f64,
    delay_max_s: f64,
    current: InducerInput,
    pending: VecDeque<DelayedCommand>,
}

impl ActuationScheduler {
    pub fn new(timing: &TimingConstraints, initial: InducerInput) -> Self {
        Self {
            delay_min_s: timing.delay_min,
            delay_max_s: timing.delay_max,
            current: initial,
            pending: VecDeque::new(),
        }
    }

    /// Queues `command`; the delay is redrawn for every command.
    pub fn schedule<R: Rng + ?Sized>(
        &mut self,
        command: InducerInput,
        issue_time: f64,
        rng: &mut R,
    ) -> DelayedCommand {
        let delay_s = if self.delay_max_s > self.delay_min_s {
            rng.gen_range(self.delay_min_s..=self.delay_max_s)
        } else {
            self.delay_min_s
        };
        let cmd = DelayedCommand { input: command, issue_time, effective_time: issue_time + delay_s / 60.0 };
        self.pending.push_back(cmd);
        cmd
    }

    /// Environmental input at time `t`, applying every command that is due.
    pub fn input_at(&mut self, t: f64) -> InducerInput {
        while let Some(cmd) = self.pending.front() {
            if cmd.effective_time <= t + 1e-9 {
                self.current = cmd.input;
                self.pending.pop_front();
            } else {
                break;
            }
        }
        self.current
    }

    pub fn current(&self) -> InducerInput {
        self.current
    }
}

/// Writes the command log as CSV with columns `time_min,u_a,u_p`, where
/// `time_min` is the time the command takes effect.
pub fn write_inputs_csv<W: Write>(out: W, commands: &[DelayedCommand]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_min", "u_a", "u_p"])?;
    for c in commands {
        w.write_record([c.effective_time.to_string(), c.input.u_a.to_string(), c.input.u_p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
