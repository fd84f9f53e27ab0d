//! Experiment configuration, loadable from a TOML file.
//!
//! Every table is optional; omitted keys keep their defaults.
//!
//! ```toml
//! target_ratio = 0.6
//! epsilon = 0.15
//!
//! [params]
//! theta_TetR = 76.40
//!
//! [timing]
//! delay_min = 20.0
//! delay_max = 40.0
//!
//! [controllers.mpc]
//! subset_size = 10
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuation::TimingConstraints;
use crate::agent::ChamberConfig;
use crate::controllers::ControllerSettings;
use crate::error::{config_err, Result};
use crate::model::{CellState, ToggleSwitchParams};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Constant population, no growth or flush-out.
    Fixed,
    /// Growing, dividing population in a finite chamber.
    Agent,
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Mode::Fixed),
            "agent" => Ok(Mode::Agent),
            other => Err(config_err(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fixed => "fixed",
            Mode::Agent => "agent",
        })
    }
}

/// Uniform ranges for the initial protein and mRNA levels; intracellular
/// inducers start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialRanges {
    pub mrna_laci: [f64; 2],
    pub mrna_tetr: [f64; 2],
    pub laci: [f64; 2],
    pub tetr: [f64; 2],
}

impl Default for InitialRanges {
    fn default() -> Self {
        Self { mrna_laci: [3.0, 6.0], mrna_tetr: [3.0, 6.0], laci: [150.0, 300.0], tetr: [200.0, 400.0] }
    }
}

impl InitialRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("mrna_laci", self.mrna_laci),
            ("mrna_tetr", self.mrna_tetr),
            ("laci", self.laci),
            ("tetr", self.tetr),
        ] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(config_err(format!("initial range {name} must satisfy 0 <= lo <= hi")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CellState {
        let mut draw = |[lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        CellState {
            mrna_laci: draw(self.mrna_laci),
            mrna_tetr: draw(self.mrna_tetr),
            laci: draw(self.laci),
            tetr: draw(self.tetr),
            atc: 0.0,
            iptg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Desired fraction of cells in set B.
    pub target_ratio: f64,
    /// Regulation tolerance; also the settling threshold.
    pub epsilon: f64,
    /// Averaging window of the final-error index (min).
    pub final_window: f64,
    /// Population size in fixed mode.
    pub fixed_population: usize,
    /// Keep per-cell states at every sampling instant in the trial record.
    pub record_states: bool,
    pub params: ToggleSwitchParams,
    pub noise: crate::stochastic::NoiseConfig,
    pub timing: TimingConstraints,
    pub chamber: ChamberConfig,
    pub initial: InitialRanges,
    pub controllers: ControllerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target_ratio: 0.6,
            epsilon: 0.15,
            final_window: 180.0,
            fixed_population: 30,
            record_states: true,
            params: ToggleSwitchParams::default(),
            noise: Default::default(),
            timing: TimingConstraints::default(),
            chamber: ChamberConfig::default(),
            initial: InitialRanges::default(),
            controllers: ControllerSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_ratio) {
            return Err(config_err(format!("target_ratio must lie in [0, 1], got {}", self.target_ratio)));
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err("epsilon must be > 0"));
        }
        if !(self.final_window > 0.0) {
            return Err(config_err("final_window must be > 0"));
        }
        if self.fixed_population == 0 {
            return Err(config_err("fixed_population must be >= 1"));
        }
        self.params.validate()?;
        self.noise.validate()?;
        self.timing.validate()?;
        self.chamber.validate()?;
        self.initial.validate()?;
        self.controllers.validate()?;
        let ratio = self.timing.sampling_period / self.noise.sde_step;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(config_err("sampling_period must be a multiple of sde_step"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Experiment length T_sim (min).
    pub fn t_sim(&self) -> f64 {
        self.timing.max_experiment
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_toml_overrides() {
        let cfg = ExperimentConfig::from_toml_str(
            "target_ratio = 0.3\n[params]\ntheta_TetR = 80.0\n[timing]\ndelay_min = 0.0\ndelay_max = 0.0\n[controllers.mpc]\nsubset_size = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.target_ratio, 0.3);
        assert_eq!(cfg.params.theta_tetr, 80.0);
        assert_eq!(cfg.params.kappa_l_m, 13.01);
        assert_eq!(cfg.timing.delay_max, 0.0);
        assert_eq!(cfg.timing.sampling_period, 5.0);
        assert_eq!(cfg.controllers.mpc.subset_size, 5);
        assert_eq!(cfg.controllers.mpc.alpha, 0.6);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("target_ratio = 1.5").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[timing]\nsampling_period = 5.01").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn initial_states_in_range() {
        let ranges = InitialRanges::default();
        let mut rng = crate::rng::stream(0, crate::rng::StreamKind::InitialConditions, 0, 0);
        for _ in 0..500 {
            let x = ranges.sample(&mut rng);
            assert!((3.0..6.0).contains(&x.mrna_laci) && (3.0..6.0).contains(&x.mrna_tetr));
            assert!((150.0..300.0).contains(&x.laci) && (200.0..400.0).contains(&x.tetr));
            assert_eq!((x.atc, x.iptg), (0.0, 0.0));
        }
    }
}
