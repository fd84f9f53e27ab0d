//! Deterministic single-cell dynamics of the inducible LacI/TetR toggle switch.
//!
//! State ordering used by every array view in the crate:
//!
//! | Index | Field        | Units     |
//! |-------|--------------|-----------|
//! | 0     | `mrna_laci`  | molecules |
//! | 1     | `mrna_tetr`  | molecules |
//! | 2     | `laci`       | a.u.      |
//! | 3     | `tetr`       | a.u.      |
//! | 4     | `atc`        | a.u.      |
//! | 5     | `iptg`       | a.u.      |
//!
//! Time is in minutes throughout.

use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

pub const STATE_DIM: usize = 6;

pub type Derivative = [f64; STATE_DIM];

/// Kinetic, Hill and membrane-exchange constants of the toggle switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToggleSwitchParams {
    /// Leaky transcription of LacI mRNA (mRNA/min).
    #[serde(rename = "kappa_L_m0")]
    pub kappa_l_m0: f64,
    /// Leaky transcription of TetR mRNA (mRNA/min).
    #[serde(rename = "kappa_T_m0")]
    pub kappa_t_m0: f64,
    #[serde(rename = "kappa_L_m")]
    pub kappa_l_m: f64,
    #[serde(rename = "kappa_T_m")]
    pub kappa_t_m: f64,
    /// Translation rates (a.u./mRNA/min).
    #[serde(rename = "kappa_L_p")]
    pub kappa_l_p: f64,
    #[serde(rename = "kappa_T_p")]
    pub kappa_t_p: f64,
    #[serde(rename = "gamma_L_m")]
    pub gamma_l_m: f64,
    #[serde(rename = "gamma_T_m")]
    pub gamma_t_m: f64,
    #[serde(rename = "gamma_L_p")]
    pub gamma_l_p: f64,
    #[serde(rename = "gamma_T_p")]
    pub gamma_t_p: f64,
    /// Membrane exchange rate of aTc (1/min).
    #[serde(rename = "k_aTc")]
    pub k_atc: f64,
    /// Membrane exchange rate of IPTG (1/min).
    #[serde(rename = "k_IPTG")]
    pub k_iptg: f64,
    #[serde(rename = "theta_LacI")]
    pub theta_laci: f64,
    #[serde(rename = "theta_TetR")]
    pub theta_tetr: f64,
    #[serde(rename = "theta_aTc")]
    pub theta_atc: f64,
    #[serde(rename = "theta_IPTG")]
    pub theta_iptg: f64,
    #[serde(rename = "eta_LacI")]
    pub eta_laci: f64,
    #[serde(rename = "eta_TetR")]
    pub eta_tetr: f64,
    #[serde(rename = "eta_aTc")]
    pub eta_atc: f64,
    #[serde(rename = "eta_IPTG")]
    pub eta_iptg: f64,
}

impl Default for ToggleSwitchParams {
    fn default() -> Self {
        Self {
            kappa_l_m0: 3.045e-1,
            kappa_t_m0: 3.313e-1,
            kappa_l_m: 13.01,
            kappa_t_m: 5.055,
            kappa_l_p: 0.6606,
            kappa_t_p: 0.5098,
            gamma_l_m: 1.386e-1,
            gamma_t_m: 1.386e-1,
            gamma_l_p: 1.65e-2,
            gamma_t_p: 1.65e-2,
            k_atc: 4e-2,
            k_iptg: 4e-2,
            theta_laci: 124.9,
            theta_tetr: 76.40,
            theta_atc: 35.98,
            theta_iptg: 2.926e-1,
            eta_laci: 2.00,
            eta_tetr: 2.152,
            eta_atc: 2.00,
            eta_iptg: 2.00,
        }
    }
}

impl ToggleSwitchParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa_L_m0", self.kappa_l_m0),
            ("kappa_T_m0", self.kappa_t_m0),
            ("kappa_L_m", self.kappa_l_m),
            ("kappa_T_m", self.kappa_t_m),
            ("kappa_L_p", self.kappa_l_p),
            ("kappa_T_p", self.kappa_t_p),
            ("gamma_L_m", self.gamma_l_m),
            ("gamma_T_m", self.gamma_t_m),
            ("gamma_L_p", self.gamma_l_p),
            ("gamma_T_p", self.gamma_t_p),
            ("k_aTc", self.k_atc),
            ("k_IPTG", self.k_iptg),
            ("theta_LacI", self.theta_laci),
            ("theta_TetR", self.theta_tetr),
            ("theta_aTc", self.theta_atc),
            ("theta_IPTG", self.theta_iptg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let exponents = [
            ("eta_LacI", self.eta_laci),
            ("eta_TetR", self.eta_tetr),
            ("eta_aTc", self.eta_atc),
            ("eta_IPTG", self.eta_iptg),
        ];
        for (name, v) in exponents {
            if !(v.is_finite() && v >= 1.0) {
                return Err(config_err(format!("{name} must be finite and >= 1, got {v}")));
            }
        }
        Ok(())
    }

    /// Parses a `key = value` parameter file. Missing keys keep their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let params: Self = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }
}

/// Intracellular concentrations of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    pub mrna_laci: f64,
    pub mrna_tetr: f64,
    pub laci: f64,
    pub tetr: f64,
    pub atc: f64,
    pub iptg: f64,
}

impl CellState {
    pub fn from_array(x: [f64; STATE_DIM]) -> Self {
        Self {
            mrna_laci: x[0],
            mrna_tetr: x[1],
            laci: x[2],
            tetr: x[3],
            atc: x[4],
            iptg: x[5],
        }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.mrna_laci, self.mrna_tetr, self.laci, self.tetr, self.atc, self.iptg]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_array().iter().all(|&v| v >= 0.0)
    }

    pub fn clamped_nonnegative(self) -> Self {
        Self::from_array(self.to_array().map(clamp_nonneg))
    }
}

/// Concentrations of aTc and IPTG in the growth medium, shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InducerInput {
    pub u_a: f64,
    pub u_p: f64,
}

impl InducerInput {
    /// Reservoir maxima.
    pub const MAX_ATC: f64 = 100.0;
    pub const MAX_IPTG: f64 = 1.0;

    pub const fn new(u_a: f64, u_p: f64) -> Self {
        Self { u_a, u_p }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=Self::MAX_ATC).contains(&self.u_a) || !(0.0..=Self::MAX_IPTG).contains(&self.u_p) {
            return Err(config_err(format!(
                "input ({}, {}) outside [0, {}] x [0, {}]",
                self.u_a,
                self.u_p,
                Self::MAX_ATC,
                Self::MAX_IPTG
            )));
        }
        Ok(())
    }
}

/// Clamps negatives to zero while letting NaN through for divergence checks.
#[inline]
pub(crate) fn clamp_nonneg(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

#[inline]
fn pow_exp(x: f64, n: f64) -> f64 {
    if n == 2.0 {
        x * x
    } else {
        x.powf(n)
    }
}

/// Repression term on the LacI promoter by TetR, relieved by aTc.
pub fn hill_phi_t(tetr: f64, atc: f64, p: &ToggleSwitchParams) -> f64 {
    let relief = 1.0 / (1.0 + pow_exp(atc / p.theta_atc, p.eta_atc));
    1.0 / (1.0 + pow_exp(tetr / p.theta_tetr * relief, p.eta_tetr))
}

/// Repression term on the TetR promoter by LacI, relieved by IPTG.
pub fn hill_phi_l(laci: f64, iptg: f64, p: &ToggleSwitchParams) -> f64 {
    let relief = 1.0 / (1.0 + pow_exp(iptg / p.theta_iptg, p.eta_iptg));
    1.0 / (1.0 + pow_exp(laci / p.theta_laci * relief, p.eta_laci))
}

/// Partial derivatives (d/d repressor, d/d inducer) of a two-level Hill term.
fn hill_gradient(
    repressor: f64,
    inducer: f64,
    theta_r: f64,
    eta_r: f64,
    theta_i: f64,
    eta_i: f64,
) -> (f64, f64) {
    let s = inducer / theta_i;
    let relief = 1.0 / (1.0 + s.powf(eta_i));
    let z = repressor / theta_r * relief;
    let zn = z.powf(eta_r);
    let dphi_dz = -eta_r * z.powf(eta_r - 1.0) / ((1.0 + zn) * (1.0 + zn));
    let dz_drep = relief / theta_r;
    let drelief_dind = -eta_i * s.powf(eta_i - 1.0) / theta_i * relief * relief;
    let dz_dind = repressor / theta_r * drelief_dind;
    (dphi_dz * dz_drep, dphi_dz * dz_dind)
}

/// Production terms of the four gene-expression species, in state order.
#[inline]
pub(crate) fn production_terms(x: &CellState, p: &ToggleSwitchParams) -> [f64; 4] {
    [
        p.kappa_l_m0 + p.kappa_l_m * hill_phi_t(x.tetr, x.atc, p),
        p.kappa_t_m0 + p.kappa_t_m * hill_phi_l(x.laci, x.iptg, p),
        p.kappa_l_p * x.mrna_laci,
        p.kappa_t_p * x.mrna_tetr,
    ]
}

/// Right-hand side of the six-state toggle-switch model.
///
/// Each line is written as `production - loss` so that it matches the
/// reaction-network drift term for term.
pub fn ode_rhs(x: &CellState, u: &InducerInput, p: &ToggleSwitchParams) -> Derivative {
    let prod = production_terms(x, p);
    [
        prod[0] - p.gamma_l_m * x.mrna_laci,
        prod[1] - p.gamma_t_m * x.mrna_tetr,
        prod[2] - p.gamma_l_p * x.laci,
        prod[3] - p.gamma_t_p * x.tetr,
        p.k_atc * u.u_a - p.k_atc * x.atc,
        p.k_iptg * u.u_p - p.k_iptg * x.iptg,
    ]
}

/// Analytic Jacobian of [`ode_rhs`] with respect to the state.
pub fn jacobian(x: &CellState, p: &ToggleSwitchParams) -> Matrix6<f64> {
    let (dpt_dtetr, dpt_datc) =
        hill_gradient(x.tetr, x.atc, p.theta_tetr, p.eta_tetr, p.theta_atc, p.eta_atc);
    let (dpl_dlaci, dpl_diptg) =
        hill_gradient(x.laci, x.iptg, p.theta_laci, p.eta_laci, p.theta_iptg, p.eta_iptg);
    let mut j = Matrix6::zeros();
    j[(0, 0)] = -p.gamma_l_m;
    j[(0, 3)] = p.kappa_l_m * dpt_dtetr;
    j[(0, 4)] = p.kappa_l_m * dpt_datc;
    j[(1, 1)] = -p.gamma_t_m;
    j[(1, 2)] = p.kappa_t_m * dpl_dlaci;
    j[(1, 5)] = p.kappa_t_m * dpl_diptg;
    j[(2, 0)] = p.kappa_l_p;
    j[(2, 2)] = -p.gamma_l_p;
    j[(3, 1)] = p.kappa_t_p;
    j[(3, 3)] = -p.gamma_t_p;
    j[(4, 4)] = -p.k_atc;
    j[(5, 5)] = -p.k_iptg;
    j
}

#[inline]
fn axpy(x: &[f64; STATE_DIM], a: f64, d: &Derivative) -> CellState {
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = x[i] + a * d[i];
    }
    CellState::from_array(out)
}

/// One explicit Euler step, clamped at zero.
pub fn euler_step(x: &CellState, u: &InducerInput, dt: f64, p: &ToggleSwitchParams) -> CellState {
    let f = ode_rhs(x, u, p);
    let xa = x.to_array();
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = clamp_nonneg(xa[i] + f[i] * dt);
    }
    CellState::from_array(out)
}

/// One classical fourth-order Runge-Kutta step, clamped at zero.
pub fn rk4_step(x: &CellState, u: &InducerInput, h: f64, p: &ToggleSwitchParams) -> CellState {
    let xa = x.to_array();
    let k1 = ode_rhs(x, u, p);
    let k2 = ode_rhs(&axpy(&xa, 0.5 * h, &k1), u, p);
    let k3 = ode_rhs(&axpy(&xa, 0.5 * h, &k2), u, p);
    let k4 = ode_rhs(&axpy(&xa, h, &k3), u, p);
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = clamp_nonneg(xa[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    CellState::from_array(out)
}

/// Integrates the ODE under a constant input with fixed-step RK4.
///
/// A trailing partial step is taken when `horizon` is not a multiple of `step`.
pub fn integrate_ode(
    state: &CellState,
    input: &InducerInput,
    horizon: f64,
    step: f64,
    params: &ToggleSwitchParams,
) -> Result<CellState> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(config_err(format!("ODE step must be > 0, got {step}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(config_err(format!("ODE horizon must be >= 0, got {horizon}")));
    }
    let full = (horizon / step + 1e-9).floor() as usize;
    let rest = horizon - full as f64 * step;
    let mut x = *state;
    for i in 0..full {
        x = rk4_step(&x, input, step, params);
        if !x.is_finite() {
            return Err(Error::IntegrationDiverged { time: (i + 1) as f64 * step });
        }
    }
    if rest > 1e-12 * step.max(1.0) {
        x = rk4_step(&x, input, rest, params);
        if !x.is_finite() {
            return Err(Error::IntegrationDiverged { time: horizon });
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: CellState,
    pub stability: Stability,
    /// Largest real part among the Jacobian eigenvalues (1/min).
    pub leading_eigenvalue: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub equilibria: Vec<Equilibrium>,
    pub diagnostic: Option<String>,
}

impl EquilibriumReport {
    pub fn count(&self, stability: Stability) -> usize {
        self.equilibria.iter().filter(|e| e.stability == stability).count()
    }
}

/// Quasi-steady state of the mRNA and inducer components given the two proteins.
fn quasi_steady(laci: f64, tetr: f64, u: &InducerInput, p: &ToggleSwitchParams) -> CellState {
    let mut x = CellState { laci, tetr, atc: u.u_a, iptg: u.u_p, ..Default::default() };
    let prod = production_terms(&x, p);
    x.mrna_laci = prod[0] / p.gamma_l_m;
    x.mrna_tetr = prod[1] / p.gamma_t_m;
    x
}

fn norm(d: &Derivative) -> f64 {
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-11;

fn newton(start: CellState, u: &InducerInput, p: &ToggleSwitchParams) -> Option<CellState> {
    let mut x = start;
    let mut f = ode_rhs(&x, u, p);
    let mut fnorm = norm(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if fnorm < NEWTON_TOL {
            return Some(x);
        }
        let lu = jacobian(&x, p).lu();
        let delta = lu.solve(&-Vector6::from_row_slice(&f))?;
        let xa = x.to_array();
        let mut lambda = 1.0;
        // Damped step: stay nonnegative and do not increase the residual.
        loop {
            let mut cand = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                cand[i] = xa[i] + lambda * delta[i];
            }
            let cand = CellState::from_array(cand);
            if cand.is_nonnegative() && cand.is_finite() {
                let fc = ode_rhs(&cand, u, p);
                let nc = norm(&fc);
                if nc < fnorm || lambda < 1e-6 {
                    x = cand;
                    f = fc;
                    fnorm = nc;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return None;
            }
        }
    }
    (fnorm < NEWTON_TOL).then_some(x)
}

fn classify_stability(x: &CellState, p: &ToggleSwitchParams) -> (Stability, f64) {
    let eig = jacobian(x, p).complex_eigenvalues();
    let positive = eig.iter().filter(|c| c.re > 0.0).count();
    let leading = eig.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    let stability = match positive {
        0 => Stability::Stable,
        n if n == STATE_DIM => Stability::Unstable,
        _ => Stability::Saddle,
    };
    (stability, leading)
}

/// Locates the equilibria for a constant input by Newton's method started from
/// a 10x10 log-spaced grid over (LacI, TetR) in [1, 3000]^2.
///
/// Results are sorted by increasing LacI.
pub fn find_equilibria(input: &InducerInput, params: &ToggleSwitchParams) -> EquilibriumReport {
    const GRID: usize = 10;
    const LO: f64 = 1.0;
    const HI: f64 = 3000.0;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| (LO.ln() + (HI.ln() - LO.ln()) * i as f64 / (GRID - 1) as f64).exp())
        .collect();

    let mut found: Vec<CellState> = Vec::new();
    for &laci in &grid {
        for &tetr in &grid {
            let start = quasi_steady(laci, tetr, input, params);
            let Some(x) = newton(start, input, params) else { continue };
            let xa = x.to_array();
            let scale = 1.0 + xa.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dup = found.iter().any(|y| {
                let ya = y.to_array();
                let d: f64 = (0..STATE_DIM).map(|i| (xa[i] - ya[i]).powi(2)).sum::<f64>().sqrt();
                d < 1e-6 * scale
            });
            if !dup {
                found.push(x);
            }
        }
    }
    found.sort_by(|a, b| a.laci.total_cmp(&b.laci));

    let diagnostic = found
        .is_empty()
        .then(|| format!("Newton did not converge from any of the {} grid starts", GRID * GRID));
    let equilibria = found
        .into_iter()
        .map(|state| {
            let (stability, leading_eigenvalue) = classify_stability(&state, params);
            let residual = norm(&ode_rhs(&state, input, params));
            Equilibrium { state, stability, leading_eigenvalue, residual }
        })
        .collect();
    EquilibriumReport { equilibria, diagnostic }
}
