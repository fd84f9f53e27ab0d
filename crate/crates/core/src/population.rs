//! Classification of cells into the A/B/C sets and the ratiometric error signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CellState;

pub type CellId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    /// TetR-dominant: `tetR > 2 lacI`.
    A,
    /// LacI-dominant: `lacI > 2 tetR`.
    B,
    /// Neither dominance holds.
    C,
}

pub fn classify(cell: &CellState) -> CellClass {
    if cell.tetr > 2.0 * cell.laci {
        CellClass::A
    } else if cell.laci > 2.0 * cell.tetr {
        CellClass::B
    } else {
        CellClass::C
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_a: usize,
    pub n_b: usize,
    pub n_c: usize,
}

impl ClassCounts {
    pub fn of<'a>(cells: impl IntoIterator<Item = &'a CellState>) -> Self {
        let mut c = Self::default();
        for cell in cells {
            match classify(cell) {
                CellClass::A => c.n_a += 1,
                CellClass::B => c.n_b += 1,
                CellClass::C => c.n_c += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.n_a + self.n_b + self.n_c
    }

    /// `(r_A, r_B)`.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        let n = self.total();
        if n == 0 {
            return Err(Error::PopulationExtinct);
        }
        Ok((self.n_a as f64 / n as f64, self.n_b as f64 / n as f64))
    }
}

/// Immutable measurement of the population at one sampling instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSnapshot {
    time: f64,
    cells: Vec<(CellId, CellState)>,
    counts: ClassCounts,
}

impl PopulationSnapshot {
    pub fn new(time: f64, cells: Vec<(CellId, CellState)>) -> Self {
        let counts = ClassCounts::of(cells.iter().map(|(_, c)| c));
        Self { time, cells, counts }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn cells(&self) -> &[(CellId, CellState)] {
        &self.cells
    }

    pub fn counts(&self) -> ClassCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn ratios(&self) -> Result<(f64, f64)> {
        self.counts.ratios()
    }

    pub fn error_signal(&self, target: f64) -> Result<ErrorSignal> {
        let (r_a, r_b) = self.ratios()?;
        Ok(errors(r_a, r_b, target, self.time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorSignal {
    pub e_a: f64,
    pub e_b: f64,
    pub time: f64,
}

impl ErrorSignal {
    pub fn norm2(&self) -> f64 {
        self.e_a.hypot(self.e_b)
    }

    pub fn norm_inf(&self) -> f64 {
        self.e_a.abs().max(self.e_b.abs())
    }
}

/// `e_B = r - r_B`, `e_A = (1 - r) - r_A`; `r` is the target fraction of B cells.
pub fn errors(r_a: f64, r_b: f64, target: f64, time: f64) -> ErrorSignal {
    ErrorSignal { e_a: (1.0 - target) - r_a, e_b: target - r_b, time }
}
