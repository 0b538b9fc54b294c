//! Dynamic class-wise temperature: temperatures shrink over training, and
//! faster for classes with more samples.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `τ·(1 − √(e/E)·√n̂_c)`
    #[default]
    Sqrt,
    /// `τ·(1 − (e/E)·n̂_c)`
    Linear,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Variant::Sqrt),
            "linear" => Ok(Variant::Linear),
            other => Err(Error::invalid(format!("unknown temperature variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    base: f64,
    epochs: usize,
    variant: Variant,
    normalized_counts: Vec<f64>,
}

impl TemperatureSchedule {
    pub fn new(base: f64, epochs: usize, variant: Variant, normalized_counts: Vec<f64>) -> Result<Self> {
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::invalid(format!("base temperature must be > 0, got {base}")));
        }
        if epochs == 0 {
            return Err(Error::invalid("total epochs must be >= 1"));
        }
        if let Some(bad) = normalized_counts.iter().find(|&&n| !(0.0..1.0).contains(&n)) {
            // n̂_c = 1 only happens with a single class and would zero the temperature.
            return Err(Error::invalid(format!(
                "normalized class count {bad} must lie in [0, 1)"
            )));
        }
        Ok(Self {
            base,
            epochs,
            variant,
            normalized_counts,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn classes(&self) -> usize {
        self.normalized_counts.len()
    }

    /// Temperature of class `class` (0-based) at completed-epoch counter
    /// `epoch ∈ 0..=E`.
    pub fn adjust(&self, epoch: usize, class: usize) -> Result<f64> {
        if epoch > self.epochs {
            return Err(Error::invalid(format!("epoch {epoch} beyond total {}", self.epochs)));
        }
        let n = *self
            .normalized_counts
            .get(class)
            .ok_or_else(|| Error::invalid(format!("class {class} out of range")))?;
        let progress = epoch as f64 / self.epochs as f64;
        let factor = match self.variant {
            Variant::Sqrt => 1.0 - progress.sqrt() * n.sqrt(),
            Variant::Linear => 1.0 - progress * n,
        };
        let t = self.base * factor;
        assert!(t > 0.0, "temperature collapsed to {t} for class {class}");
        Ok(t)
    }

    /// Temperatures of every class at one epoch.
    pub fn at_epoch(&self, epoch: usize) -> Result<Vec<f64>> {
        (0..self.classes()).map(|c| self.adjust(epoch, c)).collect()
    }

    /// `(E+1) x C` table of temperatures, row `e` holding epoch `e`.
    pub fn table(&self) -> Vec<Vec<f64>> {
        (0..=self.epochs)
            .map(|e| self.at_epoch(e).expect("epoch within range"))
            .collect()
    }

    /// CSV with columns `epoch,class_1..class_C`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("epoch".to_string())
            .chain((1..=self.classes()).map(|c| format!("class_{c}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (e, row) in self.table().iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{e},{}", cells.join(","))?;
        }
        Ok(())
    }
}
