//! Flat parameter vectors with a named layout.
//!
//! A [`ParamVector`] is the unit the simulator aggregates, accumulates into
//! global memory, prunes and checkpoints. Gradients use the same layout, with
//! zeros in the entries that do not train (running statistics, frozen BN).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    DenseWeight,
    DenseBias,
    BnGamma,
    BnBeta,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    /// Classifies a tensor by the suffix of its name.
    pub fn from_name(name: &str) -> Option<Self> {
        let suffix = name.rsplit('.').next()?;
        let is_bn = name.contains(".bn.");
        Some(match (is_bn, suffix) {
            (false, "weight") => ParamKind::DenseWeight,
            (false, "bias") => ParamKind::DenseBias,
            (true, "gamma") => ParamKind::BnGamma,
            (true, "beta") => ParamKind::BnBeta,
            (true, "running_mean") => ParamKind::BnRunningMean,
            (true, "running_var") => ParamKind::BnRunningVar,
            _ => return None,
        })
    }

    pub fn is_bn(self) -> bool {
        !matches!(self, ParamKind::DenseWeight | ParamKind::DenseBias)
    }

    /// Running statistics are state, not learnable parameters.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub kind: ParamKind,
}

/// Ordered `(name, offset, length)` manifest of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<()> {
        let name = name.into();
        let kind = ParamKind::from_name(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("unrecognised tensor name {name:?}")))?;
        let len = shape.iter().product();
        self.entries.push(LayoutEntry {
            name,
            shape,
            offset: self.total,
            len,
            kind,
        });
        self.total += len;
        Ok(())
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Per-element mask selecting entries whose kind satisfies `pred`.
    pub fn mask(&self, pred: impl Fn(ParamKind) -> bool) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for e in &self.entries {
            if pred(e.kind) {
                mask[e.offset..e.offset + e.len].fill(true);
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f32>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f32>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { layout, values }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f32]> {
        let e = self.layout.entry(name)?;
        Some(&self.values[e.offset..e.offset + e.len])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f32, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        })
    }

    /// Zeroes every element where `mask` is false.
    pub fn masked(&self, mask: &[bool]) -> ParamVector {
        let values = self
            .values
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        }
    }
}
