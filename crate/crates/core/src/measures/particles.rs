use serde::{Deserialize, Serialize};

use super::domain::norm;
use super::ZERO_MASS;
use crate::error::{Error, Result};

/// Weighted point cloud in ℝᵈ with weights summing to one.
///
/// Points are stored flat, `dim` coordinates per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    /// Builds a measure from points and nonnegative weights, normalizing the weights.
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not split into {} points of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {c}")));
        }
        let weights = normalize_weights(&weights)?;
        Ok(Self { dim, coords, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(dim, points, vec![1.0; n])
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        Self::from_flat(dim, point, vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points().zip(self.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Idempotent renormalization.
    pub fn normalize(self) -> Result<Self> {
        Self::from_flat(self.dim, self.coords, self.weights)
    }

    /// Same weights, points replaced by `f(point)`; every image must have length `dim`.
    pub fn map_points<F>(&self, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut coords = Vec::with_capacity(dim * self.len());
        for x in self.points() {
            let y = f(x);
            if y.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: y.len(),
                });
            }
            coords.extend(y);
        }
        Ok(Self {
            dim,
            coords,
            weights: self.weights.clone(),
        })
    }

    /// Replaces points with precomputed images (same order, same weights).
    pub(crate) fn with_points(&self, dim: usize, images: Vec<Vec<f64>>) -> Result<Self> {
        let mut coords = Vec::with_capacity(dim * images.len());
        for y in images {
            if y.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: y.len(),
                });
            }
            coords.extend(y);
        }
        Ok(Self {
            dim,
            coords,
            weights: self.weights.clone(),
        })
    }

    /// Keeps every point but zeroes the weight of points failing `indicator`,
    /// then renormalizes. The support is unchanged so divergences against the
    /// original measure stay well defined.
    pub fn condition<F>(&self, indicator: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool,
    {
        let weights: Vec<f64> = self
            .iter()
            .map(|(x, w)| if indicator(x) { w } else { 0.0 })
            .collect();
        Self::from_flat(self.dim, self.coords.clone(), weights)
    }

    /// Product with a Dirac at the origin of ℝ^extra: points `(x, 0)`.
    pub fn with_zero_padding(&self, extra: usize) -> Self {
        let dim = self.dim + extra;
        let mut coords = Vec::with_capacity(dim * self.len());
        for x in self.points() {
            coords.extend_from_slice(x);
            coords.extend(std::iter::repeat_n(0.0, extra));
        }
        Self {
            dim,
            coords,
            weights: self.weights.clone(),
        }
    }

    pub fn moment(&self, p: f64) -> Result<f64> {
        super::check_moment_order(p)?;
        Ok(self.iter().map(|(x, w)| w * norm(x).powf(p)).sum())
    }

    /// Mass carried by points satisfying `indicator`.
    pub fn mass_where<F>(&self, indicator: F) -> f64
    where
        F: Fn(&[f64]) -> bool,
    {
        self.iter().filter(|(x, _)| indicator(x)).map(|(_, w)| w).sum()
    }
}

/// Rescales nonnegative weights to sum to one.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > ZERO_MASS) {
        return Err(Error::ZeroMass);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}
