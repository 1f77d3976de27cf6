use serde::{Deserialize, Serialize};

use super::domain::{Bounds, Domain};
use super::particles::ParticleMeasure;
use super::{MASS_TOL_GRID, ZERO_MASS};
use crate::error::{Error, Result};

/// Regular rectangular grid of cells over a box, row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    bounds: Bounds,
    shape: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: Bounds, shape: Vec<usize>) -> Result<Self> {
        if shape.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                found: shape.len(),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument("grid shape entries must be positive".into()));
        }
        Ok(Self { bounds, shape })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.bounds.width(axis) / self.shape[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn cell_diagonal(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn unravel(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            out[axis] = index % self.shape[axis];
            index /= self.shape[axis];
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &k)| acc * k + i)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        self.unravel(index)
            .into_iter()
            .enumerate()
            .map(|(axis, i)| self.bounds.lower()[axis] + (i as f64 + 0.5) * self.spacing(axis))
            .collect()
    }

    /// Cell containing `x`: half-open cells, with the upper face of the box
    /// assigned to the last cell on each axis.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for (axis, &v) in x.iter().enumerate() {
            let lo = self.bounds.lower()[axis];
            let hi = self.bounds.upper()[axis];
            if !(v >= lo && v <= hi) {
                return None;
            }
            let i = ((v - lo) / self.spacing(axis)).floor() as usize;
            multi.push(i.min(self.shape[axis] - 1));
        }
        Some(self.ravel(&multi))
    }

    /// Nearest cell to `x`, clipping to the boundary when `x` lies outside.
    pub fn locate_clamped(&self, x: &[f64]) -> usize {
        let mut y = x.to_vec();
        self.bounds.clamp(&mut y);
        self.locate(&y).unwrap_or(0)
    }

    /// Centers of every cell, in storage order.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }
}

/// Piecewise-constant density on a grid. Cells outside the mask carry zero
/// density; the masked density integrates to one under midpoint quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    grid: Grid,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl GridMeasure {
    /// Builds a measure from raw nonnegative density values and normalizes it.
    pub fn new(grid: Grid, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "grid has {} cells but got {} values and {} mask entries",
                grid.len(),
                values.len(),
                mask.len()
            )));
        }
        for (i, (&v, &m)) in values.iter().zip(&mask).enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidMeasure(format!("cell {i} has invalid density {v}")));
            }
            if !m && v != 0.0 {
                return Err(Error::InvalidMeasure(format!("unmasked cell {i} has density {v}")));
            }
        }
        let mut out = Self { grid, values, mask };
        out.normalize_in_place()?;
        Ok(out)
    }

    /// Evaluates `density` at cell centers inside `domain` (all cells when `None`).
    pub fn from_density<F>(grid: Grid, domain: Option<&Domain>, density: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut values = Vec::with_capacity(grid.len());
        let mut mask = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let c = grid.center(i);
            let inside = domain.is_none_or(|d| d.contains(&c));
            mask.push(inside);
            values.push(if inside { density(&c) } else { 0.0 });
        }
        Self::new(grid, values, mask)
    }

    pub fn uniform(grid: Grid, domain: Option<&Domain>) -> Result<Self> {
        Self::from_density(grid, domain, |_| 1.0)
    }

    /// Histogram of a particle measure: each weight lands in the cell
    /// containing its point. Mass outside the grid up to 1e-9 is clipped onto
    /// the nearest boundary cell.
    pub fn from_particles(grid: Grid, m: &ParticleMeasure) -> Result<Self> {
        if m.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                found: m.dim(),
            });
        }
        let mut masses = vec![0.0; grid.len()];
        let mut escaped = 0.0;
        for (x, w) in m.iter() {
            match grid.locate(x) {
                Some(i) => masses[i] += w,
                None => {
                    escaped += w;
                    masses[grid.locate_clamped(x)] += w;
                }
            }
        }
        if escaped > 1e-9 {
            return Err(Error::RangeEscape { escaped });
        }
        let vol = grid.cell_volume();
        let values = masses.iter().map(|m| m / vol).collect();
        let mask = vec![true; grid.len()];
        Self::new(grid, values, mask)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_mass(&self, index: usize) -> f64 {
        self.values[index] * self.grid.cell_volume()
    }

    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Density at `x` (zero outside the grid).
    pub fn density_at(&self, x: &[f64]) -> f64 {
        self.grid.locate(x).map_or(0.0, |i| self.values[i])
    }

    /// Rescales to unit mass. Relative cell proportions are unchanged.
    pub fn normalize(mut self) -> Result<Self> {
        self.normalize_in_place()?;
        Ok(self)
    }

    fn normalize_in_place(&mut self) -> Result<()> {
        let total = self.total_mass();
        if !(total > ZERO_MASS) {
            return Err(Error::ZeroMass);
        }
        for v in &mut self.values {
            *v /= total;
        }
        debug_assert!((self.total_mass() - 1.0).abs() <= MASS_TOL_GRID);
        Ok(())
    }

    /// Restriction to the cells whose centers satisfy `indicator`, renormalized.
    pub fn condition<F>(&self, indicator: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool,
    {
        let mut values = self.values.clone();
        let mut mask = self.mask.clone();
        for i in 0..self.len() {
            if !indicator(&self.grid.center(i)) {
                values[i] = 0.0;
                mask[i] = false;
            }
        }
        let kept: f64 = values.iter().sum::<f64>() * self.grid.cell_volume();
        if !(kept > ZERO_MASS) {
            return Err(Error::ZeroMass);
        }
        Self::new(self.grid.clone(), values, mask)
    }

    /// Differential entropy `∫ ρ ln ρ` under midpoint quadrature, `0·ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let vol = self.grid.cell_volume();
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(v, m)| **m && **v > 0.0)
            .map(|(v, _)| v * v.ln() * vol)
            .sum()
    }

    pub fn moment(&self, p: f64) -> Result<f64> {
        super::check_moment_order(p)?;
        let vol = self.grid.cell_volume();
        Ok((0..self.len())
            .filter(|&i| self.values[i] > 0.0)
            .map(|i| self.values[i] * vol * super::domain::norm(&self.grid.center(i)).powf(p))
            .sum())
    }

    /// Point masses at the centers of cells carrying positive mass.
    pub fn to_particles(&self) -> ParticleMeasure {
        let vol = self.grid.cell_volume();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for i in 0..self.len() {
            if self.values[i] > 0.0 {
                coords.extend(self.grid.center(i));
                weights.push(self.values[i] * vol);
            }
        }
        ParticleMeasure::from_flat(self.grid.dim(), coords, weights)
            .expect("a normalized grid measure has positive mass")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(k: usize) -> Grid {
        Grid::new(Bounds::cube(2, 0.0, 1.0).unwrap(), vec![k, k]).unwrap()
    }

    #[test]
    fn all_ones_on_unit_box_is_already_normalized() {
        let g = unit_grid(2);
        assert_eq!(g.cell_volume(), 0.25);
        let m = GridMeasure::new(g, vec![1.0; 4], vec![true; 4]).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ravel_unravel_roundtrip() {
        let g = Grid::new(Bounds::cube(3, 0.0, 1.0).unwrap(), vec![2, 3, 4]).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.ravel(&g.unravel(i)), i);
        }
        assert_eq!(g.unravel(1), vec![0, 0, 1]);
    }

    #[test]
    fn locate_handles_upper_face_and_outside() {
        let g = unit_grid(4);
        assert_eq!(g.locate(&[1.0, 1.0]), Some(15));
        assert_eq!(g.locate(&[0.0, 0.0]), Some(0));
        assert_eq!(g.locate(&[1.0 + 1e-9, 0.5]), None);
        assert_eq!(g.locate_clamped(&[2.0, -1.0]), g.ravel(&[3, 0]));
    }

    #[test]
    fn rejects_mass_on_unmasked_cells() {
        let g = unit_grid(2);
        let err = GridMeasure::new(g, vec![1.0; 4], vec![true, true, true, false]).unwrap_err();
        assert!(matches!(err, Error::InvalidMeasure(_)));
    }

    #[test]
    fn zero_mass_is_rejected() {
        let g = unit_grid(2);
        assert_eq!(GridMeasure::new(g, vec![0.0; 4], vec![true; 4]).unwrap_err(), Error::ZeroMass);
    }

    #[test]
    fn entropy_of_uniform_densities() {
        let m = GridMeasure::uniform(unit_grid(8), None).unwrap();
        assert!(m.entropy().abs() < 1e-15);
        let g2 = Grid::new(Bounds::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap(), vec![8, 4]).unwrap();
        let m2 = GridMeasure::uniform(g2, None).unwrap();
        assert!((m2.entropy() + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn particle_histogram_clips_tiny_escapes_and_rejects_large_ones() {
        let g = unit_grid(2);
        let p = ParticleMeasure::new(2, vec![vec![0.25, 0.25], vec![1.0 + 1e-6, 0.5]], vec![1.0, 1e-12]).unwrap();
        let h = GridMeasure::from_particles(g.clone(), &p).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        let q = ParticleMeasure::new(2, vec![vec![0.25, 0.25], vec![3.0, 0.5]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(GridMeasure::from_particles(g, &q), Err(Error::RangeEscape { .. })));
    }
}
