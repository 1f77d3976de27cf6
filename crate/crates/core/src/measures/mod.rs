//! Measure representations and the basic operations on them: pushforward,
//! conditioning, entropy and moments.

mod domain;
mod grid;
pub mod io;
mod particles;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use domain::{Ball, Bounds, Domain};
pub(crate) use domain::dist2;
pub use grid::{Grid, GridMeasure};
pub use particles::{normalize_weights, ParticleMeasure};

use crate::error::{Error, Result};
use crate::maps::ForwardMap;

/// Weight sums of particle measures match 1 to this tolerance.
pub const MASS_TOL_PARTICLE: f64 = 1e-12;
/// Grid densities integrate to 1 to this tolerance.
pub const MASS_TOL_GRID: f64 = 1e-10;
/// Total masses at or below this are treated as zero.
pub const ZERO_MASS: f64 = 1e-300;

/// Either representation of a probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Measure {
    Particles(ParticleMeasure),
    Grid(GridMeasure),
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Particles(m) => m.dim(),
            Measure::Grid(m) => m.grid().dim(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Measure::Particles(m) => m.total_mass(),
            Measure::Grid(m) => m.total_mass(),
        }
    }

    /// Point masses (particles) or cell masses (grid), in storage order.
    pub fn masses(&self) -> Vec<f64> {
        match self {
            Measure::Particles(m) => m.weights().to_vec(),
            Measure::Grid(m) => m.masses(),
        }
    }

    /// Support locations matching [`Measure::masses`]: the points, or the cell centers.
    pub fn locations(&self) -> Vec<Vec<f64>> {
        match self {
            Measure::Particles(m) => m.points().map(<[f64]>::to_vec).collect(),
            Measure::Grid(m) => m.grid().centers(),
        }
    }

    pub fn moment(&self, p: f64) -> Result<f64> {
        match self {
            Measure::Particles(m) => m.moment(p),
            Measure::Grid(m) => m.moment(p),
        }
    }

    /// Mass of the region where `indicator` holds (cell centers for grids).
    pub fn mass_where<F>(&self, indicator: F) -> f64
    where
        F: Fn(&[f64]) -> bool,
    {
        match self {
            Measure::Particles(m) => m.mass_where(indicator),
            Measure::Grid(m) => (0..m.len())
                .filter(|&i| indicator(&m.grid().center(i)))
                .map(|i| m.cell_mass(i))
                .sum(),
        }
    }

    pub fn as_particles(&self) -> Option<&ParticleMeasure> {
        match self {
            Measure::Particles(m) => Some(m),
            Measure::Grid(_) => None,
        }
    }

    pub fn as_grid(&self) -> Option<&GridMeasure> {
        match self {
            Measure::Grid(m) => Some(m),
            Measure::Particles(_) => None,
        }
    }
}

impl From<ParticleMeasure> for Measure {
    fn from(m: ParticleMeasure) -> Self {
        Measure::Particles(m)
    }
}

impl From<GridMeasure> for Measure {
    fn from(m: GridMeasure) -> Self {
        Measure::Grid(m)
    }
}

pub(crate) fn check_moment_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("moment order must be >= 1, got {p}")))
    }
}

/// `G#m` for a particle measure: points mapped through `G`, weights unchanged.
pub fn pushforward(g: &ForwardMap, m: &ParticleMeasure) -> Result<ParticleMeasure> {
    if m.dim() != g.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.in_dim(),
            found: m.dim(),
        });
    }
    let images: Vec<Vec<f64>> = m.points().collect::<Vec<_>>().par_iter().map(|x| g.eval(x)).collect();
    m.with_points(g.out_dim(), images)
}

/// `G#m` discretized onto `out`: each source cell's mass is deposited in the
/// output cell containing `G(center)`.
pub fn pushforward_grid(g: &ForwardMap, m: &GridMeasure, out: &Grid) -> Result<GridMeasure> {
    if m.grid().dim() != g.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.in_dim(),
            found: m.grid().dim(),
        });
    }
    if out.dim() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: out.dim(),
        });
    }
    let src = m.grid();
    let targets: Vec<Option<(usize, bool)>> = (0..m.len())
        .into_par_iter()
        .map(|i| {
            if !m.mask()[i] || m.values()[i] == 0.0 {
                return None;
            }
            let y = g.eval(&src.center(i));
            Some(match out.locate(&y) {
                Some(j) => (j, false),
                None => (out.locate_clamped(&y), true),
            })
        })
        .collect();
    let vol = src.cell_volume();
    let mut masses = vec![0.0; out.len()];
    let mut escaped = 0.0;
    for (i, t) in targets.into_iter().enumerate() {
        if let Some((j, outside)) = t {
            let mass = m.values()[i] * vol;
            masses[j] += mass;
            if outside {
                escaped += mass;
            }
        }
    }
    if escaped > 1e-9 {
        return Err(Error::RangeEscape { escaped });
    }
    let out_vol = out.cell_volume();
    GridMeasure::new(
        out.clone(),
        masses.into_iter().map(|x| x / out_vol).collect(),
        vec![true; out.len()],
    )
}

/// Conditional measure `m(· ∩ R) / m(R)`.
pub fn condition<F>(m: &Measure, indicator: F) -> Result<Measure>
where
    F: Fn(&[f64]) -> bool,
{
    Ok(match m {
        Measure::Particles(p) => Measure::Particles(p.condition(indicator)?),
        Measure::Grid(g) => Measure::Grid(g.condition(indicator)?),
    })
}

pub fn entropy(m: &GridMeasure) -> f64 {
    m.entropy()
}

pub fn moment(m: &Measure, p: f64) -> Result<f64> {
    m.moment(p)
}
