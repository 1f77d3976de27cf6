//! Underdetermined problems: entropy minimization (uniform on fibers) and
//! second-moment minimization (least-norm preimages).

use rayon::prelude::*;

use super::argmin::Pullback;
use super::{Formulation, SearchConfig, SolveReport};
use crate::error::{Error, Result};
use crate::maps::ForwardMap;
use crate::measures::{dist2, pushforward, pushforward_grid, Grid, GridMeasure, ParticleMeasure};

/// Data mass allowed outside the discretized range before a solve is refused.
pub const RANGE_MISMATCH_TOL: f64 = 0.01;

fn ball_volume(dim: usize, r: f64) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0 * r,
        n => ball_volume(n - 2, r) * 2.0 * std::f64::consts::PI * r * r / n as f64,
    }
}

/// Band estimate of `∫ δ(G(x) − y) w(x) dx`: the (weighted) volume of
/// `{x ∈ Θ : |G(x) − y| < h/2}` divided by the volume of the band's cross
/// section (`h` for scalar data). Grid cells count by their centers; the result
/// is floored at the value of a single cell.
pub fn level_set_mass(g: &ForwardMap, grid: &Grid, y: &[f64], h: f64, weight: Option<&GridMeasure>) -> Result<f64> {
    Ok(level_set_mass_flagged(g, grid, y, h, weight)?.0)
}

pub(crate) fn level_set_mass_flagged(
    g: &ForwardMap,
    grid: &Grid,
    y: &[f64],
    h: f64,
    weight: Option<&GridMeasure>,
) -> Result<(f64, bool)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    if grid.dim() != g.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.in_dim(),
            found: grid.dim(),
        });
    }
    if y.len() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: y.len(),
        });
    }
    if let Some(w) = weight {
        if w.grid() != grid {
            return Err(Error::SupportMismatch);
        }
    }
    let section = ball_volume(g.out_dim(), 0.5 * h);
    let r2 = 0.25 * h * h;
    let vol = grid.cell_volume();
    // collected first so the summation order is fixed
    let cells: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.center(i);
            if !g.theta().contains(&c) || dist2(&g.eval(&c), y) >= r2 {
                return 0.0;
            }
            weight.map_or(1.0, |w| w.values()[i]) * vol
        })
        .collect();
    let mass: f64 = cells.iter().sum();
    let floor = vol / section;
    let value = mass / section;
    Ok(if value < floor { (floor, true) } else { (value, false) })
}

/// Assignment of parameter cells to data bins by the bin containing `G(center)`.
#[derive(Debug, Clone)]
pub struct FiberBins {
    theta_grid: Grid,
    data_grid: Grid,
    in_theta: Vec<bool>,
    bin_of: Vec<Option<usize>>,
    counts: Vec<usize>,
}

impl FiberBins {
    pub fn new(g: &ForwardMap, theta_grid: &Grid, data_grid: &Grid) -> Result<Self> {
        if theta_grid.dim() != g.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: g.in_dim(),
                found: theta_grid.dim(),
            });
        }
        if data_grid.dim() != g.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: g.out_dim(),
                found: data_grid.dim(),
            });
        }
        let cells: Vec<(bool, Option<usize>)> = (0..theta_grid.len())
            .into_par_iter()
            .map(|i| {
                let c = theta_grid.center(i);
                if g.theta().contains(&c) {
                    (true, data_grid.locate(&g.eval(&c)))
                } else {
                    (false, None)
                }
            })
            .collect();
        let mut counts = vec![0; data_grid.len()];
        for b in cells.iter().filter_map(|c| c.1) {
            counts[b] += 1;
        }
        Ok(Self {
            theta_grid: theta_grid.clone(),
            data_grid: data_grid.clone(),
            in_theta: cells.iter().map(|c| c.0).collect(),
            bin_of: cells.iter().map(|c| c.1).collect(),
            counts,
        })
    }

    pub fn theta_grid(&self) -> &Grid {
        &self.theta_grid
    }

    pub fn data_grid(&self) -> &Grid {
        &self.data_grid
    }

    /// Whether each parameter cell's center lies in Θ.
    pub fn in_theta(&self) -> &[bool] {
        &self.in_theta
    }

    /// Data bin of each parameter cell (`None` outside Θ or outside the data grid).
    pub fn bin_of(&self) -> &[Option<usize>] {
        &self.bin_of
    }

    /// Number of parameter cells in each data bin.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Bandwidth: the side of a data bin (geometric mean for uneven bins).
    pub fn bandwidth(&self) -> f64 {
        self.data_grid.cell_volume().powf(1.0 / self.data_grid.dim() as f64)
    }

    /// Value of the level-set mass carried by a single parameter cell.
    pub fn floor(&self) -> f64 {
        self.theta_grid.cell_volume() / self.data_grid.cell_volume()
    }

    /// Per-bin `∫ δ(G(x) − y_b) w(x) dx`: weighted parameter volume mapped
    /// into the bin over the bin volume.
    pub fn level_set_masses(&self, weight: Option<&[f64]>) -> Vec<f64> {
        let scale = self.theta_grid.cell_volume() / self.data_grid.cell_volume();
        let mut out = vec![0.0; self.data_grid.len()];
        for (i, b) in self.bin_of.iter().enumerate() {
            if let Some(b) = b {
                out[*b] += weight.map_or(1.0, |w| w[i]) * scale;
            }
        }
        out
    }

    /// Data mass in bins that no parameter cell reaches.
    pub fn unreachable_mass(&self, rho_y: &GridMeasure) -> f64 {
        (0..self.data_grid.len())
            .filter(|&b| self.counts[b] == 0)
            .map(|b| rho_y.cell_mass(b))
            .sum()
    }

    /// Largest coefficient of variation of `values` over the cells of one bin.
    pub fn max_fiber_cv(&self, values: &[f64]) -> f64 {
        let n = self.data_grid.len();
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for (i, b) in self.bin_of.iter().enumerate() {
            if let Some(b) = b {
                sum[*b] += values[i];
                sq[*b] += values[i] * values[i];
            }
        }
        (0..n)
            .filter(|&b| self.counts[b] > 1 && sum[b] > 0.0)
            .map(|b| {
                let k = self.counts[b] as f64;
                let mean = sum[b] / k;
                let var = (sq[b] / k - mean * mean).max(0.0);
                var.sqrt() / mean
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_data(&self, rho_y: &GridMeasure) -> Result<f64> {
        if rho_y.grid() != &self.data_grid {
            return Err(Error::SupportMismatch);
        }
        let outside = self.unreachable_mass(rho_y);
        if outside > RANGE_MISMATCH_TOL {
            return Err(Error::RangeMismatch { outside });
        }
        Ok(outside)
    }
}

pub(crate) fn constraint_residual(push: &GridMeasure, rho_y: &GridMeasure) -> f64 {
    push.masses().iter().zip(rho_y.masses()).map(|(a, b)| (a - b).abs()).sum()
}

/// Entropy minimizer subject to `G#ρx = ρy`: on each fiber the density is
/// `ρy(G(x)) / ∫ δ(G(x) − G(x′)) dx′`.
pub fn entropy_solution(g: &ForwardMap, theta_grid: &Grid, rho_y: &GridMeasure) -> Result<SolveReport> {
    let bins = FiberBins::new(g, theta_grid, rho_y.grid())?;
    let outside = bins.check_data(rho_y)?;
    let level = bins.level_set_masses(None);
    let floor = bins.floor();
    let mut floor_hits = 0usize;
    let bin_value: Vec<f64> = (0..level.len())
        .map(|b| {
            let t = rho_y.cell_mass(b);
            if t == 0.0 || bins.counts[b] == 0 {
                return 0.0;
            }
            if level[b] < floor {
                floor_hits += 1;
            }
            t / level[b].max(floor)
        })
        .collect();
    let values: Vec<f64> = bins.bin_of.iter().map(|b| b.map_or(0.0, |b| bin_value[b])).collect();
    let optimizer = GridMeasure::new(theta_grid.clone(), values, bins.in_theta.clone())?;
    let push = pushforward_grid(g, &optimizer, rho_y.grid())?;
    let mut report = SolveReport::new(
        optimizer.clone().into(),
        push.clone().into(),
        optimizer.entropy(),
        Formulation::Entropy,
    );
    report.diag("bandwidth", bins.bandwidth());
    report.diag("level_set_floor_hits", floor_hits as f64);
    report.diag("unreachable_mass", outside);
    report.diag("constraint_residual", constraint_residual(&push, rho_y));
    report.diag("max_fiber_cv", bins.max_fiber_cv(optimizer.values()));
    Ok(report)
}

/// Second-moment minimizer subject to `G#ρx = ρy`: `ρx* = 𝓗#ρy`.
pub fn moment_solution(g: &ForwardMap, rho_y: &ParticleMeasure) -> Result<SolveReport> {
    moment_solution_with(g, rho_y, &SearchConfig::default())
}

pub fn moment_solution_with(g: &ForwardMap, rho_y: &ParticleMeasure, search: &SearchConfig) -> Result<SolveReport> {
    if rho_y.dim() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: rho_y.dim(),
        });
    }
    let pb = Pullback::new(g, search)?;
    let optimizer = pb.map_measure(rho_y, |pb, y| pb.least_norm(y))?;
    let push = pushforward(g, &optimizer)?;
    let residual = push
        .points()
        .zip(rho_y.points())
        .map(|(a, b)| dist2(a, b).sqrt())
        .fold(0.0, f64::max);
    let objective = optimizer.moment(2.0)?;
    let mut report = SolveReport::new(optimizer.into(), push.into(), objective, Formulation::Moment);
    report.diag("max_fiber_residual", residual);
    report.diag("fiber_tolerance", pb.fiber_tolerance());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{linear_map, offset_polar_map};
    use crate::measures::{Bounds, Domain};
    use crate::oracles::{mirror_descent_simplex, SimplexObjective, SimplexProblem};
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn theta_grid(n: usize) -> Grid {
        Grid::new(Bounds::cube(2, 0.0, 2.0).unwrap(), vec![n, n]).unwrap()
    }

    #[test]
    fn level_set_mass_of_circle() {
        let g = offset_polar_map();
        let v = level_set_mass(&g, &theta_grid(400), &[0.5], 0.02, None).unwrap();
        assert!((v - PI).abs() / PI < 0.01, "{v}");
    }

    #[test]
    fn level_set_mass_of_squared_radius() {
        let g = ForwardMap::custom("r2", 2, 1, Domain::Whole(2), |x| vec![x[0] * x[0] + x[1] * x[1]]);
        let grid = Grid::new(Bounds::cube(2, -2.0, 2.0).unwrap(), vec![800, 800]).unwrap();
        let v = level_set_mass(&g, &grid, &[1.0], 0.02, None).unwrap();
        assert!((v - PI).abs() / PI < 0.01, "{v}");
    }

    #[test]
    fn level_set_mass_of_constant_map() {
        let g = ForwardMap::custom("c", 2, 1, Domain::Box(Bounds::cube(2, 0.0, 1.0).unwrap()), |_| vec![0.3]);
        let grid = Grid::new(Bounds::cube(2, 0.0, 1.0).unwrap(), vec![10, 10]).unwrap();
        let v = level_set_mass(&g, &grid, &[0.3], 0.05, None).unwrap();
        assert!((v - 20.0).abs() < 1e-12);
        // a point off the range only gets the single-cell floor
        let off = level_set_mass(&g, &grid, &[0.9], 0.05, None).unwrap();
        assert!((off - 0.01 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn identity_entropy_solution_is_the_data() {
        let grid = Grid::new(Bounds::cube(2, 0.0, 1.0).unwrap(), vec![8, 8]).unwrap();
        let g = linear_map(DMatrix::identity(2, 2), Domain::Box(grid.bounds().clone())).unwrap();
        let rho = GridMeasure::from_density(grid.clone(), None, |x| 1.0 + x[0] * x[1]).unwrap();
        let r = entropy_solution(&g, &grid, &rho).unwrap();
        let opt = r.optimizer.as_grid().unwrap();
        for (a, b) in opt.values().iter().zip(rho.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(r.diagnostic("constraint_residual").unwrap() < 1e-12);
    }

    #[test]
    fn projection_map_entropy_matches_mirror_descent() {
        let bounds = Bounds::cube(2, 0.0, 1.0).unwrap();
        let grid = Grid::new(bounds.clone(), vec![40, 40]).unwrap();
        let g = linear_map(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), Domain::Box(bounds)).unwrap();
        let data = Grid::new(Bounds::new(vec![0.0], vec![1.0]).unwrap(), vec![20]).unwrap();
        let rho = GridMeasure::uniform(data.clone(), None).unwrap();
        let r = entropy_solution(&g, &grid, &rho).unwrap();
        let opt = r.optimizer.as_grid().unwrap();
        for v in opt.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let bins = FiberBins::new(&g, &grid, &data).unwrap();
        let bin_of: Vec<usize> = bins.bin_of().iter().map(|b| b.unwrap()).collect();
        let prob = SimplexProblem::new(bin_of, rho.masses(), SimplexObjective::Entropy).unwrap();
        let p = mirror_descent_simplex(&prob, 10_000, 0.5).unwrap();
        for (a, b) in p.iter().zip(opt.masses()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn data_off_the_range_is_rejected() {
        let g = offset_polar_map();
        let data = Grid::new(Bounds::new(vec![0.0], vec![2.0]).unwrap(), vec![40]).unwrap();
        let rho = GridMeasure::uniform(data, None).unwrap();
        assert!(matches!(entropy_solution(&g, &theta_grid(60), &rho), Err(Error::RangeMismatch { .. })));
    }

    #[test]
    fn moment_solution_on_the_diagonal() {
        let g = offset_polar_map();
        let rho = ParticleMeasure::uniform(1, (0..=10).map(|k| vec![k as f64 / 10.0]).collect()).unwrap();
        let r = moment_solution(&g, &rho).unwrap();
        for (x, y) in r.optimizer.as_particles().unwrap().points().zip(rho.points()) {
            let e = 1.0 - y[0] / 2f64.sqrt();
            assert!((x[0] - e).abs() < 2e-3 && (x[1] - e).abs() < 2e-3, "{x:?} for r={}", y[0]);
            assert!((x[0] - x[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn moment_solution_linear_is_right_inverse() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let g = linear_map(a.clone(), Domain::Whole(3)).unwrap();
        let rho = ParticleMeasure::uniform(2, vec![vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let r = moment_solution(&g, &rho).unwrap();
        let pinv = crate::maps::pseudoinverse(&a).unwrap();
        for (x, y) in r.optimizer.as_particles().unwrap().points().zip(rho.points()) {
            let e = &pinv * nalgebra::DVector::from_column_slice(y);
            for k in 0..3 {
                assert!((x[k] - e[k]).abs() < 1e-12);
            }
        }
        assert!(r.diagnostic("max_fiber_residual").unwrap() < 1e-12);
    }

    #[test]
    fn tall_linear_off_range_has_empty_fiber() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let g = linear_map(a, Domain::Whole(2)).unwrap();
        let rho = ParticleMeasure::dirac(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(moment_solution(&g, &rho), Err(Error::EmptyFiber { .. })));
    }
}
