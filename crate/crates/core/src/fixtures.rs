//! The worked examples as (map, data, analytic answer) bundles.
//!
//! Sampling is seeded: each named component draws from its own ChaCha stream
//! derived from a single 64-bit seed. Circle components are equiangular so
//! that their projections have exact images.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::divergences::{jensen_lower_bound, PhiKind};
use crate::error::{Error, Result};
use crate::maps::{linear_map, offset_polar_map, offset_polar_map_with_radius, polar_map, pseudoinverse, tikhonov_operator, ForwardMap};
use crate::measures::{Bounds, Domain, Grid, GridMeasure, Measure, ParticleMeasure};
use crate::oracles::{bessel_i0, bessel_i0_quadrature};
use crate::solvers::{
    conditional_reconstruction, entropy_solution, marginal_reconstruction_with, moment_solution, reg_entropy_solution,
    reg_wp_solution_with, RegularizationConfig, SearchConfig,
};
use crate::transport::OtMethod;

pub const FIXTURE_NAMES: [&str; 7] = [
    "polar-over",
    "offset-polar-under",
    "linear-over",
    "linear-under",
    "linear-reg",
    "offset-polar-reg-kl",
    "offset-polar-reg-w2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    /// Particle count for sampled data.
    pub samples: usize,
    /// Cells per axis of parameter (and grid-form data) discretizations.
    pub grid: usize,
    /// Regularization strength for the regularized fixtures.
    pub alpha: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 4096,
            grid: 200,
            alpha: 1.0,
        }
    }
}

/// Independent generator for one named component.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a of the name selects the stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Over,
    Under,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Analytic {
    /// Conditional answer `1/π` on the unit disc; marginal answer half disc,
    /// half unit circle.
    PolarOver,
    /// Closed forms on the ball around `(1,1)` for radial data `μr`.
    OffsetPolar { alpha: f64 },
    /// `ρx* = operator # ρy`.
    Linear { operator: DMatrix<f64>, regime: Regime, alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub map: ForwardMap,
    /// Particle-form data.
    pub data: ParticleMeasure,
    /// Grid-form data, where the example has a density.
    pub grid_data: Option<GridMeasure>,
    /// Discretization of Θ for the grid solvers.
    pub theta_grid: Option<Grid>,
    /// Prior density on `theta_grid` for the entropy-regularized example.
    pub prior: Option<GridMeasure>,
    pub analytic: Analytic,
    pub tolerances: BTreeMap<String, f64>,
}

fn tolerances(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Fixture by its stable name.
pub fn by_name(name: &str, cfg: &FixtureConfig) -> Result<Fixture> {
    match name {
        "polar-over" => polar_overdetermined(cfg),
        "offset-polar-under" => offset_polar_underdetermined(&uniform_radial(cfg.grid / 4)?.into(), cfg),
        "linear-over" => linear_fixture(default_tall(), Regime::Over, None, cfg),
        "linear-under" => linear_fixture(default_wide(), Regime::Under, None, cfg),
        "linear-reg" => linear_fixture(default_tall(), Regime::Over, Some(cfg.alpha), cfg),
        "offset-polar-reg-kl" => offset_polar_reg_kl(cfg),
        "offset-polar-reg-w2" => offset_polar_reg_w2_fixture(cfg),
        other => Err(Error::InvalidArgument(format!("unknown fixture '{other}'"))),
    }
}

fn default_tall() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
}

fn default_wide() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0])
}

/// Half uniform on the unit disc, half uniform on the radius-2 circle.
pub fn polar_overdetermined(cfg: &FixtureConfig) -> Result<Fixture> {
    let half = (cfg.samples / 2).max(1);
    let mut rng = stream(cfg.seed, "polar-over/disc");
    let mut points = Vec::with_capacity(2 * half);
    for _ in 0..half {
        let r = rng.random::<f64>().sqrt();
        let t = 2.0 * PI * rng.random::<f64>();
        points.push(vec![r * t.cos(), r * t.sin()]);
    }
    points.extend(ring_points(2.0, half));
    let data = ParticleMeasure::uniform(2, points)?;
    Ok(Fixture {
        name: "polar-over".into(),
        map: polar_map(),
        data,
        grid_data: Some(polar_over_grid(cfg.grid)?),
        theta_grid: None,
        prior: None,
        analytic: Analytic::PolarOver,
        tolerances: tolerances(&[
            ("conditional_relative_l1", 0.02),
            ("objective", 1e-3),
            ("projection_radius", 1e-9),
            ("fixed_point", 1e-9),
        ]),
    })
}

/// `n` equiangular points on the circle of radius `radius`.
pub fn ring_points(radius: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            vec![radius * t.cos(), radius * t.sin()]
        })
        .collect()
}

/// Grid form of the polar data on `[−2.5, 2.5]²`: the disc half as an exact
/// density on the cells whose centers lie in the disc, the ring half as a
/// histogram of equiangular points.
pub fn polar_over_grid(n: usize) -> Result<GridMeasure> {
    let grid = Grid::new(Bounds::cube(2, -2.5, 2.5)?, vec![n, n])?;
    let disc = GridMeasure::from_density(grid.clone(), None, |y| if y[0] * y[0] + y[1] * y[1] <= 1.0 { 1.0 } else { 0.0 })?;
    let ring = GridMeasure::from_particles(grid.clone(), &ParticleMeasure::uniform(2, ring_points(2.0, 64 * n))?)?;
    let values = disc.values().iter().zip(ring.values()).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    GridMeasure::new(grid, values, vec![true; n * n])
}

/// Closed unit disc (the range of the polar map).
pub fn in_unit_disc(y: &[f64]) -> bool {
    y[0] * y[0] + y[1] * y[1] <= 1.0 + 1e-12
}

pub fn polar_conditional_density(y: &[f64]) -> f64 {
    if y[0] * y[0] + y[1] * y[1] <= 1.0 {
        1.0 / PI
    } else {
        0.0
    }
}

/// Uniform law on `[0, 1]` as a histogram with `bins` cells.
pub fn uniform_radial(bins: usize) -> Result<GridMeasure> {
    GridMeasure::uniform(Grid::new(Bounds::new(vec![0.0], vec![1.0])?, vec![bins.max(1)])?, None)
}

/// `n` midpoint quantiles of the uniform law on `[0, 1]`.
pub fn uniform_radial_particles(n: usize) -> Result<ParticleMeasure> {
    ParticleMeasure::uniform(1, (0..n).map(|k| vec![(k as f64 + 0.5) / n as f64]).collect())
}

fn check_radial(mu_r: &Measure) -> Result<()> {
    if mu_r.dim() != 1 {
        return Err(Error::UnsupportedData(format!("radial law must be 1-D, got dimension {}", mu_r.dim())));
    }
    let outside: f64 = mu_r
        .masses()
        .iter()
        .zip(mu_r.locations())
        .filter(|(_, r)| !(0.0..=1.0).contains(&r[0]))
        .map(|(m, _)| m)
        .sum();
    let grid_escapes = mu_r.as_grid().is_some_and(|g| {
        let b = g.grid().bounds();
        (b.lower()[0] < 0.0 || b.upper()[0] > 1.0) && outside > 0.0
    });
    if outside > 0.0 || grid_escapes {
        return Err(Error::UnsupportedData(format!("{outside:e} of the radial mass lies outside [0,1]")));
    }
    Ok(())
}

fn offset_theta_grid(n: usize, radius: f64) -> Result<Grid> {
    Grid::new(Bounds::cube(2, 1.0 - radius, 1.0 + radius)?, vec![n, n])
}

fn radial_particles(mu_r: &Measure, cfg: &FixtureConfig) -> Result<ParticleMeasure> {
    match mu_r {
        Measure::Particles(p) => Ok(p.clone()),
        // midpoint quantiles of the histogram law
        Measure::Grid(g) => {
            let cdf: Vec<f64> = g
                .masses()
                .iter()
                .scan(0.0, |acc, m| {
                    *acc += m;
                    Some(*acc)
                })
                .collect();
            let grid = g.grid();
            let (lo, w) = (grid.bounds().lower()[0], grid.spacing(0));
            let n = cfg.samples.max(1);
            let points = (0..n)
                .map(|k| {
                    let q = (k as f64 + 0.5) / n as f64;
                    let b = cdf.partition_point(|&c| c < q).min(cdf.len() - 1);
                    let below = if b == 0 { 0.0 } else { cdf[b - 1] };
                    let m = g.cell_mass(b);
                    let frac = if m > 0.0 { (q - below) / m } else { 0.5 };
                    vec![lo + w * (b as f64 + frac.clamp(0.0, 1.0))]
                })
                .collect();
            ParticleMeasure::uniform(1, points)
        }
    }
}

/// `G(x) = |x − (1,1)|` on the unit ball around `(1,1)` with radial data `μr`.
pub fn offset_polar_underdetermined(mu_r: &Measure, cfg: &FixtureConfig) -> Result<Fixture> {
    check_radial(mu_r)?;
    Ok(Fixture {
        name: "offset-polar-under".into(),
        map: offset_polar_map(),
        data: radial_particles(mu_r, cfg)?,
        grid_data: mu_r.as_grid().cloned(),
        theta_grid: Some(offset_theta_grid(cfg.grid, 1.0)?),
        prior: None,
        analytic: Analytic::OffsetPolar { alpha: 0.0 },
        tolerances: tolerances(&[
            ("entropy_relative_l1", 0.05),
            ("fiber_cv", 1e-6),
            ("least_norm", 2e-3),
            ("diagonal", 1e-6),
        ]),
    })
}

fn offset_polar_reg_kl(cfg: &FixtureConfig) -> Result<Fixture> {
    let mut f = offset_polar_underdetermined(&uniform_radial(cfg.grid / 4)?.into(), cfg)?;
    let grid = f.theta_grid.clone().expect("offset polar fixtures carry a grid");
    f.name = "offset-polar-reg-kl".into();
    f.prior = Some(gaussian_prior(&grid, f.map.theta())?);
    f.analytic = Analytic::OffsetPolar { alpha: cfg.alpha };
    f.tolerances = tolerances(&[("reg_entropy_relative_l1", 0.05), ("bessel", 1e-10)]);
    Ok(f)
}

/// The regularized-W2 example on the ball of radius √2 around `(1,1)`, large
/// enough to contain the free minimizers `F(r)(1,1)` for all `r ∈ [0,1]`.
fn offset_polar_reg_w2_fixture(cfg: &FixtureConfig) -> Result<Fixture> {
    let n = cfg.samples.clamp(1, 1024);
    Ok(Fixture {
        name: "offset-polar-reg-w2".into(),
        map: offset_polar_map_with_radius(SQRT_2)?,
        data: uniform_radial_particles(n)?,
        grid_data: None,
        theta_grid: None,
        prior: None,
        analytic: Analytic::OffsetPolar { alpha: cfg.alpha },
        tolerances: tolerances(&[("reg_map", 2e-3)]),
    })
}

/// Linear example `G = A` on ℝᵐ with Gaussian data. `alpha` selects the
/// regularized variant.
pub fn linear_fixture(a: DMatrix<f64>, regime: Regime, alpha: Option<f64>, cfg: &FixtureConfig) -> Result<Fixture> {
    match regime {
        Regime::Over if a.nrows() < a.ncols() => {
            return Err(Error::InvalidArgument("overdetermined regime needs rows >= cols".into()))
        }
        Regime::Under if a.nrows() > a.ncols() => {
            return Err(Error::InvalidArgument("underdetermined regime needs rows <= cols".into()))
        }
        _ => {}
    }
    let map = linear_map(a.clone(), Domain::Whole(a.ncols()))?;
    let operator = match alpha {
        Some(alpha) => tikhonov_operator(&a, alpha)?,
        None => pseudoinverse(&a)?,
    };
    let name = match (regime, alpha) {
        (_, Some(_)) => "linear-reg",
        (Regime::Over, None) => "linear-over",
        (Regime::Under, None) => "linear-under",
    };
    let mut rng = stream(cfg.seed, &format!("{name}/data"));
    let n = a.nrows();
    let points = (0..cfg.samples.max(1))
        .map(|_| (0..n).map(|k| rng.sample::<f64, _>(StandardNormal) + 0.5 * k as f64).collect())
        .collect();
    Ok(Fixture {
        name: name.into(),
        map,
        data: ParticleMeasure::uniform(n, points)?,
        grid_data: None,
        theta_grid: None,
        prior: None,
        analytic: Analytic::Linear {
            operator,
            regime,
            alpha: alpha.unwrap_or(0.0),
        },
        tolerances: tolerances(&[("samplewise", 1e-10)]),
    })
}

/// `𝓗(r) = (1 − r/√2)(1, 1)`.
pub fn offset_polar_least_norm(r: f64) -> [f64; 2] {
    let t = 1.0 - r * FRAC_1_SQRT_2;
    [t, t]
}

/// `F̃(r) = (1 − (√2/2) r)/(1 + α) · (1, 1)` for `p = 2`.
pub fn offset_polar_reg_w2(r: f64, alpha: f64) -> [f64; 2] {
    let t = (1.0 - FRAC_1_SQRT_2 * r) / (1.0 + alpha);
    [t, t]
}

fn offset_radius(x: &[f64]) -> f64 {
    ((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt()
}

/// Entropy answer `μr(r)/(2πr)` at `x`, with `r = |x − (1,1)|`.
pub fn offset_polar_entropy_density<F: Fn(f64) -> f64>(mu_r: F, x: &[f64]) -> f64 {
    let r = offset_radius(x);
    if r > 1.0 {
        return 0.0;
    }
    mu_r(r) / (2.0 * PI * r)
}

/// Gaussian prior `∝ exp(−|x|²/2)` restricted to `theta` on `grid`.
pub fn gaussian_prior(grid: &Grid, theta: &Domain) -> Result<GridMeasure> {
    GridMeasure::from_density(grid.clone(), Some(theta), |x| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp())
}

/// Unnormalized entropy-regularized answer with the Gaussian prior:
/// `exp(−|x|²/2) · [μr(r) / (2πr e^{−(2+r²)/2} I₀(√2 r))]^{1/(1+α)}`.
pub fn offset_polar_reg_kl_density<F: Fn(f64) -> f64>(mu_r: F, alpha: f64, x: &[f64]) -> Result<f64> {
    let r = offset_radius(x);
    if r > 1.0 {
        return Ok(0.0);
    }
    let prior = (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp();
    let level = 2.0 * PI * r * (-(2.0 + r * r) / 2.0).exp() * bessel_i0(SQRT_2 * r)?;
    Ok(prior * (mu_r(r) / level).powf(1.0 / (1.0 + alpha)))
}

/// One comparison of a solver output against the analytic answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

/// `∫|ρ − a| / ∫|a|` over the cells of `computed`, with `a` evaluated at cell
/// centers and rescaled to unit mass when `normalize` is set.
pub fn relative_l1<F: Fn(&[f64]) -> f64>(computed: &GridMeasure, analytic: F, normalize: bool) -> f64 {
    let grid = computed.grid();
    let vol = grid.cell_volume();
    let a: Vec<f64> = (0..grid.len()).map(|i| analytic(&grid.center(i))).collect();
    let scale = if normalize { a.iter().sum::<f64>() * vol } else { 1.0 };
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &ai) in a.iter().enumerate() {
        let ai = ai / scale;
        num += (computed.values()[i] - ai).abs() * vol;
        den += ai.abs() * vol;
    }
    num / den
}

/// Solves the fixture's problems and compares with its closed forms.
pub fn validate(f: &Fixture, ot: OtMethod) -> Result<Vec<Check>> {
    let tol = |k: &str| f.tolerances.get(k).copied().unwrap_or(0.0);
    let search = SearchConfig::default();
    let mut checks = Vec::new();
    match (&f.analytic, f.name.as_str()) {
        (Analytic::PolarOver, _) => {
            let data: Measure = f.grid_data.clone().map_or_else(|| f.data.clone().into(), Measure::from);
            let kind = PhiKind::KL;
            let report = conditional_reconstruction(&f.map, &data, in_unit_disc, &kind)?;
            if let Some(push) = report.pushforward_of_optimizer.as_grid() {
                let err = relative_l1(push, polar_conditional_density, false);
                checks.push(Check::new("conditional_relative_l1", err, tol("conditional_relative_l1")));
            }
            let nu1 = report.diagnostic("range_mass").unwrap_or(0.0);
            let bound = jensen_lower_bound(&kind, nu1)?;
            checks.push(Check::new("objective_vs_ln2", (report.objective - 2f64.ln()).abs(), tol("objective")));
            checks.push(Check::new("objective_vs_jensen", (report.objective - bound).abs(), tol("objective")));

            let report = marginal_reconstruction_with(&f.map, &f.data, 2.0, ot, &search)?;
            let push = report
                .pushforward_of_optimizer
                .as_particles()
                .expect("marginal reconstruction yields particles");
            let (mut radius, mut fixed) = (0.0f64, 0.0f64);
            for (y, py) in f.data.points().zip(push.points()) {
                if in_unit_disc(y) {
                    fixed = fixed.max(((py[0] - y[0]).powi(2) + (py[1] - y[1]).powi(2)).sqrt());
                } else {
                    radius = radius.max(((py[0] * py[0] + py[1] * py[1]).sqrt() - 1.0).abs());
                }
            }
            checks.push(Check::new("projection_radius", radius, tol("projection_radius")));
            checks.push(Check::new("fixed_points", fixed, tol("fixed_point")));
        }
        (Analytic::OffsetPolar { .. }, "offset-polar-under") => {
            let (Some(grid), Some(rho)) = (&f.theta_grid, &f.grid_data) else {
                return Err(Error::InvalidArgument("fixture lacks grid data".into()));
            };
            let density = radial_density(rho);
            let report = entropy_solution(&f.map, grid, rho)?;
            let opt = report.optimizer.as_grid().expect("entropy solution is a grid measure");
            let err = relative_l1(opt, |x| offset_polar_entropy_density(&density, x), false);
            checks.push(Check::new("entropy_relative_l1", err, tol("entropy_relative_l1")));
            checks.push(Check::new("fiber_cv", report.diagnostic("max_fiber_cv").unwrap_or(f64::INFINITY), tol("fiber_cv")));

            let report = moment_solution(&f.map, &f.data)?;
            let opt = report.optimizer.as_particles().expect("moment solution is particles");
            let (mut diag, mut err) = (0.0f64, 0.0f64);
            for (x, r) in opt.points().zip(f.data.points()) {
                diag = diag.max((x[0] - x[1]).abs());
                let h = offset_polar_least_norm(r[0]);
                err = err.max(((x[0] - h[0]).powi(2) + (x[1] - h[1]).powi(2)).sqrt());
            }
            checks.push(Check::new("diagonal", diag, tol("diagonal")));
            checks.push(Check::new("least_norm", err, tol("least_norm")));
        }
        (Analytic::OffsetPolar { alpha }, "offset-polar-reg-kl") => {
            let (Some(grid), Some(rho), Some(prior)) = (&f.theta_grid, &f.grid_data, &f.prior) else {
                return Err(Error::InvalidArgument("fixture lacks grid data or prior".into()));
            };
            let density = radial_density(rho);
            let cfg = RegularizationConfig::new(*alpha, 2.0)?.with_prior(prior.clone());
            let report = reg_entropy_solution(&f.map, grid, rho, &cfg)?;
            let opt = report.optimizer.as_grid().expect("regularized entropy solution is a grid measure");
            let err = relative_l1(
                opt,
                |x| offset_polar_reg_kl_density(&density, *alpha, x).unwrap_or(f64::NAN),
                true,
            );
            checks.push(Check::new("reg_entropy_relative_l1", err, tol("reg_entropy_relative_l1")));
            let bessel = [0.0, 0.5, 1.0, SQRT_2]
                .iter()
                .map(|&a| bessel_i0(a).map(|v| (v - bessel_i0_quadrature(a, 64)).abs() / v))
                .collect::<Result<Vec<_>>>()?;
            checks.push(Check::new("bessel", bessel.into_iter().fold(0.0, f64::max), tol("bessel")));
        }
        (Analytic::OffsetPolar { alpha }, _) => {
            let cfg = RegularizationConfig::new(*alpha, 2.0)?;
            let report = reg_wp_solution_with(&f.map, &f.data, &cfg, ot, &search)?;
            let opt = report.optimizer.as_particles().expect("regularized Wasserstein solution is particles");
            let err = opt.points().zip(f.data.points()).fold(0.0f64, |m, (x, r)| {
                let t = offset_polar_reg_w2(r[0], *alpha);
                m.max(((x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2)).sqrt())
            });
            checks.push(Check::new("reg_map", err, tol("reg_map")));
        }
        (Analytic::Linear { operator, regime, alpha }, _) => {
            let report = match (regime, *alpha > 0.0) {
                (_, true) => reg_wp_solution_with(&f.map, &f.data, &RegularizationConfig::new(*alpha, 2.0)?, ot, &search)?,
                (Regime::Over, false) => marginal_reconstruction_with(&f.map, &f.data, 2.0, ot, &search)?,
                (Regime::Under, false) => moment_solution(&f.map, &f.data)?,
            };
            let opt = report.optimizer.as_particles().expect("linear solutions are particles");
            let mut err = 0.0f64;
            for (x, y) in opt.points().zip(f.data.points()) {
                let direct = operator * nalgebra::DVector::from_column_slice(y);
                let scale = 1.0 + direct.amax();
                err = err.max(x.iter().zip(direct.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
            }
            checks.push(Check::new("samplewise", err, tol("samplewise")));
        }
    }
    Ok(checks)
}

/// Piecewise-constant density of a 1-D histogram law.
pub fn radial_density(mu_r: &GridMeasure) -> impl Fn(f64) -> f64 + '_ {
    move |r| {
        let grid = mu_r.grid();
        match grid.locate(&[r]) {
            Some(i) => mu_r.values()[i],
            None if r == grid.bounds().upper()[0] => mu_r.values()[grid.len() - 1],
            None => 0.0,
        }
    }
}
