//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use minv_core::divergences::{jensen_lower_bound, phi_divergence};
use minv_core::fixtures::{
    self, gaussian_prior, in_unit_disc, offset_polar_reg_kl_density, polar_overdetermined, radial_density,
    uniform_radial, FixtureConfig,
};
use minv_core::maps::{augment, linear_map, offset_polar_map, polar_map};
use minv_core::measures::{pushforward, pushforward_grid};
use minv_core::oracles::{bessel_i0, bessel_i0_quadrature, brute_force_ot, mirror_descent_simplex, SimplexObjective, SimplexProblem};
use minv_core::solvers::{
    augmented_objective_identity_check, conditional_reconstruction, entropy_solution, marginal_reconstruction,
    moment_solution, reg_entropy_solution, reg_wp_solution, tikhonov_bound, FiberBins, Pullback,
};
use minv_core::transport::{cost_matrix, exact_ot, sinkhorn, transport_cost, wasserstein_p, SINKHORN_MAX_ITER};
use minv_core::{
    Bounds, Domain, ForwardMap, Grid, GridMeasure, Measure, OtMethod, ParticleMeasure, PhiKind, RegularizationConfig,
    SearchConfig, SolveReport,
};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + tag)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Σ|ρ − a|·vol / Σ|a|·vol` over all cells.
fn relative_l1(values: &[f64], analytic: &[f64]) -> f64 {
    let num: f64 = values.iter().zip(analytic).map(|(v, a)| (v - a).abs()).sum();
    let den: f64 = analytic.iter().map(|a| a.abs()).sum();
    num / den
}

struct Polar {
    rho: GridMeasure,
    report: SolveReport,
}

fn polar_conditional() -> Result<&'static Polar, String> {
    static CELL: OnceLock<Result<Polar, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = polar_overdetermined(&FixtureConfig::default()).map_err(err)?;
        let rho = f.grid_data.clone().ok_or("polar fixture lacks grid data")?;
        let report = conditional_reconstruction(&f.map, &rho.clone().into(), in_unit_disc, &PhiKind::KL).map_err(err)?;
        Ok(Polar { rho, report })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn criterion_1() -> Outcome {
    let Polar { rho, report } = polar_conditional()?;
    let push = report.pushforward_of_optimizer.as_grid().ok_or("expected a grid pushforward")?;
    let grid = push.grid();
    let analytic: Vec<f64> = (0..grid.len())
        .map(|i| {
            let c = grid.center(i);
            if c[0] * c[0] + c[1] * c[1] <= 1.0 {
                1.0 / PI
            } else {
                0.0
            }
        })
        .collect();
    let l1 = relative_l1(push.values(), &analytic);
    let nu1 = rho.masses().iter().enumerate().filter(|(i, _)| in_unit_disc(&grid.center(*i))).map(|(_, m)| m).sum::<f64>();
    let bound = jensen_lower_bound(&PhiKind::KL, 0.5).map_err(err)?;
    let gap = (report.objective - LN_2).abs();
    Ok((
        l1 <= 0.02 && gap <= 1e-3 && (bound - LN_2).abs() < 1e-15,
        format!("relative L1 {l1:.3e} (<= 2e-2), |KL - ln 2| {gap:.3e} (<= 1e-3), range mass {nu1:.12}"),
    ))
}

fn criterion_2() -> Outcome {
    let Polar { rho, report } = polar_conditional()?;
    let opt = report.pushforward_of_optimizer.as_grid().ok_or("expected a grid pushforward")?;
    let grid = opt.grid().clone();
    let disc: Vec<bool> = (0..grid.len()).map(|i| in_unit_disc(&grid.center(i))).collect();
    let data: Measure = rho.clone().into();
    let mut r = rng(2);
    let mut worst = f64::INFINITY;
    for kind in [PhiKind::KL, PhiKind::ChiSquared, PhiKind::TotalVariation] {
        let best = phi_divergence(&report.pushforward_of_optimizer, &data, &kind).map_err(err)?;
        for trial in 0..200 {
            let lambda: f64 = r.random();
            let sparsity: f64 = r.random();
            let values: Vec<f64> = (0..grid.len())
                .map(|i| {
                    if !disc[i] {
                        return 0.0;
                    }
                    let noise: f64 = r.random();
                    match trial % 4 {
                        // arbitrary positive density
                        0 => noise,
                        // mixture with the optimizer
                        1 => lambda * opt.values()[i] + (1.0 - lambda) * noise,
                        // sparse support
                        2 => {
                            if noise < sparsity {
                                noise
                            } else {
                                0.0
                            }
                        }
                        // small multiplicative perturbation
                        _ => opt.values()[i] * (1.0 + 0.01 * (noise - 0.5)),
                    }
                })
                .collect();
            if values.iter().all(|&v| v == 0.0) {
                continue;
            }
            let competitor: Measure = GridMeasure::new(grid.clone(), values, vec![true; grid.len()]).map_err(err)?.into();
            let d = phi_divergence(&competitor, &data, &kind).map_err(err)?;
            worst = worst.min(d - best);
        }
    }
    Ok((worst >= -1e-10, format!("smallest competitor margin {worst:.3e} over 600 trials (>= -1e-10)")))
}

fn criterion_3() -> Outcome {
    let f = polar_overdetermined(&FixtureConfig::default()).map_err(err)?;
    let report = marginal_reconstruction(&f.map, &f.data, 2.0).map_err(err)?;
    let push = report.pushforward_of_optimizer.as_particles().ok_or("expected particles")?;
    let opt = report.optimizer.as_particles().ok_or("expected particles")?;
    let (mut radius, mut fixed) = (0.0f64, 0.0f64);
    for (y, py) in f.data.points().zip(push.points()) {
        if in_unit_disc(y) {
            fixed = fixed.max(dist(py, y));
        } else {
            radius = radius.max((norm(py) - 1.0).abs());
        }
    }
    // optimality against random parameter measures on a subsample
    let idx: Vec<usize> = (0..f.data.len()).step_by(64).collect();
    let sub_y = ParticleMeasure::uniform(2, idx.iter().map(|&i| f.data.point(i).to_vec()).collect()).map_err(err)?;
    let sub_x = ParticleMeasure::uniform(2, idx.iter().map(|&i| opt.point(i).to_vec()).collect()).map_err(err)?;
    let objective = |x: &ParticleMeasure| -> Result<f64, String> {
        transport_cost(&pushforward(&f.map, x).map_err(err)?, &sub_y, 2.0, OtMethod::Exact).map_err(err)
    };
    let best = objective(&sub_x)?;
    let mut r = rng(3);
    let mut worst = f64::INFINITY;
    for trial in 0..200 {
        let points: Vec<Vec<f64>> = if trial % 2 == 0 {
            let n = r.random_range(8..=96);
            (0..n).map(|_| vec![r.random::<f64>(), 2.0 * PI * r.random::<f64>()]).collect()
        } else {
            let scale = [1e-3, 1e-2, 1e-1][trial % 3];
            sub_x
                .points()
                .map(|x| {
                    let mut p = vec![
                        x[0] + scale * r.sample::<f64, _>(StandardNormal),
                        x[1] + scale * r.sample::<f64, _>(StandardNormal),
                    ];
                    f.map.theta().project(&mut p);
                    p
                })
                .collect()
        };
        let candidate = ParticleMeasure::uniform(2, points).map_err(err)?;
        worst = worst.min(objective(&candidate)? - best);
    }
    Ok((
        radius <= 1e-9 && fixed <= 1e-9 && worst >= -1e-9,
        format!("ring radius error {radius:.3e}, fixed-point error {fixed:.3e} (<= 1e-9), smallest candidate margin {worst:.3e} (>= -1e-9)"),
    ))
}

struct OffsetEntropy {
    grid: Grid,
    data: GridMeasure,
    report: SolveReport,
}

fn offset_entropy() -> Result<&'static OffsetEntropy, String> {
    static CELL: OnceLock<Result<OffsetEntropy, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = fixtures::by_name("offset-polar-under", &FixtureConfig::default()).map_err(err)?;
        let grid = f.theta_grid.clone().ok_or("missing grid")?;
        let data = f.grid_data.clone().ok_or("missing data")?;
        let report = entropy_solution(&f.map, &grid, &data).map_err(err)?;
        Ok(OffsetEntropy { grid, data, report })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn offset_radius(x: &[f64]) -> f64 {
    ((x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2)).sqrt()
}

fn criterion_4() -> Outcome {
    let OffsetEntropy { grid, data, report } = offset_entropy()?;
    let opt = report.optimizer.as_grid().ok_or("expected a grid optimizer")?;
    let analytic: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = offset_radius(&grid.center(i));
            if r <= 1.0 {
                1.0 / (2.0 * PI * r)
            } else {
                0.0
            }
        })
        .collect();
    let l1 = relative_l1(opt.values(), &analytic);
    let floor_hits = report.diagnostic("level_set_floor_hits").unwrap_or(f64::NAN);
    let cv = report.diagnostic("max_fiber_cv").unwrap_or(f64::INFINITY);
    let h = data.grid().spacing(0);
    let push = pushforward_grid(&offset_polar_map(), opt, data.grid()).map_err(err)?;
    let residual: f64 = push.masses().iter().zip(data.masses()).map(|(a, b)| (a - b).abs()).sum();
    Ok((
        l1 <= 0.05 && cv < 1e-6 && residual <= 2.0 * h && floor_hits == 0.0,
        format!("relative L1 {l1:.3e} (<= 5e-2, {floor_hits} floor-flagged bins), fiber CV {cv:.3e} (< 1e-6), constraint residual {residual:.3e} (<= {:.3e})", 2.0 * h),
    ))
}

fn criterion_5() -> Outcome {
    let g = offset_polar_map();
    let grid = Grid::new(Bounds::cube(2, 0.0, 2.0).map_err(err)?, vec![40, 40]).map_err(err)?;
    let data = uniform_radial(10).map_err(err)?;
    let bins = FiberBins::new(&g, &grid, data.grid()).map_err(err)?;
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| bins.bin_of()[i].is_some()).collect();
    let bin_of: Vec<usize> = cells.iter().map(|&i| bins.bin_of()[i].expect("filtered")).collect();
    let vol = grid.cell_volume();

    let plain = entropy_solution(&g, &grid, &data).map_err(err)?;
    let plain = plain.optimizer.as_grid().ok_or("expected grid")?;
    let prob = SimplexProblem::new(bin_of.clone(), data.masses(), SimplexObjective::Entropy).map_err(err)?;
    let md = mirror_descent_simplex(&prob, 100_000, 0.5).map_err(err)?;
    let e1 = cells.iter().zip(&md).map(|(&i, p)| (plain.values()[i] * vol - p).abs()).fold(0.0, f64::max);

    let prior = gaussian_prior(&grid, g.theta()).map_err(err)?;
    let cfg = RegularizationConfig::new(1.0, 2.0).map_err(err)?.with_prior(prior.clone());
    let reg = reg_entropy_solution(&g, &grid, &data, &cfg).map_err(err)?;
    let reg = reg.optimizer.as_grid().ok_or("expected grid")?;
    let weights: Vec<f64> = cells.iter().map(|&i| prior.values()[i]).collect();
    let prob = SimplexProblem::new(
        bin_of,
        data.masses(),
        SimplexObjective::KlToPrior {
            prior: weights,
            alpha: 1.0,
        },
    )
    .map_err(err)?;
    let md = mirror_descent_simplex(&prob, 100_000, 0.5).map_err(err)?;
    let e2 = cells.iter().zip(&md).map(|(&i, p)| (reg.values()[i] * vol - p).abs()).fold(0.0, f64::max);
    Ok((
        e1 <= 1e-4 && e2 <= 1e-4,
        format!("{} cells: entropy max cell error {e1:.3e}, reg-entropy {e2:.3e} (<= 1e-4)", cells.len()),
    ))
}

fn least_norm_closed_form(r: f64) -> [f64; 2] {
    let t = 1.0 - r / 2f64.sqrt();
    [t, t]
}

fn criterion_6() -> Outcome {
    let g = offset_polar_map();
    let pb = Pullback::new(&g, &SearchConfig::default()).map_err(err)?;
    let mut worst = 0.0f64;
    for k in 0..=10 {
        let r = k as f64 / 10.0;
        let x = pb.least_norm(&[r]).map_err(err)?;
        worst = worst.max(dist(&x, &least_norm_closed_form(r)));
    }
    // |𝓗(G(x))|² ≤ |x|² on a lattice of Θ
    let n = 100;
    let mut violation = f64::NEG_INFINITY;
    let mut count = 0;
    for i in 0..n {
        for j in 0..n {
            let x = [(i as f64 + 0.5) * 2.0 / n as f64, (j as f64 + 0.5) * 2.0 / n as f64];
            if !g.theta().contains(&x) {
                continue;
            }
            count += 1;
            let h = pb.least_norm(&g.eval(&x)).map_err(err)?;
            violation = violation.max(norm(&h).powi(2) - norm(&x).powi(2));
        }
    }
    Ok((
        worst <= 2e-3 && violation <= 1e-12,
        format!("max |𝓗(r) - closed form| {worst:.3e} (<= 2e-3), max |𝓗(G(x))|² - |x|² over {count} points {violation:.3e} (<= 1e-12)"),
    ))
}

fn criterion_7() -> Outcome {
    let cfg = FixtureConfig::default();
    let f = fixtures::by_name("offset-polar-reg-kl", &cfg).map_err(err)?;
    let grid = f.theta_grid.clone().ok_or("missing grid")?;
    let data = f.grid_data.clone().ok_or("missing data")?;
    let prior = f.prior.clone().ok_or("missing prior")?;
    let reg_cfg = RegularizationConfig::new(1.0, 2.0).map_err(err)?.with_prior(prior);
    let report = reg_entropy_solution(&f.map, &grid, &data, &reg_cfg).map_err(err)?;
    let opt = report.optimizer.as_grid().ok_or("expected grid")?;
    let density = radial_density(&data);
    let raw: Vec<f64> = (0..grid.len())
        .map(|i| offset_polar_reg_kl_density(&density, 1.0, &grid.center(i)))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let total: f64 = raw.iter().sum::<f64>() * grid.cell_volume();
    let analytic: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let l1 = relative_l1(opt.values(), &analytic);

    let mut bessel = 0.0f64;
    for k in 0..=40 {
        let a = k as f64 * 0.25;
        let v = bessel_i0(a).map_err(err)?;
        bessel = bessel.max((v - bessel_i0_quadrature(a, 256)).abs() / v);
    }

    let OffsetEntropy { report: plain, .. } = offset_entropy()?;
    let plain = plain.optimizer.as_grid().ok_or("expected grid")?;
    let uniform = GridMeasure::uniform(grid.clone(), Some(f.map.theta())).map_err(err)?;
    let zero_cfg = RegularizationConfig::new(0.0, 2.0).map_err(err)?.with_prior(uniform);
    let zero = reg_entropy_solution(&f.map, &grid, &data, &zero_cfg).map_err(err)?;
    let zero = zero.optimizer.as_grid().ok_or("expected grid")?;
    let cellwise = zero.values().iter().zip(plain.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((
        l1 <= 0.05 && bessel <= 1e-10 && cellwise <= 1e-8,
        format!("relative L1 {l1:.3e} (<= 5e-2), I0 dual evaluation {bessel:.3e} (<= 1e-10), alpha=0 vs entropy {cellwise:.3e} (<= 1e-8)"),
    ))
}

fn criterion_8() -> Outcome {
    let cfg = FixtureConfig::default();
    let f = fixtures::by_name("offset-polar-reg-w2", &cfg).map_err(err)?;
    let pb = Pullback::new(&f.map, &SearchConfig::default()).map_err(err)?;
    let radii: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let mut worst = 0.0f64;
    let mut solver = 0.0f64;
    for alpha in [0.5, 1.0, 2.0] {
        for &r in &radii {
            let x = pb.reg_inversion(&[r], alpha, 2.0).map_err(err)?;
            let t = (1.0 - FRAC_1_SQRT_2 * r) / (1.0 + alpha);
            worst = worst.max(dist(&x, &[t, t]));
        }
        let report = reg_wp_solution(&f.map, &f.data, &RegularizationConfig::new(alpha, 2.0).map_err(err)?).map_err(err)?;
        let opt = report.optimizer.as_particles().ok_or("expected particles")?;
        for (x, y) in opt.points().zip(f.data.points()) {
            let t = (1.0 - FRAC_1_SQRT_2 * y[0]) / (1.0 + alpha);
            solver = solver.max(dist(x, &[t, t]));
        }
    }
    // α = 0 against the least-norm map of criterion 6
    let unit = Pullback::new(&offset_polar_map(), &SearchConfig::default()).map_err(err)?;
    let mut zero = 0.0f64;
    for &r in &radii {
        let x = pb.reg_inversion(&[r], 0.0, 2.0).map_err(err)?;
        zero = zero.max(dist(&x, &least_norm_closed_form(r)));
        zero = zero.max(dist(&x, &unit.least_norm(&[r]).map_err(err)?));
    }
    Ok((
        worst <= 2e-3 && solver <= 2e-3 && zero <= 2e-3,
        format!("max map error {worst:.3e}, solver output error {solver:.3e}, alpha=0 vs least-norm {zero:.3e} (all <= 2e-3)"),
    ))
}

fn random_points(r: &mut ChaCha8Rng, n: usize, g: &ForwardMap) -> Vec<Vec<f64>> {
    let b = g.theta().bounding_box();
    (0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..g.in_dim())
                .map(|k| match &b {
                    Some(b) => b.lower()[k] + b.width(k) * r.random::<f64>(),
                    None => r.sample::<f64, _>(StandardNormal),
                })
                .collect();
            g.theta().project(&mut x);
            x
        })
        .collect()
}

fn random_weights(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| 0.1 + r.random::<f64>()).collect()
}

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let g = match trial % 3 {
            0 => polar_map(),
            1 => offset_polar_map(),
            _ => {
                let a = DMatrix::from_fn(2, 2, |_, _| r.sample::<f64, _>(StandardNormal));
                match linear_map(a, Domain::Whole(2)) {
                    Ok(g) => g,
                    Err(_) => polar_map(),
                }
            }
        };
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let xs = random_points(&mut r, n, &g);
        let rho_x = ParticleMeasure::new(g.in_dim(), xs, random_weights(&mut r, n)).map_err(err)?;
        let ys: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..g.out_dim()).map(|_| 1.5 * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let rho_y = ParticleMeasure::new(g.out_dim(), ys, random_weights(&mut r, m)).map_err(err)?;
        let alpha = 0.1 + 2.9 * r.random::<f64>();
        let cfg = RegularizationConfig::new(alpha, 2.0).map_err(err)?;
        let (lhs, rhs) = augmented_objective_identity_check(&g, &rho_x, &rho_y, &cfg).map_err(err)?;
        // independent evaluation of the left side through the augmented map
        let aug = augment(&g, alpha, 2.0).map_err(err)?;
        let direct = transport_cost(
            &pushforward(&aug, &rho_x).map_err(err)?,
            &rho_y.with_zero_padding(g.in_dim()),
            2.0,
            OtMethod::Exact,
        )
        .map_err(err)?;
        worst = worst.max((lhs - rhs).abs()).max((direct - lhs).abs());
    }
    Ok((worst <= 1e-9, format!("max |lhs - rhs| {worst:.3e} over 100 instances (<= 1e-9)")))
}

fn criterion_10() -> Outcome {
    let mut r = rng(10);
    let (mut exact_gap, mut sinkhorn_gap, mut over) = (0.0f64, 0.0f64, 0usize);
    for trial in 0..500 {
        let n = r.random_range(2..=6);
        let dim = r.random_range(1..=3);
        let p = if trial % 2 == 0 { 2.0 } else { 1.0 };
        let pts = |r: &mut ChaCha8Rng| -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| r.random::<f64>()).collect()).collect() };
        let mu = ParticleMeasure::uniform(dim, pts(&mut r)).map_err(err)?;
        let nu = ParticleMeasure::uniform(dim, pts(&mut r)).map_err(err)?;
        let cost = cost_matrix(&mu, &nu, p).map_err(err)?;
        let exact = exact_ot(&mu, &nu, &cost).map_err(err)?.objective();
        let brute = brute_force_ot(&mu, &nu, &cost).map_err(err)?.objective();
        exact_gap = exact_gap.max((exact - brute).abs());
        let ent = sinkhorn(&mu, &nu, &cost, 1e-3, SINKHORN_MAX_ITER).map_err(err)?.objective();
        let gap = (ent - exact).abs() / exact.max(f64::MIN_POSITIVE);
        over += usize::from(gap > 0.01);
        sinkhorn_gap = sinkhorn_gap.max(gap);
    }
    Ok((
        exact_gap <= 1e-10 && sinkhorn_gap <= 0.01,
        format!("max |exact - brute force| {exact_gap:.3e} (<= 1e-10), max Sinkhorn relative gap {sinkhorn_gap:.3e} (<= 1e-2), {over} of 500 instances above 1e-2"),
    ))
}

fn apply(m: &DMatrix<f64>, p: &ParticleMeasure) -> Result<ParticleMeasure, String> {
    let points = p
        .points()
        .map(|y| (m * nalgebra::DVector::from_column_slice(y)).as_slice().to_vec())
        .collect();
    ParticleMeasure::new(m.nrows(), points, p.weights().to_vec()).map_err(err)
}

fn criterion_11() -> Outcome {
    let mut r = rng(11);
    let (mut ok, mut slack_full, mut slack_simplified) = (true, f64::INFINITY, f64::INFINITY);
    let mut coefficient_exact = true;
    for _ in 0..100 {
        let n = r.random_range(1..=3);
        let m = r.random_range(n..=5);
        let a = loop {
            let a = DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal));
            if a.clone().svd(false, false).singular_values.min() > 1e-3 {
                break a;
            }
        };
        let alpha = 10f64.powf(-3.0 + 4.0 * r.random::<f64>());
        let count = 24;
        let xs: Vec<Vec<f64>> = (0..count).map(|_| (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).collect();
        let rho_x_true = ParticleMeasure::uniform(n, xs).map_err(err)?;
        let rho_y_true = apply(&a, &rho_x_true)?;
        let sigma = 0.5 * r.random::<f64>();
        let noisy: Vec<Vec<f64>> = rho_y_true
            .points()
            .map(|y| y.iter().map(|v| v + sigma * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let rho_y_delta = ParticleMeasure::uniform(m, noisy).map_err(err)?;
        let w2 = wasserstein_p(&rho_y_true, &rho_y_delta, 2.0, OtMethod::Exact).map_err(err)?;
        let m2 = rho_y_true.moment(2.0).map_err(err)?;
        let bound = tikhonov_bound(&a, alpha, w2, m2).map_err(err)?;
        let t = (a.transpose() * &a + DMatrix::identity(n, n) * alpha)
            .lu()
            .solve(&a.transpose())
            .ok_or("singular normal matrix")?;
        let rho_x = apply(&t, &rho_y_delta)?;
        let measured = wasserstein_p(&rho_x_true, &rho_x, 2.0, OtMethod::Exact).map_err(err)?;
        ok &= measured <= bound.full && bound.full <= bound.simplified;
        slack_full = slack_full.min(bound.full - measured);
        slack_simplified = slack_simplified.min(bound.simplified - bound.full);
        coefficient_exact &= bound.simplified_noise_coefficient == 1.0 / (2.0 * alpha.sqrt());
    }
    Ok((
        ok && coefficient_exact,
        format!("min(full - measured) {slack_full:.3e}, min(simplified - full) {slack_simplified:.3e}, first coefficient exact: {coefficient_exact}"),
    ))
}

fn criterion_12() -> Outcome {
    let cfg = FixtureConfig::default();
    let mut worst = 0.0f64;
    for name in ["linear-over", "linear-under", "linear-reg"] {
        let f = fixtures::by_name(name, &cfg).map_err(err)?;
        let a = f.map.matrix().ok_or("linear fixture without a matrix")?.clone();
        let (report, operator) = match name {
            "linear-over" => (
                marginal_reconstruction(&f.map, &f.data, 2.0).map_err(err)?,
                a.clone().pseudo_inverse(1e-14).map_err(err)?,
            ),
            "linear-under" => (moment_solution(&f.map, &f.data).map_err(err)?, a.clone().pseudo_inverse(1e-14).map_err(err)?),
            _ => {
                let alpha = cfg.alpha;
                let t = (a.transpose() * &a + DMatrix::identity(a.ncols(), a.ncols()) * alpha)
                    .lu()
                    .solve(&a.transpose())
                    .ok_or("singular normal matrix")?;
                (
                    reg_wp_solution(&f.map, &f.data, &RegularizationConfig::new(alpha, 2.0).map_err(err)?).map_err(err)?,
                    t,
                )
            }
        };
        let direct = apply(&operator, &f.data)?;
        let opt = report.optimizer.as_particles().ok_or("expected particles")?;
        for (x, d) in opt.points().zip(direct.points()) {
            worst = worst.max(x.iter().zip(d).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
        }
    }
    Ok((worst <= 1e-10, format!("max sample-wise deviation {worst:.3e} over three fixtures (<= 1e-10)")))
}

fn run_figure(id: u32, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_minv"))
        .args(["--quiet", "--seed", "7", "figure", &id.to_string(), "--out"])
        .arg(out)
        .status()
        .map_err(err)?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("figure {id} exited with {status}"))
    }
}

fn criterion_13() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let mut compared = 0;
    let mut differing = Vec::new();
    for id in 1..=4 {
        let (da, db) = (a.path().join(id.to_string()), b.path().join(id.to_string()));
        run_figure(id, &da)?;
        run_figure(id, &db)?;
        let mut names: Vec<_> = std::fs::read_dir(&da).map_err(err)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>().map_err(err)?;
        names.sort();
        let count_b = std::fs::read_dir(&db).map_err(err)?.count();
        if names.is_empty() || names.len() != count_b {
            differing.push(format!("figure {id}: file sets differ"));
        }
        for name in names {
            compared += 1;
            let x = std::fs::read(da.join(&name)).map_err(err)?;
            let y = std::fs::read(db.join(&name)).map_err(err)?;
            if x != y {
                differing.push(format!("{id}/{}", name.to_string_lossy()));
            }
        }
    }
    Ok((
        differing.is_empty(),
        format!("{compared} files compared, differing: {differing:?}"),
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("conditional reconstruction", criterion_1),
        ("Jensen optimality", criterion_2),
        ("marginal reconstruction", criterion_3),
        ("entropy solution", criterion_4),
        ("oracle equivalence", criterion_5),
        ("least-norm solution", criterion_6),
        ("regularized entropy", criterion_7),
        ("regularized Wasserstein", criterion_8),
        ("augmented-map identity", criterion_9),
        ("exact OT correctness", criterion_10),
        ("Tikhonov bound", criterion_11),
        ("linear closed forms", criterion_12),
        ("reproducibility", criterion_13),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2}: {} {name}: {detail} [{:.1}s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
