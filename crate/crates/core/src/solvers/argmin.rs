//! Pointwise argmins over the parameter domain: coarse lattice scan followed
//! by compass search with step halving. Ties go to the lexicographically
//! smallest point.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{RegularizationConfig, SearchConfig};
use crate::error::{Error, Result};
use crate::maps::{pseudoinverse, tikhonov_operator, ForwardMap, MapKind};
use crate::measures::{dist2, Domain, ParticleMeasure};

/// Relative tolerance under which two objective values count as tied.
const TIE_TOL: f64 = 1e-12;
/// Relative central-difference step for Jacobians.
const JAC_STEP: f64 = 1e-6;
/// Relative central-difference step for Hessians of already differenced gradients.
const HESS_STEP: f64 = 1e-5;
const POLISH_ITERS: usize = 20;

/// Extra acceptance test for compass-search trial points.
type Feasible<'a> = &'a dyn Fn(&[f64]) -> bool;

struct Linear {
    a: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

/// Cached coarse lattice of Θ together with its images under `G`; answers
/// repeated pointwise argmin queries for one map.
pub struct Pullback {
    g: ForwardMap,
    cfg: SearchConfig,
    in_dim: usize,
    out_dim: usize,
    points: Vec<f64>,
    images: Vec<f64>,
    spacing: Vec<f64>,
    variation: f64,
    linear: Option<Linear>,
}

impl Pullback {
    pub fn new(g: &ForwardMap, cfg: &SearchConfig) -> Result<Self> {
        let (in_dim, out_dim) = (g.in_dim(), g.out_dim());
        let mut pb = Self {
            g: g.clone(),
            cfg: cfg.clone(),
            in_dim,
            out_dim,
            points: Vec::new(),
            images: Vec::new(),
            spacing: Vec::new(),
            variation: 0.0,
            linear: None,
        };
        if let (MapKind::Linear(a), Domain::Whole(_)) = (g.kind(), g.theta()) {
            pb.linear = Some(Linear {
                a: a.clone(),
                pinv: pseudoinverse(a)?,
            });
            return Ok(pb);
        }
        let bounds = g.theta().bounding_box().ok_or(Error::UnboundedDomain)?;
        let per_axis = ((cfg.coarse_points.max(2) as f64).powf(1.0 / in_dim as f64).floor() as usize).max(2);
        pb.spacing = (0..in_dim).map(|k| bounds.width(k) / (per_axis - 1) as f64).collect();

        // lexicographic lattice, last axis fastest
        let total = per_axis.pow(in_dim as u32);
        let coords = |flat: usize| -> Vec<f64> {
            let mut x = vec![0.0; in_dim];
            let mut rest = flat;
            for k in (0..in_dim).rev() {
                let i = rest % per_axis;
                rest /= per_axis;
                x[k] = if i == per_axis - 1 {
                    bounds.upper()[k]
                } else {
                    bounds.lower()[k] + i as f64 * pb.spacing[k]
                };
            }
            x
        };
        let kept: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let x = coords(flat);
                g.theta().contains(&x).then(|| {
                    let y = g.eval(&x);
                    (x, y)
                })
            })
            .collect();
        let mut slot = vec![usize::MAX; total];
        let mut count = 0;
        for (flat, entry) in kept.iter().enumerate() {
            if let Some((x, y)) = entry {
                pb.points.extend_from_slice(x);
                pb.images.extend_from_slice(y);
                slot[flat] = count;
                count += 1;
            }
        }
        if count == 0 {
            // a domain thinner than one lattice cell: fall back to its center
            let mut c: Vec<f64> = (0..in_dim).map(|k| 0.5 * (bounds.lower()[k] + bounds.upper()[k])).collect();
            g.theta().project(&mut c);
            pb.images.extend(g.eval(&c));
            pb.points.extend(c);
        }
        // largest change of G between lattice neighbours
        let mut variation: f64 = 0.0;
        let mut stride = 1;
        for _axis in (0..in_dim).rev() {
            for flat in 0..total {
                let i = (flat / stride) % per_axis;
                if i + 1 < per_axis && slot[flat] != usize::MAX && slot[flat + stride] != usize::MAX {
                    let (a, b) = (slot[flat], slot[flat + stride]);
                    variation = variation.max(dist2(pb.image(a), pb.image(b)).sqrt());
                }
            }
            stride *= per_axis;
        }
        pb.variation = variation;
        Ok(pb)
    }

    pub fn map(&self) -> &ForwardMap {
        &self.g
    }

    fn len(&self) -> usize {
        self.points.len() / self.in_dim.max(1)
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.in_dim..(i + 1) * self.in_dim]
    }

    fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.out_dim..(i + 1) * self.out_dim]
    }

    /// Fiber tolerance for [`Pullback::least_norm`]: twice the largest change of
    /// `G` between neighbouring lattice points.
    pub fn fiber_tolerance(&self) -> f64 {
        (2.0 * self.variation).max(1e-12)
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                found: y.len(),
            });
        }
        Ok(())
    }

    /// `F(y)`: a parameter whose image is nearest to `y`.
    pub fn inversion(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        if let Some(lin) = &self.linear {
            return Ok(mat_vec(&lin.pinv, y));
        }
        let g = &self.g;
        let x = self.minimize(|_x, gx| dist2(gx, y), |x| dist2(&g.eval(x), y));
        Ok(self.polish(x, y, 0.0))
    }

    /// `P_G(y) = G(F(y))`, the nearest point of the range.
    pub fn projection(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.g.eval(&self.inversion(y)?))
    }

    /// `F̃(y) = argmin |G(x) − y|^p + α|x|^p`. At `α = 0` this is the limit
    /// `α → 0⁺`: the least-norm point among the nearest preimages.
    pub fn reg_inversion(&self, y: &[f64], alpha: f64, p: f64) -> Result<Vec<f64>> {
        self.check_y(y)?;
        if !(alpha >= 0.0 && alpha.is_finite()) || !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!("need alpha >= 0 and p >= 1, got {alpha}, {p}")));
        }
        if alpha == 0.0 {
            let x = self.inversion(y)?;
            return self.least_norm(&self.g.eval(&x));
        }
        if let Some(lin) = &self.linear {
            if p != 2.0 {
                return Err(Error::UnboundedDomain);
            }
            return Ok(mat_vec(&tikhonov_operator(&lin.a, alpha)?, y));
        }
        let g = &self.g;
        let cost = move |x: &[f64], gx: &[f64]| {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            if p == 2.0 {
                dist2(gx, y) + alpha * n2
            } else {
                dist2(gx, y).sqrt().powf(p) + alpha * n2.sqrt().powf(p)
            }
        };
        let x = self.minimize(cost, |x| cost(x, &g.eval(x)));
        Ok(if p == 2.0 { self.polish(x, y, alpha) } else { x })
    }

    /// `𝓗(y)`: the least-norm parameter on the fiber over `y`.
    pub fn least_norm(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        if let Some(lin) = &self.linear {
            let x = mat_vec(&lin.pinv, y);
            let r = dist2(&mat_vec(&lin.a, &x), y).sqrt();
            let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r > 1e-9 * scale {
                return Err(Error::EmptyFiber { tolerance: 1e-9 * scale });
            }
            return Ok(x);
        }
        let tol = self.fiber_tolerance();
        let norm2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.len() {
            if dist2(self.image(i), y) <= tol * tol {
                let n = norm2(self.point(i));
                if best.is_none_or(|(b, _)| n < b) {
                    best = Some((n, i));
                }
            }
        }
        let (_, start) = best.ok_or(Error::EmptyFiber { tolerance: tol })?;
        let g = &self.g;
        let resid = |x: &[f64]| dist2(&g.eval(x), y).sqrt();
        let mut x = self.point(start).to_vec();
        let mut step = self.spacing.clone();
        let mut band = tol;
        for _ in 0..=self.cfg.halvings {
            // pull back inside the current band, then slide towards the origin
            let mut r = resid(&x);
            if r > band {
                let miss = |t: &[f64]| dist2(&g.eval(t), y);
                let fx = miss(&x);
                let (nx, _) = self.compass_level(&miss, x, fx, &step, None);
                x = nx;
                r = resid(&x);
            }
            let limit = r.max(band);
            let feasible = |t: &[f64]| resid(t) <= limit;
            let fx = norm2(&x);
            let (nx, _) = self.compass_level(&norm2, x, fx, &step, Some(&feasible));
            x = nx;
            step.iter_mut().for_each(|s| *s *= 0.5);
            band *= 0.5;
        }
        Ok(self.polish_least_norm(x, y))
    }

    /// Central-difference Jacobian of `G` at `x`.
    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.out_dim, self.in_dim);
        let mut t = x.to_vec();
        for k in 0..self.in_dim {
            let s = JAC_STEP * (1.0 + x[k].abs());
            t[k] = x[k] + s;
            let a = self.g.eval(&t);
            t[k] = x[k] - s;
            let b = self.g.eval(&t);
            t[k] = x[k];
            for i in 0..self.out_dim {
                j[(i, k)] = (a[i] - b[i]) / (2.0 * s);
            }
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }

    /// Central-difference derivative of a vector field.
    fn differentiate<F: Fn(&[f64]) -> Option<DVector<f64>>>(&self, field: F, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.in_dim;
        let mut h = DMatrix::zeros(n, n);
        let mut t = x.to_vec();
        for k in 0..n {
            let s = HESS_STEP * (1.0 + x[k].abs());
            t[k] = x[k] + s;
            let a = field(&t)?;
            t[k] = x[k] - s;
            let b = field(&t)?;
            t[k] = x[k];
            let col = (a - b) / (2.0 * s);
            for i in 0..col.len() {
                h[(i, k)] = col[i];
            }
        }
        Some(h)
    }

    /// Newton steps on `½|G(x) − y|² + ½α|x|²` from a compass optimum. The
    /// compass search stalls where the objective is flat to rounding; the
    /// gradient still resolves the minimizer there. Active bounds of Θ are
    /// held fixed. Falls back to `x0` if the iteration leaves its lattice cell.
    fn polish(&self, x0: Vec<f64>, y: &[f64], alpha: f64) -> Vec<f64> {
        let f = |x: &[f64]| 0.5 * dist2(&self.g.eval(x), y) + 0.5 * alpha * x.iter().map(|v| v * v).sum::<f64>();
        let grad = |x: &[f64]| -> Option<DVector<f64>> {
            let j = self.jacobian(x)?;
            let r = DVector::from_vec(self.g.eval(x)) - DVector::from_column_slice(y);
            Some(j.transpose() * r + DVector::from_column_slice(x) * alpha)
        };
        let theta = self.g.theta();
        let reach: f64 = self.spacing.iter().fold(0.0, |a, &s| a.max(s));
        let mut x = x0.clone();
        let mut fx = f(&x);
        for _ in 0..POLISH_ITERS {
            let Some(gx) = grad(&x) else { break };
            let Some(h) = self.differentiate(grad, &x) else { break };
            let h = (&h + h.transpose()) * 0.5;
            let Some(mut d) = constrained_step(&h, &gx, &[]) else { break };
            let normals = outward_normals(theta, &x, &d);
            if !normals.is_empty() {
                match constrained_step(&h, &gx, &normals) {
                    Some(dd) => d = dd,
                    None => break,
                }
            }
            if d.dot(&gx) > 0.0 {
                break;
            }
            let mut trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
            theta.project(&mut trial);
            let ft = f(&trial);
            if !ft.is_finite() || ft > fx + 64.0 * f64::EPSILON * (1.0 + fx.abs()) {
                break;
            }
            let moved = trial.iter().zip(&x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            x = trial;
            fx = ft;
            if moved <= 1e-15 * (1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
                break;
            }
        }
        if dist2(&x, &x0).sqrt() > reach {
            return x0;
        }
        x
    }

    /// Newton iteration on the optimality system of `min |x|² s.t. G(x) = y`
    /// started from the band estimate. Kept only if it stays nearby, inside
    /// Θ and on the fiber.
    fn polish_least_norm(&self, x0: Vec<f64>, y: &[f64]) -> Vec<f64> {
        let (n, m) = (self.in_dim, self.out_dim);
        let yv = DVector::from_column_slice(y);
        let Some(j0) = self.jacobian(&x0) else { return x0 };
        let x0v = DVector::from_column_slice(&x0);
        let Some(mut lambda) = (&j0 * j0.transpose()).lu().solve(&(-(&j0 * &x0v))) else { return x0 };
        let mut x = x0v.clone();
        for _ in 0..POLISH_ITERS {
            let Some(j) = self.jacobian(x.as_slice()) else { break };
            let lam = lambda.clone();
            let curvature = self.differentiate(|t| self.jacobian(t).map(|jt| jt.transpose() * &lam), x.as_slice());
            let Some(curvature) = curvature else { break };
            let mut k = DMatrix::zeros(n + m, n + m);
            let hl = DMatrix::identity(n, n) + (&curvature + curvature.transpose()) * 0.5;
            k.view_mut((0, 0), (n, n)).copy_from(&hl);
            k.view_mut((0, n), (n, m)).copy_from(&j.transpose());
            k.view_mut((n, 0), (m, n)).copy_from(&j);
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-(&x + j.transpose() * &lambda)));
            rhs.rows_mut(n, m).copy_from(&(-(DVector::from_vec(self.g.eval(x.as_slice())) - &yv)));
            let Some(z) = k.lu().solve(&rhs) else { break };
            if !z.iter().all(|v| v.is_finite()) {
                break;
            }
            let dx = z.rows(0, n).into_owned();
            x += &dx;
            lambda += z.rows(n, m);
            if dx.amax() <= 1e-15 * (1.0 + x.amax()) {
                break;
            }
        }
        let x = x.as_slice().to_vec();
        let resid = |t: &[f64]| dist2(&self.g.eval(t), y).sqrt();
        let near = dist2(&x, &x0).sqrt() <= 4.0 * self.fiber_tolerance();
        let fits = resid(&x) <= resid(&x0).max(1e-12 * (1.0 + yv.norm()));
        let no_worse = x.iter().map(|v| v * v).sum::<f64>() <= x0v.norm_squared() + 2.0 * resid(&x0) * (1.0 + x0v.norm()) + 1e-12;
        if near && fits && no_worse && self.g.theta().contains(&x) {
            x
        } else {
            x0
        }
    }

    /// Coarse scan, then compass refinement from the best few lattice points.
    fn minimize<C, F>(&self, coarse: C, fine: F) -> Vec<f64>
    where
        C: Fn(&[f64], &[f64]) -> f64,
        F: Fn(&[f64]) -> f64,
    {
        let n = self.len();
        let values: Vec<f64> = (0..n).map(|i| coarse(self.point(i), self.image(i))).collect();
        let mut order: Vec<usize> = (0..n).collect();
        // stable sort keeps lattice (lexicographic) order among exact ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = values[order[0]];
        let tie = TIE_TOL * (1.0 + best.abs());
        // the lexicographically first among near-ties leads
        let lead = order
            .iter()
            .copied()
            .take_while(|&i| values[i] <= best + tie)
            .min()
            .unwrap_or(order[0]);
        let mut starts = vec![lead];
        starts.extend(order.iter().copied().filter(|&i| i != lead).take(self.cfg.starts.saturating_sub(1)));

        let mut winner: Option<(f64, Vec<f64>)> = None;
        for s in starts {
            let (x, v) = self.refine(&fine, self.point(s).to_vec(), values[s]);
            let better = match &winner {
                None => true,
                Some((bv, bx)) => {
                    let tie = TIE_TOL * (1.0 + bv.abs());
                    v < bv - tie || (v <= bv + tie && lex_less(&x, bx))
                }
            };
            if better {
                winner = Some((v, x));
            }
        }
        winner.map(|(_, x)| x).unwrap_or_default()
    }

    fn refine<F: Fn(&[f64]) -> f64>(&self, f: &F, x: Vec<f64>, fx: f64) -> (Vec<f64>, f64) {
        let mut step = self.spacing.clone();
        let (mut x, mut fx) = (x, fx);
        for _ in 0..=self.cfg.halvings {
            (x, fx) = self.compass_level(f, x, fx, &step, None);
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        (x, fx)
    }

    /// Coordinate moves of one step size, accepting strict improvements only.
    fn compass_level<F: Fn(&[f64]) -> f64>(
        &self,
        f: &F,
        mut x: Vec<f64>,
        mut fx: f64,
        step: &[f64],
        feasible: Option<Feasible<'_>>,
    ) -> (Vec<f64>, f64) {
        let theta = self.g.theta();
        let mut trial = x.clone();
        for _ in 0..self.cfg.max_passes {
            let mut improved = false;
            for k in 0..self.in_dim {
                for dir in [-1.0, 1.0] {
                    trial.copy_from_slice(&x);
                    trial[k] += dir * step[k];
                    theta.project(&mut trial);
                    if trial == x || feasible.is_some_and(|ok| !ok(&trial)) {
                        continue;
                    }
                    let v = f(&trial);
                    if v < fx {
                        x.copy_from_slice(&trial);
                        fx = v;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (x, fx)
    }

    /// Applies `op` to every point of `m` in parallel, keeping the weights.
    pub fn map_measure<F>(&self, m: &ParticleMeasure, op: F) -> Result<ParticleMeasure>
    where
        F: Fn(&Self, &[f64]) -> Result<Vec<f64>> + Sync,
    {
        let pts: Vec<&[f64]> = m.points().collect();
        let images = pts.par_iter().map(|y| op(self, y)).collect::<Result<Vec<_>>>()?;
        let dim = images.first().map_or(self.in_dim, Vec::len);
        ParticleMeasure::from_flat(dim, images.concat(), m.weights().to_vec())
    }
}

/// Newton step for gradient `g` and Hessian `h`, restricted to directions
/// orthogonal to `normals`.
fn constrained_step(h: &DMatrix<f64>, g: &DVector<f64>, normals: &[Vec<f64>]) -> Option<DVector<f64>> {
    let (n, a) = (g.len(), normals.len());
    let mut k = DMatrix::zeros(n + a, n + a);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    for (r, v) in normals.iter().enumerate() {
        for c in 0..n {
            k[(n + r, c)] = v[c];
            k[(c, n + r)] = v[c];
        }
    }
    let mut rhs = DVector::zeros(n + a);
    rhs.rows_mut(0, n).copy_from(&(-g));
    let z = k.lu().solve(&rhs)?;
    let d = z.rows(0, n).into_owned();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Outward normals of the constraints of Θ that are active at `x` and that
/// the step `d` pushes against.
fn outward_normals(theta: &Domain, x: &[f64], d: &DVector<f64>) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut out = Vec::new();
    let boxed = |b: &crate::measures::Bounds, out: &mut Vec<Vec<f64>>| {
        for k in 0..n {
            let slack = 1e-12 * (1.0 + b.width(k));
            let mut e = vec![0.0; n];
            if x[k] <= b.lower()[k] + slack && d[k] < 0.0 {
                e[k] = -1.0;
            } else if x[k] >= b.upper()[k] - slack && d[k] > 0.0 {
                e[k] = 1.0;
            } else {
                continue;
            }
            out.push(e);
        }
    };
    let ball = |b: &crate::measures::Ball, out: &mut Vec<Vec<f64>>| {
        let v: Vec<f64> = x.iter().zip(b.center()).map(|(p, c)| p - c).collect();
        let r = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let outward: f64 = v.iter().zip(d.iter()).map(|(p, q)| p * q).sum();
        if r > 0.0 && r >= b.radius() * (1.0 - 1e-12) && outward > 0.0 {
            out.push(v.iter().map(|t| t / r).collect());
        }
    };
    match theta {
        Domain::Box(b) => boxed(b, &mut out),
        Domain::Ball(b) => ball(b, &mut out),
        Domain::Intersection(bx, bl) => {
            boxed(bx, &mut out);
            ball(bl, &mut out);
        }
        Domain::Whole(_) => {}
    }
    out
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).as_slice().to_vec()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

fn check_metric(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("metric exponent must be >= 1, got {p}")))
    }
}

/// `F(y) = argmin_{x ∈ Θ} |G(x) − y|`. The exponent does not change the argmin.
pub fn inversion_map(g: &ForwardMap, y: &[f64], metric_p: f64) -> Result<Vec<f64>> {
    check_metric(metric_p)?;
    Pullback::new(g, &SearchConfig::default())?.inversion(y)
}

/// `P_G(y) = G(F(y))`.
pub fn projection(g: &ForwardMap, y: &[f64], metric_p: f64) -> Result<Vec<f64>> {
    check_metric(metric_p)?;
    Pullback::new(g, &SearchConfig::default())?.projection(y)
}

/// `𝓗(y) = argmin {|x|² : G(x) = y}`.
pub fn least_norm_map(g: &ForwardMap, y: &[f64]) -> Result<Vec<f64>> {
    Pullback::new(g, &SearchConfig::default())?.least_norm(y)
}

/// `F̃(y) = argmin_{x ∈ Θ} |G(x) − y|^p + α|x|^p`.
pub fn reg_inversion_map(g: &ForwardMap, y: &[f64], cfg: &RegularizationConfig) -> Result<Vec<f64>> {
    Pullback::new(g, &SearchConfig::default())?.reg_inversion(y, cfg.alpha, cfg.p)
}
