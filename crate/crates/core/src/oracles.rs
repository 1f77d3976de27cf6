//! Brute-force and iterative reference solvers used to check the closed forms.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{Domain, ParticleMeasure};
use crate::transport::TransportPlan;

/// Largest instance accepted by [`brute_force_ot`].
pub const BRUTE_FORCE_MAX: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexObjective {
    /// `Σ p ln p`.
    Entropy,
    /// `KL(Bp ‖ target) + α KL(p ‖ prior)` over the whole simplex.
    KlToPrior { prior: Vec<f64>, alpha: f64 },
}

/// A discrete fiber problem: cell `j` belongs to data bin `bin_of[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexProblem {
    bin_of: Vec<usize>,
    target: Vec<f64>,
    objective: SimplexObjective,
}

impl SimplexProblem {
    pub fn new(bin_of: Vec<usize>, target: Vec<f64>, objective: SimplexObjective) -> Result<Self> {
        if let Some(&b) = bin_of.iter().find(|&&b| b >= target.len()) {
            return Err(Error::InvalidArgument(format!("cell assigned to missing bin {b}")));
        }
        if target.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidMeasure("targets must be nonnegative".into()));
        }
        let total: f64 = target.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidMeasure(format!("targets sum to {total}, not 1")));
        }
        let mut sizes = vec![0usize; target.len()];
        for &b in &bin_of {
            sizes[b] += 1;
        }
        if let Some(b) = (0..target.len()).find(|&b| target[b] > 0.0 && sizes[b] == 0) {
            return Err(Error::InvalidArgument(format!("bin {b} carries mass but has no cells")));
        }
        if let SimplexObjective::KlToPrior { prior, alpha } = &objective {
            if prior.len() != bin_of.len() {
                return Err(Error::DimensionMismatch {
                    expected: bin_of.len(),
                    found: prior.len(),
                });
            }
            if prior.iter().any(|&m| !(m >= 0.0)) || !(*alpha >= 0.0) {
                return Err(Error::InvalidArgument("prior and alpha must be nonnegative".into()));
            }
            let mut fiber_prior = vec![0.0; target.len()];
            for (j, &b) in bin_of.iter().enumerate() {
                fiber_prior[b] += prior[j];
            }
            if (0..target.len()).any(|b| target[b] > 0.0 && fiber_prior[b] <= 0.0) {
                return Err(Error::PriorVanishes);
            }
        }
        Ok(Self { bin_of, target, objective })
    }

    /// Builds the assignment from a binary bins × cells matrix with one 1 per column.
    pub fn from_matrix(b: &DMatrix<f64>, target: Vec<f64>, objective: SimplexObjective) -> Result<Self> {
        let mut bin_of = Vec::with_capacity(b.ncols());
        for j in 0..b.ncols() {
            let ones: Vec<usize> = (0..b.nrows()).filter(|&i| b[(i, j)] == 1.0).collect();
            let zeros = (0..b.nrows()).filter(|&i| b[(i, j)] == 0.0).count();
            if ones.len() != 1 || zeros + 1 != b.nrows() {
                return Err(Error::InvalidArgument(format!("column {j} is not a unit vector")));
            }
            bin_of.push(ones[0]);
        }
        Self::new(bin_of, target, objective)
    }

    pub fn bin_of(&self) -> &[usize] {
        &self.bin_of
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn objective(&self) -> &SimplexObjective {
        &self.objective
    }

    pub fn bin_sums(&self, p: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.target.len()];
        for (j, &b) in self.bin_of.iter().enumerate() {
            s[b] += p[j];
        }
        s
    }

    pub fn evaluate(&self, p: &[f64]) -> f64 {
        let xlogy = |x: f64, y: f64| if x > 0.0 { x * (x / y).ln() } else { 0.0 };
        match &self.objective {
            SimplexObjective::Entropy => p.iter().map(|&x| xlogy(x, 1.0)).sum(),
            SimplexObjective::KlToPrior { prior, alpha } => {
                let data: f64 = self
                    .bin_sums(p)
                    .iter()
                    .zip(&self.target)
                    .map(|(&s, &t)| xlogy(s, t))
                    .sum();
                let reg: f64 = p.iter().zip(prior).map(|(&x, &m)| xlogy(x, m)).sum();
                data + alpha * reg
            }
        }
    }

    /// The optimizer in closed form: uniform within each fiber for the entropy
    /// objective, `p ∝ prior · (target/fiber prior)^{1/(1+α)}` for the KL one.
    pub fn closed_form(&self) -> Vec<f64> {
        let mut sizes = vec![0.0; self.target.len()];
        match &self.objective {
            SimplexObjective::Entropy => {
                for &b in &self.bin_of {
                    sizes[b] += 1.0;
                }
                self.bin_of.iter().map(|&b| self.target[b] / sizes[b]).collect()
            }
            SimplexObjective::KlToPrior { prior, alpha } => {
                for (j, &b) in self.bin_of.iter().enumerate() {
                    sizes[b] += prior[j];
                }
                let raw: Vec<f64> = self
                    .bin_of
                    .iter()
                    .zip(prior)
                    .map(|(&b, &m)| {
                        if m > 0.0 && self.target[b] > 0.0 {
                            m * (self.target[b] / sizes[b]).powf(1.0 / (1.0 + alpha))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            }
        }
    }
}

/// Multiplicative-update mirror descent on the simplex. For the entropy
/// objective the iterates live on the product of scaled fiber simplices, so
/// `Bp = target` holds throughout.
pub fn mirror_descent_simplex(prob: &SimplexProblem, iters: usize, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let n = prob.bin_of.len();
    // deterministic non-uniform start
    let mut p: Vec<f64> = (0..n).map(|j| 1.0 + (j % 7) as f64 / 7.0).collect();
    match &prob.objective {
        SimplexObjective::Entropy => {
            rescale_fibers(prob, &mut p);
            let mut next = vec![0.0; n];
            for iter in 1..=iters {
                for j in 0..n {
                    next[j] = if p[j] > 0.0 { p[j] * (-step * (p[j].ln() + 1.0)).exp() } else { 0.0 };
                }
                rescale_fibers(prob, &mut next);
                let change = max_change(&p, &next);
                std::mem::swap(&mut p, &mut next);
                if change < 1e-15 {
                    return Ok(p);
                }
                if iter == iters {
                    return Err(Error::NotConverged {
                        iterations: iters,
                        residual: change,
                    });
                }
            }
            Ok(p)
        }
        SimplexObjective::KlToPrior { prior, alpha } => {
            for j in 0..n {
                p[j] = if prior[j] > 0.0 && prob.target[prob.bin_of[j]] > 0.0 { prior[j] } else { 0.0 };
            }
            normalize(&mut p);
            let eta = step / (1.0 + alpha);
            let mut next = vec![0.0; n];
            for iter in 1..=iters {
                let sums = prob.bin_sums(&p);
                // work with log-gradients shifted by their max for stability
                let mut log_next = vec![f64::NEG_INFINITY; n];
                for j in 0..n {
                    if p[j] > 0.0 {
                        let b = prob.bin_of[j];
                        let grad = (sums[b] / prob.target[b]).ln() + 1.0 + alpha * ((p[j] / prior[j]).ln() + 1.0);
                        log_next[j] = p[j].ln() - eta * grad;
                    }
                }
                let max = log_next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for j in 0..n {
                    next[j] = (log_next[j] - max).exp();
                }
                normalize(&mut next);
                let change = max_change(&p, &next);
                std::mem::swap(&mut p, &mut next);
                if change < 1e-15 {
                    return Ok(p);
                }
                if iter == iters {
                    return Err(Error::NotConverged {
                        iterations: iters,
                        residual: change,
                    });
                }
            }
            Ok(p)
        }
    }
}

fn rescale_fibers(prob: &SimplexProblem, p: &mut [f64]) {
    let sums = prob.bin_sums(p);
    for (j, &b) in prob.bin_of.iter().enumerate() {
        p[j] = if sums[b] > 0.0 { p[j] * prob.target[b] / sums[b] } else { 0.0 };
    }
}

fn normalize(p: &mut [f64]) {
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact OT for equal-weight, equal-size measures by enumerating all `n!`
/// permutation couplings.
pub fn brute_force_ot(mu: &ParticleMeasure, nu: &ParticleMeasure, cost: &DMatrix<f64>) -> Result<TransportPlan> {
    let n = mu.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge {
            n,
            limit: BRUTE_FORCE_MAX,
        });
    }
    if nu.len() != n || cost.nrows() != n || cost.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: nu.len(),
        });
    }
    let w = 1.0 / n as f64;
    if mu.weights().iter().chain(nu.weights()).any(|&x| (x - w).abs() > 1e-12) {
        return Err(Error::InvalidArgument("brute-force OT needs equal weights".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let score = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum() };
    let mut best = perm.clone();
    let mut best_cost = score(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s < best_cost {
                best_cost = s;
                best = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let entries = best.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
    TransportPlan::from_entries(cost, entries)
}

/// Exhaustive minimum of `objective` over a `resolution`-per-axis lattice on
/// the bounding box of `theta`, keeping lattice points inside `theta`. Ties go
/// to the lexicographically smallest point.
pub fn grid_argmin_oracle<F>(objective: F, theta: &Domain, resolution: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("resolution must be >= 2, got {resolution}")));
    }
    let bounds = theta.bounding_box().ok_or(Error::UnboundedDomain)?;
    let d = bounds.dim();
    let step: Vec<f64> = (0..d).map(|k| bounds.width(k) / (resolution - 1) as f64).collect();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        for k in 0..d {
            x[k] = if idx[k] == resolution - 1 {
                bounds.upper()[k]
            } else {
                bounds.lower()[k] + idx[k] as f64 * step[k]
            };
        }
        if theta.contains(&x) {
            let v = objective(&x);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, x.clone()));
            }
        }
        // odometer, last axis fastest
        let mut k = d;
        loop {
            if k == 0 {
                return best.map(|(_, x)| x).ok_or(Error::InvalidArgument("no lattice point in domain".into()));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Modified Bessel function `I₀(a) = (1/2π)∫₀^{2π} exp(a cos θ) dθ` by its
/// power series `Σ (a²/4)^k / (k!)²`.
pub fn bessel_i0(a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::InvalidArgument(format!("I0 argument must be nonnegative, got {a}")));
    }
    if a > 700.0 {
        return Err(Error::InvalidArgument(format!("I0 argument {a} overflows")));
    }
    let q = a * a / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 0.0;
    while term >= 1e-15 * sum {
        k += 1.0;
        term *= q / (k * k);
        sum += term;
    }
    Ok(sum)
}

/// Trapezoid rule for the integral definition of `I₀` with `n` nodes.
pub fn bessel_i0_quadrature(a: f64, n: usize) -> f64 {
    let h = 2.0 * PI / n as f64;
    (0..n).map(|k| (a * (k as f64 * h).cos()).exp()).sum::<f64>() / n as f64
}
