//! Discrete optimal transport between particle measures: an exact
//! transportation simplex, a sorting path for one-dimensional data, and
//! log-domain Sinkhorn.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{dist2, ParticleMeasure};

/// Default Sinkhorn iteration budget.
pub const SINKHORN_MAX_ITER: usize = 10_000;
/// Sinkhorn stops once the L1 marginal error drops below this.
pub const SINKHORN_TOL: f64 = 1e-6;
/// Dense problems larger than this many cells are refused.
pub const MAX_DENSE_CELLS: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OtMethod {
    Exact,
    Sinkhorn { epsilon: f64 },
}

impl OtMethod {
    /// Parses `exact` or `sinkhorn:<eps>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "exact" {
            return Ok(OtMethod::Exact);
        }
        if let Some(eps) = s.strip_prefix("sinkhorn:") {
            let epsilon: f64 = eps
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad sinkhorn epsilon '{eps}'")))?;
            if !(epsilon > 0.0 && epsilon.is_finite()) {
                return Err(Error::Parse(format!("sinkhorn epsilon must be positive, got {eps}")));
            }
            return Ok(OtMethod::Sinkhorn { epsilon });
        }
        Err(Error::Parse(format!("unknown transport method '{s}'")))
    }
}

impl fmt::Display for OtMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OtMethod::Exact => f.write_str("exact"),
            OtMethod::Sinkhorn { epsilon } => write!(f, "sinkhorn:{epsilon}"),
        }
    }
}

/// A coupling stored as its nonzero cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
    objective: f64,
}

impl TransportPlan {
    /// Plan from explicit cells; the objective is recomputed from `cost`.
    pub fn from_entries(cost: &DMatrix<f64>, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut objective = 0.0;
        for &(i, j, v) in &entries {
            if i >= cost.nrows() || j >= cost.ncols() || !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("bad plan entry ({i}, {j}, {v})")));
            }
            objective += v * cost[(i, j)];
        }
        Ok(Self {
            rows: cost.nrows(),
            cols: cost.ncols(),
            entries,
            objective,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Nonzero cells as `(source, target, mass)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `Σ plan · cost`.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, v) in &self.entries {
            s[i] += v;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, v) in &self.entries {
            s[j] += v;
        }
        s
    }

    /// Largest absolute deviation of either marginal from the given weights.
    pub fn marginal_error(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let r = self.row_sums().iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

/// `C[i][j] = |xᵢ − yⱼ|^p`.
pub fn cost_matrix(x: &ParticleMeasure, y: &ParticleMeasure, p: f64) -> Result<DMatrix<f64>> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    check_p(p)?;
    check_size(x.len(), y.len())?;
    let (m, n) = (x.len(), y.len());
    // column-major fill, one column per target point
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|j| {
            let yj = y.point(j);
            (0..m).map(move |i| ground_cost(x.point(i), yj, p))
        })
        .collect();
    Ok(DMatrix::from_vec(m, n, data))
}

pub(crate) fn ground_cost(a: &[f64], b: &[f64], p: f64) -> f64 {
    let d2 = dist2(a, b);
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.sqrt().powf(p)
    }
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")))
    }
}

fn check_size(m: usize, n: usize) -> Result<()> {
    if m.saturating_mul(n) > MAX_DENSE_CELLS {
        return Err(Error::TooLarge {
            n: m.saturating_mul(n),
            limit: MAX_DENSE_CELLS,
        });
    }
    Ok(())
}

fn check_cost_shape(mu: &ParticleMeasure, nu: &ParticleMeasure, cost: &DMatrix<f64>) -> Result<()> {
    if cost.nrows() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            found: cost.nrows(),
        });
    }
    if cost.ncols() != nu.len() {
        return Err(Error::DimensionMismatch {
            expected: nu.len(),
            found: cost.ncols(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix must be finite".into()));
    }
    Ok(())
}

fn support(weights: &[f64]) -> Vec<usize> {
    (0..weights.len()).filter(|&i| weights[i] > 0.0).collect()
}

/// Exact optimal coupling by the transportation simplex.
pub fn exact_ot(mu: &ParticleMeasure, nu: &ParticleMeasure, cost: &DMatrix<f64>) -> Result<TransportPlan> {
    check_cost_shape(mu, nu, cost)?;
    let rows = support(mu.weights());
    let cols = support(nu.weights());
    let supply: Vec<f64> = rows.iter().map(|&i| mu.weight(i)).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| nu.weight(j)).collect();
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost[(i, j)]))
        .collect();
    let flows = TransportSimplex::new(&supply, &demand, c).solve()?;
    let mut entries = Vec::new();
    let mut objective = 0.0;
    for (a, b, v) in flows {
        if v > 0.0 {
            let (i, j) = (rows[a], cols[b]);
            objective += v * cost[(i, j)];
            entries.push((i, j, v));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    Ok(TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        entries,
        objective,
    })
}

/// Exact coupling for one-dimensional measures under `|x − y|^p`, `p ≥ 1`:
/// the monotone (quantile) coupling.
pub fn exact_ot_1d(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Result<TransportPlan> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: if mu.dim() != 1 { mu.dim() } else { nu.dim() },
        });
    }
    check_p(p)?;
    let order = |m: &ParticleMeasure| {
        let mut idx = support(m.weights());
        idx.sort_by(|&a, &b| m.point(a)[0].total_cmp(&m.point(b)[0]).then(a.cmp(&b)));
        idx
    };
    let (ri, cj) = (order(mu), order(nu));
    let supply: Vec<f64> = ri.iter().map(|&i| mu.weight(i)).collect();
    let demand: Vec<f64> = cj.iter().map(|&j| nu.weight(j)).collect();
    let mut entries = Vec::new();
    let mut objective = 0.0;
    for (a, b, v) in northwest_corner(&supply, &demand) {
        if v > 0.0 {
            let (i, j) = (ri[a], cj[b]);
            objective += v * ground_cost(mu.point(i), nu.point(j), p);
            entries.push((i, j, v));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    Ok(TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        entries,
        objective,
    })
}

/// Northwest-corner basis: exactly `m + n − 1` cells, some possibly zero.
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Vec<(usize, usize, f64)> {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(m + n - 1);
    loop {
        let x = s[i].min(d[j]).max(0.0);
        s[i] -= x;
        d[j] -= x;
        cells.push((i, j, x));
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    // the last cell absorbs rounding so that totals match
    if let Some(last) = cells.last_mut() {
        last.2 += s[m - 1].min(d[n - 1]).max(0.0);
    }
    cells
}

struct TransportSimplex<'a> {
    supply: &'a [f64],
    demand: &'a [f64],
    cost: Vec<f64>,
}

impl TransportSimplex<'_> {
    fn new<'a>(supply: &'a [f64], demand: &'a [f64], cost: Vec<f64>) -> TransportSimplex<'a> {
        TransportSimplex { supply, demand, cost }
    }

    fn solve(&self) -> Result<Vec<(usize, usize, f64)>> {
        let (m, n) = (self.supply.len(), self.demand.len());
        if m == 0 || n == 0 {
            return Err(Error::ZeroMass);
        }
        let mut basis = northwest_corner(self.supply, self.demand);
        if m == 1 || n == 1 {
            return Ok(basis);
        }
        let scale = self.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let tol = 1e-13 * (1.0 + scale);
        let budget = 10_000 + 200 * (m + n) * (m + n).min(64);
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; n];
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m + n];
        let mut parent = vec![usize::MAX; m + n];
        let mut parent_cell = vec![usize::MAX; m + n];
        let mut degenerate_run = 0usize;
        for _iter in 0..budget {
            for a in adj.iter_mut() {
                a.clear();
            }
            for (k, &(i, j, _)) in basis.iter().enumerate() {
                adj[i].push((m + j, k));
                adj[m + j].push((i, k));
            }
            self.potentials(&adj, &mut u, &mut v);

            let bland = degenerate_run > 50;
            let mut entering = None;
            let mut best = -tol;
            #[allow(clippy::needless_range_loop)]
            'scan: for i in 0..m {
                let row = &self.cost[i * n..(i + 1) * n];
                for j in 0..n {
                    let r = row[j] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok(basis);
            };

            // tree path from row ei to column ej
            parent.iter_mut().for_each(|p| *p = usize::MAX);
            let start = ei;
            let goal = m + ej;
            parent[start] = start;
            let mut queue = VecDeque::from([start]);
            while let Some(node) = queue.pop_front() {
                if node == goal {
                    break;
                }
                for &(next, cell) in &adj[node] {
                    if parent[next] == usize::MAX {
                        parent[next] = node;
                        parent_cell[next] = cell;
                        queue.push_back(next);
                    }
                }
            }
            // walk back from the goal; the first edge is a donor (−), then alternate
            let mut cycle = Vec::new();
            let mut node = goal;
            while node != start {
                cycle.push(parent_cell[node]);
                node = parent[node];
            }
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &cell) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    let x = basis[cell].2;
                    let better = x < theta
                        || (x == theta && (basis[cell].0, basis[cell].1) < (basis[leave].0, basis[leave].1));
                    if better {
                        theta = x;
                        leave = cell;
                    }
                }
            }
            for (pos, &cell) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    basis[cell].2 -= theta;
                } else {
                    basis[cell].2 += theta;
                }
            }
            basis[leave] = (ei, ej, theta);
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        }
        Err(Error::SolverStall { iterations: budget })
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>], u: &mut [f64], v: &mut [f64]) {
        let (m, n) = (self.supply.len(), self.demand.len());
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &(next, _) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                if node < m {
                    let j = next - m;
                    v[j] = self.cost[node * n + j] - u[node];
                } else {
                    let j = node - m;
                    u[next] = self.cost[next * n + j] - v[j];
                }
                queue.push_back(next);
            }
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Final-stage sweeps before a stalled iteration switches to Newton steps.
const NEWTON_AFTER: usize = 200;
/// Largest column count for which dense Newton steps are attempted.
const NEWTON_MAX_COLS: usize = 400;

fn f_update(c: &[f64], log_b: &[f64], g: &[f64], eps: f64, f: &mut [f64]) {
    let n = g.len();
    for (i, fi) in f.iter_mut().enumerate() {
        let row = &c[i * n..(i + 1) * n];
        *fi = -eps * log_sum_exp((0..n).map(|j| log_b[j] + (g[j] - row[j]) / eps));
    }
}

fn g_update(c: &[f64], log_a: &[f64], f: &[f64], eps: f64, g: &mut [f64]) {
    let n = g.len();
    for (j, gj) in g.iter_mut().enumerate() {
        *gj = -eps * log_sum_exp((0..f.len()).map(|i| log_a[i] + (f[i] - c[i * n + j]) / eps));
    }
}

/// One Newton ascent step on the semi-dual `g ↦ Σ a_i f_i(g) + Σ b_j g_j`,
/// where `f` is the exact row update of `g`. Leaves `f` consistent with `g`.
/// Returns false when no ascent was found.
#[allow(clippy::too_many_arguments)]
fn newton_step(c: &[f64], log_a: &[f64], log_b: &[f64], a: &[f64], b: &[f64], eps: f64, f: &mut Vec<f64>, g: &mut Vec<f64>) -> bool {
    let (m, n) = (f.len(), g.len());
    let semi_dual = |f: &[f64], g: &[f64]| -> f64 {
        a.iter().zip(f).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(g).map(|(x, y)| x * y).sum::<f64>()
    };
    let plan: Vec<f64> = (0..m * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            (log_a[i] + log_b[j] + (f[i] + g[j] - c[k]) / eps).exp()
        })
        .collect();
    let cols: Vec<f64> = (0..n).map(|j| (0..m).map(|i| plan[i * n + j]).sum()).collect();
    // g is fixed up to a constant; pin the last coordinate
    let k = n - 1;
    let mut h = DMatrix::<f64>::zeros(k, k);
    for i in 0..m {
        let row = &plan[i * n..i * n + k];
        for p in 0..k {
            for q in 0..k {
                h[(p, q)] -= row[p] * row[q] / a[i];
            }
        }
    }
    for p in 0..k {
        h[(p, p)] += cols[p];
    }
    let grad = nalgebra::DVector::from_iterator(k, (0..k).map(|j| b[j] - cols[j]));
    let Some(d) = h.lu().solve(&grad) else {
        return false;
    };
    let start = semi_dual(f, g);
    let (mut trial_f, mut trial_g) = (f.clone(), g.clone());
    let mut t = 1.0;
    for _ in 0..30 {
        for j in 0..k {
            trial_g[j] = g[j] + t * eps * d[j];
        }
        f_update(c, log_b, &trial_g, eps, &mut trial_f);
        if semi_dual(&trial_f, &trial_g) > start {
            *f = trial_f;
            *g = trial_g;
            return true;
        }
        t *= 0.5;
    }
    false
}

/// Total L1 marginal error of the plan encoded by the potentials `f`, `g`.
#[allow(clippy::too_many_arguments)]
fn marginal_l1(c: &[f64], log_a: &[f64], log_b: &[f64], f: &[f64], g: &[f64], eps: f64, a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (f.len(), g.len());
    let mut cols = vec![0.0; n];
    let mut err = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..n {
            let v = (log_a[i] + log_b[j] + (f[i] + g[j] - c[i * n + j]) / eps).exp();
            s += v;
            cols[j] += v;
        }
        err += (s - a[i]).abs();
    }
    err + cols.iter().zip(b).map(|(s, t)| (s - t).abs()).sum::<f64>()
}

/// Entropic coupling by log-domain Sinkhorn with ε-annealing. The objective is
/// the transport cost `⟨P, C⟩` of the entropic plan.
pub fn sinkhorn(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    cost: &DMatrix<f64>,
    epsilon: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    check_cost_shape(mu, nu, cost)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let rows = support(mu.weights());
    let cols = support(nu.weights());
    let (m, n) = (rows.len(), cols.len());
    if m == 0 || n == 0 {
        return Err(Error::ZeroMass);
    }
    let a: Vec<f64> = rows.iter().map(|&i| mu.weight(i)).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weight(j)).collect();
    if m == 1 || n == 1 {
        // the only coupling is the product
        let mut entries = Vec::new();
        let mut objective = 0.0;
        for (ii, &i) in rows.iter().enumerate() {
            for (jj, &j) in cols.iter().enumerate() {
                let v = a[ii] * b[jj];
                objective += v * cost[(i, j)];
                entries.push((i, j, v));
            }
        }
        return Ok(TransportPlan {
            rows: mu.len(),
            cols: nu.len(),
            entries,
            objective,
        });
    }
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| cost[(i, j)]))
        .collect();
    let cmax = c.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut eps = epsilon.max(cmax).max(epsilon);
    let mut iterations = 0usize;
    let mut err;
    loop {
        let last_stage = eps <= epsilon;
        let stage_tol = if last_stage { SINKHORN_TOL * 0.1 } else { 1e-3 };
        let mut stage_iter = 0usize;
        let newton = last_stage && n <= NEWTON_MAX_COLS;
        loop {
            if newton && stage_iter >= NEWTON_AFTER {
                if !newton_step(&c, &log_a, &log_b, &a, &b, eps, &mut f, &mut g) {
                    // fall back to a plain sweep
                    g_update(&c, &log_a, &f, eps, &mut g);
                    f_update(&c, &log_b, &g, eps, &mut f);
                }
            } else {
                f_update(&c, &log_b, &g, eps, &mut f);
                g_update(&c, &log_a, &f, eps, &mut g);
            }
            iterations += 1;
            stage_iter += 1;
            err = marginal_l1(&c, &log_a, &log_b, &f, &g, eps, &a, &b);
            if err <= stage_tol || iterations >= max_iter {
                break;
            }
        }
        if last_stage || iterations >= max_iter {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }
    if err > SINKHORN_TOL {
        return Err(Error::NotConverged {
            iterations,
            residual: err,
        });
    }
    let mut entries = Vec::new();
    let mut objective = 0.0;
    for i in 0..m {
        for j in 0..n {
            let cij = c[i * n + j];
            let v = (log_a[i] + log_b[j] + (f[i] + g[j] - cij) / eps).exp();
            if v > 0.0 {
                objective += v * cij;
                entries.push((rows[i], cols[j], v));
            }
        }
    }
    Ok(TransportPlan {
        rows: mu.len(),
        cols: nu.len(),
        entries,
        objective,
    })
}

/// Optimal transport cost `W_p^p(μ, ν)`.
pub fn transport_cost(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64, method: OtMethod) -> Result<f64> {
    Ok(optimal_plan(mu, nu, p, method)?.objective())
}

/// Optimal plan under `|x − y|^p`, using the sorting path for exact 1D problems.
pub fn optimal_plan(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64, method: OtMethod) -> Result<TransportPlan> {
    check_p(p)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    match method {
        OtMethod::Exact if mu.dim() == 1 => exact_ot_1d(mu, nu, p),
        OtMethod::Exact => exact_ot(mu, nu, &cost_matrix(mu, nu, p)?),
        OtMethod::Sinkhorn { epsilon } => sinkhorn(mu, nu, &cost_matrix(mu, nu, p)?, epsilon, SINKHORN_MAX_ITER),
    }
}

/// `W_p(μ, ν)`.
pub fn wasserstein_p(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64, method: OtMethod) -> Result<f64> {
    Ok(transport_cost(mu, nu, p, method)?.max(0.0).powf(1.0 / p))
}

/// Cost of the coupling that pairs point `i` of `a` with point `i` of `b`:
/// an upper bound on `W_p^p` when both carry the same weights.
pub fn paired_cost(a: &ParticleMeasure, b: &ParticleMeasure, p: f64) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b.points())
        .map(|((x, w), y)| w * ground_cost(x, y, p))
        .sum())
}
