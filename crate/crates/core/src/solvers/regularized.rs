//! Regularized problems: KL data fit with a KL-to-prior penalty, and `Wpᵖ`
//! data fit with a `p`-th moment penalty; plus the linear Tikhonov bound.

use nalgebra::DMatrix;

use super::argmin::Pullback;
use super::underdetermined::{constraint_residual, FiberBins};
use super::{Formulation, RegularizationConfig, SearchConfig, SolveReport, REPORT_OT_LIMIT};
use crate::error::{Error, Result};
use crate::maps::{augment, check_full_rank, operator_norm, pseudoinverse, singular_values, tikhonov_operator, ForwardMap};
use crate::measures::{pushforward, pushforward_grid, Grid, GridMeasure, ParticleMeasure};
use crate::transport::{paired_cost, transport_cost, OtMethod};

/// Minimizer of `KL(G#ρx ‖ ρy) + α KL(ρx ‖ 𝓜)`:
/// `ρx*(x) ∝ 𝓜(x) [ρy(G(x)) / ∫ δ(G(x) − G(x′)) 𝓜(x′) dx′]^{1/(1+α)}`.
pub fn reg_entropy_solution(
    g: &ForwardMap,
    theta_grid: &Grid,
    rho_y: &GridMeasure,
    cfg: &RegularizationConfig,
) -> Result<SolveReport> {
    let prior = cfg
        .prior
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("the entropy-regularized solver needs a prior".into()))?;
    if prior.grid() != theta_grid {
        return Err(Error::SupportMismatch);
    }
    let bins = FiberBins::new(g, theta_grid, rho_y.grid())?;
    let outside = bins.check_data(rho_y)?;
    let m = prior.values();
    for (i, b) in bins.bin_of().iter().enumerate() {
        if let Some(b) = b {
            if rho_y.cell_mass(*b) > 0.0 && !(m[i] > 0.0) {
                return Err(Error::PriorVanishes);
            }
        }
    }
    let level = bins.level_set_masses(Some(m));
    // a single cell at the smallest positive prior value
    let m_min = m.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = bins.floor() * m_min;
    let exponent = 1.0 / (1.0 + cfg.alpha);
    let mut floor_hits = 0usize;
    let ratio: Vec<f64> = (0..level.len())
        .map(|b| {
            let t = rho_y.cell_mass(b);
            if t == 0.0 || bins.counts()[b] == 0 {
                return 0.0;
            }
            if level[b] < floor {
                floor_hits += 1;
            }
            (t / level[b].max(floor)).powf(exponent)
        })
        .collect();
    let values: Vec<f64> = bins
        .bin_of()
        .iter()
        .enumerate()
        .map(|(i, b)| b.map_or(0.0, |b| m[i] * ratio[b]))
        .collect();
    let optimizer = GridMeasure::new(theta_grid.clone(), values, bins.in_theta().to_vec())?;
    let push = pushforward_grid(g, &optimizer, rho_y.grid())?;

    let xlogy = |x: f64, y: f64| if x > 0.0 { x * (x / y).ln() } else { 0.0 };
    let fit: f64 = push.masses().iter().zip(rho_y.masses()).map(|(&a, b)| xlogy(a, b)).sum();
    let vol = theta_grid.cell_volume();
    let reg: f64 = optimizer
        .values()
        .iter()
        .zip(m)
        .map(|(&v, &w)| if v > 0.0 { v * (v / w).ln() * vol } else { 0.0 })
        .sum();
    let ratios: Vec<f64> = optimizer
        .values()
        .iter()
        .zip(m)
        .map(|(&v, &w)| if w > 0.0 { v / w } else { 0.0 })
        .collect();
    let mut report = SolveReport::new(
        optimizer.clone().into(),
        push.clone().into(),
        fit + cfg.alpha * reg,
        Formulation::RegEntropy,
    );
    report.diag("alpha", cfg.alpha);
    report.diag("bandwidth", bins.bandwidth());
    report.diag("level_set_floor_hits", floor_hits as f64);
    report.diag("unreachable_mass", outside);
    report.diag("data_fit", fit);
    report.diag("prior_divergence", reg);
    report.diag("constraint_residual", constraint_residual(&push, rho_y));
    report.diag("max_fiber_cv", bins.max_fiber_cv(&ratios));
    Ok(report)
}

/// Minimizer of `Wpᵖ(G#ρx, ρy) + α ∫|x|ᵖ dρx`: `ρx* = F̃#ρy`.
pub fn reg_wp_solution(g: &ForwardMap, rho_y: &ParticleMeasure, cfg: &RegularizationConfig) -> Result<SolveReport> {
    reg_wp_solution_with(g, rho_y, cfg, OtMethod::Exact, &SearchConfig::default())
}

pub fn reg_wp_solution_with(
    g: &ForwardMap,
    rho_y: &ParticleMeasure,
    cfg: &RegularizationConfig,
    method: OtMethod,
    search: &SearchConfig,
) -> Result<SolveReport> {
    if rho_y.dim() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: rho_y.dim(),
        });
    }
    let pb = Pullback::new(g, search)?;
    let (alpha, p) = (cfg.alpha, cfg.p);
    let optimizer = pb.map_measure(rho_y, |pb, y| pb.reg_inversion(y, alpha, p))?;
    let push = pushforward(g, &optimizer)?;
    let moment = optimizer.moment(p)?;
    let mut notes = Vec::new();
    let (fit, used) = if rho_y.dim() == 1 || rho_y.len() <= REPORT_OT_LIMIT {
        (transport_cost(&push, rho_y, p, method)?, Some(method))
    } else {
        notes.push(format!(
            "transport cost bounded by the paired coupling for {} particles",
            rho_y.len()
        ));
        (paired_cost(&push, rho_y, p)?, None)
    };
    let mut report = SolveReport::new(optimizer.into(), push.into(), fit + alpha * moment, Formulation::RegWp);
    report.transport = used;
    report.notes = notes;
    report.diag("alpha", alpha);
    report.diag("p", p);
    report.diag("data_fit", fit);
    report.diag("moment", moment);
    Ok(report)
}

/// Both sides of `Wpᵖ(G̃#ρx, ρy ⊗ δ₀) = Wpᵖ(G#ρx, ρy) + α ∫|x|ᵖ dρx` with
/// `G̃ = (G, α^{1/p} id)`, each computed by exact transport. The two agree
/// for `p = 2`; for other `p` the left side is only bounded by the right.
pub fn augmented_objective_identity_check(
    g: &ForwardMap,
    rho_x: &ParticleMeasure,
    rho_y: &ParticleMeasure,
    cfg: &RegularizationConfig,
) -> Result<(f64, f64)> {
    let aug = augment(g, cfg.alpha, cfg.p)?;
    let padded = rho_y.with_zero_padding(g.in_dim());
    let lhs = transport_cost(&pushforward(&aug, rho_x)?, &padded, cfg.p, OtMethod::Exact)?;
    let rhs = transport_cost(&pushforward(g, rho_x)?, rho_y, cfg.p, OtMethod::Exact)? + cfg.alpha * rho_x.moment(cfg.p)?;
    Ok((lhs, rhs))
}

/// Error bound for Tikhonov-regularized linear reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TikhonovBound {
    /// `‖T‖₂·w2 + ‖T − A†‖₂·√m2` with `T = (AᵀA + αI)⁻¹Aᵀ`.
    pub full: f64,
    /// `w2/(2√α) + α/(σm(σm² + α))·√m2`.
    pub simplified: f64,
    /// `‖T‖₂ = max σ/(σ² + α)`.
    pub noise_coefficient: f64,
    /// `‖T − A†‖₂`.
    pub bias_coefficient: f64,
    /// `1/(2√α)`.
    pub simplified_noise_coefficient: f64,
    /// `α/(σm(σm² + α))`.
    pub simplified_bias_coefficient: f64,
}

/// Bounds `W₂(ρx_true, ρx^{δ,α})` by the noise level `w2_noise = W₂(ρy_true, ρy^δ)`
/// and the data second moment `m2 = ∫|y|² dρy_true`.
pub fn tikhonov_bound(a: &DMatrix<f64>, alpha: f64, w2_noise: f64, second_moment_true: f64) -> Result<TikhonovBound> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if !(w2_noise >= 0.0) || !(second_moment_true >= 0.0) {
        return Err(Error::InvalidArgument("noise level and moment must be nonnegative".into()));
    }
    check_full_rank(a)?;
    let t = tikhonov_operator(a, alpha)?;
    let noise_coefficient = operator_norm(&t);
    let bias_coefficient = operator_norm(&(&t - pseudoinverse(a)?));
    let sigma_m = *singular_values(a).last().expect("nonempty matrix");
    let simplified_noise_coefficient = 1.0 / (2.0 * alpha.sqrt());
    let simplified_bias_coefficient = alpha / (sigma_m * (sigma_m * sigma_m + alpha));
    let root = second_moment_true.sqrt();
    Ok(TikhonovBound {
        full: noise_coefficient * w2_noise + bias_coefficient * root,
        simplified: simplified_noise_coefficient * w2_noise + simplified_bias_coefficient * root,
        noise_coefficient,
        bias_coefficient,
        simplified_noise_coefficient,
        simplified_bias_coefficient,
    })
}
