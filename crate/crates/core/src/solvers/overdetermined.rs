//! Overdetermined problems: φ-divergence matching (conditional distribution)
//! and Wasserstein matching (projection onto the range).

use rayon::prelude::*;

use super::argmin::Pullback;
use super::{Formulation, SearchConfig, SolveReport, REPORT_OT_LIMIT};
use crate::divergences::{jensen_lower_bound, phi_divergence, PhiKind};
use crate::error::{Error, Result};
use crate::maps::ForwardMap;
use crate::measures::{condition, pushforward, Measure, ParticleMeasure};
use crate::transport::{optimal_plan, paired_cost, OtMethod};

/// Minimizer of `D_φ(G#ρx ‖ ρy)`: its pushforward is `ρy` conditioned on the
/// range. `range_test` decides range membership (the range is closed).
pub fn conditional_reconstruction<R>(g: &ForwardMap, rho_y: &Measure, range_test: R, kind: &PhiKind) -> Result<SolveReport>
where
    R: Fn(&[f64]) -> bool + Sync,
{
    conditional_reconstruction_with(g, rho_y, range_test, kind, &SearchConfig::default())
}

pub fn conditional_reconstruction_with<R>(
    g: &ForwardMap,
    rho_y: &Measure,
    range_test: R,
    kind: &PhiKind,
    search: &SearchConfig,
) -> Result<SolveReport>
where
    R: Fn(&[f64]) -> bool + Sync,
{
    if rho_y.dim() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: rho_y.dim(),
        });
    }
    let nu1 = rho_y.mass_where(&range_test);
    if !(nu1 > 0.0) {
        return Err(Error::EmptyRangeMass);
    }
    let conditioned = match condition(rho_y, &range_test) {
        Err(Error::ZeroMass) => return Err(Error::EmptyRangeMass),
        other => other?,
    };
    let objective = phi_divergence(&conditioned, rho_y, kind)?;

    // one preimage per charged location
    let masses = conditioned.masses();
    let locations = conditioned.locations();
    let charged: Vec<usize> = (0..masses.len()).filter(|&i| masses[i] > 0.0).collect();
    let pb = Pullback::new(g, search)?;
    let preimages = charged
        .par_iter()
        .map(|&i| pb.inversion(&locations[i]))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = charged.iter().map(|&i| masses[i]).collect();
    let optimizer = ParticleMeasure::new(g.in_dim(), preimages, weights)?;

    let mut report = SolveReport::new(optimizer.into(), conditioned, objective, Formulation::Conditional);
    report.diag("range_mass", nu1);
    if let Ok(bound) = jensen_lower_bound(kind, nu1) {
        report.diag("jensen_lower_bound", bound);
    }
    report
        .notes
        .push("the parameter-space optimizer is one preimage representative; it is not unique".into());
    Ok(report)
}

/// Minimizer of `W_p(G#ρx, ρy)`: `ρx* = F#ρy`, whose pushforward is the
/// projection of the data onto the range.
pub fn marginal_reconstruction(g: &ForwardMap, rho_y: &ParticleMeasure, p: f64) -> Result<SolveReport> {
    marginal_reconstruction_with(g, rho_y, p, OtMethod::Exact, &SearchConfig::default())
}

pub fn marginal_reconstruction_with(
    g: &ForwardMap,
    rho_y: &ParticleMeasure,
    p: f64,
    method: OtMethod,
    search: &SearchConfig,
) -> Result<SolveReport> {
    if rho_y.dim() != g.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: g.out_dim(),
            found: rho_y.dim(),
        });
    }
    crate::transport::check_p(p)?;
    let pb = Pullback::new(g, search)?;
    let optimizer = pb.map_measure(rho_y, |pb, y| pb.inversion(y))?;
    let projected = pushforward(g, &optimizer)?;
    // pairing each datum with its own projection is an optimal coupling
    let paired = paired_cost(&projected, rho_y, p)?;
    let mut report = SolveReport::new(
        optimizer.into(),
        projected.clone().into(),
        paired.max(0.0).powf(1.0 / p),
        Formulation::Marginal,
    );
    report.diag("paired_cost", paired);
    report.diag(
        "max_projection_distance",
        projected
            .points()
            .zip(rho_y.points())
            .map(|(a, b)| crate::measures::dist2(a, b).sqrt())
            .fold(0.0, f64::max),
    );
    if rho_y.dim() == 1 || rho_y.len() <= REPORT_OT_LIMIT {
        let ot = optimal_plan(&projected, rho_y, p, method)?.objective();
        report.diag("ot_cost", ot);
        report.transport = Some(method);
    } else {
        report
            .notes
            .push(format!("transport cost not recomputed for {} particles; objective uses the paired coupling", rho_y.len()));
    }
    Ok(report)
}
