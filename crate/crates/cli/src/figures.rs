//! Plot data for the four figures. Densities use the grid text format,
//! point clouds the particle CSV format.

use std::path::Path;

use minv_core::fixtures::{
    self, in_unit_disc, offset_polar_reg_kl_density, offset_polar_underdetermined, polar_overdetermined, radial_density,
    uniform_radial,
};
use minv_core::solvers::{
    conditional_reconstruction, entropy_solution, marginal_reconstruction_with, moment_solution, reg_entropy_solution,
    reg_wp_solution_with,
};
use minv_core::{GridMeasure, Measure, OtMethod, PhiKind, RegularizationConfig, SearchConfig};

use crate::output::{measure_text, write_atomic};
use crate::{CliError, Overrides};

pub fn figure(id: &str, out: &Path, o: &Overrides) -> Result<(), CliError> {
    let files = match id {
        "1" => figure_1(o)?,
        "2" => figure_2(o)?,
        "3" => figure_3(o)?,
        "4" => figure_4(o)?,
        other => return Err(CliError::UnknownFigure(other.to_string())),
    };
    for (name, text) in &files {
        let path = out.join(name);
        write_atomic(&path, text)?;
        o.say(path.display().to_string());
    }
    Ok(())
}

type Files = Vec<(&'static str, String)>;

/// Data, φ-divergence reconstruction and Wasserstein reconstruction.
fn figure_1(o: &Overrides) -> Result<Files, CliError> {
    let f = polar_overdetermined(&o.fixture_config(0)).map_err(CliError::solver("fixture"))?;
    let data: Measure = f.data.clone().into();
    let phi = conditional_reconstruction(&f.map, &data, in_unit_disc, &PhiKind::KL).map_err(CliError::solver("conditional"))?;
    let wp = marginal_reconstruction_with(
        &f.map,
        &f.data,
        2.0,
        o.ot.unwrap_or(OtMethod::Exact),
        &SearchConfig::default(),
    )
    .map_err(CliError::solver("marginal"))?;
    Ok(vec![
        ("data.csv", measure_text(&data)),
        ("phi_reconstruction.csv", measure_text(&phi.pushforward_of_optimizer)),
        ("wp_reconstruction.csv", measure_text(&wp.pushforward_of_optimizer)),
    ])
}

/// Entropy density and least-norm support for uniform radial data.
fn figure_2(o: &Overrides) -> Result<Files, CliError> {
    let cfg = o.fixture_config(0);
    let mu_r = uniform_radial(cfg.grid / 4).map_err(CliError::solver("fixture"))?;
    let f = offset_polar_underdetermined(&mu_r.into(), &cfg).map_err(CliError::solver("fixture"))?;
    let (grid, rho) = (f.theta_grid.as_ref().expect("grid"), f.grid_data.as_ref().expect("grid data"));
    let entropy = entropy_solution(&f.map, grid, rho).map_err(CliError::solver("entropy"))?;
    let moment = moment_solution(&f.map, &f.data).map_err(CliError::solver("moment"))?;
    Ok(vec![
        ("entropy_density.grid", measure_text(&entropy.optimizer)),
        ("least_norm_support.csv", measure_text(&moment.optimizer)),
    ])
}

/// Unregularized and entropy-regularized densities with the Gaussian prior,
/// and the closed form of the latter.
fn figure_3(o: &Overrides) -> Result<Files, CliError> {
    let cfg = o.fixture_config(0);
    let f = fixtures::by_name("offset-polar-reg-kl", &cfg).map_err(CliError::solver("fixture"))?;
    let (grid, rho, prior) = (
        f.theta_grid.as_ref().expect("grid"),
        f.grid_data.as_ref().expect("grid data"),
        f.prior.clone().expect("prior"),
    );
    let plain = entropy_solution(&f.map, grid, rho).map_err(CliError::solver("entropy"))?;
    let reg_cfg = RegularizationConfig::new(cfg.alpha, 2.0)
        .map_err(CliError::solver("reg-entropy"))?
        .with_prior(prior);
    let reg = reg_entropy_solution(&f.map, grid, rho, &reg_cfg).map_err(CliError::solver("reg-entropy"))?;
    let density = radial_density(rho);
    let analytic = GridMeasure::from_density(grid.clone(), Some(f.map.theta()), |x| {
        offset_polar_reg_kl_density(&density, cfg.alpha, x).unwrap_or(0.0)
    })
    .map_err(CliError::solver("closed form"))?;
    Ok(vec![
        ("alpha0_density.grid", measure_text(&plain.optimizer)),
        ("alpha1_density.grid", measure_text(&reg.optimizer)),
        ("alpha1_closed_form.grid", measure_text(&analytic.into())),
    ])
}

/// Supports of the Wasserstein-regularized solution at α = 0 and α ≠ 0.
fn figure_4(o: &Overrides) -> Result<Files, CliError> {
    let cfg = o.fixture_config(0);
    let f = fixtures::by_name("offset-polar-reg-w2", &cfg).map_err(CliError::solver("fixture"))?;
    let ot = o.ot.unwrap_or(OtMethod::Exact);
    let search = SearchConfig::default();
    let mut files = Files::new();
    for (name, alpha) in [("alpha0_support.csv", 0.0), ("alpha1_support.csv", cfg.alpha)] {
        let reg = RegularizationConfig::new(alpha, 2.0).map_err(CliError::solver("reg-wp"))?;
        let report = reg_wp_solution_with(&f.map, &f.data, &reg, ot, &search).map_err(CliError::solver("reg-wp"))?;
        files.push((name, measure_text(&report.optimizer)));
    }
    Ok(files)
}
