use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use minv_core::fixtures::{self, Fixture, FIXTURE_NAMES};
use minv_core::maps::{linear_map, offset_polar_map_with_radius, polar_map};
use minv_core::measures::io::{read_grid, read_particles};
use minv_core::solvers::{
    conditional_reconstruction, entropy_solution, marginal_reconstruction_with, moment_solution, reg_entropy_solution,
    reg_wp_solution_with, Pullback,
};
use minv_core::{
    Bounds, ForwardMap, Formulation, Grid, GridMeasure, Measure, OtMethod, ParticleMeasure, RegularizationConfig,
    SearchConfig, SolveReport,
};

use crate::output::{measure_text, write_atomic};
use crate::spec::{DataSource, MapSpec, PriorSpec, ProblemSpec};
use crate::{CliError, Overrides};

fn spec_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Spec {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    formulation: Formulation,
    objective: f64,
    transport: Option<String>,
    optimizer: String,
    optimizer_kind: &'static str,
    diagnostics: &'a BTreeMap<String, f64>,
    notes: &'a [String],
    seed: u64,
}

/// Loaded inputs of one spec.
struct Problem {
    map: ForwardMap,
    particles: Option<ParticleMeasure>,
    grid: Option<GridMeasure>,
    fixture: Option<Fixture>,
}

impl Problem {
    fn particles(&self) -> ParticleMeasure {
        match (&self.particles, &self.grid) {
            (Some(p), _) => p.clone(),
            (None, Some(g)) => g.to_particles(),
            (None, None) => unreachable!("a problem always carries data"),
        }
    }

    /// Grid-form data: given, or a histogram of the particles with bin width `h`.
    fn grid_data(&self, bandwidth: Option<f64>) -> Result<GridMeasure, CliError> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        let p = self.particles.as_ref().expect("a problem always carries data");
        let h = bandwidth.ok_or_else(|| spec_err("data.bandwidth", "needed to bin particle data"))?;
        let d = p.dim();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for x in p.points() {
            for k in 0..d {
                lower[k] = lower[k].min(x[k]);
                upper[k] = upper[k].max(x[k]);
            }
        }
        let shape: Vec<usize> = (0..d).map(|k| ((upper[k] - lower[k]) / h).floor() as usize + 1).collect();
        let upper: Vec<f64> = (0..d).map(|k| lower[k] + shape[k] as f64 * h).collect();
        let grid = Bounds::new(lower, upper)
            .and_then(|b| Grid::new(b, shape))
            .map_err(|e| spec_err("data.bandwidth", e.to_string()))?;
        GridMeasure::from_particles(grid, p).map_err(|e| spec_err("data.bandwidth", e.to_string()))
    }
}

fn load(spec: &ProblemSpec, o: &Overrides) -> Result<Problem, CliError> {
    let mut problem = match &spec.data {
        DataSource::Fixture(name) => {
            if !FIXTURE_NAMES.contains(&name.as_str()) {
                return Err(spec_err("data.source", format!("unknown fixture '{name}'")));
            }
            let mut cfg = o.fixture_config(spec.seed);
            if o.samples.is_none() {
                cfg.samples = spec.samples.unwrap_or(cfg.samples);
            }
            if let Some(alpha) = Some(spec.alpha).filter(|a| *a > 0.0) {
                cfg.alpha = alpha;
            }
            let f = fixtures::by_name(name, &cfg).map_err(|e| spec_err("data.source", e.to_string()))?;
            Problem {
                map: f.map.clone(),
                particles: Some(f.data.clone()),
                grid: f.grid_data.clone(),
                fixture: Some(f),
            }
        }
        DataSource::Particles(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| spec_err("data.source", format!("{}: {e}", path.display())))?;
            let p = read_particles(&text).map_err(|e| spec_err("data.source", format!("{}: {e}", path.display())))?;
            Problem {
                map: polar_map(),
                particles: Some(p),
                grid: None,
                fixture: None,
            }
        }
        DataSource::Grid(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| spec_err("data.source", format!("{}: {e}", path.display())))?;
            let g = read_grid(&text).map_err(|e| spec_err("data.source", format!("{}: {e}", path.display())))?;
            Problem {
                map: polar_map(),
                particles: None,
                grid: Some(g),
                fixture: None,
            }
        }
    };
    problem.map = match &spec.map {
        MapSpec::FromFixture => problem.map,
        MapSpec::Polar => polar_map(),
        MapSpec::OffsetPolar { radius } => offset_polar_map_with_radius(*radius).map_err(|e| spec_err("map.radius", e.to_string()))?,
        MapSpec::Linear { rows, theta } => {
            let a = DMatrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat());
            linear_map(a, theta.domain(rows[0].len())).map_err(|e| spec_err("map.matrix", e.to_string()))?
        }
        MapSpec::Expr {
            in_dim,
            components,
            theta,
        } => {
            let refs: Vec<&str> = components.iter().map(String::as_str).collect();
            ForwardMap::from_expressions(*in_dim, theta.domain(*in_dim), &refs)
                .map_err(|e| spec_err("map.components", e.to_string()))?
        }
    };
    let data_dim = problem.particles.as_ref().map_or_else(|| problem.grid.as_ref().map_or(0, |g| g.grid().dim()), |p| p.dim());
    if data_dim != problem.map.out_dim() {
        return Err(spec_err(
            "data.source",
            format!("data has dimension {data_dim} but the map has {} outputs", problem.map.out_dim()),
        ));
    }
    Ok(problem)
}

fn theta_grid(spec: &ProblemSpec, o: &Overrides, problem: &Problem) -> Result<Grid, CliError> {
    let dim = problem.map.in_dim();
    let shape = match (o.grid, &spec.grid_shape) {
        (Some(n), _) => vec![n; dim],
        (None, Some(s)) => s.clone(),
        (None, None) => match problem.fixture.as_ref().and_then(|f| f.theta_grid.clone()) {
            Some(g) => return Ok(g),
            None => return Err(spec_err("grid.shape", "missing")),
        },
    };
    if shape.len() != dim {
        return Err(spec_err("grid.shape", format!("needs {dim} entries, got {}", shape.len())));
    }
    let bounds = problem
        .map
        .theta()
        .bounding_box()
        .ok_or_else(|| spec_err("map.theta.kind", "grid formulations need a bounded parameter domain"))?;
    Grid::new(bounds, shape).map_err(|e| spec_err("grid.shape", e.to_string()))
}

fn prior(spec: &ProblemSpec, problem: &Problem, grid: &Grid) -> Result<GridMeasure, CliError> {
    let theta = problem.map.theta();
    match spec.prior.as_ref().expect("checked when parsing") {
        PriorSpec::Uniform => GridMeasure::uniform(grid.clone(), Some(theta)).map_err(|e| spec_err("reg.prior", e.to_string())),
        PriorSpec::Gaussian => fixtures::gaussian_prior(grid, theta).map_err(|e| spec_err("reg.prior", e.to_string())),
        PriorSpec::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| spec_err("reg.prior", format!("{}: {e}", path.display())))?;
            read_grid(&text).map_err(|e| spec_err("reg.prior", format!("{}: {e}", path.display())))
        }
    }
}

fn run(spec: &ProblemSpec, o: &Overrides, problem: &Problem) -> Result<SolveReport, CliError> {
    let ot = o.ot.unwrap_or(spec.ot);
    let search = SearchConfig::default();
    let g = &problem.map;
    let stage = spec.formulation.name();
    let solver = CliError::solver(stage);
    match spec.formulation {
        Formulation::Conditional => {
            let data: Measure = match &problem.grid {
                Some(grid) => grid.clone().into(),
                None => problem.particles().into(),
            };
            let probe = vec![0.0; g.out_dim()];
            if g.range_contains(&probe).is_some() {
                conditional_reconstruction(g, &data, |y| g.range_contains(y).unwrap_or(false), &spec.divergence)
            } else {
                let pb = Pullback::new(g, &search).map_err(CliError::solver(stage))?;
                let tol = spec.range_tolerance;
                let in_range = |y: &[f64]| {
                    let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    pb.projection(y).is_ok_and(|py| {
                        py.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= tol * scale
                    })
                };
                conditional_reconstruction(g, &data, in_range, &spec.divergence)
            }
            .map_err(solver)
        }
        Formulation::Marginal => marginal_reconstruction_with(g, &problem.particles(), spec.p, ot, &search).map_err(solver),
        Formulation::Entropy => {
            let grid = theta_grid(spec, o, problem)?;
            let data = problem.grid_data(spec.bandwidth)?;
            entropy_solution(g, &grid, &data).map_err(solver)
        }
        Formulation::Moment => moment_solution(g, &problem.particles()).map_err(solver),
        Formulation::RegEntropy => {
            let grid = theta_grid(spec, o, problem)?;
            let data = problem.grid_data(spec.bandwidth)?;
            let cfg = RegularizationConfig::new(spec.alpha, spec.p)
                .map_err(|e| spec_err("reg.alpha", e.to_string()))?
                .with_prior(prior(spec, problem, &grid)?);
            reg_entropy_solution(g, &grid, &data, &cfg).map_err(solver)
        }
        Formulation::RegWp => {
            let cfg = RegularizationConfig::new(spec.alpha, spec.p).map_err(|e| spec_err("reg.alpha", e.to_string()))?;
            reg_wp_solution_with(g, &problem.particles(), &cfg, ot, &search).map_err(solver)
        }
    }
}

/// `minv solve`: nothing is written unless the whole run succeeds.
pub fn solve(path: &Path, o: &Overrides) -> Result<(), CliError> {
    let mut spec = ProblemSpec::load(path)?;
    if let Some(seed) = o.seed {
        spec.seed = seed;
    }
    let problem = load(&spec, o)?;
    let report = run(&spec, o, &problem)?;

    let optimizer_text = measure_text(&report.optimizer);
    let doc = ReportDoc {
        formulation: report.method,
        objective: report.objective,
        transport: report.transport.map(|m: OtMethod| m.to_string()),
        optimizer: spec.optimizer.display().to_string(),
        optimizer_kind: match report.optimizer {
            Measure::Grid(_) => "grid",
            Measure::Particles(_) => "particles",
        },
        diagnostics: &report.diagnostics,
        notes: &report.notes,
        seed: spec.seed,
    };
    let json = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
    write_atomic(&spec.optimizer, &optimizer_text)?;
    write_atomic(&spec.report, &json)?;
    o.say(format!(
        "{}: objective {} (optimizer {}, report {})",
        spec.formulation,
        report.objective,
        spec.optimizer.display(),
        spec.report.display()
    ));
    Ok(())
}

/// `minv validate`: one line per check, failing checks turn the exit code to 1.
pub fn validate(name: &str, o: &Overrides) -> Result<(), CliError> {
    if !FIXTURE_NAMES.contains(&name) {
        return Err(CliError::UnknownFixture(name.to_string()));
    }
    let cfg = o.fixture_config(0);
    let checks = fixtures::by_name(name, &cfg).and_then(|f| fixtures::validate(&f, o.ot.unwrap_or(OtMethod::Exact)));
    let checks = match checks {
        Ok(c) => c,
        Err(e) => {
            o.say(format!("{name}: solver failed: {e}"));
            return Err(CliError::ChecksFailed(1));
        }
    };
    o.say(format!("{:<28} {:>12} {:>12}  result", "check", "value", "tolerance"));
    let mut failed = 0;
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        if !c.passed() {
            failed += 1;
        }
        o.say(format!("{:<28} {:>12.3e} {:>12.3e}  {verdict}", c.name, c.value, c.tolerance));
    }
    if failed > 0 {
        Err(CliError::ChecksFailed(failed))
    } else {
        Ok(())
    }
}
