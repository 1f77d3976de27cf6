//! Problem-spec files: flat `key = value` lines with dotted keys. Blank lines
//! and `#` comments are ignored.
//!
//! ```text
//! data.source = fixture:polar-over
//! formulation = conditional
//! divergence = kl
//! output.report = out/report.json
//! output.optimizer = out/optimizer.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use minv_core::measures::{Ball, Bounds, Domain};
use minv_core::{Formulation, OtMethod, PhiKind};

use crate::CliError;

const KEYS: &[&str] = &[
    "map.kind",
    "map.radius",
    "map.matrix",
    "map.in_dim",
    "map.components",
    "map.theta.kind",
    "map.theta.lower",
    "map.theta.upper",
    "map.theta.center",
    "map.theta.radius",
    "data.source",
    "data.bandwidth",
    "formulation",
    "divergence",
    "p",
    "reg.alpha",
    "reg.prior",
    "grid.shape",
    "range.tolerance",
    "ot",
    "seed",
    "samples",
    "output.report",
    "output.optimizer",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSpec {
    Whole,
    Box(Bounds),
    Ball(Ball),
}

impl ThetaSpec {
    pub fn domain(&self, dim: usize) -> Domain {
        match self {
            Self::Whole => Domain::Whole(dim),
            Self::Box(b) => Domain::Box(b.clone()),
            Self::Ball(b) => Domain::Ball(b.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// Use the map of the fixture named in `data.source`.
    FromFixture,
    Polar,
    OffsetPolar { radius: f64 },
    Linear { rows: Vec<Vec<f64>>, theta: ThetaSpec },
    Expr { in_dim: usize, components: Vec<String>, theta: ThetaSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Fixture(String),
    Particles(PathBuf),
    Grid(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Uniform,
    Gaussian,
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub map: MapSpec,
    pub data: DataSource,
    pub bandwidth: Option<f64>,
    pub formulation: Formulation,
    pub divergence: PhiKind,
    pub p: f64,
    pub alpha: f64,
    pub prior: Option<PriorSpec>,
    pub grid_shape: Option<Vec<usize>>,
    pub range_tolerance: f64,
    pub ot: OtMethod,
    pub seed: u64,
    pub samples: Option<usize>,
    pub report: PathBuf,
    pub optimizer: PathBuf,
}

fn spec_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Spec {
        field: field.into(),
        message: message.into(),
    }
}

fn numbers(field: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| spec_err(field, format!("'{}' is not a number", t.trim()))))
        .collect()
}

struct Entries {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| spec_err(key, "missing"))
    }

    fn number(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| spec_err(key, format!("'{v}' is not a finite number")))
            })
            .transpose()
    }

    fn integer(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.get(key)
            .map(|v| v.parse::<u64>().map_err(|_| spec_err(key, format!("'{v}' is not a nonnegative integer"))))
            .transpose()
    }

    /// Paths are relative to the spec file.
    fn path(&self, text: &str) -> PathBuf {
        let p = Path::new(text);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn theta(&self) -> Result<ThetaSpec, CliError> {
        match self.get("map.theta.kind").unwrap_or("whole") {
            "whole" => Ok(ThetaSpec::Whole),
            "box" => {
                let lower = numbers("map.theta.lower", self.require("map.theta.lower")?)?;
                let upper = numbers("map.theta.upper", self.require("map.theta.upper")?)?;
                Bounds::new(lower, upper)
                    .map(ThetaSpec::Box)
                    .map_err(|e| spec_err("map.theta.lower", e.to_string()))
            }
            "ball" => {
                let center = numbers("map.theta.center", self.require("map.theta.center")?)?;
                let radius = self.number("map.theta.radius")?.ok_or_else(|| spec_err("map.theta.radius", "missing"))?;
                Ball::new(center, radius)
                    .map(ThetaSpec::Ball)
                    .map_err(|e| spec_err("map.theta.radius", e.to_string()))
            }
            other => Err(spec_err("map.theta.kind", format!("unknown domain '{other}' (whole, box, ball)"))),
        }
    }
}

impl ProblemSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| spec_err("spec", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| spec_err(&format!("line {}", n + 1), "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(spec_err(key, "unknown key"));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(spec_err(key, "given more than once"));
            }
        }
        let e = Entries {
            map,
            base: base.to_path_buf(),
        };

        let source = e.require("data.source")?;
        let data = match source.split_once(':') {
            Some(("fixture", name)) => DataSource::Fixture(name.trim().to_string()),
            Some(("particles", p)) => DataSource::Particles(e.path(p.trim())),
            Some(("grid", p)) => DataSource::Grid(e.path(p.trim())),
            _ => {
                return Err(spec_err(
                    "data.source",
                    format!("'{source}' is not fixture:<name>, particles:<path> or grid:<path>"),
                ))
            }
        };

        let map = match e.get("map.kind") {
            None if matches!(data, DataSource::Fixture(_)) => MapSpec::FromFixture,
            None => return Err(spec_err("map.kind", "missing (required unless data comes from a fixture)")),
            Some("polar") => MapSpec::Polar,
            Some("offset-polar") => MapSpec::OffsetPolar {
                radius: e.number("map.radius")?.unwrap_or(1.0),
            },
            Some("linear") => {
                let text = e.require("map.matrix")?;
                let rows = text
                    .split(';')
                    .map(|r| numbers("map.matrix", r))
                    .collect::<Result<Vec<_>, _>>()?;
                if rows.iter().any(|r| r.len() != rows[0].len()) {
                    return Err(spec_err("map.matrix", "rows have different lengths"));
                }
                MapSpec::Linear { rows, theta: e.theta()? }
            }
            Some("expr") => {
                let in_dim = e.integer("map.in_dim")?.ok_or_else(|| spec_err("map.in_dim", "missing"))? as usize;
                let components: Vec<String> = e
                    .require("map.components")?
                    .split(';')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                if components.is_empty() {
                    return Err(spec_err("map.components", "no components"));
                }
                MapSpec::Expr {
                    in_dim,
                    components,
                    theta: e.theta()?,
                }
            }
            Some(other) => {
                return Err(spec_err(
                    "map.kind",
                    format!("unknown map '{other}' (polar, offset-polar, linear, expr)"),
                ))
            }
        };

        let formulation =
            Formulation::parse(e.require("formulation")?).map_err(|err| spec_err("formulation", err.to_string()))?;
        let divergence = PhiKind::parse(e.get("divergence").unwrap_or("kl")).map_err(|err| spec_err("divergence", err.to_string()))?;
        let p = e.number("p")?.unwrap_or(2.0);
        if p < 1.0 {
            return Err(spec_err("p", "must be at least 1"));
        }
        let alpha = match (formulation, e.number("reg.alpha")?) {
            (Formulation::RegEntropy | Formulation::RegWp, None) => return Err(spec_err("reg.alpha", "missing")),
            (_, Some(a)) if a < 0.0 => return Err(spec_err("reg.alpha", "must be nonnegative")),
            (_, a) => a.unwrap_or(0.0),
        };
        let prior = e
            .get("reg.prior")
            .map(|v| match v {
                "uniform" => PriorSpec::Uniform,
                "gaussian" => PriorSpec::Gaussian,
                other => PriorSpec::File(e.path(other.strip_prefix("grid:").unwrap_or(other))),
            });
        if formulation == Formulation::RegEntropy && prior.is_none() {
            return Err(spec_err("reg.prior", "missing (uniform, gaussian or a grid file)"));
        }
        let grid_shape = e
            .get("grid.shape")
            .map(|v| {
                v.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .ok()
                            .filter(|&k| k > 0)
                            .ok_or_else(|| spec_err("grid.shape", format!("'{}' is not a positive integer", t.trim())))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        let bandwidth = e.number("data.bandwidth")?;
        if bandwidth.is_some_and(|h| h <= 0.0) {
            return Err(spec_err("data.bandwidth", "must be positive"));
        }
        let ot = e
            .get("ot")
            .map(OtMethod::parse)
            .transpose()
            .map_err(|err| spec_err("ot", err.to_string()))?
            .unwrap_or(OtMethod::Exact);
        let range_tolerance = e.number("range.tolerance")?.unwrap_or(1e-6);
        Ok(Self {
            map,
            data,
            bandwidth,
            formulation,
            divergence,
            p,
            alpha,
            prior,
            grid_shape,
            range_tolerance,
            ot,
            seed: e.integer("seed")?.unwrap_or(0),
            samples: e.integer("samples")?.map(|s| s as usize),
            report: e.path(e.require("output.report")?),
            optimizer: e.path(e.require("output.optimizer")?),
        })
    }
}
