//! Named scenarios and their text configuration.
//!
//! A scenario is plain data: every geometric object is described by a short
//! string (`"radial -1"`, `"ball 0.9"`, `"circle 0.5"`) that [`Scenario::build`]
//! turns into metrics, fields and immersions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curvature::minimal_sphere_wind;
use crate::domain::{Bounds, ChartDomain};
use crate::error::GeomError;
use crate::fields::{Polynomial, ScalarFieldSpec, VectorFieldSpec, VolumeFormSpec};
use crate::metric::{MetricSpec, WindClass};
use crate::volume::ImmersionSpec;
use crate::{Point, Vector};

/// Lattice size used to classify the wind when a scenario is built.
pub const CLASSIFY_SAMPLES: usize = 64;
/// Monte Carlo directions per Holmes-Thompson density evaluation.
pub const HT_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeChoice {
    BusemannHausdorff,
    HolmesThompson,
    Lebesgue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    /// `"ball r"`, `"annulus a b"` or `"cube h"`, centred at the origin.
    pub domain: String,
    /// Chart of the base metric when it must extend past `domain`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_domain: Option<String>,
    /// `"euclidean"`, `"gaussian a"` (`e^{a|x|^2}` times the identity) or
    /// `"inverse_square"` (`|x|^{-2}` times the identity).
    pub base: String,
    /// `"none"`, `"constant [..]"`, `"radial a"`, `"rotation a"` or
    /// `"bh_minimal radius offset"`.
    pub wind: String,
    /// Declared homothety constant of the wind; overrides the builtin value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub volume: VolumeChoice,
    /// `"norm"`, `"coordinate k"`, `"fuzz"` or `"polynomial degree seed"`.
    #[serde(default)]
    pub functions: Vec<String>,
    /// Levels at which fiber statistics are taken.
    #[serde(default)]
    pub levels: Vec<f64>,
    /// `"circle r"` or `"line [p..] [d..] reach"`.
    #[serde(default)]
    pub immersions: Vec<String>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    Parse { line: usize, column: usize, message: String },
    Validation { field: String, message: String },
    Geometry(GeomError),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Parse { line, column, message } => write!(f, "parse error at {line}:{column}: {message}"),
            Self::Validation { field, message } => write!(f, "invalid field `{field}`: {message}"),
            Self::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl From<GeomError> for ScenarioError {
    fn from(e: GeomError) -> Self {
        Self::Geometry(e)
    }
}

fn invalid(field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

/// Numbers and bracketed lists following the keyword of a spec string.
fn tokens(spec: &str) -> (String, Vec<Vec<f64>>, bool) {
    let mut words = spec.trim().splitn(2, char::is_whitespace);
    let head = words.next().unwrap_or("").to_string();
    let rest = words.next().unwrap_or("");
    let mut args = Vec::new();
    let mut ok = true;
    let mut chars = rest.trim();
    while !chars.is_empty() {
        if let Some(stripped) = chars.strip_prefix('[') {
            let Some(end) = stripped.find(']') else {
                ok = false;
                break;
            };
            let list: Result<Vec<f64>, _> = stripped[..end]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect();
            match list {
                Ok(l) => args.push(l),
                Err(_) => ok = false,
            }
            chars = stripped[end + 1..].trim_start();
        } else {
            let end = chars.find(char::is_whitespace).unwrap_or(chars.len());
            match chars[..end].parse::<f64>() {
                Ok(x) => args.push(vec![x]),
                Err(_) => ok = false,
            }
            chars = chars[end..].trim_start();
        }
    }
    (head, args, ok)
}

fn scalar_args(field: &str, spec: &str, count: usize) -> Result<(String, Vec<f64>), ScenarioError> {
    let (head, args, ok) = tokens(spec);
    if !ok || args.iter().any(|a| a.len() != 1) || args.len() != count {
        return Err(invalid(field, format!("`{spec}`: `{head}` takes {count} number(s)")));
    }
    Ok((head, args.into_iter().map(|a| a[0]).collect()))
}

fn parse_domain(field: &str, dim: usize, spec: &str) -> Result<ChartDomain, ScenarioError> {
    let (head, _, _) = tokens(spec);
    let bounds = match head.as_str() {
        "ball" => {
            let (_, a) = scalar_args(field, spec, 1)?;
            Bounds::Ball { center: vec![0.0; dim], radius: a[0] }
        }
        "annulus" => {
            let (_, a) = scalar_args(field, spec, 2)?;
            Bounds::Annulus { center: vec![0.0; dim], inner: a[0], outer: a[1] }
        }
        "cube" => {
            let (_, a) = scalar_args(field, spec, 1)?;
            Bounds::Box { lo: vec![-a[0]; dim], hi: vec![a[0]; dim] }
        }
        other => return Err(invalid(field, format!("unknown domain `{other}`"))),
    };
    ChartDomain::new(dim, bounds).map_err(|m| invalid(field, m))
}

fn parse_base(dim: usize, spec: &str, domain: ChartDomain) -> Result<MetricSpec, ScenarioError> {
    let (head, _, _) = tokens(spec);
    Ok(match head.as_str() {
        "euclidean" => {
            scalar_args("base", spec, 0)?;
            MetricSpec::euclidean(domain)
        }
        "gaussian" => {
            let (_, a) = scalar_args("base", spec, 1)?;
            let a = a[0];
            MetricSpec::riemannian(
                spec.trim(),
                domain,
                Arc::new(move |x: &Point| DMatrix::identity(dim, dim) * (a * x.norm_squared()).exp()),
            )
        }
        "inverse_square" => {
            scalar_args("base", spec, 0)?;
            MetricSpec::riemannian(
                "inverse_square",
                domain,
                Arc::new(move |x: &Point| DMatrix::identity(dim, dim) / x.norm_squared()),
            )
        }
        other => return Err(invalid("base", format!("unknown base metric `{other}`"))),
    })
}

fn parse_wind(dim: usize, spec: &str) -> Result<Option<VectorFieldSpec>, ScenarioError> {
    let (head, args, ok) = tokens(spec);
    Ok(Some(match head.as_str() {
        "none" => {
            scalar_args("wind", spec, 0)?;
            return Ok(None);
        }
        "constant" => {
            if !ok || args.len() != 1 || args[0].len() != dim {
                return Err(invalid("wind", format!("`constant` takes a list of {dim} numbers")));
            }
            VectorFieldSpec::constant(Vector::from_vec(args[0].clone()))
        }
        "radial" => VectorFieldSpec::radial(dim, scalar_args("wind", spec, 1)?.1[0]),
        "rotation" => VectorFieldSpec::rotation(dim, scalar_args("wind", spec, 1)?.1[0]),
        "bh_minimal" => {
            let (_, a) = scalar_args("wind", spec, 2)?;
            minimal_sphere_wind(dim, a[0], a[1])
        }
        other => return Err(invalid("wind", format!("unknown wind `{other}`"))),
    }))
}

/// `x0 + x1^2 + 0.3 x0 x1`: neither transnormal nor isoparametric anywhere.
pub fn fuzz_function() -> ScalarFieldSpec {
    ScalarFieldSpec::new("fuzz", |x: &Point| x[0] + x[1] * x[1] + 0.3 * x[0] * x[1]).with_differential(
        |x: &Point| {
            let mut d = Vector::zeros(x.len());
            d[0] = 1.0 + 0.3 * x[1];
            d[1] = 2.0 * x[1] + 0.3 * x[0];
            d
        },
    )
}

fn parse_function(dim: usize, spec: &str) -> Result<ScalarFieldSpec, ScenarioError> {
    let (head, _, _) = tokens(spec);
    Ok(match head.as_str() {
        "norm" => {
            scalar_args("functions", spec, 0)?;
            ScalarFieldSpec::norm(dim)
        }
        "fuzz" => {
            scalar_args("functions", spec, 0)?;
            fuzz_function()
        }
        "coordinate" => {
            let k = scalar_args("functions", spec, 1)?.1[0];
            if k.fract() != 0.0 || k < 0.0 || k as usize >= dim {
                return Err(invalid("functions", format!("coordinate index {k} out of range")));
            }
            ScalarFieldSpec::coordinate(dim, k as usize)
        }
        "polynomial" => {
            let a = scalar_args("functions", spec, 2)?.1;
            if a.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                return Err(invalid("functions", "polynomial takes a degree and a seed"));
            }
            ScalarFieldSpec::polynomial(Polynomial::random(dim, a[0] as u32, a[1] as u64))
        }
        other => return Err(invalid("functions", format!("unknown function `{other}`"))),
    })
}

fn parse_immersion(dim: usize, spec: &str) -> Result<ImmersionSpec, ScenarioError> {
    let (head, args, ok) = tokens(spec);
    match head.as_str() {
        "circle" => {
            let r = scalar_args("immersions", spec, 1)?.1[0];
            if !(r > 0.0) {
                return Err(invalid("immersions", "circle radius must be positive"));
            }
            Ok(ImmersionSpec::circle(Vector::zeros(dim), r))
        }
        "line" => {
            if !ok || args.len() != 3 || args[0].len() != dim || args[1].len() != dim || args[2].len() != 1 {
                return Err(invalid("immersions", format!("`line` takes [p], [d] with {dim} entries and a reach")));
            }
            let d = Vector::from_vec(args[1].clone());
            if d.norm() == 0.0 {
                return Err(invalid("immersions", "line direction is zero"));
            }
            Ok(ImmersionSpec::line(Point::from_vec(args[0].clone()), d, args[2][0]))
        }
        other => Err(invalid("immersions", format!("unknown immersion `{other}`"))),
    }
}

/// A scenario with its geometric objects constructed.
#[derive(Clone)]
pub struct Setup {
    pub scenario: Scenario,
    pub metric: MetricSpec,
    pub base: MetricSpec,
    pub wind: Option<VectorFieldSpec>,
    pub class: Option<WindClass>,
    pub volume: VolumeFormSpec,
    pub functions: Vec<ScalarFieldSpec>,
    pub immersions: Vec<ImmersionSpec>,
}

impl Setup {
    /// Whether the metric is a Zermelo metric with mild wind.
    pub fn is_randers_mild(&self) -> bool {
        self.class.is_some_and(|c| c.kind == crate::WindKind::Mild)
    }

    pub fn sigma(&self) -> Option<f64> {
        self.wind.as_ref().and_then(|w| w.declared_sigma())
    }
}

impl Scenario {
    /// Tolerance override for `key`, or `default`.
    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    pub fn build(&self) -> Result<Setup, ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.dim < 2 {
            return Err(invalid("dim", format!("dimension must be at least 2, got {}", self.dim)));
        }
        let domain = parse_domain("domain", self.dim, &self.domain)?;
        let base_domain = match &self.base_domain {
            Some(spec) => parse_domain("base_domain", self.dim, spec)?,
            None => domain.clone(),
        };
        let base = parse_base(self.dim, &self.base, base_domain)?;
        let mut wind = parse_wind(self.dim, &self.wind)?;
        if let (Some(w), Some(s)) = (wind.as_mut(), self.sigma) {
            *w = w.clone().with_sigma(s);
        }
        let metric = match &wind {
            Some(w) => MetricSpec::zermelo_on(domain.clone(), base.clone(), w.clone(), CLASSIFY_SAMPLES)?,
            None => MetricSpec::riemannian(base.name(), domain.clone(), match base.kind() {
                crate::metric::MetricKind::Riemannian(h) => h.clone(),
                _ => unreachable!("scenario bases are Riemannian"),
            }),
        };
        let class = metric.wind_class();
        let volume = match self.volume {
            VolumeChoice::BusemannHausdorff => VolumeFormSpec::busemann_hausdorff(&metric),
            VolumeChoice::HolmesThompson => VolumeFormSpec::holmes_thompson(&metric, HT_SAMPLES, self.seed),
            VolumeChoice::Lebesgue => VolumeFormSpec::euclidean(domain),
        };
        let functions = self.functions.iter().map(|f| parse_function(self.dim, f)).collect::<Result<_, _>>()?;
        let immersions =
            self.immersions.iter().map(|i| parse_immersion(self.dim, i)).collect::<Result<_, _>>()?;
        for (k, v) in &self.tolerances {
            if !(*v > 0.0) {
                return Err(invalid("tolerances", format!("`{k}` must be positive")));
            }
        }
        Ok(Setup { scenario: self.clone(), metric, base, wind, class, volume, functions, immersions })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Parses and builds a scenario; the wind is classified on the way.
pub fn load_scenario(text: &str) -> Result<Setup, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| position(text, s.start));
        ScenarioError::Parse { line, column, message: e.message().to_string() }
    })?;
    scenario.build()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn plain(name: &str, dim: usize, domain: &str, wind: &str) -> Scenario {
    Scenario {
        name: name.into(),
        dim,
        domain: domain.into(),
        base_domain: None,
        base: "euclidean".into(),
        wind: wind.into(),
        sigma: None,
        volume: VolumeChoice::BusemannHausdorff,
        functions: strings(&["norm", "fuzz"]),
        levels: Vec::new(),
        immersions: Vec::new(),
        tolerances: BTreeMap::new(),
        seed: 0,
    }
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    let euclid = |n: usize| Scenario {
        levels: vec![0.5, 1.0, 1.5],
        immersions: if n == 2 { strings(&["circle 1"]) } else { Vec::new() },
        ..plain(&format!("euclidean_n{n}"), n, "ball 2", "none")
    };
    let funk = |n: usize| Scenario {
        base_domain: Some("ball 10".into()),
        levels: vec![0.3, 0.5, 0.7],
        immersions: if n == 2 { strings(&["circle 0.5"]) } else { Vec::new() },
        ..plain(&format!("funk_n{n}"), n, "ball 0.9", "radial -1")
    };
    vec![
        euclid(2),
        euclid(3),
        Scenario {
            levels: vec![0.5, 1.0, 1.5],
            immersions: strings(&["line [0, 0] [0.6, 0.8] 1"]),
            ..plain("constant_wind", 2, "ball 2", "constant [0.5, 0]")
        },
        funk(2),
        funk(3),
        Scenario {
            base_domain: Some("ball 10".into()),
            levels: vec![0.75, 1.0, 1.25],
            immersions: strings(&["circle 1"]),
            ..plain("rotation_killing", 2, "annulus 0.5 1.5", "rotation 0.5")
        },
        Scenario { functions: Vec::new(), ..plain("strong_wind_cone", 2, "ball 1", "constant [2, 0]") },
        Scenario {
            base_domain: Some("ball 10".into()),
            functions: strings(&["norm"]),
            levels: vec![0.8, 1.0, 1.2],
            immersions: strings(&["circle 1"]),
            ..plain("bh_minimal_circle", 2, "annulus 0.6 1.4", "bh_minimal 1 1")
        },
    ]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::cone_half_angle;
    use crate::WindKind;

    #[test]
    fn builtins_round_trip_and_build() {
        for s in builtin_scenarios() {
            let text = s.to_toml();
            let back = load_scenario(&text).unwrap();
            assert_eq!(back.scenario, s, "{text}");
        }
    }

    #[test]
    fn classifications() {
        let funk = builtin("funk_n2").unwrap().build().unwrap();
        assert_eq!(funk.class.unwrap().kind, WindKind::Mild);
        let strong = builtin("strong_wind_cone").unwrap().build().unwrap();
        assert_eq!(strong.class.unwrap().kind, WindKind::Strong);
        let angle = cone_half_angle(&strong.metric, &Point::zeros(2)).unwrap();
        assert!((angle - 0.5f64.asin()).abs() < 1e-6);
        let constant = builtin("constant_wind").unwrap().build().unwrap();
        assert_eq!(constant.sigma(), Some(0.0));
    }

    #[test]
    fn minimal_document_loads() {
        let s = load_scenario("name = \"m\"\ndim = 2\ndomain = \"ball 1\"\nbase = \"euclidean\"\nwind = \"constant [0.5, 0]\"\nvolume = \"busemann_hausdorff\"\n")
            .unwrap();
        assert_eq!(s.class.unwrap().kind, WindKind::Mild);
        let critical = load_scenario("name = \"c\"\ndim = 2\ndomain = \"ball 1\"\nbase = \"euclidean\"\nwind = \"constant [1, 0]\"\nvolume = \"busemann_hausdorff\"\n")
            .unwrap();
        assert_eq!(critical.class.unwrap().kind, WindKind::Critical);
    }

    #[test]
    fn load_errors() {
        let bad_dim = "name = \"m\"\ndim = 1\ndomain = \"ball 1\"\nbase = \"euclidean\"\nwind = \"none\"\nvolume = \"lebesgue\"\n";
        assert!(matches!(load_scenario(bad_dim), Err(ScenarioError::Validation { field, .. }) if field == "dim"));
        let unknown = "name = \"m\"\ndim = 2\ncolour = 3\ndomain = \"ball 1\"\nbase = \"euclidean\"\nwind = \"none\"\nvolume = \"lebesgue\"\n";
        assert!(matches!(load_scenario(unknown), Err(ScenarioError::Parse { line: 3, .. })));
        let syntax = "name = \"m\"\ndim = = 2\n";
        assert!(matches!(load_scenario(syntax), Err(ScenarioError::Parse { line: 2, .. })));
        let mixed = "name = \"m\"\ndim = 2\ndomain = \"ball 2\"\nbase = \"euclidean\"\nwind = \"radial 1\"\nvolume = \"lebesgue\"\n";
        assert!(matches!(load_scenario(mixed), Err(ScenarioError::Geometry(GeomError::MixedRegime { .. }))));
        let bad_wind = "name = \"m\"\ndim = 2\ndomain = \"ball 2\"\nbase = \"euclidean\"\nwind = \"gust 3\"\nvolume = \"lebesgue\"\n";
        assert!(matches!(load_scenario(bad_wind), Err(ScenarioError::Validation { field, .. }) if field == "wind"));
    }
}
