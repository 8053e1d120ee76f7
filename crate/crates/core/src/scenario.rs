//! Scenario documents.
//!
//! A scenario is a TOML file describing a game (cost strings or a congestion
//! network), its graphs, the integrator settings and the initial state.
//!
//! ```toml
//! schema = 1
//! name = "demo"
//! delta = 0.5
//! initial_x = [1.0, 0.0]
//!
//! [integrator]
//! step = 0.01
//! horizon = 50.0
//!
//! [[coalitions]]
//! costs = ["(x1_1 - 1)^2 + x1_1*x2_1"]
//!
//! [[coalitions]]
//! costs = ["x2_1^2 - x1_1*x2_1"]
//! ```
//!
//! Communication edges are `[j, l]` or `[j, l, weight]`; weights default to 1.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{IntegrationParams, Method, SeekerState, Seeker};
use crate::expr::parse;
use crate::game::{build_congestion_game, CoalitionSpec, Game, GameError, Link, Route, DEFAULT_DELTA};
use crate::graph::{validate_assumption3, Assumption3Report, Graph};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Syntax(String),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: i64,
    name: String,
    #[serde(default)]
    description: String,
    delta: Option<f64>,
    initial_x: Vec<f64>,
    x_star: Option<Vec<f64>>,
    #[serde(default)]
    allow_nonzero_w: bool,
    initial_w: Option<Vec<f64>>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    integrator: RawIntegrator,
    #[serde(default)]
    coalitions: Vec<RawCoalition>,
    #[serde(default)]
    constraints: Vec<String>,
    congestion: Option<RawCongestion>,
    #[serde(default)]
    reference: Reference,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    method: Option<String>,
    step: Option<f64>,
    horizon: Option<f64>,
    record_stride: Option<usize>,
    stop_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoalition {
    #[serde(default)]
    costs: Vec<String>,
    #[serde(default)]
    gains: Vec<f64>,
    communication: Option<Vec<Vec<f64>>>,
    interference: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCongestion {
    kappa: f64,
    links: Vec<RawLink>,
    routes: Vec<RawRoute>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: String,
    capacity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoute {
    coalition: usize,
    links: Vec<String>,
    utility: f64,
}

/// Free-form comparison data carried along with a scenario; never used in computations.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    #[serde(default)]
    pub note: String,
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub game: Game,
    pub integration: IntegrationParams,
    pub initial_x: Vec<f64>,
    /// Only present when the document sets `allow_nonzero_w`.
    pub initial_w: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    pub seed: u64,
    pub reference: Reference,
    /// Per coalition, in order.
    pub assumption3: Vec<Assumption3Report>,
}

impl Scenario {
    /// Problems that do not stop a run but void the convergence guarantee.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, r) in self.assumption3.iter().enumerate() {
            for f in r.failures() {
                out.push(format!("coalition {}: {f}", i + 1));
            }
        }
        out
    }

    pub fn initial_state(&self, seeker: &Seeker<'_>) -> Result<SeekerState, crate::dynamics::DynamicsError> {
        match &self.initial_w {
            Some(w) => seeker.state_with_w(&self.initial_x, w.clone()),
            None => seeker.initial_state(&self.initial_x),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
    build(raw)
}

/// Loads a preset by name, or a file when `name_or_path` names one.
pub fn resolve(name_or_path: &str) -> Result<Scenario, ScenarioError> {
    if let Some(text) = crate::presets::source(name_or_path) {
        return parse_scenario(text);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_scenario(path);
    }
    Err(ScenarioError::UnknownPreset(name_or_path.to_string()))
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    if raw.schema != SCHEMA_VERSION {
        return Err(invalid("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema)));
    }
    let delta = raw.delta.unwrap_or(DEFAULT_DELTA);
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    let integration = build_integrator(&raw.integrator)?;

    let game = match &raw.congestion {
        None => build_cost_game(&raw, delta)?,
        Some(c) => build_network_game(&raw, c, delta)?,
    };
    let game = if raw.constraints.is_empty() {
        game
    } else {
        let mut extra = Vec::new();
        for (n, c) in raw.constraints.iter().enumerate() {
            extra.push(parse(c).map_err(|e| invalid(format!("constraints[{n}]"), e.to_string()))?);
        }
        let mut all = game.constraints().to_vec();
        all.extend(extra);
        game.with_constraints(all)?
    };

    let dim = game.dimension();
    check_vector("initial_x", &raw.initial_x, dim)?;
    if let Some(x) = &raw.x_star {
        check_vector("x_star", x, dim)?;
    }
    game.check_costs(&raw.initial_x).map_err(|e| invalid("initial_x", e.to_string()))?;

    let initial_w = match (&raw.initial_w, raw.allow_nonzero_w) {
        (None, _) => None,
        (Some(_), false) => {
            return Err(invalid("initial_w", "auxiliary variables start at zero unless `allow_nonzero_w = true`"))
        }
        (Some(w), true) => {
            let n = Seeker::new(&game).estimate_count();
            check_vector("initial_w", w, n)?;
            Some(w.clone())
        }
    };

    let mut assumption3 = Vec::new();
    for (i, c) in game.coalitions().iter().enumerate() {
        let report = validate_assumption3(c.interference(), c.communication())
            .map_err(|e| invalid(format!("coalitions[{i}]"), e.to_string()))?;
        assumption3.push(report);
    }

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        game,
        integration,
        initial_x: raw.initial_x,
        initial_w,
        x_star: raw.x_star,
        seed: raw.seed,
        reference: raw.reference,
        assumption3,
    })
}

fn check_vector(key: &str, v: &[f64], len: usize) -> Result<(), ScenarioError> {
    if v.len() != len {
        return Err(invalid(key, format!("has {} entries, expected {len}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(key, "entries must be finite"));
    }
    Ok(())
}

fn build_integrator(raw: &RawIntegrator) -> Result<IntegrationParams, ScenarioError> {
    let mut p = IntegrationParams::default();
    if let Some(m) = &raw.method {
        p.method = match m.to_ascii_lowercase().as_str() {
            "rk4" => Method::Rk4,
            "euler" => Method::Euler,
            other => return Err(invalid("integrator.method", format!("unknown method `{other}` (rk4 or euler)"))),
        };
    }
    if let Some(h) = raw.step {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("integrator.step", "must be positive"));
        }
        p.step = h;
    }
    if let Some(t) = raw.horizon {
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid("integrator.horizon", "must be positive"));
        }
        p.horizon = t;
    }
    if let Some(s) = raw.record_stride {
        if s == 0 {
            return Err(invalid("integrator.record_stride", "must be at least 1"));
        }
        p.record_stride = s;
    }
    if let Some(tol) = raw.stop_tolerance {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(invalid("integrator.stop_tolerance", "must be non-negative"));
        }
        p.stop_tolerance = tol;
    }
    Ok(p)
}

fn edge_list(key: &str, m: usize, edges: &[Vec<f64>]) -> Result<Graph, ScenarioError> {
    let mut g = Graph::empty(m);
    for (n, e) in edges.iter().enumerate() {
        let key = format!("{key}[{n}]");
        let (a, b, w) = match e.as_slice() {
            [a, b] => (*a, *b, 1.0),
            [a, b, w] => (*a, *b, *w),
            _ => return Err(invalid(key, "edges are [j, l] or [j, l, weight]")),
        };
        let vertex = |v: f64| {
            if v.fract() == 0.0 && v >= 1.0 && v <= m as f64 {
                Ok(v as usize)
            } else {
                Err(invalid(&key, format!("vertex {v} is not an agent index in 1..={m}")))
            }
        };
        let (a, b) = (vertex(a)?, vertex(b)?);
        g.add_edge(a, b, w).map_err(|e| invalid(&key, e.to_string()))?;
    }
    Ok(g)
}

fn build_cost_game(raw: &RawScenario, delta: f64) -> Result<Game, ScenarioError> {
    if raw.coalitions.is_empty() {
        return Err(invalid("coalitions", "at least one coalition is required"));
    }
    let mut specs = Vec::new();
    for (i, c) in raw.coalitions.iter().enumerate() {
        let key = format!("coalitions[{i}]");
        if c.costs.is_empty() {
            return Err(invalid(format!("{key}.costs"), "a coalition needs at least one agent"));
        }
        let mut costs = Vec::new();
        for (j, text) in c.costs.iter().enumerate() {
            costs.push(parse(text).map_err(|e| invalid(format!("{key}.costs[{j}]"), e.to_string()))?);
        }
        let m = costs.len();
        let mut spec = CoalitionSpec::new(costs);
        spec = with_graphs(spec, &key, m, c)?;
        specs.push(spec);
    }
    Ok(Game::new(specs, delta)?)
}

fn with_graphs(mut spec: CoalitionSpec, key: &str, m: usize, c: &RawCoalition) -> Result<CoalitionSpec, ScenarioError> {
    if !c.gains.is_empty() {
        if c.gains.len() != m {
            return Err(invalid(format!("{key}.gains"), format!("has {} entries, expected {m}", c.gains.len())));
        }
        spec = spec.with_gains(c.gains.clone());
    }
    if let Some(e) = &c.communication {
        spec = spec.with_communication(edge_list(&format!("{key}.communication"), m, e)?);
    }
    if let Some(e) = &c.interference {
        spec = spec.with_interference(edge_list(&format!("{key}.interference"), m, e)?);
    }
    Ok(spec)
}

fn build_network_game(raw: &RawScenario, net: &RawCongestion, delta: f64) -> Result<Game, ScenarioError> {
    let links: Vec<Link> = net.links.iter().map(|l| Link { name: l.name.clone(), capacity: l.capacity }).collect();
    let routes: Vec<Route> = net
        .routes
        .iter()
        .map(|r| Route { coalition: r.coalition, links: r.links.clone(), utility: r.utility })
        .collect();
    // graph settings come from [[coalitions]] entries, which must not carry costs here
    let game = build_congestion_game(&links, &routes, net.kappa, Vec::new(), delta)?;
    if raw.coalitions.len() > game.coalition_count() {
        return Err(invalid("coalitions", "more entries than coalitions named by the routes"));
    }
    let mut specs = Vec::new();
    for (i0, c) in game.coalitions().iter().enumerate() {
        let key = format!("coalitions[{i0}]");
        let costs: Vec<_> = c.agents().iter().map(|a| a.cost().clone()).collect();
        let m = costs.len();
        let mut spec = CoalitionSpec::new(costs);
        if let Some(rc) = raw.coalitions.get(i0) {
            if !rc.costs.is_empty() {
                return Err(invalid(format!("{key}.costs"), "costs are generated from [congestion]"));
            }
            spec = with_graphs(spec, &key, m, rc)?;
        }
        specs.push(spec);
    }
    Ok(Game::new(specs, delta)?.with_constraints(game.constraints().to_vec())?)
}
