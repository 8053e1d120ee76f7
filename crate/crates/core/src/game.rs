//! N-coalition games.
//!
//! Coalition `i` has agents `1..=m_i`; agent `j` owns the scalar action
//! `x_ij` and a local cost `f_ij(x)`. The coalition as a whole minimises
//! `f_i = sum_j f_ij` over its own actions while the other coalitions play
//! against it. Each coalition also carries an interference graph (agents
//! whose costs touch each other's actions) and a communication graph.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::expr::{ActionId, Expr, ExprError};
use crate::graph::{Graph, GraphError};
use crate::numeric::exact_sum;

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("coalition {coalition}: {source}")]
    Graph {
        coalition: usize,
        #[source]
        source: GraphError,
    },
    #[error("f{coalition}_{agent} depends on {var}, which is not an action of the game")]
    UnknownAction { coalition: usize, agent: usize, var: ActionId },
    #[error(
        "coalition {coalition}: f{coalition}_{agent} depends on x{coalition}_{other} but the declared \
         interference graph has no edge {agent}-{other}"
    )]
    UndeclaredDependence { coalition: usize, agent: usize, other: usize },
    #[error("unknown link `{0}` in route")]
    UnknownLink(String),
    #[error("{0}")]
    Invalid(String),
}

/// Everything needed to build one coalition.
#[derive(Debug, Clone)]
pub struct CoalitionSpec {
    pub costs: Vec<Expr>,
    /// Per-agent gains; empty means all equal to [`DEFAULT_GAIN`].
    pub gains: Vec<f64>,
    /// Defaults to the interference graph.
    pub communication: Option<Graph>,
    /// Inferred from the costs when absent; must cover the inferred graph when given.
    pub interference: Option<Graph>,
}

impl CoalitionSpec {
    pub fn new(costs: Vec<Expr>) -> Self {
        Self { costs, gains: Vec::new(), communication: None, interference: None }
    }

    pub fn with_communication(mut self, g: Graph) -> Self {
        self.communication = Some(g);
        self
    }

    pub fn with_interference(mut self, g: Graph) -> Self {
        self.interference = Some(g);
        self
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Self {
        self.gains = gains;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    cost: Expr,
    gain: f64,
    // d f_ij / d x_ik for k = 1..=m_i, stored at k - 1
    partials: Vec<Expr>,
    // N_Ij ∪ {j}, ascending
    estimate_set: Vec<usize>,
}

impl Agent {
    pub fn cost(&self) -> &Expr {
        &self.cost
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// `∂f_ij/∂x_ik` for `k` in the agent's own coalition.
    pub fn partial(&self, k: usize) -> &Expr {
        &self.partials[k - 1]
    }

    /// Indices `k` the agent keeps estimates for: itself and its interference neighbours.
    pub fn estimate_set(&self) -> &[usize] {
        &self.estimate_set
    }
}

#[derive(Debug, Clone)]
pub struct Coalition {
    agents: Vec<Agent>,
    communication: Graph,
    interference: Graph,
}

impl Coalition {
    pub fn size(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agent(&self, j: usize) -> &Agent {
        &self.agents[j - 1]
    }

    pub fn communication(&self) -> &Graph {
        &self.communication
    }

    pub fn interference(&self) -> &Graph {
        &self.interference
    }

    /// `N_Ik ∪ {k}`: the agents whose estimates of component `k` are averaged.
    pub fn block_members(&self, k: usize) -> &[usize] {
        // the interference graph is undirected, so this equals agent k's own estimate set
        self.agents[k - 1].estimate_set()
    }
}

#[derive(Debug, Clone)]
pub struct Game {
    coalitions: Vec<Coalition>,
    delta: f64,
    offsets: Vec<usize>,
    constraints: Vec<Expr>,
}

/// Interference graph of one coalition: `j ~ k` iff `f_ij` mentions `x_ik`
/// or `f_ik` mentions `x_ij`.
pub fn infer_interference_graph(coalition: usize, costs: &[Expr]) -> Graph {
    let m = costs.len();
    let mut g = Graph::empty(m);
    for (j0, cost) in costs.iter().enumerate() {
        for var in cost.free_variables() {
            if var.coalition == coalition && var.agent != j0 + 1 && var.agent <= m {
                g.add_edge(j0 + 1, var.agent, 1.0).expect("vertices exist");
            }
        }
    }
    g
}

impl Game {
    pub fn new(specs: Vec<CoalitionSpec>, delta: f64) -> Result<Self, GameError> {
        if specs.is_empty() {
            return Err(GameError::Invalid("a game needs at least one coalition".into()));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(GameError::Invalid(format!("delta must be positive, got {delta}")));
        }
        let sizes: Vec<usize> = specs.iter().map(|s| s.costs.len()).collect();
        if let Some(i) = sizes.iter().position(|&m| m == 0) {
            return Err(GameError::Invalid(format!("coalition {} has no agents", i + 1)));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &m in &sizes {
            offsets.push(acc);
            acc += m;
        }

        let mut coalitions = Vec::with_capacity(specs.len());
        for (i0, spec) in specs.into_iter().enumerate() {
            let i = i0 + 1;
            let m = spec.costs.len();
            for (j0, cost) in spec.costs.iter().enumerate() {
                for var in cost.free_variables() {
                    let known = var.coalition >= 1
                        && var.coalition <= sizes.len()
                        && var.agent <= sizes[var.coalition - 1];
                    if !known {
                        return Err(GameError::UnknownAction { coalition: i, agent: j0 + 1, var });
                    }
                }
            }
            let gains = if spec.gains.is_empty() { vec![DEFAULT_GAIN; m] } else { spec.gains };
            if gains.len() != m {
                return Err(GameError::Invalid(format!(
                    "coalition {i}: {} gains for {m} agents",
                    gains.len()
                )));
            }
            if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return Err(GameError::Invalid(format!("coalition {i}: gain {g} is not positive")));
            }

            let inferred = infer_interference_graph(i, &spec.costs);
            let interference = match spec.interference {
                None => inferred,
                Some(declared) => {
                    check_vertices(i, &declared, m)?;
                    for (a, b, _) in inferred.edges() {
                        if !declared.has_edge(a, b) {
                            // name the pair by the agent whose cost carries the dependence
                            let (agent, other) = if spec.costs[a - 1].depends_on(ActionId::new(i, b)) {
                                (a, b)
                            } else {
                                (b, a)
                            };
                            return Err(GameError::UndeclaredDependence { coalition: i, agent, other });
                        }
                    }
                    declared
                }
            };
            let communication = spec.communication.unwrap_or_else(|| interference.clone());
            check_vertices(i, &communication, m)?;

            let agents = spec
                .costs
                .into_iter()
                .zip(gains)
                .enumerate()
                .map(|(j0, (cost, gain))| {
                    let j = j0 + 1;
                    let partials = (1..=m).map(|k| cost.differentiate(ActionId::new(i, k))).collect();
                    let mut estimate_set = interference.neighbors(j);
                    estimate_set.push(j);
                    estimate_set.sort_unstable();
                    Agent { cost, gain, partials, estimate_set }
                })
                .collect();
            coalitions.push(Coalition { agents, communication, interference });
        }
        Ok(Self { coalitions, delta, offsets, constraints: Vec::new() })
    }

    /// Adds expressions that must stay strictly positive for the costs to be
    /// meaningful (e.g. spare link capacity). Violations surface as domain errors.
    pub fn with_constraints(mut self, constraints: Vec<Expr>) -> Result<Self, GameError> {
        for c in &constraints {
            if let Some(var) = c.free_variables().into_iter().find(|v| self.index(*v).is_none()) {
                return Err(GameError::UnknownAction { coalition: 0, agent: 0, var });
            }
        }
        self.constraints.extend(constraints);
        Ok(self)
    }

    pub fn constraints(&self) -> &[Expr] {
        &self.constraints
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self, GameError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(GameError::Invalid(format!("delta must be positive, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn coalition(&self, i: usize) -> &Coalition {
        &self.coalitions[i - 1]
    }

    pub fn coalition_count(&self) -> usize {
        self.coalitions.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.coalitions.iter().map(Coalition::size).collect()
    }

    /// Total number of actions, `sum_i m_i`.
    pub fn dimension(&self) -> usize {
        self.offsets.last().unwrap() + self.coalitions.last().unwrap().size()
    }

    /// Flat position of `x_ij` in an action profile ordered `(1,1), (1,2), ..., (N, m_N)`.
    pub fn index(&self, id: ActionId) -> Option<usize> {
        let c = self.coalitions.get(id.coalition.checked_sub(1)?)?;
        (id.agent >= 1 && id.agent <= c.size()).then(|| self.offsets[id.coalition - 1] + id.agent - 1)
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i - 1]
    }

    pub fn action_ids(&self) -> Vec<ActionId> {
        self.coalitions
            .iter()
            .enumerate()
            .flat_map(|(i0, c)| (1..=c.size()).map(move |j| ActionId::new(i0 + 1, j)))
            .collect()
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.dimension(), "action profile has the wrong dimension");
    }

    pub(crate) fn lookup<'a>(&'a self, x: &'a [f64]) -> impl Fn(ActionId) -> Option<f64> + 'a {
        move |id| self.index(id).map(|p| x[p])
    }

    /// Fails with a domain error if any positivity constraint is violated.
    pub fn check_domain(&self, x: &[f64]) -> Result<(), ExprError> {
        self.check_len(x);
        let lookup = self.lookup(x);
        for c in &self.constraints {
            let v = c.eval_with(&lookup)?;
            if !(v > 0.0) {
                return Err(ExprError::Domain(format!("constraint {c} > 0 violated ({v})")));
            }
        }
        Ok(())
    }

    /// [`Game::check_domain`] plus evaluation of every cost, which catches
    /// points outside the natural domain of a `log` or a power.
    pub fn check_costs(&self, x: &[f64]) -> Result<(), ExprError> {
        self.check_domain(x)?;
        let lookup = self.lookup(x);
        for c in &self.coalitions {
            for a in &c.agents {
                a.cost.eval_with(&lookup)?;
            }
        }
        Ok(())
    }

    pub fn agent_cost(&self, i: usize, j: usize, x: &[f64]) -> Result<f64, ExprError> {
        self.check_len(x);
        self.coalition(i).agent(j).cost.eval_with(&self.lookup(x))
    }

    /// `f_i(x) = sum_j f_ij(x)`.
    pub fn coalition_cost(&self, i: usize, x: &[f64]) -> Result<f64, ExprError> {
        self.check_len(x);
        self.check_domain(x)?;
        let lookup = self.lookup(x);
        let mut terms = Vec::new();
        for a in &self.coalition(i).agents {
            a.cost.eval_with(&lookup).map(|v| terms.push(v))?;
        }
        Ok(exact_sum(terms))
    }

    /// `∂f_ij/∂x_ik` at `x`.
    pub fn partial(&self, i: usize, j: usize, k: usize, x: &[f64]) -> Result<f64, ExprError> {
        self.check_len(x);
        self.coalition(i).agent(j).partial(k).eval_with(&self.lookup(x))
    }

    fn gradient_component(
        &self,
        i: usize,
        k: usize,
        agents: impl Iterator<Item = usize>,
        lookup: &impl Fn(ActionId) -> Option<f64>,
        terms: &mut Vec<f64>,
    ) -> Result<f64, ExprError> {
        terms.clear();
        let c = self.coalition(i);
        for j in agents {
            c.agent(j).partial(k).eval_terms(lookup, terms)?;
        }
        Ok(exact_sum(terms.iter().copied()))
    }

    /// Pseudo-gradient `P(x)`: component `(i, k)` is `∂f_i/∂x_ik`, summing
    /// only over `j ∈ N_Ik ∪ {k}`.
    pub fn pseudo_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.check_len(x);
        self.check_domain(x)?;
        let lookup = self.lookup(x);
        let mut terms = Vec::new();
        let mut out = Vec::with_capacity(x.len());
        for (i0, c) in self.coalitions.iter().enumerate() {
            for k in 1..=c.size() {
                let members = c.block_members(k).iter().copied();
                out.push(self.gradient_component(i0 + 1, k, members, &lookup, &mut terms)?);
            }
        }
        Ok(out)
    }

    /// Same as [`Game::pseudo_gradient`] but summing over every agent of the coalition.
    pub fn pseudo_gradient_full(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.check_len(x);
        self.check_domain(x)?;
        let lookup = self.lookup(x);
        let mut terms = Vec::new();
        let mut out = Vec::with_capacity(x.len());
        for (i0, c) in self.coalitions.iter().enumerate() {
            for k in 1..=c.size() {
                out.push(self.gradient_component(i0 + 1, k, 1..=c.size(), &lookup, &mut terms)?);
            }
        }
        Ok(out)
    }
}

fn check_vertices(coalition: usize, g: &Graph, m: usize) -> Result<(), GameError> {
    let expected: Vec<usize> = (1..=m).collect();
    if g.vertices() != expected.as_slice() {
        return Err(GameError::Graph { coalition, source: GraphError::VertexMismatch });
    }
    Ok(())
}

/// A capacitated link of a congestion network.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub capacity: f64,
}

/// One agent's flow: its coalition, the links it traverses and its utility weight `u_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub coalition: usize,
    pub links: Vec<String>,
    pub utility: f64,
}

/// Congestion-control game: agent `(i, j)` pays
/// `sum_{l in path} kappa / (C_l - load_l) - u_ij * log(x_ij + 1)`, where
/// `load_l` is the total flow of every agent (any coalition) routed through `l`.
///
/// Agents are numbered within their coalition in the order their routes
/// appear. Communication graphs are given per coalition (`None` falls back to
/// the interference graph).
pub fn build_congestion_game(
    links: &[Link],
    routes: &[Route],
    kappa: f64,
    communication: Vec<Option<Graph>>,
    delta: f64,
) -> Result<Game, GameError> {
    for l in links {
        if !(l.capacity.is_finite() && l.capacity > 0.0) {
            return Err(GameError::Invalid(format!("link `{}` has non-positive capacity", l.name)));
        }
    }
    let n = routes.iter().map(|r| r.coalition).max().unwrap_or(0);
    if n == 0 || routes.iter().any(|r| r.coalition == 0) {
        return Err(GameError::Invalid("routes must name coalitions 1..=N".into()));
    }
    let mut ids = Vec::with_capacity(routes.len());
    let mut counts = vec![0usize; n];
    for r in routes {
        counts[r.coalition - 1] += 1;
        ids.push(ActionId::new(r.coalition, counts[r.coalition - 1]));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(GameError::Invalid(format!("coalition {} has no routes", i + 1)));
    }
    let link_idx = |name: &str| {
        links.iter().position(|l| l.name == name).ok_or_else(|| GameError::UnknownLink(name.to_string()))
    };
    let mut users: Vec<Vec<ActionId>> = vec![Vec::new(); links.len()];
    for (r, id) in routes.iter().zip(&ids) {
        let mut seen = BTreeSet::new();
        for name in &r.links {
            let l = link_idx(name)?;
            if seen.insert(l) {
                users[l].push(*id);
            }
        }
    }
    // spare capacity C_l - x_a - x_b - ..., as a left-nested subtraction
    let spare = |l: usize| {
        users[l]
            .iter()
            .fold(Expr::Const(links[l].capacity), |acc, id| Expr::Sub(Box::new(acc), Box::new(Expr::Var(*id))))
    };

    let mut costs: Vec<Vec<Expr>> = vec![Vec::new(); n];
    for (r, id) in routes.iter().zip(&ids) {
        let mut path: Vec<usize> = Vec::new();
        for name in &r.links {
            let l = link_idx(name)?;
            if !path.contains(&l) {
                path.push(l);
            }
        }
        let mut cost: Option<Expr> = None;
        for &l in &path {
            let term = Expr::Div(Box::new(Expr::Const(kappa)), Box::new(spare(l)));
            cost = Some(match cost {
                None => term,
                Some(c) => Expr::Add(Box::new(c), Box::new(term)),
            });
        }
        let log_term = Expr::Mul(
            Box::new(Expr::Const(r.utility)),
            Box::new(Expr::Log(Box::new(Expr::Add(Box::new(Expr::Var(*id)), Box::new(Expr::Const(1.0)))))),
        );
        let cost = match cost {
            None => Expr::Neg(Box::new(log_term)),
            Some(c) => Expr::Sub(Box::new(c), Box::new(log_term)),
        };
        costs[r.coalition - 1].push(cost);
    }

    let mut communication = communication;
    communication.resize(n, None);
    let specs = costs
        .into_iter()
        .zip(communication)
        .map(|(c, g)| CoalitionSpec { costs: c, gains: Vec::new(), communication: g, interference: None })
        .collect();
    let mut constraints: Vec<Expr> =
        (0..links.len()).filter(|&l| !users[l].is_empty()).map(spare).collect();
    constraints.extend(
        ids.iter().map(|id| Expr::Add(Box::new(Expr::Var(*id)), Box::new(Expr::Const(1.0)))),
    );
    Game::new(specs, delta)?.with_constraints(constraints)
}
