//! Reference computations that do not go through the seeking dynamics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::expr::{ActionId, Expr, ExprError};
use crate::game::Game;
use crate::numeric::{euclidean_norm, exact_sum, inf_norm};

pub const NASH_TOLERANCE: f64 = 1e-9;
pub const MAX_BACKTRACKS: u32 = 30;
/// Gradient checks above this relative error are flagged.
pub const GRADIENT_FLAG: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("starting point: {0}")]
    Start(ExprError),
    #[error("{0}")]
    Domain(#[from] ExprError),
    #[error("{0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Symbolic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReport {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a Jacobian could not be factored; `x` is the best iterate so far.
    pub singular: bool,
    /// Number of iterations whose Jacobian fell back to finite differences.
    pub fd_fallbacks: usize,
}

/// Second derivatives `∂P_ik/∂x_ab` as per-agent terms, summed exactly at evaluation.
struct SymbolicJacobian {
    entries: Vec<Vec<Vec<Expr>>>,
}

impl SymbolicJacobian {
    fn new(game: &Game) -> Self {
        let ids = game.action_ids();
        let mut entries = Vec::with_capacity(ids.len());
        for row in &ids {
            let c = game.coalition(row.coalition);
            let members = c.block_members(row.agent);
            let mut r = Vec::with_capacity(ids.len());
            for col in &ids {
                let terms = members
                    .iter()
                    .map(|&j| c.agent(j).partial(row.agent).differentiate(*col))
                    .filter(|e| !e.is_zero())
                    .collect();
                r.push(terms);
            }
            entries.push(r);
        }
        Self { entries }
    }

    fn eval(&self, game: &Game, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let n = x.len();
        let lookup = |id: ActionId| game.index(id).map(|p| x[p]);
        let mut j = DMatrix::zeros(n, n);
        let mut buf = Vec::new();
        for (r, row) in self.entries.iter().enumerate() {
            for (c, terms) in row.iter().enumerate() {
                if terms.is_empty() {
                    continue;
                }
                buf.clear();
                for t in terms {
                    t.eval_terms(&lookup, &mut buf)?;
                }
                j[(r, c)] = exact_sum(buf.iter().copied());
            }
        }
        Ok(j)
    }
}

fn fd_jacobian(game: &Game, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for c in 0..n {
        let h = 1e-6 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        let fp = game.pseudo_gradient(&xp)?;
        xp[c] = x[c] - h;
        let fm = game.pseudo_gradient(&xp)?;
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Jacobian of the pseudo-gradient at `x`.
pub fn pseudo_gradient_jacobian(game: &Game, x: &[f64], mode: JacobianMode) -> Result<DMatrix<f64>, ExprError> {
    match mode {
        JacobianMode::Symbolic => SymbolicJacobian::new(game).eval(game, x),
        JacobianMode::FiniteDifference => fd_jacobian(game, x),
    }
}

/// Damped Newton on `P(x) = 0`. The step is halved until `‖P‖∞` decreases
/// (at most [`MAX_BACKTRACKS`] times); the best iterate is always returned.
pub fn solve_stationary(game: &Game, x0: &[f64], tol: f64, max_iter: usize) -> Result<StationaryReport, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError::BadInput("tolerance must be positive".into()));
    }
    if x0.len() != game.dimension() {
        return Err(OracleError::BadInput(format!("x0 has {} entries, expected {}", x0.len(), game.dimension())));
    }
    let jac = SymbolicJacobian::new(game);
    let mut x = x0.to_vec();
    let mut p = game.pseudo_gradient(&x).map_err(OracleError::Start)?;
    let mut res = inf_norm(&p);
    let mut report = StationaryReport {
        x: x.clone(),
        residual: res,
        iterations: 0,
        converged: res <= tol,
        singular: false,
        fd_fallbacks: 0,
    };
    while !report.converged && report.iterations < max_iter {
        report.iterations += 1;
        let j = match jac.eval(game, &x) {
            Ok(j) if j.iter().all(|v| v.is_finite()) => j,
            _ => {
                report.fd_fallbacks += 1;
                fd_jacobian(game, &x)?
            }
        };
        let rhs = -DVector::from_column_slice(&p);
        let step = match j.lu().solve(&rhs) {
            Some(d) if d.iter().all(|v| v.is_finite()) => d,
            _ => {
                report.singular = true;
                break;
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + alpha * di).collect();
            if let Ok(pt) = game.pseudo_gradient(&trial) {
                let r = inf_norm(&pt);
                if r < res {
                    accepted = Some((trial, pt, r));
                    break;
                }
            }
            alpha /= 2.0;
        }
        let Some((xn, pn, rn)) = accepted else { break };
        x = xn;
        p = pn;
        res = rn;
        report.x = x.clone();
        report.residual = res;
        report.converged = res <= tol;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionProbe {
    pub coalition: usize,
    /// Largest `f_i(x̂) - f_i(deviation)` seen; positive means some deviation helps.
    pub worst_decrease: f64,
    /// The deviating `x_i` block behind `worst_decrease`, if it exceeds the tolerance.
    pub witness: Option<Vec<f64>>,
    pub evaluated: usize,
    pub domain_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub coalitions: Vec<CoalitionProbe>,
    pub tolerance: f64,
}

impl NashReport {
    pub fn locally_consistent(&self) -> bool {
        self.coalitions.iter().all(|c| c.witness.is_none())
    }
}

/// Probes unilateral deviations of each coalition inside a ball of `radius`
/// around `x_hat`: uniform samples plus points along the negative coalition
/// gradient at geometrically shrinking distances. Sampling, not a certificate.
pub fn verify_nash(
    game: &Game,
    x_hat: &[f64],
    radius: f64,
    samples_per_coalition: usize,
    seed: u64,
) -> Result<NashReport, OracleError> {
    if !(radius > 0.0) {
        return Err(OracleError::BadInput("radius must be positive".into()));
    }
    if x_hat.len() != game.dimension() {
        return Err(OracleError::BadInput(format!("x has {} entries, expected {}", x_hat.len(), game.dimension())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 1..=game.coalition_count() {
        let base = game.coalition_cost(i, x_hat)?;
        let off = game.offset(i);
        let m = game.coalition(i).size();
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        let p = game.pseudo_gradient(x_hat)?;
        let grad = &p[off..off + m];
        let gn = euclidean_norm(grad);
        if gn > 0.0 {
            let mut t = radius;
            for _ in 0..40 {
                candidates.push(grad.iter().map(|g| -g / gn * t).collect());
                t /= 2.0;
            }
        }
        for _ in 0..samples_per_coalition {
            let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let dn = euclidean_norm(&dir);
            if dn == 0.0 {
                continue;
            }
            let r = radius * rng.random::<f64>().powf(1.0 / m as f64);
            candidates.push(dir.iter().map(|d| d / dn * r).collect());
        }
        let mut probe = CoalitionProbe { coalition: i, worst_decrease: f64::NEG_INFINITY, witness: None, evaluated: 0, domain_errors: 0 };
        let mut worst_block = Vec::new();
        let mut y = x_hat.to_vec();
        for d in candidates {
            for (k, dk) in d.iter().enumerate() {
                y[off + k] = x_hat[off + k] + dk;
            }
            match game.coalition_cost(i, &y) {
                Ok(f) => {
                    probe.evaluated += 1;
                    let dec = base - f;
                    if dec > probe.worst_decrease {
                        probe.worst_decrease = dec;
                        worst_block = y[off..off + m].to_vec();
                    }
                }
                Err(_) => probe.domain_errors += 1,
            }
        }
        if probe.worst_decrease > NASH_TOLERANCE {
            probe.witness = Some(worst_block);
        }
        out.push(probe);
    }
    Ok(NashReport { coalitions: out, tolerance: NASH_TOLERANCE })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub min_inner: f64,
    /// `(x, y, inner)` for the smallest non-positive inner product found.
    pub witness: Option<(Vec<f64>, Vec<f64>, f64)>,
    pub evaluated: usize,
    pub domain_errors: usize,
}

impl MonotonicityReport {
    pub fn violated(&self) -> bool {
        self.witness.is_some()
    }
}

/// Evaluates `(x - y)ᵀ(P(x) - P(y))` on `extra_pairs` and on `pairs` random
/// pairs drawn uniformly from the box `region` (one `(lo, hi)` per action).
pub fn check_monotonicity(
    game: &Game,
    region: &[(f64, f64)],
    pairs: usize,
    seed: u64,
    extra_pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<MonotonicityReport, OracleError> {
    let n = game.dimension();
    if region.len() != n {
        return Err(OracleError::BadInput(format!("region has {} intervals, expected {n}", region.len())));
    }
    if region.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(OracleError::BadInput("region must be a nonempty finite box".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<(Vec<f64>, Vec<f64>)> = extra_pairs.to_vec();
    for _ in 0..pairs {
        let mut draw = || region.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect::<Vec<f64>>();
        let x = draw();
        let y = draw();
        all.push((x, y));
    }
    let mut rep = MonotonicityReport { min_inner: f64::INFINITY, witness: None, evaluated: 0, domain_errors: 0 };
    for (x, y) in all {
        if x.len() != n || y.len() != n {
            return Err(OracleError::BadInput("pair of wrong dimension".into()));
        }
        if x == y {
            continue;
        }
        let (px, py) = match (game.pseudo_gradient(&x), game.pseudo_gradient(&y)) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                rep.domain_errors += 1;
                continue;
            }
        };
        rep.evaluated += 1;
        let inner = exact_sum((0..n).map(|k| (x[k] - y[k]) * (px[k] - py[k])));
        if inner < rep.min_inner {
            rep.min_inner = inner;
            if inner <= 0.0 {
                rep.witness = Some((x, y, inner));
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// `(i, j, k)` of the worst partial `∂f_ij/∂x_ik`.
    pub worst: Option<(usize, usize, usize)>,
    pub flagged: bool,
}

/// Compares every symbolic `∂f_ij/∂x_ik` with a central difference of `f_ij`
/// using step `h * max(1, |x_ik|)`. The relative error is
/// `|sym - fd| / max(1, |sym|)`.
pub fn gradient_check(game: &Game, x: &[f64], h: f64) -> Result<GradientCheck, OracleError> {
    if !(h > 0.0) {
        return Err(OracleError::BadInput("step must be positive".into()));
    }
    game.check_costs(x)?;
    let mut out = GradientCheck { max_rel_error: 0.0, worst: None, flagged: false };
    let mut y = x.to_vec();
    for (i0, c) in game.coalitions().iter().enumerate() {
        let i = i0 + 1;
        let off = game.offset(i);
        for j in 1..=c.size() {
            for k in 1..=c.size() {
                let sym = game.partial(i, j, k, x)?;
                let p = off + k - 1;
                let step = h * x[p].abs().max(1.0);
                y[p] = x[p] + step;
                let fp = game.agent_cost(i, j, &y)?;
                y[p] = x[p] - step;
                let fm = game.agent_cost(i, j, &y)?;
                y[p] = x[p];
                let fd = (fp - fm) / (2.0 * step);
                let err = (sym - fd).abs() / sym.abs().max(1.0);
                if !(err <= out.max_rel_error) {
                    out.max_rel_error = err;
                    out.worst = Some((i, j, k));
                }
            }
        }
    }
    out.flagged = !(out.max_rel_error <= GRADIENT_FLAG);
    Ok(out)
}
