//! Diagnostics in the transformed consensus coordinates, plus the
//! communication and computation cost accounting.
//!
//! For a block `(i, k)` with `n` members, `R` is an `n × (n-1)` matrix whose
//! columns are orthonormal and orthogonal to the all-ones vector. The
//! disagreement part of the block estimates `G` is `Ḡ = Rᵀ G`, and the
//! reduced Laplacian `A = Rᵀ L R` is positive definite when the block graph
//! is connected.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::dynamics::{SampleDiagnostics, SeekerState, Seeker, Trajectory};
use crate::expr::{ActionId, ExprError};
use crate::game::Game;
use crate::graph::{orthonormal_complement, Graph};
use crate::numeric::{exact_sum, inf_norm};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("block ({coalition}, {component}) has a disconnected communication graph")]
    Disconnected { coalition: usize, component: usize },
    #[error(transparent)]
    Domain(#[from] ExprError),
}

/// Solves `P A + A P = Q` for symmetric positive definite `A` and `Q`
/// through the eigendecomposition of `A`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, AnalysisError> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(AnalysisError::Dimension(format!(
            "A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    check_spd(a)?;
    check_spd(q)?;
    let eig = SymmetricEigen::new(a.clone());
    let v = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let qt = v.transpose() * q * v;
    let pt = DMatrix::from_fn(n, n, |r, c| qt[(r, c)] / (lam[r] + lam[c]));
    let p = v * pt * v.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

fn check_spd(m: &DMatrix<f64>) -> Result<(), AnalysisError> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(AnalysisError::NotSymmetric(asym));
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if !(min > 1e-14 * scale) {
        return Err(AnalysisError::NotPositiveDefinite(min));
    }
    Ok(())
}

/// Transform data of one `(i, k)` block.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub coalition: usize,
    pub component: usize,
    pub members: Vec<usize>,
    pub slots: Vec<usize>,
    pub r: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Row norms of `R`, parallel to `members`.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BlockTransforms {
    pub blocks: Vec<BlockData>,
}

impl BlockTransforms {
    /// Builds every block with `Q = I`.
    pub fn new(seeker: &Seeker<'_>) -> Result<Self, AnalysisError> {
        Self::with_q(seeker, |n| DMatrix::identity(n, n))
    }

    pub fn with_q(seeker: &Seeker<'_>, q: impl Fn(usize) -> DMatrix<f64>) -> Result<Self, AnalysisError> {
        let mut blocks = Vec::new();
        for b in seeker.blocks() {
            let n = b.members.len();
            let mut g = Graph::new(b.members.iter().copied());
            for &(p, q, w) in &b.edges {
                g.add_edge(b.members[p], b.members[q], w).expect("block edges are valid");
            }
            if !g.is_connected() {
                return Err(AnalysisError::Disconnected { coalition: b.coalition, component: b.component });
            }
            let r = orthonormal_complement(n);
            let a = r.transpose() * g.laplacian() * &r;
            let a = (&a + a.transpose()) * 0.5;
            let p = solve_lyapunov(&a, &q(n - 1))?;
            let beta = (0..n).map(|row| r.row(row).norm()).collect();
            blocks.push(BlockData {
                coalition: b.coalition,
                component: b.component,
                members: b.members.clone(),
                slots: b.slots.clone(),
                r,
                a,
                p,
                beta,
            });
        }
        Ok(Self { blocks })
    }

    /// Largest `‖P A + A P - Q‖∞` with `Q = I`.
    pub fn lyapunov_residual(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.a.nrows();
                (&b.p * &b.a + &b.a * &b.p - DMatrix::identity(n, n)).amax()
            })
            .fold(0.0, f64::max)
    }

    fn gbar(b: &BlockData, g: &[f64]) -> DVector<f64> {
        let gb = DVector::from_iterator(b.slots.len(), b.slots.iter().map(|&s| g[s]));
        b.r.transpose() * gb
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub coalition: usize,
    pub component: usize,
    pub gbar_norm: f64,
    /// `|mean_j g_ijk - (1/N) sum_{j=1..m_i} ∂f_ij/∂x_ik|`.
    pub mean_error: f64,
}

/// Sum over all agents of the coalition of `∂f_ij/∂x_ik`, computed directly from the costs.
fn full_component(game: &Game, i: usize, k: usize, x: &[f64]) -> Result<f64, ExprError> {
    let c = game.coalition(i);
    let mut terms = Vec::with_capacity(c.size());
    for j in 1..=c.size() {
        terms.push(game.partial(i, j, k, x)?);
    }
    Ok(exact_sum(terms))
}

pub fn consensus_residual(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    s: &SeekerState,
) -> Result<Vec<BlockResidual>, AnalysisError> {
    let game = seeker.game();
    let g = seeker.compute_estimates(s)?;
    let mut out = Vec::new();
    for b in &transforms.blocks {
        let n = b.slots.len() as f64;
        let mean = exact_sum(b.slots.iter().map(|&s| g[s])) / n;
        let target = full_component(game, b.coalition, b.component, &s.x)? / n;
        out.push(BlockResidual {
            coalition: b.coalition,
            component: b.component,
            gbar_norm: BlockTransforms::gbar(b, &g).norm(),
            mean_error: (mean - target).abs(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Residual {
    pub coalition: usize,
    pub agent: usize,
    pub component: usize,
    /// `|g_ijk - (1/N) sum_j ∂f_ij/∂x_ik|`.
    pub deviation: f64,
    /// `beta_ijk ‖Ḡ_ik‖`.
    pub bound: f64,
}

impl Lemma1Residual {
    pub fn holds(&self, slack: f64) -> bool {
        self.deviation <= self.bound + slack
    }
}

pub fn lemma1_residuals(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    s: &SeekerState,
) -> Result<Vec<Lemma1Residual>, AnalysisError> {
    let game = seeker.game();
    let g = seeker.compute_estimates(s)?;
    let mut out = Vec::new();
    for b in &transforms.blocks {
        let n = b.slots.len() as f64;
        let target = full_component(game, b.coalition, b.component, &s.x)? / n;
        let gbar = BlockTransforms::gbar(b, &g).norm();
        for (pos, &j) in b.members.iter().enumerate() {
            out.push(Lemma1Residual {
                coalition: b.coalition,
                agent: j,
                component: b.component,
                deviation: (g[b.slots[pos]] - target).abs(),
                bound: b.beta[pos] * gbar,
            });
        }
    }
    Ok(out)
}

/// Weight `N_{C_j^i} / dbar_ij` of `(x_ij - x*_ij)^2` in the Lyapunov function.
fn action_weights(seeker: &Seeker<'_>) -> Vec<f64> {
    let game = seeker.game();
    let mut w = Vec::with_capacity(game.dimension());
    for c in game.coalitions() {
        for (j0, a) in c.agents().iter().enumerate() {
            w.push(c.block_members(j0 + 1).len() as f64 / a.gain());
        }
    }
    w
}

/// `V = sum ḠᵀPḠ + ½ sum (N_{C_j^i}/dbar_ij)(x_ij - x*_ij)²`.
pub fn lyapunov_value(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    s: &SeekerState,
    x_star: &[f64],
) -> Result<f64, AnalysisError> {
    if x_star.len() != s.x.len() {
        return Err(AnalysisError::Dimension(format!("x* has {} entries, expected {}", x_star.len(), s.x.len())));
    }
    let g = seeker.compute_estimates(s)?;
    let mut terms = Vec::new();
    for b in &transforms.blocks {
        let gbar = BlockTransforms::gbar(b, &g);
        terms.push(gbar.dot(&(&b.p * &gbar)));
    }
    for ((x, xs), w) in s.x.iter().zip(x_star).zip(action_weights(seeker)) {
        terms.push(0.5 * w * (x - xs).powi(2));
    }
    Ok(exact_sum(terms))
}

/// `dV/dt` along the flow, by the chain rule through the right-hand side.
pub fn lyapunov_derivative(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    s: &SeekerState,
    x_star: &[f64],
) -> Result<f64, AnalysisError> {
    let game = seeker.game();
    let rate = seeker.rhs(s)?;
    let g = seeker.compute_estimates(s)?;
    let lookup = |id: ActionId| game.index(id).map(|p| s.x[p]);
    // dg/dt = dw/dt + Hessian-row · dx/dt
    let mut dg = rate.w.clone();
    for (slot, d) in seeker.slots().iter().zip(dg.iter_mut()) {
        let partial = game.coalition(slot.coalition).agent(slot.agent).partial(slot.component);
        for v in partial.free_variables() {
            let p = game.index(v).expect("variables are validated at construction");
            if rate.x[p] != 0.0 {
                *d += partial.differentiate(v).eval_with(&lookup)? * rate.x[p];
            }
        }
    }
    let mut terms = Vec::new();
    for b in &transforms.blocks {
        let gbar = BlockTransforms::gbar(b, &g);
        let dgbar = BlockTransforms::gbar(b, &dg);
        terms.push(2.0 * gbar.dot(&(&b.p * &dgbar)));
    }
    for (((x, xs), w), dx) in s.x.iter().zip(x_star).zip(action_weights(seeker)).zip(&rate.x) {
        terms.push(w * (x - xs) * dx);
    }
    Ok(exact_sum(terms))
}

/// `‖χ‖` with `χ = [Ḡ; x - x*]`.
pub fn chi_norm(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    s: &SeekerState,
    x_star: &[f64],
) -> Result<f64, AnalysisError> {
    let g = seeker.compute_estimates(s)?;
    let mut sq = 0.0;
    for b in &transforms.blocks {
        sq += BlockTransforms::gbar(b, &g).norm_squared();
    }
    sq += s.x.iter().zip(x_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    Ok(sq.sqrt())
}

/// Pseudo-gradient norm, Lyapunov value (when `x_star` is known) and `‖Ḡ‖` at every sample.
pub fn sample_diagnostics(
    seeker: &Seeker<'_>,
    transforms: &BlockTransforms,
    traj: &Trajectory,
    x_star: Option<&[f64]>,
) -> Result<Vec<SampleDiagnostics>, AnalysisError> {
    let game = seeker.game();
    let mut out = Vec::with_capacity(traj.samples.len());
    for smp in &traj.samples {
        let s = SeekerState { t: smp.t, x: smp.x.clone(), w: smp.w.clone() };
        let g = seeker.compute_estimates(&s)?;
        let gbar = transforms
            .blocks
            .iter()
            .map(|b| BlockTransforms::gbar(b, &g).norm_squared())
            .sum::<f64>()
            .sqrt();
        let lyapunov = match x_star {
            Some(xs) => Some(lyapunov_value(seeker, transforms, &s, xs)?),
            None => None,
        };
        out.push(SampleDiagnostics {
            pseudo_gradient_norm: inf_norm(&game.pseudo_gradient(&s.x)?),
            lyapunov,
            consensus_norm: gbar,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentCost {
    pub coalition: usize,
    pub agent: usize,
    pub aux_proposed: usize,
    pub aux_baseline: usize,
    pub tx_proposed: usize,
    pub tx_baseline: usize,
    /// Components `k` whose `g_ijk, w_ijk` this agent never generates.
    pub dropped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostTotals {
    pub aux_proposed: usize,
    pub aux_baseline: usize,
    pub tx_proposed: usize,
    pub tx_baseline: usize,
}

impl CostTotals {
    fn add(&mut self, a: &AgentCost) {
        self.aux_proposed += a.aux_proposed;
        self.aux_baseline += a.aux_baseline;
        self.tx_proposed += a.tx_proposed;
        self.tx_baseline += a.tx_baseline;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub agents: Vec<AgentCost>,
    pub coalitions: Vec<CostTotals>,
    pub total: CostTotals,
}

/// Counts auxiliary variables and per-step scalar transmissions against a
/// scheme in which every agent estimates every component of its coalition
/// gradient and sends both `g` and `w` to all communication neighbours.
pub fn cost_accounting(game: &Game) -> CostReport {
    let mut agents = Vec::new();
    let mut coalitions = Vec::new();
    let mut total = CostTotals::default();
    for (i0, c) in game.coalitions().iter().enumerate() {
        let m = c.size();
        let mut sub = CostTotals::default();
        for j in 1..=m {
            let est = c.agent(j).estimate_set();
            let nbrs = c.communication().neighbors(j);
            let tx_proposed = est
                .iter()
                .map(|&k| {
                    let members = c.block_members(k);
                    nbrs.iter().filter(|l| members.binary_search(l).is_ok()).count()
                })
                .sum();
            let a = AgentCost {
                coalition: i0 + 1,
                agent: j,
                aux_proposed: 2 * est.len(),
                aux_baseline: 2 * m,
                tx_proposed,
                tx_baseline: 2 * m * nbrs.len(),
                dropped: (1..=m).filter(|k| est.binary_search(k).is_err()).collect(),
            };
            sub.add(&a);
            total.add(&a);
            agents.push(a);
        }
        coalitions.push(sub);
    }
    CostReport { agents, coalitions, total }
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:>9} {:>5} {:>9} {:>9} {:>8} {:>8}  dropped",
            "coalition", "agent", "aux.prop", "aux.base", "tx.prop", "tx.base"
        )
        .unwrap();
        let mut last = 0;
        for a in &self.agents {
            if a.coalition != last && last != 0 {
                let t = &self.coalitions[last - 1];
                writeln!(s, "{:>9} {:>5} {:>9} {:>9} {:>8} {:>8}", last, "all", t.aux_proposed, t.aux_baseline, t.tx_proposed, t.tx_baseline).unwrap();
            }
            last = a.coalition;
            let dropped = if a.dropped.is_empty() {
                "-".to_string()
            } else {
                a.dropped.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
            };
            writeln!(
                s,
                "{:>9} {:>5} {:>9} {:>9} {:>8} {:>8}  {}",
                a.coalition, a.agent, a.aux_proposed, a.aux_baseline, a.tx_proposed, a.tx_baseline, dropped
            )
            .unwrap();
        }
        if last != 0 {
            let t = &self.coalitions[last - 1];
            writeln!(s, "{:>9} {:>5} {:>9} {:>9} {:>8} {:>8}", last, "all", t.aux_proposed, t.aux_baseline, t.tx_proposed, t.tx_baseline).unwrap();
        }
        let t = &self.total;
        writeln!(s, "{:>9} {:>5} {:>9} {:>9} {:>8} {:>8}", "total", "", t.aux_proposed, t.aux_baseline, t.tx_proposed, t.tx_baseline).unwrap();
        s
    }

    /// One `key = value` line per figure.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for a in &self.agents {
            let p = format!("coalition.{}.agent.{}", a.coalition, a.agent);
            writeln!(s, "{p}.aux_proposed = {}", a.aux_proposed).unwrap();
            writeln!(s, "{p}.aux_baseline = {}", a.aux_baseline).unwrap();
            writeln!(s, "{p}.tx_proposed = {}", a.tx_proposed).unwrap();
            writeln!(s, "{p}.tx_baseline = {}", a.tx_baseline).unwrap();
            let d: Vec<String> = a.dropped.iter().map(|k| k.to_string()).collect();
            writeln!(s, "{p}.dropped = [{}]", d.join(", ")).unwrap();
        }
        let mut totals: Vec<(String, &CostTotals)> =
            self.coalitions.iter().enumerate().map(|(i, t)| (format!("coalition.{}", i + 1), t)).collect();
        totals.push(("total".to_string(), &self.total));
        for (p, t) in totals {
            writeln!(s, "{p}.aux_proposed = {}", t.aux_proposed).unwrap();
            writeln!(s, "{p}.aux_baseline = {}", t.aux_baseline).unwrap();
            writeln!(s, "{p}.tx_proposed = {}", t.tx_proposed).unwrap();
            writeln!(s, "{p}.tx_baseline = {}", t.tx_baseline).unwrap();
        }
        s
    }
}
