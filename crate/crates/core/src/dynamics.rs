//! Seeking dynamics.
//!
//! Agent `j` of coalition `i` descends its own estimate of the coalition
//! gradient,
//!
//! ```text
//! dx_ij/dt  = -delta * dbar_ij * g_ijj
//! dw_ijk/dt = -sum_{l in N_Ik ∪ {k}} a_i^{jl} (g_ijk - g_ilk)
//! g_ijk     = w_ijk + ∂f_ij/∂x_ik
//! ```
//!
//! where `a_i^{jl}` are communication-graph weights and `k` ranges over the
//! agent's interference neighbourhood (itself included). For each `(i, k)`
//! the `w` entries of the agents in `N_Ik ∪ {k}` form one consensus block
//! running on the interference-to-`k` communication graph; the block sum of
//! `w` is conserved, so it stays at zero from the default start.
//!
//! Singleton coalitions and single-coalition games need no special casing:
//! their blocks have one member and no edges.

use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::expr::ExprError;
use crate::game::Game;
use crate::numeric::{inf_norm, round_trip};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("at t = {t}: {source}")]
    Domain {
        t: f64,
        #[source]
        source: ExprError,
    },
    #[error("at t = {t}: step rejected after {halvings} halvings (state keeps leaving the cost domain)")]
    DomainUnrecoverable { t: f64, halvings: u32 },
    #[error("at t = {t}: state became non-finite")]
    NonFinite { t: f64 },
    #[error("invalid integration parameters: {0}")]
    BadParams(String),
    #[error("initial state: {0}")]
    BadInitialState(String),
}

/// Position of one `w_ijk` / `g_ijk` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub coalition: usize,
    pub agent: usize,
    pub component: usize,
}

/// One consensus block: the estimates of `∂f_i/∂x_ik` held by the agents in `N_Ik ∪ {k}`.
#[derive(Debug, Clone)]
pub struct Block {
    pub coalition: usize,
    pub component: usize,
    /// Agents in the block, ascending.
    pub members: Vec<usize>,
    /// Slot index of each member's entry, parallel to `members`.
    pub slots: Vec<usize>,
    /// Communication edges inside the block as `(member_pos, member_pos, weight)`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeekerState {
    pub t: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

/// Time derivative of a [`SeekerState`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationParams {
    pub method: Method,
    pub step: f64,
    pub horizon: f64,
    /// Record every `record_stride` accepted steps (plus the first and last state).
    pub record_stride: usize,
    /// Stop early once both the pseudo-gradient and the consensus spread are
    /// below this; `0` disables early stopping.
    pub stop_tolerance: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self { method: Method::Rk4, step: 1e-3, horizon: 100.0, record_stride: 100, stop_tolerance: 1e-8 }
    }
}

pub const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a trajectory always holds the initial sample")
    }

    pub fn final_state(&self) -> SeekerState {
        let s = self.last();
        SeekerState { t: s.t, x: s.x.clone(), w: s.w.clone() }
    }
}

/// Per-sample diagnostics appended as extra CSV columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDiagnostics {
    pub pseudo_gradient_norm: f64,
    pub lyapunov: Option<f64>,
    pub consensus_norm: f64,
}

/// The seeking dynamics of one game, with the estimate layout precomputed.
#[derive(Debug, Clone)]
pub struct Seeker<'g> {
    game: &'g Game,
    slots: Vec<Slot>,
    // slot of (i, j, k) is slot_start[i-1][j-1] + position of k in the agent's estimate set
    slot_start: Vec<Vec<usize>>,
    blocks: Vec<Block>,
    own_slot: Vec<usize>,
}

impl<'g> Seeker<'g> {
    pub fn new(game: &'g Game) -> Self {
        let mut slots = Vec::new();
        let mut slot_start = Vec::new();
        let mut own_slot = Vec::new();
        for (i0, c) in game.coalitions().iter().enumerate() {
            let mut starts = Vec::new();
            for (j0, a) in c.agents().iter().enumerate() {
                starts.push(slots.len());
                for &k in a.estimate_set() {
                    if k == j0 + 1 {
                        own_slot.push(slots.len());
                    }
                    slots.push(Slot { coalition: i0 + 1, agent: j0 + 1, component: k });
                }
            }
            slot_start.push(starts);
        }
        let mut seeker = Self { game, slots, slot_start, blocks: Vec::new(), own_slot };
        let mut blocks = Vec::new();
        for (i0, c) in game.coalitions().iter().enumerate() {
            let i = i0 + 1;
            for k in 1..=c.size() {
                let members = c.block_members(k).to_vec();
                let slots = members.iter().map(|&j| seeker.slot(i, j, k).expect("symmetric sets")).collect();
                let mut edges = Vec::new();
                for (p, &a) in members.iter().enumerate() {
                    for (q, &b) in members.iter().enumerate().skip(p + 1) {
                        let wgt = c.communication().weight(a, b);
                        if wgt > 0.0 {
                            edges.push((p, q, wgt));
                        }
                    }
                }
                blocks.push(Block { coalition: i, component: k, members, slots, edges });
            }
        }
        seeker.blocks = blocks;
        seeker
    }

    pub fn game(&self) -> &'g Game {
        self.game
    }

    /// Number of `w` entries, `sum_i sum_j (|N_Ij| + 1)`.
    pub fn estimate_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn slot(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let a = self.game.coalition(i).agent(j);
        let pos = a.estimate_set().binary_search(&k).ok()?;
        Some(self.slot_start[i - 1][j - 1] + pos)
    }

    /// State at `t = 0` with every auxiliary variable at zero.
    pub fn initial_state(&self, x0: &[f64]) -> Result<SeekerState, DynamicsError> {
        self.state_with_w(x0, vec![0.0; self.slots.len()])
    }

    /// State at `t = 0` with explicitly chosen auxiliary variables.
    pub fn state_with_w(&self, x0: &[f64], w0: Vec<f64>) -> Result<SeekerState, DynamicsError> {
        if x0.len() != self.game.dimension() {
            return Err(DynamicsError::BadInitialState(format!(
                "x has {} entries, game has {} actions",
                x0.len(),
                self.game.dimension()
            )));
        }
        if w0.len() != self.slots.len() {
            return Err(DynamicsError::BadInitialState(format!(
                "w has {} entries, expected {}",
                w0.len(),
                self.slots.len()
            )));
        }
        if x0.iter().chain(&w0).any(|v| !v.is_finite()) {
            return Err(DynamicsError::BadInitialState("non-finite entry".into()));
        }
        Ok(SeekerState { t: 0.0, x: x0.to_vec(), w: w0 })
    }

    /// Raw partials `∂f_ij/∂x_ik` for every slot.
    pub fn partials(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.game.check_domain(x)?;
        let lookup = self.game.lookup(x);
        self.slots
            .iter()
            .map(|s| self.game.coalition(s.coalition).agent(s.agent).partial(s.component).eval_with(&lookup))
            .collect()
    }

    /// `g_ijk = w_ijk + ∂f_ij/∂x_ik` for every slot.
    pub fn estimates(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut g = self.partials(x)?;
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi += wi;
        }
        Ok(g)
    }

    pub fn compute_estimates(&self, s: &SeekerState) -> Result<Vec<f64>, ExprError> {
        self.estimates(&s.x, &s.w)
    }

    fn rates(&self, x: &[f64], w: &[f64], dx: &mut [f64], dw: &mut [f64]) -> Result<(), ExprError> {
        let g = self.estimates(x, w)?;
        let delta = self.game.delta();
        let mut p = 0;
        for c in self.game.coalitions() {
            for a in c.agents() {
                dx[p] = -delta * a.gain() * g[self.own_slot[p]];
                p += 1;
            }
        }
        dw.fill(0.0);
        for b in &self.blocks {
            for &(p, q, wgt) in &b.edges {
                let (sp, sq) = (b.slots[p], b.slots[q]);
                let flow = wgt * (g[sp] - g[sq]);
                dw[sp] -= flow;
                dw[sq] += flow;
            }
        }
        Ok(())
    }

    pub fn rhs(&self, s: &SeekerState) -> Result<StateRate, ExprError> {
        let mut dx = vec![0.0; s.x.len()];
        let mut dw = vec![0.0; s.w.len()];
        self.rates(&s.x, &s.w, &mut dx, &mut dw)?;
        Ok(StateRate { x: dx, w: dw })
    }

    /// Largest block spread `‖G_ik - mean(G_ik) 1‖₂` over all blocks.
    pub fn consensus_spread(&self, g: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let n = b.slots.len() as f64;
                let mean = b.slots.iter().map(|&s| g[s]).sum::<f64>() / n;
                b.slots.iter().map(|&s| (g[s] - mean).powi(2)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Attempts one step of size `h`; the error means some stage left the domain.
    fn try_step(&self, method: Method, x: &[f64], w: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>), ExprError> {
        let (nx, nw) = (x.len(), w.len());
        let mut k1x = vec![0.0; nx];
        let mut k1w = vec![0.0; nw];
        self.rates(x, w, &mut k1x, &mut k1w)?;
        let (x1, w1) = match method {
            Method::Euler => (axpy(x, h, &k1x), axpy(w, h, &k1w)),
            Method::Rk4 => {
                let mut k2x = vec![0.0; nx];
                let mut k2w = vec![0.0; nw];
                self.rates(&axpy(x, h / 2.0, &k1x), &axpy(w, h / 2.0, &k1w), &mut k2x, &mut k2w)?;
                let mut k3x = vec![0.0; nx];
                let mut k3w = vec![0.0; nw];
                self.rates(&axpy(x, h / 2.0, &k2x), &axpy(w, h / 2.0, &k2w), &mut k3x, &mut k3w)?;
                let mut k4x = vec![0.0; nx];
                let mut k4w = vec![0.0; nw];
                self.rates(&axpy(x, h, &k3x), &axpy(w, h, &k3w), &mut k4x, &mut k4w)?;
                (rk4_combine(x, h, &k1x, &k2x, &k3x, &k4x), rk4_combine(w, h, &k1w, &k2w, &k3w, &k4w))
            }
        };
        self.game.check_costs(&x1)?;
        Ok((x1, w1))
    }

    /// Integrates from `s0` over `[s0.t, s0.t + horizon]`.
    pub fn integrate(&self, s0: &SeekerState, params: &IntegrationParams) -> Result<Trajectory, DynamicsError> {
        if !(params.step.is_finite() && params.step > 0.0) {
            return Err(DynamicsError::BadParams(format!("step must be positive, got {}", params.step)));
        }
        if !(params.horizon.is_finite() && params.horizon > 0.0) {
            return Err(DynamicsError::BadParams(format!("horizon must be positive, got {}", params.horizon)));
        }
        if params.record_stride == 0 {
            return Err(DynamicsError::BadParams("record stride must be at least 1".into()));
        }
        if params.stop_tolerance < 0.0 {
            return Err(DynamicsError::BadParams("stop tolerance must be non-negative".into()));
        }
        self.game.check_costs(&s0.x).map_err(|source| DynamicsError::Domain { t: s0.t, source })?;
        self.partials(&s0.x).map_err(|source| DynamicsError::Domain { t: s0.t, source })?;

        let t_end = s0.t + params.horizon;
        let mut t = s0.t;
        let mut x = s0.x.clone();
        let mut w = s0.w.clone();
        let mut samples = vec![Sample { t, x: x.clone(), w: w.clone() }];
        let mut steps = 0;
        let mut rejected = 0;
        let mut stopped_early = false;
        let eps = 1e-12 * t_end.abs().max(1.0);

        // t = anchor + n * step while full steps are taken, so times do not drift
        let mut anchor = t;
        let mut n_full = 0u64;
        while t < t_end - eps {
            let to_end = t_end - t;
            let mut h = params.step.min(to_end);
            let mut halvings = 0;
            let (nx, nw) = loop {
                match self.try_step(params.method, &x, &w, h) {
                    Ok(next) => break next,
                    Err(ExprError::Domain(_)) if halvings < MAX_HALVINGS => {
                        halvings += 1;
                        rejected += 1;
                        h /= 2.0;
                    }
                    Err(ExprError::Domain(_)) => {
                        return Err(DynamicsError::DomainUnrecoverable { t, halvings });
                    }
                    Err(source) => return Err(DynamicsError::Domain { t, source }),
                }
            };
            if nx.iter().chain(&nw).any(|v| !v.is_finite()) {
                return Err(DynamicsError::NonFinite { t: t + h });
            }
            x = nx;
            w = nw;
            if h == params.step {
                n_full += 1;
                t = anchor + n_full as f64 * params.step;
            } else {
                t = if h == to_end { t_end } else { t + h };
                anchor = t;
                n_full = 0;
            }
            steps += 1;
            if steps % params.record_stride == 0 {
                samples.push(Sample { t, x: x.clone(), w: w.clone() });
                if params.stop_tolerance > 0.0 && self.converged(&x, &w, params.stop_tolerance) {
                    stopped_early = true;
                    break;
                }
            }
        }
        if samples.last().map(|s| s.t) != Some(t) {
            samples.push(Sample { t, x, w });
        }
        Ok(Trajectory { samples, steps, rejected_steps: rejected, stopped_early })
    }

    fn converged(&self, x: &[f64], w: &[f64], tol: f64) -> bool {
        let Ok(p) = self.game.pseudo_gradient(x) else { return false };
        if inf_norm(&p) > tol {
            return false;
        }
        match self.estimates(x, w) {
            Ok(g) => self.consensus_spread(&g) <= tol,
            Err(_) => false,
        }
    }
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn rk4_combine(y: &[f64], h: f64, k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]) -> Vec<f64> {
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Writes a trajectory as CSV: `t,x1_1,...,xN_mN` plus
/// `pgnorm,V,gbar_norm` when diagnostics are supplied. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: io::Write>(
    out: &mut W,
    game: &Game,
    traj: &Trajectory,
    diagnostics: Option<&[SampleDiagnostics]>,
) -> io::Result<()> {
    let mut header = String::from("t");
    for id in game.action_ids() {
        write!(header, ",{id}").unwrap();
    }
    if diagnostics.is_some() {
        header.push_str(",pgnorm,V,gbar_norm");
    }
    writeln!(out, "{header}")?;
    for (idx, s) in traj.samples.iter().enumerate() {
        let mut row = round_trip(s.t);
        for v in &s.x {
            row.push(',');
            row.push_str(&round_trip(*v));
        }
        if let Some(d) = diagnostics.and_then(|d| d.get(idx)) {
            row.push(',');
            row.push_str(&round_trip(d.pseudo_gradient_norm));
            row.push(',');
            if let Some(v) = d.lyapunov {
                row.push_str(&round_trip(v));
            }
            row.push(',');
            row.push_str(&round_trip(d.consensus_norm));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
