#![allow(dead_code)]

use std::collections::BTreeSet;

use coalition_nash::dynamics::{IntegrationParams, Method, Seeker, Trajectory};
use coalition_nash::expr::parse;
use coalition_nash::game::{CoalitionSpec, Game};
use coalition_nash::graph::Graph;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected graph on `1..=n`: a random spanning tree plus extra edges.
pub fn random_connected<R: Rng>(rng: &mut R, n: usize, extra_p: f64) -> Graph {
    let mut g = Graph::empty(n);
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    for idx in 1..n {
        let parent = order[rng.random_range(0..idx)];
        g.add_edge(order[idx], parent, 1.0).unwrap();
    }
    for a in 1..=n {
        for b in a + 1..=n {
            if !g.has_edge(a, b) && rng.random_bool(extra_p) {
                g.add_edge(a, b, 1.0).unwrap();
            }
        }
    }
    g
}

fn closes_triangle(h: &BTreeSet<(usize, usize)>, a: usize, b: usize, n: usize) -> bool {
    let has = |x: usize, y: usize| h.contains(&(x.min(y), x.max(y)));
    (1..=n).any(|c| c != a && c != b && has(a, c) && has(b, c))
}

/// A maximal triangle-free spanning subgraph of `g` built by inserting its
/// edges in random order; written independently of the library's version.
pub fn random_triangle_free_kernel<R: Rng>(rng: &mut R, g: &Graph) -> BTreeSet<(usize, usize)> {
    let n = g.vertex_count();
    let mut edges: Vec<(usize, usize)> = g.edges().map(|(a, b, _)| (a, b)).collect();
    edges.shuffle(rng);
    let mut h = BTreeSet::new();
    for (a, b) in edges {
        if !closes_triangle(&h, a, b, n) {
            h.insert((a, b));
        }
    }
    h
}

/// Communication graph inside `gi` that contains a random maximal
/// triangle-free spanning subgraph, plus each remaining edge with probability `p`.
pub fn random_communication<R: Rng>(rng: &mut R, gi: &Graph, p: f64) -> Graph {
    let kernel = random_triangle_free_kernel(rng, gi);
    let mut gc = Graph::empty(gi.vertex_count());
    for (a, b, _) in gi.edges() {
        if kernel.contains(&(a, b)) || rng.random_bool(p) {
            let w = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.5..2.0) };
            gc.add_edge(a, b, w).unwrap();
        }
    }
    gc
}

/// Strongly monotone quadratic game with `P(x) = J x + c` known in closed form.
pub struct QuadraticGame {
    pub game: Game,
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub equilibrium: Vec<f64>,
    /// Smallest eigenvalue of the symmetric part of `J`.
    pub monotonicity: f64,
}

fn coef<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Builds a random game with `N <= max_n` coalitions of at most `max_m`
/// agents. Agent `j` of coalition `i` pays
/// `a_j x_ij^2 + sum_{l in N_Ij} b_jl x_ij x_il + sum_q e_jq x_ij x_q + d_j x_ij`
/// where `q` runs over a few actions of other coalitions. Games whose
/// pseudo-gradient is not strongly monotone with margin `min_mu` are redrawn.
pub fn random_quadratic_game<R: Rng>(rng: &mut R, max_n: usize, max_m: usize, min_mu: f64, delta: f64) -> QuadraticGame {
    loop {
        let n_coal = rng.random_range(1..=max_n);
        let sizes: Vec<usize> = (0..n_coal).map(|_| rng.random_range(1..=max_m)).collect();
        let offsets: Vec<usize> = sizes.iter().scan(0, |acc, m| {
            let o = *acc;
            *acc += m;
            Some(o)
        }).collect();
        let dim: usize = sizes.iter().sum();
        let ids: Vec<(usize, usize)> =
            sizes.iter().enumerate().flat_map(|(i, &m)| (1..=m).map(move |j| (i + 1, j))).collect();
        let name = |(i, j): (usize, usize)| format!("x{i}_{j}");

        let mut jac = DMatrix::zeros(dim, dim);
        let mut c = DVector::zeros(dim);
        let mut specs = Vec::new();
        for (i0, &m) in sizes.iter().enumerate() {
            let gi = random_connected(rng, m, 0.4);
            let gc = random_communication(rng, &gi, 0.5);
            let mut costs = Vec::new();
            for j in 1..=m {
                let row = offsets[i0] + j - 1;
                let a = rng.random_range(1.0..3.0);
                let d = rng.random_range(-2.0..2.0);
                let me = name((i0 + 1, j));
                let mut text = format!("{a:?}*{me}^2 + {d:?}*{me}");
                jac[(row, row)] += 2.0 * a;
                c[row] += d;
                for l in gi.neighbors(j) {
                    let b = coef(rng, 0.1, 0.8);
                    text.push_str(&format!(" + {b:?}*{me}*{}", name((i0 + 1, l))));
                    let col = offsets[i0] + l - 1;
                    // d/dx_ij of the term feeds P_ij, d/dx_il feeds P_il
                    jac[(row, col)] += b;
                    jac[(col, row)] += b;
                }
                for &(p, q) in &ids {
                    if p != i0 + 1 && rng.random_bool(0.3) {
                        let e = coef(rng, 0.05, 0.5);
                        text.push_str(&format!(" + {e:?}*{me}*{}", name((p, q))));
                        jac[(row, offsets[p - 1] + q - 1)] += e;
                    }
                }
                costs.push(parse(&text).unwrap());
            }
            specs.push(CoalitionSpec::new(costs).with_interference(gi).with_communication(gc));
        }
        let sym = (&jac + jac.transpose()) * 0.5;
        let mu = SymmetricEigen::new(sym).eigenvalues.min();
        if mu < min_mu {
            continue;
        }
        let x = jac.clone().lu().solve(&(-&c)).unwrap();
        let game = Game::new(specs, delta).unwrap();
        return QuadraticGame { game, jacobian: jac, offset: c, equilibrium: x.iter().copied().collect(), monotonicity: mu };
    }
}

pub fn run<R: Rng>(rng: &mut R, game: &Game, horizon: f64, step: f64, stride: usize, stop: f64) -> Trajectory {
    let seeker = Seeker::new(game);
    let x0: Vec<f64> = (0..game.dimension()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let params = IntegrationParams { method: Method::Rk4, step, horizon, record_stride: stride, stop_tolerance: stop };
    seeker.integrate(&seeker.initial_state(&x0).unwrap(), &params).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-block `|sum_j w_ijk|` and mean-estimate error at every sample; returns the worst of each.
pub fn conservation_errors(game: &Game, traj: &Trajectory) -> (f64, f64) {
    let seeker = Seeker::new(game);
    let mut worst_sum = 0.0f64;
    let mut worst_mean = 0.0f64;
    for s in &traj.samples {
        let mut g = seeker.partials(&s.x).unwrap();
        for (gi, wi) in g.iter_mut().zip(&s.w) {
            *gi += wi;
        }
        for b in seeker.blocks() {
            let sum: f64 = b.slots.iter().map(|&p| s.w[p]).sum();
            worst_sum = worst_sum.max(sum.abs());
            let n = b.slots.len() as f64;
            let mean = b.slots.iter().map(|&p| g[p]).sum::<f64>() / n;
            let c = game.coalition(b.coalition);
            let total: f64 = (1..=c.size()).map(|j| game.partial(b.coalition, j, b.component, &s.x).unwrap()).sum();
            worst_mean = worst_mean.max((mean - total / n).abs());
        }
    }
    (worst_sum, worst_mean)
}
