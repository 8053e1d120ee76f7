mod common;

use std::collections::BTreeMap;

use coalition_nash::analysis::{cost_accounting, lemma1_residuals, BlockTransforms};
use coalition_nash::dynamics::Seeker;
use coalition_nash::expr::{parse, ActionId, Expr};
use coalition_nash::graph::{interference_to_k_graph, validate_assumption3, Graph};
use coalition_nash::presets;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn var(i: usize, j: usize) -> Expr {
    Expr::Var(ActionId::new(i, j))
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-20i32..20).prop_map(|n| Expr::Const(n as f64 / 4.0)),
        (1usize..=2, 1usize..=2).prop_map(|(i, j)| var(i, j)),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Exp(Box::new(Expr::Mul(Box::new(Expr::Const(0.25)), Box::new(a))))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), -2i32..4).prop_map(|(a, n)| Expr::Pow(Box::new(a), n as f64)),
        ]
    })
}

fn point(v: [f64; 4]) -> BTreeMap<ActionId, f64> {
    BTreeMap::from([
        (ActionId::new(1, 1), v[0]),
        (ActionId::new(1, 2), v[1]),
        (ActionId::new(2, 1), v[2]),
        (ActionId::new(2, 2), v[3]),
    ])
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_parse_back(e in arb_expr(), v in proptest::array::uniform4(-2.0f64..2.0)) {
        let text = e.to_string();
        let back = parse(&text).unwrap();
        let again = back.to_string();
        prop_assert_eq!(parse(&again).unwrap().to_string(), again);
        let at = point(v);
        match (e.evaluate(&at), back.evaluate(&at)) {
            (Ok(a), Ok(b)) => prop_assert!(close(a, b, 1e-12) || (a.is_nan() && b.is_nan()), "{} : {} vs {}", text, a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{}: {:?} vs {:?}", text, a, b),
        }
    }

    #[test]
    fn derivative_matches_central_difference(e in arb_expr(), v in proptest::array::uniform4(-1.5f64..1.5), which in 0usize..4) {
        let ids = [ActionId::new(1, 1), ActionId::new(1, 2), ActionId::new(2, 1), ActionId::new(2, 2)];
        let id = ids[which];
        let d = e.differentiate(id);
        let at = point(v);
        let Ok(sym) = d.evaluate(&at) else { return Ok(()) };
        let h = 1e-5;
        let mut up = at.clone();
        *up.get_mut(&id).unwrap() += h;
        let mut dn = at.clone();
        *dn.get_mut(&id).unwrap() -= h;
        let (Ok(fp), Ok(fm), Ok(f0)) = (e.evaluate(&up), e.evaluate(&dn), e.evaluate(&at)) else { return Ok(()) };
        prop_assume!(sym.is_finite() && fp.is_finite() && fm.is_finite());
        // skip points within a few steps of a pole of a negative power
        prop_assume!(f0.abs() < 1e6 && sym.abs() < 1e6);
        let fd = (fp - fm) / (2.0 * h);
        let scale = f0.abs().max(sym.abs()).max(1.0);
        prop_assert!((sym - fd).abs() <= 1e-4 * scale, "{} d/d{}: {} vs {}", e, id, sym, fd);
    }

    #[test]
    fn block_graphs_of_compliant_pairs_are_connected(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gi = common::random_connected(&mut rng, n, 0.35);
        let gc = common::random_communication(&mut rng, &gi, 0.3);
        let report = validate_assumption3(&gi, &gc).unwrap();
        prop_assert!(report.passed(), "{gi} / {gc}: {:?}", report.failures());
        for k in 1..=n {
            let h = interference_to_k_graph(&gc, &gi, k).unwrap();
            prop_assert!(h.is_connected(), "k = {k}: {h}");
        }
    }

    #[test]
    fn validator_agrees_with_exhaustive_search(seed in any::<u64>(), n in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gi = common::random_connected(&mut rng, n, 0.6);
        let edges: Vec<(usize, usize)> = gi.edges().map(|(a, b, _)| (a, b)).collect();
        // arbitrary communication subgraph, connected or not
        let keep: u32 = rand::Rng::random(&mut rng);
        let chosen: Vec<(usize, usize)> = edges.iter().enumerate().filter(|(i, _)| keep >> i & 1 == 1).map(|(_, e)| *e).collect();
        let gc = Graph::from_edges(n, &chosen).unwrap();
        let report = validate_assumption3(&gi, &gc).unwrap();

        let mut exists = false;
        for mask in 0u32..(1 << chosen.len()) {
            let sub: Vec<(usize, usize)> = chosen.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, e)| *e).collect();
            let h = Graph::from_edges(n, &sub).unwrap();
            let triangle_free = h.triangle_count() == 0;
            let maximal = edges.iter().all(|&(a, b)| {
                h.has_edge(a, b) || (1..=n).any(|c| h.has_edge(a, c) && h.has_edge(b, c))
            });
            if triangle_free && maximal {
                exists = true;
                break;
            }
        }
        prop_assert_eq!(report.kernel.is_some(), exists, "{} / {}", gi, gc);
        if let Some(k) = &report.kernel {
            prop_assert!(k.is_subgraph_of(&gc) && k.triangle_count() == 0);
        }
    }

    #[test]
    fn estimate_blocks_are_conserved(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_quadratic_game(&mut rng, 3, 4, 0.3, 0.2);
        let traj = common::run(&mut rng, &q.game, 5.0, 0.01, 25, 0.0);
        let (sum, mean) = common::conservation_errors(&q.game, &traj);
        prop_assert!(sum <= 1e-10 && mean <= 1e-10, "{sum:e} {mean:e}");
    }

    #[test]
    fn rhs_vanishes_exactly_at_consensus_equilibria(seed in any::<u64>(), bump in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_quadratic_game(&mut rng, 3, 4, 0.3, 0.2);
        let seeker = Seeker::new(&q.game);
        let consensus_w = |x: &[f64]| {
            let p = seeker.partials(x).unwrap();
            let mut w = vec![0.0; p.len()];
            for b in seeker.blocks() {
                let mean = b.slots.iter().map(|&s| p[s]).sum::<f64>() / b.slots.len() as f64;
                for &s in &b.slots {
                    w[s] = mean - p[s];
                }
            }
            w
        };
        let x = q.equilibrium.clone();
        let s = seeker.state_with_w(&x, consensus_w(&x)).unwrap();
        let r = seeker.rhs(&s).unwrap();
        prop_assert!(r.x.iter().chain(&r.w).all(|v| v.abs() < 1e-9), "{:?}", r);

        let mut y = x.clone();
        let k = bump % y.len();
        y[k] += 0.5;
        let s = seeker.state_with_w(&y, consensus_w(&y)).unwrap();
        let r = seeker.rhs(&s).unwrap();
        prop_assert!(r.x.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn proposed_costs_never_exceed_baseline(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = common::random_quadratic_game(&mut rng, 3, 4, 0.3, 0.2);
        let report = cost_accounting(&q.game);
        for a in &report.agents {
            prop_assert!(a.aux_proposed <= a.aux_baseline);
            prop_assert!(a.tx_proposed <= a.tx_baseline);
        }
        for (i0, c) in q.game.coalitions().iter().enumerate() {
            let m = c.size();
            if c.interference().edge_count() < m * (m - 1) / 2 {
                prop_assert!(report.agents.iter().any(|a| a.coalition == i0 + 1 && a.aux_proposed < a.aux_baseline));
            }
        }
    }

    #[test]
    fn lemma1_bound_on_example2(seed in any::<u64>()) {
        let game = presets::example2_game();
        let seeker = Seeker::new(&game);
        let t = BlockTransforms::new(&seeker).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..10).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let mut w: Vec<f64> = (0..seeker.estimate_count()).map(|_| rand::Rng::random_range(&mut rng, -5.0..5.0)).collect();
        for b in seeker.blocks() {
            let mean = b.slots.iter().map(|&s| w[s]).sum::<f64>() / b.slots.len() as f64;
            for &s in &b.slots {
                w[s] -= mean;
            }
        }
        let s = seeker.state_with_w(&x, w).unwrap();
        for r in lemma1_residuals(&seeker, &t, &s).unwrap() {
            prop_assert!(r.holds(1e-12 * (1.0 + r.bound)), "{:?}", r);
        }
    }
}

#[test]
fn singleton_coalition_reduces_to_gradient_flow() {
    let game = presets::example2_game();
    let seeker = Seeker::new(&game);
    let x = [0.7, 0.1, -0.3, 0.2, 1.2, 0.0, 0.4, -0.5, 0.3, 0.9];
    let s = seeker.initial_state(&x).unwrap();
    let r = seeker.rhs(&s).unwrap();
    let slot = seeker.slot(1, 1, 1).unwrap();
    assert_eq!(r.w[slot], 0.0);
    // x11' = -delta * 2 (x11 - x31 / 2)
    assert_eq!(r.x[0], -game.delta() * 2.0 * (0.7 - 0.5 * 1.2));
}
