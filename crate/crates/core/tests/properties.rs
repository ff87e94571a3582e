use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use qrrn::env::{observe, Env, EnvConfig, ObsEncoding};
use qrrn::nn::{Activation, DenseNet};
use qrrn::oracle::{greedy_rollout, mc_returns, ssd_grid_check, value_iteration};
use qrrn::policies::{greedy_action, ssd_action, thresholded_ssd_action, top2};
use qrrn::quantdist::{midpoints, quantile_huber, quantile_huber_grad, ssd_dominates, QuantileDist};
use qrrn::roadnet::{
    generate_scenario, shortest_path, DirectedEdge, GraphMap, Node, ScenarioKind, ScenarioParams,
};

/// Random connected map: a spine 0 → 1 → … → n-1 plus extra edges.
fn arb_map() -> impl Strategy<Value = GraphMap> {
    (3usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0..n, 0..n), 0..12),
                prop::collection::btree_set(1..n - 1, 0..3),
            )
        })
        .prop_map(|(n, extra, crosswalks)| {
            let nodes = (0..n).map(|id| Node { id, x: id as f64, y: 0.0, tags: vec![] }).collect();
            let mut edges = Vec::new();
            let mut next_action = vec![0usize; n];
            let mut seen = BTreeSet::new();
            for (from, to) in (0..n - 1).map(|i| (i, i + 1)).chain(extra) {
                if from == to || !seen.insert((from, to)) {
                    continue;
                }
                edges.push(DirectedEdge { from, to, action: next_action[from] });
                next_action[from] += 1;
            }
            GraphMap::new("random", nodes, edges, None, 0, BTreeSet::from([n - 1]), crosswalks).unwrap()
        })
}

fn arb_dist(n: usize) -> impl Strategy<Value = QuantileDist> {
    prop::collection::vec(-20.0..5.0f64, n).prop_map(|v| QuantileDist::new(v).unwrap())
}

/// Integer-valued atoms with a prescribed sum, so means compare exactly.
fn int_dist_with_sum(n: usize, sum: i64) -> impl Strategy<Value = QuantileDist> {
    prop::collection::vec(-10i64..10, n - 1).prop_map(move |mut v| {
        let last = sum - v.iter().sum::<i64>();
        v.push(last);
        QuantileDist::new(v.into_iter().map(|x| x as f64).collect()).unwrap()
    })
}

fn count_shortest(map: &GraphMap) -> (usize, u64) {
    // BFS distances from start, then count shortest paths to the nearest goal.
    let n = map.num_states();
    let mut dist = vec![usize::MAX; n];
    let mut ways = vec![0u64; n];
    dist[map.start()] = 0;
    ways[map.start()] = 1;
    let mut frontier = vec![map.start()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &s in &frontier {
            if map.is_goal(s) {
                continue;
            }
            for e in map.edges().iter().filter(|e| e.from == s) {
                if dist[e.to] == usize::MAX {
                    dist[e.to] = dist[s] + 1;
                    next.push(e.to);
                }
                if dist[e.to] == dist[s] + 1 {
                    ways[e.to] += ways[s];
                }
            }
        }
        next.sort();
        next.dedup();
        frontier = next;
    }
    let best = map.goals().iter().map(|&g| dist[g]).min().unwrap();
    let total = map.goals().iter().filter(|&&g| dist[g] == best).map(|&g| ways[g]).sum();
    (best, total)
}

fn min_relu_preactivation(net: &DenseNet, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let mut min = f64::INFINITY;
    for layer in net.layers() {
        let z: Vec<f64> = (0..layer.out_dim)
            .map(|o| layer.bias[o] + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * h[i]).sum::<f64>())
            .collect();
        if layer.activation == Activation::Relu {
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
            h = z.iter().map(|v| v.max(0.0)).collect();
        } else {
            h = z;
        }
    }
    min
}

fn without_crosswalks(map: &GraphMap) -> GraphMap {
    GraphMap::new(
        "plain",
        map.nodes().to_vec(),
        map.edges().to_vec(),
        None,
        map.start(),
        map.goals().clone(),
        BTreeSet::new(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn transitions_are_total_and_deterministic(map in arb_map()) {
        for s in 0..map.num_states() {
            let mut loopbacks = 0;
            for a in 0..map.action_dim() {
                let t = map.transition(s, a).unwrap();
                prop_assert_eq!(t, map.transition(s, a).unwrap());
                prop_assert!(t < map.num_states());
                if t == s {
                    loopbacks += 1;
                }
            }
            prop_assert_eq!(loopbacks, map.action_dim() - map.out_degree(s));
        }
    }

    #[test]
    fn map_json_round_trips(map in arb_map()) {
        let back = GraphMap::from_json(&map.to_json()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn generated_scenarios_have_noisy_shortest_path(n in 3usize..12, extra in 1usize..6, extra2 in 1usize..4, three in any::<bool>()) {
        let (kind, params) = if three {
            let n = n.max(4);
            (ScenarioKind::ThreeRoute,
             ScenarioParams { noisy_len: n, robust_len: n + extra, robust2_len: Some(n + extra + extra2) })
        } else {
            (ScenarioKind::TwoRoute, ScenarioParams { noisy_len: n, robust_len: n + extra, robust2_len: None })
        };
        let map = generate_scenario(kind, params).unwrap();
        let route = shortest_path(&map, map.start(), map.goals()).unwrap();
        prop_assert_eq!(route.len(), params.noisy_len);
        prop_assert!(route.passes_crosswalk(&map));
    }

    #[test]
    fn rewards_stay_in_support(map in arb_map(), actions in prop::collection::vec(0usize..8, 1..60), seed in any::<u64>(), r_loop in 0.0..20.0f64) {
        let cfg = EnvConfig::new(3.0, r_loop);
        let (mut env, _) = Env::reset(Arc::new(map.clone()), cfg, seed);
        for a in actions {
            if env.is_done() {
                break;
            }
            let r = env.step(a % map.action_dim()).unwrap().reward;
            let ok = r == 0.0 || (-6.0..=0.0).contains(&r) || r == -3.0 || r == -(3.0 + r_loop);
            prop_assert!(ok, "reward {}", r);
        }
    }

    #[test]
    fn episodes_terminate_and_replay(map in arb_map(), actions in prop::collection::vec(0usize..8, 64), seed in any::<u64>(), cap in 1usize..40) {
        let map = Arc::new(map);
        let mut cfg = EnvConfig::new(3.0, 18.0);
        cfg.episode_cap = cap;
        let run = || {
            let (mut env, obs) = Env::reset(map.clone(), cfg.clone(), seed);
            let mut trace = vec![(obs.0, 0.0, false)];
            let mut k = 0;
            while !env.is_done() {
                let out = env.step(actions[k % actions.len()] % map.action_dim()).unwrap();
                trace.push((out.observation.0, out.reward, out.done));
                k += 1;
            }
            (trace, env.steps())
        };
        let (a, steps) = run();
        prop_assert!(steps <= cap);
        let (b, _) = run();
        let bits = |t: &Vec<(Vec<f64>, f64, bool)>| t.iter().map(|(o, r, d)| (o.clone(), r.to_bits(), *d)).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn observations_are_deterministic(n in 1usize..30, s in 0usize..30) {
        let s = s % n;
        for enc in [ObsEncoding::OneHot, ObsEncoding::Index] {
            prop_assert_eq!(observe(n, enc, s), observe(n, enc, s));
        }
        let v = observe(n, ObsEncoding::OneHot, s).0;
        prop_assert_eq!(v.iter().sum::<f64>(), 1.0);
        prop_assert_eq!(v[s], 1.0);
    }

    #[test]
    fn midpoints_are_increasing_and_symmetric(n in 1usize..64) {
        let t = midpoints(n).unwrap();
        for w in t.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for i in 0..n {
            prop_assert!((t[i] + t[n - 1 - i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantile_huber_is_nonnegative_and_continuous(u in -50.0..50.0f64, tau in 0.001..0.999f64, kappa in 0.05..5.0f64) {
        prop_assert!(quantile_huber(u, tau, kappa) >= 0.0);
        for edge in [kappa, -kappa] {
            let below = quantile_huber(edge - 1e-13, tau, kappa);
            let above = quantile_huber(edge + 1e-13, tau, kappa);
            prop_assert!((below - above).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_identity(d in (1usize..9).prop_flat_map(arb_dist)) {
        let lhs = d.variance();
        let rhs = d.second_moment() - d.mean() * d.mean();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * d.second_moment().max(1.0));
    }

    #[test]
    fn ssd_is_reflexive_and_transitive(a in arb_dist(4), b in arb_dist(4), c in arb_dist(4)) {
        prop_assert!(ssd_dominates(&a, &a));
        if ssd_dominates(&a, &b) && ssd_dominates(&b, &c) {
            prop_assert!(ssd_dominates(&a, &c));
        }
    }

    #[test]
    fn pointwise_dominance_implies_ssd(b in arb_dist(5), bumps in prop::collection::vec(0.0..3.0f64, 5)) {
        let sorted = b.sorted_atoms();
        let a = QuantileDist::new(sorted.iter().zip(&bumps).map(|(x, d)| x + d).collect()).unwrap();
        prop_assert!(ssd_dominates(&a, &b));
    }

    #[test]
    fn ssd_agrees_with_grid_oracle(a in arb_dist(4), b in arb_dist(4)) {
        prop_assert_eq!(ssd_dominates(&a, &b), ssd_grid_check(&a, &b, 10_000));
    }

    #[test]
    fn thresholded_ssd_is_scale_invariant(dists in prop::collection::vec(arb_dist(4), 2..5), thres in 0.0..20.0f64, c in 0.01..100.0f64) {
        let scaled: Vec<QuantileDist> = dists
            .iter()
            .map(|d| QuantileDist::new(d.atoms().iter().map(|x| x * c).collect()).unwrap())
            .collect();
        // Skip instances sitting on a rounding boundary of the gap test.
        let (a1, a2) = top2(&dists).unwrap();
        let gap = dists[a1].mean() - dists[a2].mean();
        prop_assume!((gap - thres).abs() > 1e-9 * (1.0 + thres));
        prop_assume!((dists[a1].variance() - dists[a2].variance()).abs() > 1e-9);
        prop_assert_eq!(thresholded_ssd_action(&dists, thres), thresholded_ssd_action(&scaled, thres * c));
    }

    #[test]
    fn infinite_threshold_compares_variances(dists in prop::collection::vec(arb_dist(4), 2..6)) {
        let (a1, a2) = top2(&dists).unwrap();
        let expect = if dists[a2].variance() < dists[a1].variance() { a2 } else { a1 };
        prop_assert_eq!(thresholded_ssd_action(&dists, f64::INFINITY), expect);
    }

    #[test]
    fn tied_means_second_moment_orders_like_variance(pair in (-40i64..10).prop_flat_map(|s| (int_dist_with_sum(4, s), int_dist_with_sum(4, s)))) {
        let (x, y) = pair;
        prop_assert_eq!(x.mean(), y.mean());
        prop_assert_eq!(x.second_moment() < y.second_moment(), x.variance() < y.variance());
        let chosen = ssd_action(&[x.clone(), y.clone()], 0.0);
        let expect = if y.variance() < x.variance() { 1 } else { 0 };
        prop_assert_eq!(chosen, expect);
    }

    #[test]
    fn tie_branch_picks_the_dominating_action(pair in (-40i64..10).prop_flat_map(|s| (int_dist_with_sum(4, s), int_dist_with_sum(4, s)))) {
        let dists = [pair.0, pair.1];
        let chosen = ssd_action(&dists, 0.0);
        let rejected = 1 - chosen;
        if ssd_dominates(&dists[0], &dists[1]) || ssd_dominates(&dists[1], &dists[0]) {
            prop_assert!(ssd_dominates(&dists[chosen], &dists[rejected]));
        }
    }

    #[test]
    fn dense_net_gradients_match_finite_differences(
        dims in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
        x in prop::collection::vec(-2.0..2.0f64, 5),
        g in prop::collection::vec(-1.0..1.0f64, 5),
    ) {
        let net = DenseNet::init(&dims, seed).unwrap();
        let x = &x[..dims[0]];
        let g = &g[..*dims.last().unwrap()];
        // Finite differences are meaningless across a ReLU kink.
        prop_assume!(min_relu_preactivation(&net, x) > 1e-4);
        let analytic = net.backward(x, g).unwrap().flat();
        let params = net.params();
        let objective = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            n.forward(x).unwrap().iter().zip(g).map(|(y, gi)| y * gi).sum::<f64>()
        };
        let h = 1e-6;
        for k in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            if fd.abs() < 1e-6 {
                continue;
            }
            let rel = (analytic[k] - fd).abs() / fd.abs().max(analytic[k].abs());
            prop_assert!(rel < 1e-4, "param {}: analytic {} fd {}", k, analytic[k], fd);
        }
    }

    #[test]
    fn dense_net_is_seed_reproducible(dims in prop::collection::vec(1usize..8, 2..4), seed in any::<u64>(), x in prop::collection::vec(-3.0..3.0f64, 8)) {
        let a = DenseNet::init(&dims, seed).unwrap();
        let b = DenseNet::init(&dims, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let x = &x[..dims[0]];
        prop_assert_eq!(a.forward(x).unwrap(), a.forward(x).unwrap());
    }

    #[test]
    fn value_iteration_greedy_follows_shortest_path(map in arb_map()) {
        let plain = without_crosswalks(&map);
        let q = value_iteration(&plain, &EnvConfig::new(3.0, 18.0), 0.99, 1e-12);
        let rollout = greedy_rollout(&plain, &q, 100);
        let sp = shortest_path(&plain, plain.start(), plain.goals()).unwrap();
        rollout.validate(&plain).unwrap();
        prop_assert_eq!(rollout.len(), sp.len());
        let (best, ways) = count_shortest(&plain);
        prop_assert_eq!(best, sp.len());
        if ways == 1 {
            prop_assert_eq!(rollout, sp);
        }
    }

    #[test]
    fn value_iteration_ignores_crosswalk_noise(map in arb_map(), r_loop in 0.0..20.0f64) {
        let cfg = EnvConfig::new(3.0, r_loop);
        let q = value_iteration(&map, &cfg, 0.99, 1e-12);
        let q_plain = value_iteration(&without_crosswalks(&map), &cfg, 0.99, 1e-12);
        for (a, b) in q.values.iter().zip(&q_plain.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monte_carlo_matches_q_star(map in arb_map(), seed in any::<u64>()) {
        let map = Arc::new(map);
        let cfg = EnvConfig::new(3.0, 18.0);
        let q = value_iteration(&map, &cfg, 0.99, 1e-12);
        let policy = q.greedy_policy();
        let d = mc_returns(&map, &cfg, &policy, map.start(), 0.99, 4000, seed).unwrap();
        let q_star = q.get(map.start(), policy[map.start()]);
        prop_assert!((d.mean() - q_star).abs() <= 3.0 * d.std_error() + 1e-9, "{} vs {}", d.mean(), q_star);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn quantile_huber_grad_matches_finite_differences(u in -10.0..10.0f64, tau in 0.001..0.999f64, kappa in 0.05..5.0f64) {
        prop_assume!(u.abs() >= 1e-4);
        let h = 1e-6;
        let fd = (quantile_huber(u + h, tau, kappa) - quantile_huber(u - h, tau, kappa)) / (2.0 * h);
        prop_assert!((fd - quantile_huber_grad(u, tau, kappa)).abs() < 1e-6);
    }

    #[test]
    fn ssd_without_ties_is_greedy(dists in prop::collection::vec(arb_dist(4), 2..6)) {
        let (a1, a2) = top2(&dists).unwrap();
        prop_assume!(dists[a1].mean() != dists[a2].mean());
        prop_assert_eq!(ssd_action(&dists, 0.0), greedy_action(&dists));
        prop_assert_eq!(thresholded_ssd_action(&dists, 0.0), greedy_action(&dists));
    }
}
