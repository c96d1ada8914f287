use proptest::prelude::*;
use stiffsplit::metrics::{kde_divergences, wasserstein1, Grid, Kde};

/// Minimum-cost perfect matching by dynamic programming over subsets.
fn assignment_cost(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len();
    let mut best = vec![f64::INFINITY; 1 << n];
    best[0] = 0.0;
    for mask in 0usize..1 << n {
        let i = mask.count_ones() as usize;
        if i == n || !best[mask].is_finite() {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                best[next] = best[next].min(best[mask] + (p[i] - q[j]).abs());
            }
        }
    }
    best[(1 << n) - 1]
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Optimal transport between uniform empirical measures, by replicating
/// both samples to a common size and solving the assignment problem.
fn transport_w1(p: &[f64], q: &[f64]) -> f64 {
    let l = p.len() / gcd(p.len(), q.len()) * q.len();
    let rep = |x: &[f64]| -> Vec<f64> { x.iter().flat_map(|&v| std::iter::repeat_n(v, l / x.len())).collect() };
    assignment_cost(&rep(p), &rep(q)) / l as f64
}

fn samples(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..=max)
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n..=n + 200)
}

proptest! {
    #[test]
    fn sorted_w1_equals_assignment(n in 1usize..=8, seed in prop::collection::vec(-100.0f64..100.0, 16)) {
        let (p, q) = (&seed[..n], &seed[8..8 + n]);
        prop_assert!((wasserstein1(p, q).unwrap() - transport_w1(p, q)).abs() < 1e-10);
    }

    #[test]
    fn unequal_sizes_match_replicated_transport(p in samples(4), q in samples(3)) {
        prop_assert!((wasserstein1(&p, &q).unwrap() - transport_w1(&p, &q)).abs() < 1e-10);
    }

    #[test]
    fn w1_is_a_metric(p in samples(30), q in samples(30), r in samples(30)) {
        let pq = wasserstein1(&p, &q).unwrap();
        prop_assert!((pq - wasserstein1(&q, &p).unwrap()).abs() < 1e-10);
        prop_assert!(wasserstein1(&p, &p).unwrap() == 0.0);
        prop_assert!(pq <= wasserstein1(&p, &r).unwrap() + wasserstein1(&r, &q).unwrap() + 1e-9);
    }

    #[test]
    fn w1_of_a_shift_is_the_shift(p in samples(50), c in -50.0f64..50.0) {
        let moved: Vec<f64> = p.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein1(&p, &moved).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn divergences_are_bounded_and_js_symmetric(p in cloud(20), q in cloud(20)) {
        let a = kde_divergences(&p, &q).unwrap();
        let b = kde_divergences(&q, &p).unwrap();
        prop_assert!(a.js >= 0.0 && a.js <= std::f64::consts::LN_2);
        prop_assert!(a.kl >= 0.0);
        prop_assert!((a.js - b.js).abs() < 1e-12);
    }

    #[test]
    fn self_divergence_vanishes(p in cloud(20)) {
        let d = kde_divergences(&p, &p).unwrap();
        prop_assert!(d.js < 1e-3 && d.kl < 1e-3);
    }

    #[test]
    fn kde_integrates_to_one_on_its_grid(p in cloud(50)) {
        let kde = Kde::new(&p).unwrap();
        let grid = Grid::covering(&[&kde]);
        let d = grid.evaluate(&kde);
        let mass = grid.step() * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]));
        prop_assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}

#[test]
fn disjoint_clouds_reach_ln2() {
    let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 1e3).collect();
    let d = kde_divergences(&a, &b).unwrap();
    assert!((d.js / std::f64::consts::LN_2 - 1.0).abs() < 0.01);
}

#[test]
fn single_point_ensemble_fills_one_bin() {
    let p = vec![3.0; 50];
    let kde = Kde::new(&p).unwrap();
    assert!(kde.degenerate);
    let counts = Grid::covering(&[&kde]).histogram(&p);
    assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
}
