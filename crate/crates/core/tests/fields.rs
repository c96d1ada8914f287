mod common;

use common::*;
use proptest::prelude::*;
use stiffsplit::{ChannelClass, ErrorModel, Network, TruncationPairs, VectorFields};

fn scaled_rates(net: &Network, c: f64) -> Network {
    let mut rs = net.reactions().to_vec();
    for r in &mut rs {
        r.rate *= c;
    }
    Network::new(net.species().to_vec(), rs).unwrap()
}

fn rk4_flow(vf: &VectorFields<'_, f64>, k: usize, s: &[f64], h: f64, steps: usize) -> Vec<f64> {
    let dt = h / steps as f64;
    let mut x = s.to_vec();
    let add = |x: &[f64], d: &[f64], c: f64| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + c * b).collect() };
    for _ in 0..steps {
        let k1 = vf.diffusion_field(k, &x);
        let k2 = vf.diffusion_field(k, &add(&x, &k1, dt / 2.0));
        let k3 = vf.diffusion_field(k, &add(&x, &k2, dt / 2.0));
        let k4 = vf.diffusion_field(k, &add(&x, &k3, dt));
        for a in 0..x.len() {
            x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
    }
    x
}

#[test]
fn flow_commutator_approaches_bracket() {
    let net = benchmark();
    let vf = VectorFields::new(&net);
    let s = [150.0, 100.0, 50.0];
    for (i, j) in [(0, 2), (1, 4), (5, 3), (0, 5)] {
        let br = vf.lie_bracket(i, j, &s);
        let speed = norm(&vf.diffusion_field(i, &s)).max(norm(&vf.diffusion_field(j, &s)));
        let mut errs = Vec::new();
        for m in 0..3 {
            let h = 0.2 / speed / f64::from(1 << m);
            let ij = rk4_flow(&vf, j, &rk4_flow(&vf, i, &s, h, 200), h, 200);
            let ji = rk4_flow(&vf, i, &rk4_flow(&vf, j, &s, h, 200), h, 200);
            let comm: Vec<f64> = ij.iter().zip(&ji).map(|(a, b)| (a - b) / (h * h)).collect();
            let diff: Vec<f64> = comm.iter().zip(&br).map(|(a, b)| a - b).collect();
            errs.push(norm(&diff) / norm(&br));
        }
        assert!(errs[2] < 0.05, "pair ({i},{j}): {errs:?}");
        assert!(errs[2] < 0.7 * errs[0], "pair ({i},{j}) not converging: {errs:?}");
    }
}

#[test]
fn benchmark_diffusion_field_hand_value() {
    let net = benchmark();
    let vf = VectorFields::new(&net);
    let x = vf.diffusion_field(0, &[150.0, 100.0, 50.0]);
    let r = 1.5e6f64.sqrt();
    for (got, want) in x.iter().zip([-r, -r, r]) {
        assert!(rel_close(*got, want, 1e-14));
    }
    let d = vf.drift_correction(&[150.0, 100.0, 50.0]);
    assert_eq!(d[1], -1e4);
}

#[test]
fn birth_death_bracket_matches_closed_form() {
    for (k1, k2, s) in [(4.0, 1.0, 4.0), (2.5, 0.3, 17.0), (100.0, 7.0, 0.5)] {
        let net = birth_death(k1, k2, "fast", "slow");
        let br = VectorFields::new(&net).lie_bracket(0, 1, &[s]);
        let want = -(k1 * k2).sqrt() / (2.0 * s.sqrt());
        assert!(rel_close(br[0], want, 1e-10), "{} vs {want}", br[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gradients_match_finite_differences((net, s) in network_and_state(0.5, 50.0)) {
        let g = net.propensity_gradients(&s);
        for k in 0..net.n_reactions() {
            let fd = fd_jacobian(|x| vec![net.propensity(k, x)], &s);
            for b in 0..s.len() {
                prop_assert!((g[k][b] - fd[b]).abs() <= 1e-5 * (1.0 + g[k][b].abs()), "k {k} b {b}: {} vs {}", g[k][b], fd[b]);
            }
        }
    }

    #[test]
    fn brackets_match_finite_difference_jacobians((net, s) in network_and_state(1.0, 50.0)) {
        let vf = VectorFields::new(&net);
        for i in 0..net.n_reactions() {
            for j in 0..net.n_reactions() {
                let ji = fd_jacobian(|x| vf.diffusion_field(i, x), &s);
                let jj = fd_jacobian(|x| vf.diffusion_field(j, x), &s);
                let a = matvec(&jj, &vf.diffusion_field(i, &s));
                let b = matvec(&ji, &vf.diffusion_field(j, &s));
                let br = vf.lie_bracket(i, j, &s);
                let diff: Vec<f64> = br.iter().zip(a.iter().zip(&b)).map(|(x, (p, q))| x - (p - q)).collect();
                prop_assert!(norm(&diff) <= 1e-5 * (norm(&a) + norm(&b)) + 1e-12);
            }
        }
    }

    #[test]
    fn brackets_are_antisymmetric((net, s) in network_and_state(0.0, 50.0)) {
        let vf = VectorFields::new(&net);
        for i in 0..net.n_reactions() {
            prop_assert!(vf.lie_bracket(i, i, &s).iter().all(|&x| x == 0.0));
            for j in 0..net.n_reactions() {
                let a = vf.lie_bracket(i, j, &s);
                let b = vf.lie_bracket(j, i, &s);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x + y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn drift_splits_into_fast_and_slow_parts((net, s) in network_and_state(0.0, 50.0)) {
        let vf = VectorFields::new(&net);
        let full = vf.stratonovich_drift(&s);
        let fast = vf.partial_drift(&s, ChannelClass::Fast);
        let slow = vf.partial_drift(&s, ChannelClass::Slow);
        for a in 0..full.len() {
            prop_assert!((full[a] - fast[a] - slow[a]).abs() <= 1e-12 * full[a].abs().max(1.0));
        }
    }

    #[test]
    fn operator_and_stoichiometric_terms_agree((net, s) in network_and_state(0.5, 50.0)) {
        let model = ErrorModel::new(&net);
        let c = model.coefficients(&s);
        let pairs = [
            (model.fast_substep_term(&s), model.fast_substep_term_parametrized(&s)),
            (model.slow_discretization_term(&s), model.slow_discretization_term_parametrized(&s)),
            (c.terms.fast_substepping, model.fast_substep_term(&s)),
            (c.terms.slow_discretization, model.slow_discretization_term(&s)),
        ];
        for (x, y) in pairs {
            prop_assert!(rel_close(x, y, 1e-10), "{x} vs {y}");
        }
        let scale = c.a + c.b + 1e-300;
        prop_assert!((c.terms.truncation - model.truncation_term(&s)).abs() <= 1e-10 * scale);
        prop_assert!((c.terms.splitting - model.splitting_term(&s)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn splitting_term_is_bounded_by_truncation((net, s) in network_and_state(0.0, 50.0)) {
        let c = ErrorModel::new(&net).with_pairs(TruncationPairs::All).coefficients(&s);
        let t = c.terms;
        let slack = 1e-12 * (c.a + c.b) + 1e-300;
        prop_assert!(t.splitting >= 0.0 && t.truncation >= 0.0);
        prop_assert!(t.splitting <= t.truncation + slack);
    }

    #[test]
    fn coefficients_scale_quadratically_with_rates((net, s) in network_and_state(0.5, 50.0), c in 0.1f64..10.0) {
        let scaled = scaled_rates(&net, c);
        let a = ErrorModel::new(&net).coefficients(&s);
        let b = ErrorModel::new(&scaled).coefficients(&s);
        let scale = c * c * (a.a + a.b) + 1e-300;
        prop_assert!((b.a - c * c * a.a).abs() <= 1e-9 * scale);
        prop_assert!((b.b - c * c * a.b).abs() <= 1e-9 * scale);
    }

    #[test]
    fn mse_does_not_grow_with_substeps(
        (net, s) in network_and_state(0.0, 50.0),
        dt in 1e-6f64..1e-1,
        n in 1usize..1000,
    ) {
        let model = ErrorModel::new(&net);
        let (e1, _) = model.one_step_mse(&s, dt, n).unwrap();
        let (e2, _) = model.one_step_mse(&s, dt, 2 * n).unwrap();
        prop_assert!(e2 <= e1);
        prop_assert!(e2 >= 0.0);
    }
}

proptest! {
    #[test]
    fn network_json_round_trips((net, s) in network_and_state(-5.0, 50.0)) {
        let back: Network = stiffsplit::parse_network(&net.to_json()).unwrap();
        prop_assert_eq!(back.stoichiometry_matrix(), net.stoichiometry_matrix());
        prop_assert_eq!(back.fast_channels(), net.fast_channels());
        prop_assert_eq!(back.propensities(&s), net.propensities(&s));
    }

    #[test]
    fn negative_entries_count_as_zero((net, s) in network_and_state(-5.0, 50.0)) {
        let clamped: Vec<f64> = s.iter().map(|x| x.max(0.0)).collect();
        prop_assert_eq!(net.propensities(&s), net.propensities(&clamped));
    }
}
