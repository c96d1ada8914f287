mod common;

use common::*;
use rand::{Rng, SeedableRng};
use stiffsplit::brownian::{macro_increments, micro_increments, refine_path, sum_increments, SharedPath};
use stiffsplit::integrators::{
    em_step, em_trajectory, fixed_split_trajectory, reference_strong_step, split_step, ssa_trajectory,
    IntegratorOptions, Recording,
};
use stiffsplit::{BrownianIncrements, PathStream, StreamDomain, VectorFields};

const RAW: IntegratorOptions = IntegratorOptions { clamp_nonnegative: false };

#[test]
fn macro_increments_are_standard_gaussian() {
    let mut st = PathStream::new(1, 0);
    let xs = macro_increments::<f64>(&mut st, 1.0, 1_000_000).unwrap().dw;
    let (m, v) = mean_var(&xs);
    assert!(m.abs() < 4e-3, "mean {m}");
    assert!((v - 1.0).abs() < 0.01, "variance {v}");
}

#[test]
fn microstep_variances_add_up() {
    let mut st = PathStream::new(2, 0);
    let n = 1_000_000;
    let mut first = Vec::with_capacity(n);
    let mut total = Vec::with_capacity(n);
    for _ in 0..n {
        let m = micro_increments::<f64>(&mut st, 0.02, 4, &[0], 1).unwrap();
        first.push(m.steps[0].dw[0]);
        total.push(m.total.dw[0]);
        assert_eq!(m.total, sum_increments(&m.steps, 0.02));
    }
    assert!((mean_var(&first).1 / 0.005 - 1.0).abs() < 0.01);
    assert!((mean_var(&total).1 / 0.02 - 1.0).abs() < 0.01);
}

#[test]
fn bridge_pieces_have_the_refined_variance() {
    let mut st = PathStream::new(3, 0);
    let n = 1_000_000;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let parent = macro_increments::<f64>(&mut st, 0.8, 1).unwrap();
        let pieces = refine_path(&parent, 4, &mut st).unwrap();
        a.push(pieces[1].dw[0]);
        b.push(pieces[3].dw[0]);
    }
    let (ma, va) = mean_var(&a);
    let (_, vb) = mean_var(&b);
    assert!(ma.abs() < 4.0 * (0.2f64 / n as f64).sqrt());
    assert!((va / 0.2 - 1.0).abs() < 0.01, "{va}");
    assert!((vb / 0.2 - 1.0).abs() < 0.01, "{vb}");
    let cov = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    assert!(cov.abs() < 4.0 * 0.2 / (n as f64).sqrt(), "pieces correlated: {cov}");
}

#[test]
fn ssa_pure_birth_is_poisson() {
    let net = network(r#"{"species": ["S"], "reactions": [{"products": {"S": 1}, "rate": 5, "class": "slow"}]}"#);
    let xs: Vec<f64> = (0..100_000u64)
        .map(|id| {
            let mut st = PathStream::in_domain(4, id, StreamDomain::Jump);
            ssa_trajectory(&net, &[0.0], 2.0, &mut st, Recording::Endpoints).unwrap().final_state().0[0]
        })
        .collect();
    let (m, v) = mean_var(&xs);
    assert!((m - 10.0).abs() < 0.05, "mean {m}");
    assert!((v - 10.0).abs() < 0.3, "variance {v}");
}

#[test]
fn ssa_birth_death_has_poisson_stationary_mean() {
    let net = birth_death(4.0, 1.0, "slow", "slow");
    let n = 20_000u64;
    let xs: Vec<f64> = (0..n)
        .map(|id| {
            let mut st = PathStream::in_domain(5, id, StreamDomain::Jump);
            ssa_trajectory(&net, &[0.0], 20.0, &mut st, Recording::Endpoints).unwrap().final_state().0[0]
        })
        .collect();
    let (m, v) = mean_var(&xs);
    assert!((m - 4.0).abs() < 4.0 * (v / n as f64).sqrt(), "mean {m}");
    assert!((v - 4.0).abs() < 0.2, "variance {v}");
}

#[test]
fn euler_maruyama_hand_value() {
    let net = network(r#"{"species": ["S"], "reactions": [{"products": {"S": 1}, "rate": 4, "class": "slow"}]}"#);
    let s = em_step(&net, &[1.0], 0.1, &[0.5], RAW);
    assert!((s[0] - (1.0 + 0.4 + 1.0)).abs() < 1e-15);
}

/// Fast decay at rate 1 plus fast birth at 1/4 gives fast drift `-s` after
/// the Stratonovich correction; slow birth at rate 1 adds `+1`.
#[test]
fn split_step_composes_euler_maps() {
    let net = network(
        r#"{"species": ["S"], "reactions": [
            {"reactants": {"S": 1}, "rate": 1, "class": "fast"},
            {"products": {"S": 1}, "rate": 0.25, "class": "fast"},
            {"products": {"S": 1}, "rate": 1, "class": "slow"}
        ]}"#,
    );
    let vf = VectorFields::new(&net);
    let micro = stiffsplit::brownian::MicroIncrements {
        steps: vec![BrownianIncrements::zeros(3, 0.05); 2],
        total: BrownianIncrements::zeros(3, 0.1),
    };
    let r = split_step(&vf, &[1.0], &micro, &BrownianIncrements::zeros(3, 0.1), RAW);
    assert!((r.s_plus[0] - 0.9025).abs() < 1e-15);
    assert!((r.s_next[0] - 1.0025).abs() < 1e-15);
}

#[test]
fn single_microstep_differs_from_ito_step_by_the_correction() {
    let net = birth_death(3.0, 1.5, "fast", "fast");
    let vf = VectorFields::new(&net);
    let mut st = PathStream::new(6, 0);
    for _ in 0..100 {
        let s = [10.0 * st.uniform_open0()];
        let dw = macro_increments::<f64>(&mut st, 0.01, 2).unwrap();
        let micro = stiffsplit::brownian::MicroIncrements { steps: vec![dw.clone()], total: dw.clone() };
        let split = split_step(&vf, &s, &micro, &BrownianIncrements::zeros(2, 0.01), RAW).s_next;
        let ito = em_step(&net, &s, 0.01, &dw.dw, RAW);
        let d = vf.drift_correction(&s);
        let corr = -0.25 * (d[0] - d[1]);
        assert!((split[0] - (ito[0] + 0.01 * corr)).abs() < 1e-12);
    }
}

#[test]
fn split_step_is_exact_on_constant_fast_fields() {
    let net = network(
        r#"{"species": ["A", "B"], "reactions": [
            {"products": {"A": 1}, "rate": 3, "class": "fast"},
            {"products": {"A": 1, "B": 2}, "rate": 0.5, "class": "fast"}
        ]}"#,
    );
    let vf = VectorFields::new(&net);
    let mut st = PathStream::new(7, 0);
    let micro = micro_increments::<f64>(&mut st, 0.3, 7, &[0, 1], 2).unwrap();
    let r = split_step(&vf, &[1.0, 2.0], &micro, &BrownianIncrements::zeros(2, 0.3), RAW);
    let w = &micro.total.dw;
    let exact = [
        1.0 + 0.3 * 3.5 + 3f64.sqrt() * w[0] + 0.5f64.sqrt() * w[1],
        2.0 + 0.3 * 1.0 + 2.0 * 0.5f64.sqrt() * w[1],
    ];
    for a in 0..2 {
        assert!((r.s_next[a] - exact[a]).abs() < 1e-12);
    }
}

#[test]
fn heun_matches_euler_for_additive_noise() {
    let net = network(
        r#"{"species": ["A", "B"], "reactions": [
            {"products": {"A": 1}, "rate": 3, "class": "fast"},
            {"products": {"B": 1}, "rate": 7, "class": "slow"}
        ]}"#,
    );
    let vf = VectorFields::new(&net);
    let mut st = PathStream::new(8, 0);
    for m in [1, 3, 16] {
        let dw = macro_increments::<f64>(&mut st, 0.05, 2).unwrap();
        let path = SharedPath::from_macro(&dw, m, &mut st).unwrap();
        let heun = reference_strong_step(&vf, &[5.0, 5.0], &path);
        let em = em_step(&net, &[5.0, 5.0], 0.05, &dw.dw, RAW);
        for a in 0..2 {
            assert!((heun[a] - em[a]).abs() < 1e-12);
        }
    }
}

fn coarsen(path: &SharedPath<f64>, factor: usize) -> SharedPath<f64> {
    SharedPath {
        steps: path
            .steps
            .chunks(factor)
            .map(|c| sum_increments(c, c.iter().map(|s| s.dt).sum()))
            .collect(),
    }
}

#[test]
fn heun_converges_in_mean_square() {
    // multiplicative noise on two non-commuting channels
    let net = network(
        r#"{"species": ["A", "B"], "reactions": [
            {"products": {"A": 1}, "rate": 50, "class": "fast"},
            {"reactants": {"A": 1}, "products": {"B": 1}, "rate": 1, "class": "fast"},
            {"reactants": {"A": 1, "B": 1}, "rate": 0.02, "class": "slow"}
        ]}"#,
    );
    let vf = VectorFields::new(&net);
    let fine = 256;
    let ms = [4, 8, 16, 32];
    let mut mse = vec![0.0; ms.len()];
    let paths = 2000;
    for id in 0..paths {
        let mut st = PathStream::new(9, id);
        let dw = macro_increments::<f64>(&mut st, 0.2, 3).unwrap();
        let path = SharedPath::from_macro(&dw, fine, &mut st).unwrap();
        let reference = reference_strong_step(&vf, &[40.0, 20.0], &path);
        for (slot, &m) in mse.iter_mut().zip(&ms) {
            let x = reference_strong_step(&vf, &[40.0, 20.0], &coarsen(&path, fine / m));
            *slot += x.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / paths as f64;
        }
    }
    let lx: Vec<f64> = ms.iter().map(|&m| -(m as f64).ln()).collect();
    let ly: Vec<f64> = mse.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 4.0, ly.iter().sum::<f64>() / 4.0);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!(slope >= 0.9, "mean-square order {slope}, errors {mse:?}");
}

#[test]
fn fixed_grid_accepts_the_table_step_count() {
    let net = benchmark();
    let mut st = PathStream::new(10, 0);
    let dt = 2e-2 / 860.0;
    let rec = em_trajectory(&net, &[150.0, 100.0, 50.0], 2e-2, dt, &mut st, IntegratorOptions::default(), Recording::Full)
        .unwrap();
    assert_eq!(rec.accepted_steps, 860);
    assert_eq!(rec.times.len(), 861);
    assert_eq!(rec.final_time(), 2e-2);
    let mut st = PathStream::new(10, 0);
    let rec = fixed_split_trajectory(
        &net,
        &[150.0, 100.0, 50.0],
        2e-2,
        dt,
        3,
        &mut st,
        IntegratorOptions::default(),
        Recording::Endpoints,
    )
    .unwrap();
    assert_eq!(rec.total_substeps, 860 * 3);
    assert!(rec.final_state().0.iter().all(|&x| x >= 0.0));
}

#[test]
fn single_precision_tracks_double() {
    let net64 = birth_death(40.0, 1.0, "fast", "slow");
    let net32: stiffsplit::Network32 = stiffsplit::parse_network(&net64.to_json()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let s = rng.random_range(1.0..80.0);
        let dw: Vec<f64> = (0..2).map(|_| rng.random_range(-0.1..0.1)).collect();
        let a = em_step(&net64, &[s], 0.01, &dw, RAW)[0];
        let dw32: Vec<f32> = dw.iter().map(|&x| x as f32).collect();
        let b = em_step(&net32, &[s as f32], 0.01, &dw32, RAW)[0];
        assert!((a - f64::from(b)).abs() < 1e-5 * a.abs().max(1.0));
    }
}
