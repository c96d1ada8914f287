//! Invariant checks runnable from the CLI.

use serde::Serialize;
use stiffsplit::brownian::{macro_increments, refine_path};
use stiffsplit::controller::{pi_update, select_substeps, ControllerConfig, SubstepChoice};
use stiffsplit::integrators::{fixed_split_trajectory, IntegratorOptions, Recording};
use stiffsplit::metrics::{kde_divergences, wasserstein1};
use stiffsplit::{ChannelClass, ErrorModel, Network, PathStream, StreamDomain, VectorFields};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst < tol,
        detail: format!("worst {worst:.3e}, tolerance {tol:.1e}"),
    }
}

fn random_states(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut st = PathStream::in_domain(seed, 0, StreamDomain::Custom(7));
    (0..n)
        .map(|_| (0..dim).map(|_| lo + (hi - lo) * st.uniform_open0()).collect())
        .collect()
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central-difference Jacobian of `f`, row-major `[a * n + b] = d f_a / d s_b`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let m = f(s).len();
    let mut jac = vec![0.0; m * n];
    for b in 0..n {
        let h = fd_step(s[b]);
        let mut up = s.to_vec();
        let mut dn = s.to_vec();
        up[b] += h;
        dn[b] -= h;
        let (fu, fd) = (f(&up), f(&dn));
        for a in 0..m {
            jac[a * n + b] = (fu[a] - fd[a]) / (2.0 * h);
        }
    }
    jac
}

fn matvec(jac: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    jac.chunks(n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn benchmark() -> Network {
    stiffsplit::parse_network(include_str!("../../../benchmarks/k5_0.1.json")).expect("bundled benchmark parses")
}

pub fn gradient_vs_fd(net: &Network) -> Check {
    let mut worst: f64 = 0.0;
    for s in random_states(50, net.n_species(), 1.0, 1000.0, 1) {
        let g = net.propensity_gradients(&s);
        for k in 0..net.n_reactions() {
            let fd = fd_jacobian(|x| vec![net.propensity(k, x)], &s);
            for b in 0..s.len() {
                if g[k][b] != 0.0 || fd[b] != 0.0 {
                    worst = worst.max(rel(g[k][b], fd[b]));
                }
            }
        }
    }
    check("propensity gradients match finite differences", worst, 1e-6)
}

pub fn bracket_vs_fd(net: &Network) -> Check {
    let vf = VectorFields::new(net);
    let mut worst: f64 = 0.0;
    for s in random_states(100, net.n_species(), 1.0, 1000.0, 2) {
        for i in 0..net.n_reactions() {
            for j in 0..net.n_reactions() {
                if i == j {
                    continue;
                }
                let ji = fd_jacobian(|x| vf.diffusion_field(i, x), &s);
                let jj = fd_jacobian(|x| vf.diffusion_field(j, x), &s);
                let a = matvec(&jj, &vf.diffusion_field(i, &s));
                let b = matvec(&ji, &vf.diffusion_field(j, &s));
                let fd: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                let br = vf.lie_bracket(i, j, &s);
                let scale = norm(&a).max(norm(&b));
                if scale == 0.0 {
                    continue;
                }
                let diff: Vec<f64> = br.iter().zip(&fd).map(|(x, y)| x - y).collect();
                worst = worst.max(norm(&diff) / norm(&br).max(1e-8 * scale));
            }
        }
    }
    check("Lie brackets match finite-difference Jacobians", worst, 1e-4)
}

pub fn bracket_antisymmetry(net: &Network) -> Check {
    let vf = VectorFields::new(net);
    let mut worst: f64 = 0.0;
    for s in random_states(50, net.n_species(), 0.0, 500.0, 3) {
        for i in 0..net.n_reactions() {
            for j in 0..net.n_reactions() {
                let a = vf.lie_bracket(i, j, &s);
                let b = vf.lie_bracket(j, i, &s);
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x + y).abs());
                }
            }
        }
    }
    check("Lie brackets are antisymmetric", worst, 1e-12)
}

pub fn dual_formulas(net: &Network) -> Check {
    let model = ErrorModel::new(net);
    let mut worst: f64 = 0.0;
    for s in random_states(50, net.n_species(), 1.0, 1000.0, 4) {
        worst = worst.max(rel(model.fast_substep_term(&s), model.fast_substep_term_parametrized(&s)));
        worst = worst.max(rel(
            model.slow_discretization_term(&s),
            model.slow_discretization_term_parametrized(&s),
        ));
        let c = model.coefficients(&s);
        worst = worst.max(rel(c.terms.truncation, model.truncation_term(&s)));
        worst = worst.max(rel(c.terms.splitting, model.splitting_term(&s)));
    }
    check("operator and stoichiometric error terms agree", worst, 1e-10)
}

pub fn drift_partition(net: &Network) -> Check {
    let vf = VectorFields::new(net);
    let mut worst: f64 = 0.0;
    for s in random_states(50, net.n_species(), 0.0, 1000.0, 5) {
        let full = vf.stratonovich_drift(&s);
        let fast = vf.partial_drift(&s, ChannelClass::Fast);
        let slow = vf.partial_drift(&s, ChannelClass::Slow);
        for a in 0..full.len() {
            worst = worst.max((full[a] - fast[a] - slow[a]).abs() / full[a].abs().max(1.0));
        }
    }
    check("fast and slow drifts add up to the full drift", worst, 1e-12)
}

pub fn bridge_sums() -> Check {
    let mut worst: f64 = 0.0;
    let mut st = PathStream::new(11, 0);
    for factor in [1, 2, 3, 8, 64] {
        let parent = macro_increments::<f64>(&mut st, 0.37, 4).unwrap();
        let pieces = refine_path(&parent, factor, &mut st).unwrap();
        for c in 0..4 {
            let total: f64 = pieces.iter().map(|p| p.dw[c]).sum();
            worst = worst.max((total - parent.dw[c]).abs());
        }
    }
    check("bridge refinements reproduce the parent increment", worst, 1e-12)
}

/// Optimal assignment cost by enumerating permutations.
pub fn brute_force_w1(p: &[f64], q: &[f64]) -> f64 {
    fn go(i: usize, p: &[f64], q: &[f64], used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if i == p.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..q.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, p, q, used, acc + (p[i] - q[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, p, q, &mut vec![false; q.len()], 0.0, &mut best);
    best / p.len() as f64
}

pub fn wasserstein_vs_assignment() -> Check {
    let mut worst: f64 = 0.0;
    let mut st = PathStream::new(12, 0);
    for n in 1..=6 {
        for _ in 0..10 {
            let p: Vec<f64> = (0..n).map(|_| 10.0 * st.standard_normal()).collect();
            let q: Vec<f64> = (0..n).map(|_| 10.0 * st.standard_normal() + 3.0).collect();
            worst = worst.max((wasserstein1(&p, &q).unwrap() - brute_force_w1(&p, &q)).abs());
        }
    }
    check("sorted-sample W1 matches optimal assignment", worst, 1e-10)
}

pub fn divergence_bounds() -> Check {
    let mut st = PathStream::new(13, 0);
    let a: Vec<f64> = (0..500).map(|_| st.standard_normal()).collect();
    let b: Vec<f64> = (0..500).map(|_| 1e4 + st.standard_normal()).collect();
    let own = kde_divergences(&a, &a).unwrap();
    let far = kde_divergences(&a, &b).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let ok = own.js < 1e-3 && own.kl < 1e-3 && far.js <= ln2 && far.js >= 0.99 * ln2 && far.kl >= 0.0;
    Check {
        name: "JS divergence lies in [0, ln 2] and self-divergence vanishes",
        passed: ok,
        detail: format!("self js {:.2e} kl {:.2e}, disjoint js {:.6}", own.js, own.kl, far.js),
    }
}

pub fn controller_hand_values() -> Check {
    let mut cfg = ControllerConfig::<f64>::new(2e-4, 1.0);
    let n = select_substeps(&cfg, 1.0, 10.0, 0.01);
    cfg.dt_max = 1.0;
    let dt = pi_update(&cfg, 1e-3, cfg.epsilon, cfg.epsilon);
    Check {
        name: "controller reproduces hand-computed N and PI step",
        passed: n == SubstepChoice::Feasible(10) && (dt - 9e-4).abs() < 1e-15,
        detail: format!("N {n:?}, step {dt:e}"),
    }
}

pub fn determinism(net: &Network) -> Check {
    let run = |threads: usize| -> Vec<Vec<f64>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            (0..16u64)
                .into_par_iter()
                .map(|id| {
                    let mut st = PathStream::new(5, id);
                    fixed_split_trajectory(
                        net,
                        &[150.0, 100.0, 50.0],
                        1e-3,
                        1e-5,
                        2,
                        &mut st,
                        IntegratorOptions::default(),
                        Recording::Endpoints,
                    )
                    .unwrap()
                    .final_state()
                    .0
                    .clone()
                })
                .collect()
        })
    };
    let a = run(1);
    let b = run(3);
    let c = run(1);
    Check {
        name: "ensembles are identical across runs and worker counts",
        passed: a == b && a == c,
        detail: format!("{} paths compared", a.len()),
    }
}

pub fn run_all() -> Vec<Check> {
    let net = benchmark();
    vec![
        gradient_vs_fd(&net),
        bracket_vs_fd(&net),
        bracket_antisymmetry(&net),
        dual_formulas(&net),
        drift_partition(&net),
        bridge_sums(),
        wasserstein_vs_assignment(),
        divergence_bounds(),
        controller_hand_values(),
        determinism(&net),
    ]
}
