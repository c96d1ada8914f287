#![allow(dead_code)]

use proptest::prelude::*;
use stiffsplit::network::{ChannelClass, ReactionSpec};
use stiffsplit::{parse_network, Network};

pub const BENCHMARK: &str = include_str!("../../../../benchmarks/k5_0.1.json");

pub fn benchmark() -> Network {
    parse_network(BENCHMARK).unwrap()
}

pub fn network(json: &str) -> Network {
    parse_network(json).unwrap()
}

/// Birth `0 -> S` at `k1` and decay `S -> 0` at `k2`.
pub fn birth_death(k1: f64, k2: f64, birth: &str, death: &str) -> Network {
    network(&format!(
        r#"{{"species": ["S"], "reactions": [
            {{"products": {{"S": 1}}, "rate": {k1}, "class": "{birth}"}},
            {{"reactants": {{"S": 1}}, "rate": {k2}, "class": "{death}"}}
        ]}}"#
    ))
}

fn reaction(ns: usize) -> impl Strategy<Value = ReactionSpec<f64>> {
    (
        prop::collection::vec(0u32..=2, ns),
        prop::collection::vec(0u32..=2, ns),
        -1.0f64..2.0,
        any::<bool>(),
    )
        .prop_map(|(mut reactants, products, log_rate, fast)| {
            while reactants.iter().sum::<u32>() > 2 {
                let i = reactants.iter().position(|&m| m > 0).unwrap();
                reactants[i] -= 1;
            }
            ReactionSpec {
                name: None,
                reactants,
                products,
                rate: 10f64.powf(log_rate),
                class: if fast { ChannelClass::Fast } else { ChannelClass::Slow },
            }
        })
}

/// Mass-action networks of 1 to 3 species and 2 to 4 channels.
pub fn any_network() -> impl Strategy<Value = Network> {
    (1usize..=3).prop_flat_map(|ns| {
        prop::collection::vec(reaction(ns), 2..=4).prop_map(move |rs| {
            let species = (0..ns).map(|i| format!("S{i}")).collect();
            Network::new(species, rs).unwrap()
        })
    })
}

/// A network with a state whose entries lie in `[lo, hi]`.
pub fn network_and_state(lo: f64, hi: f64) -> impl Strategy<Value = (Network, Vec<f64>)> {
    any_network().prop_flat_map(move |net| {
        let ns = net.n_species();
        (Just(net), prop::collection::vec(lo..hi, ns))
    })
}

/// Central-difference Jacobian, row-major `[a * n + b] = d f_a / d s_b`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, s: &[f64]) -> Vec<f64> {
    let n = s.len();
    let m = f(s).len();
    let mut jac = vec![0.0; m * n];
    for b in 0..n {
        let h = 1e-6 * s[b].abs().max(1.0);
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

pub fn matvec(jac: &[f64], x: &[f64]) -> Vec<f64> {
    jac.chunks(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}
