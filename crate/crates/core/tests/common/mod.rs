#![allow(dead_code)]

use std::path::PathBuf;

use dvlab::model_io::{make_detailed_balance, parse_model_spec, ModelSpec};
use dvlab::{Distribution, Observable, RateModel};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp1};

pub fn corpus() -> Vec<(ModelSpec, RateModel)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let spec = parse_model_spec(&std::fs::read_to_string(p).unwrap()).unwrap();
            let model = spec.to_model().unwrap();
            (spec, model)
        })
        .collect()
}

/// Irreducible model: a directed cycle through all states plus random extra edges.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> RateModel {
    let mut k = DMatrix::zeros(n, n);
    for x in 0..n {
        k[(x, (x + 1) % n)] = rng.random_range(0.2..3.0);
        for y in 0..n {
            if y != x && y != (x + 1) % n && rng.random_bool(0.5) {
                k[(x, y)] = rng.random_range(0.0..2.0);
            }
        }
    }
    RateModel::new(k).unwrap()
}

pub fn random_reversible(rng: &mut ChaCha8Rng, n: usize) -> (RateModel, Observable) {
    let u = Observable::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect());
    let mut s = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in x + 1..n {
            if y == x + 1 || rng.random_bool(0.4) {
                let v = rng.random_range(0.1..3.0);
                s[(x, y)] = v;
                s[(y, x)] = v;
            }
        }
    }
    (make_detailed_balance(&u, &s).unwrap(), u)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    Distribution::normalized(w).unwrap()
}

pub fn random_observable(rng: &mut ChaCha8Rng, n: usize) -> Observable {
    Observable::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
