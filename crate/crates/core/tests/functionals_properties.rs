mod common;

use common::{random_model, random_reversible, random_simplex};
use dvlab::functionals::{
    dirichlet_form, dv_objective, dv_rate_excess, dv_rate_sup, entropy_production,
    entropy_production_flux_force, free_energy, free_energy_minimum, functional_report,
    gibbs_distribution, relative_entropy, SupMethod,
};
use dvlab::markov::stationary_distribution;
use dvlab::{Distribution, Error, Observable, RateModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rate_is_nonnegative_and_vanishes_only_at_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..40 {
        let n = rng.random_range(2..9);
        let m = random_model(&mut rng, n);
        let rho = stationary_distribution(&m).unwrap();
        assert!(dv_rate_excess(&rho, &m).unwrap().abs() < 1e-10);
        let mu = random_simplex(&mut rng, n);
        let i = dv_rate_excess(&mu, &m).unwrap();
        assert!(i >= -1e-12);
        if mu.variational_distance(&rho) > 1e-3 {
            assert!(i > 1e-8);
        }
    }
}

#[test]
fn report_components_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let m = random_model(&mut rng, n);
        let mu = random_simplex(&mut rng, n);
        let r = functional_report(&mu, &m, None).unwrap();
        assert!((r.xi - r.xi_tilted - r.dv_rate).abs() < 1e-10);
        assert!(r.free_energy.is_none());
        assert!(r.relative_entropy >= 0.0);
    }
}

#[test]
fn sup_route_agrees_with_excess_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..8 {
        let n = rng.random_range(2..5);
        let m = random_model(&mut rng, n);
        let mu = random_simplex(&mut rng, n);
        let excess = dv_rate_excess(&mu, &m).unwrap();
        let sup = dv_rate_sup(&mu, &m, SupMethod::default()).unwrap();
        assert!((excess - sup).abs() < 1e-6, "excess {excess} sup {sup}");
        assert!(sup <= excess + 1e-6);
        for _ in 0..20 {
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..5.0)).collect();
            assert!(dv_objective(&mu, &g, &m).unwrap() <= sup + 1e-9);
        }
    }
}

#[test]
fn two_state_grid_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..10 {
        let a = rng.random_range(0.1..4.0);
        let b = rng.random_range(0.1..4.0);
        let m = RateModel::from_triples(2, &[(0, 1, a), (1, 0, b)]).unwrap();
        let mu = random_simplex(&mut rng, 2);
        let grid = dv_rate_sup(&mu, &m, SupMethod::Grid { points: 2001, half_width: 20.0 }).unwrap();
        // two states: I(μ) = (√(μ₀a) − √(μ₁b))²
        let p = mu.as_slice();
        let closed = ((p[0] * a).sqrt() - (p[1] * b).sqrt()).powi(2);
        assert!((grid - closed).abs() < 1e-9);
        assert!((dv_rate_excess(&mu, &m).unwrap() - closed).abs() < 1e-12);
    }
}

#[test]
fn optimal_test_function_is_square_root_of_mu_over_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let (m, _) = random_reversible(&mut rng, n);
        let rho = stationary_distribution(&m).unwrap();
        let mu = random_simplex(&mut rng, n);
        let ratio: Vec<f64> = mu.as_slice().iter().zip(rho.as_slice()).map(|(a, b)| a / b).collect();
        let direct: Vec<f64> = ratio.iter().map(|r| r.sqrt()).collect();
        let inverse: Vec<f64> = ratio.iter().map(|r| 1.0 / r.sqrt()).collect();
        let i = dv_rate_excess(&mu, &m).unwrap();
        assert!((dv_objective(&mu, &direct, &m).unwrap() - i).abs() < 1e-10);
        if mu.variational_distance(&rho) > 1e-2 {
            assert!(dv_objective(&mu, &inverse, &m).unwrap() < i - 1e-6);
        }
    }
}

#[test]
fn rate_is_convex_along_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..40 {
        let n = rng.random_range(2..7);
        let m = random_model(&mut rng, n);
        let a = random_simplex(&mut rng, n);
        let b = random_simplex(&mut rng, n);
        let lam = rng.random_range(0.05..0.95);
        let mid = a.mix(&b, lam);
        let lhs = dv_rate_excess(&mid, &m).unwrap();
        let rhs = lam * dv_rate_excess(&a, &m).unwrap() + (1.0 - lam) * dv_rate_excess(&b, &m).unwrap();
        assert!(lhs <= rhs + 1e-10);
    }
}

#[test]
fn dirichlet_form_matches_rate_on_reversible_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..20 {
        let n = rng.random_range(2..11);
        let (m, _) = random_reversible(&mut rng, n);
        let mu = random_simplex(&mut rng, n);
        let d = dirichlet_form(&mu, &m).unwrap();
        assert!(d >= 0.0);
        assert!((d - dv_rate_excess(&mu, &m).unwrap()).abs() < 1e-8);
    }
    let ring = RateModel::from_triples(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
    assert!(matches!(
        dirichlet_form(&Distribution::uniform(3), &ring),
        Err(Error::NotDetailedBalance { .. })
    ));
}

#[test]
fn entropy_production_routes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..30 {
        let n = rng.random_range(2..6);
        // reversible support, non-reversible rates
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    k[(x, y)] = rng.random_range(0.1..3.0);
                }
            }
        }
        let m = RateModel::new(k).unwrap();
        let mu = random_simplex(&mut rng, n);
        let w = mu.as_slice();
        let mut pairwise = 0.0;
        for x in 0..n {
            for y in x + 1..n {
                let f = w[x] * m.rate(x, y);
                let b = w[y] * m.rate(y, x);
                pairwise += (f - b) * (f.ln() - b.ln());
            }
        }
        let e = entropy_production(&mu, &m).unwrap();
        assert!(e >= 0.0);
        assert!((e - pairwise).abs() < 1e-10);
        assert!((e - entropy_production_flux_force(&mu, &m).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn free_energy_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..20 {
        let n = rng.random_range(2..8);
        let (m, u) = random_reversible(&mut rng, n);
        let gibbs = gibbs_distribution(&u);
        let rho = stationary_distribution(&m).unwrap();
        assert!(gibbs.variational_distance(&rho) < 1e-12);
        let fmin = free_energy_minimum(&u);
        let log_z = u.as_slice().iter().map(|v| (-v).exp()).sum::<f64>().ln();
        assert!((fmin + log_z).abs() < 1e-12);
        assert!((free_energy(&rho, &m, &u).unwrap() - fmin).abs() < 1e-12);
        let mu = random_simplex(&mut rng, n);
        let f = free_energy(&mu, &m, &u).unwrap();
        let direct: f64 = mu.as_slice().iter().zip(u.as_slice()).map(|(p, v)| p * v + p * p.ln()).sum();
        assert!((f - direct).abs() < 1e-12);
        assert!(f >= fmin);
    }
    let bad = RateModel::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    assert!(matches!(
        free_energy(&Distribution::uniform(2), &bad, &Observable::new(vec![0.0, 1.0])),
        Err(Error::NotDetailedBalance { .. })
    ));
}

#[test]
fn relative_entropy_support() {
    let rho = Distribution::new(vec![0.5, 0.5, 0.0]).unwrap();
    let mu = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
    assert!(matches!(relative_entropy(&mu, &rho), Err(Error::SupportViolation { state: 2 })));
    assert_eq!(relative_entropy(&rho, &rho).unwrap(), 0.0);
}
