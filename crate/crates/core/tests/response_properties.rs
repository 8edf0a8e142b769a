mod common;

use common::{corpus, random_model, random_observable, random_reversible};
use dvlab::markov::{rho_inner, stationary_distribution};
use dvlab::model_io::{make_asymmetric_ring, make_counterexample_ring};
use dvlab::response::{
    dense_zero_mean_samples, integrated_susceptibility, normal_response_check, q_form,
    q_form_composed, sector_certificate, step_response, susceptibility, zero_mean_basis,
};
use dvlab::{Observable, RateModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn both_evaluations_of_q_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..30 {
        let n = rng.random_range(2..8);
        let m = random_model(&mut rng, n);
        let f = random_observable(&mut rng, n);
        let a = q_form(&f, &m).unwrap();
        let b = q_form_composed(&f, &m).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn reversible_models_have_positive_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let n = rng.random_range(2..8);
        let (m, _) = random_reversible(&mut rng, n);
        let rho = stationary_distribution(&m).unwrap();
        let f = random_observable(&mut rng, n);
        let lf = Observable::from_vector(m.backward_matrix() * f.values());
        let q = q_form(&f, &m).unwrap();
        assert!((q - rho_inner(&lf, &lf, &rho).unwrap()).abs() < 1e-12 * q.max(1.0));
        let report = sector_certificate(&m).unwrap();
        assert!(report.hypothesis_holds && report.sector_sec_holds);
        assert!(report.normal);
        assert_eq!(report.wedge_holds, Some(true));
    }
}

#[test]
fn min_q_scales_quadratically_with_time_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..10 {
        let n = rng.random_range(2..7);
        let m = random_model(&mut rng, n);
        let s = rng.random_range(0.1..10.0);
        let a = sector_certificate(&m).unwrap();
        let b = sector_certificate(&m.scaled(s).unwrap()).unwrap();
        assert!((b.min_q - s * s * a.min_q).abs() < 1e-9 * (s * s * a.min_q).abs().max(1e-12));
        assert_eq!(a.hypothesis_holds, b.hypothesis_holds);
    }
}

#[test]
fn small_departures_from_detailed_balance_keep_the_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let (m, _) = random_reversible(&mut rng, n);
        let k = DMatrix::from_fn(n, n, |x, y| m.rate(x, y) * (1.0 + rng.random_range(-1e-2..1e-2)));
        let perturbed = RateModel::new(k).unwrap();
        assert!(sector_certificate(&perturbed).unwrap().hypothesis_holds);
    }
}

#[test]
fn certificate_agrees_with_dense_sampling_on_corpus() {
    for (spec, m) in corpus() {
        let rho = stationary_distribution(&m).unwrap();
        let samples = dense_zero_mean_samples(&rho, 8);
        let report = sector_certificate(&m).unwrap();
        let check = normal_response_check(&m, &samples).unwrap();
        assert_eq!(check.holds, report.hypothesis_holds, "{}", spec.name);
        // the sampled maximum of dχ/dt(0) cannot beat the spectral bound −min_q
        assert!(check.max_slope <= -report.min_q + 1e-10);
    }
    let ce = make_counterexample_ring();
    assert!(!sector_certificate(&ce).unwrap().hypothesis_holds);
}

#[test]
fn degenerate_model_is_flagged_at_the_boundary() {
    // bisect the fast rate of a four-state ring to the point where min_q crosses zero
    let q_min = |fast: f64| sector_certificate(&make_asymmetric_ring(&[fast, 1.0, 1.0, 1.0]).unwrap()).unwrap().min_q;
    let (mut lo, mut hi) = (1.0, 30.0);
    assert!(q_min(lo) > 0.0 && q_min(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_min(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let m = make_asymmetric_ring(&[lo, 1.0, 1.0, 1.0]).unwrap();
    let report = sector_certificate(&m).unwrap();
    assert!(report.boundary, "min_q {}", report.min_q);
    // the minimizing direction sits at zero slope; strict convention reports failure
    let rho = stationary_distribution(&m).unwrap();
    let basis = zero_mean_basis(&rho);
    let d = DMatrix::from_diagonal(rho.weights());
    let ls = dvlab::markov::symmetric_part(&m, &rho).unwrap().matrix;
    let a = basis.transpose() * d * ls * m.backward_matrix() * &basis;
    let sym = (&a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let i = eig.eigenvalues.imin();
    let f = Observable::from_vector(&basis * eig.eigenvectors.column(i));
    let check = normal_response_check(&m, &[f]).unwrap();
    assert!(!check.holds && check.boundary);
}

#[test]
fn susceptibility_decays_and_starts_at_minus_dirichlet() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for (_, m) in corpus() {
        let rho = stationary_distribution(&m).unwrap();
        let f = random_observable(&mut rng, m.n());
        let ls = dvlab::markov::symmetric_part(&m, &rho).unwrap();
        let expected = -rho_inner(&f, &ls.apply(&f).unwrap(), &rho).unwrap();
        let tau = dvlab::evolution::relaxation_time(&m).unwrap();
        let chi = susceptibility(&f, &f, &m, &[0.0, 60.0 * tau]).unwrap();
        assert!((chi.values[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        assert!(chi.values.iter().all(|v| v.is_finite()));
        assert!(chi.values[1].abs() < 1e-12 * chi.values[0].abs().max(1.0));
    }
}

#[test]
fn step_perturbation_matches_integrated_susceptibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for (_, m) in corpus() {
        let tau = dvlab::evolution::relaxation_time(&m).unwrap();
        for _ in 0..5 {
            let g = random_observable(&mut rng, m.n());
            let b = random_observable(&mut rng, m.n());
            let t = rng.random_range(0.1..3.0) * tau;
            let exact = integrated_susceptibility(&g, &b, &m, t).unwrap();
            let eps = 1e-5;
            let r1 = step_response(&g, &b, &m, eps, t).unwrap();
            let r2 = step_response(&g, &b, &m, eps / 2.0, t).unwrap();
            // first-order error halves with ε
            let extrapolated = 2.0 * r2 - r1;
            let scale = exact.abs().max(1e-6);
            assert!((r1 - exact).abs() < 1e-3 * scale, "{r1} vs {exact}");
            assert!((extrapolated - exact).abs() <= (r1 - exact).abs() + 1e-9);
        }
    }
}
