//! Normal linear response: the quadratic form `Q(f) = (L_s f, L f)_ρ`, its
//! spectral certificate on zero-mean functions, the sector condition
//! `(f, L² f)_ρ > 0`, the eigenvalue wedge for normal generators, and the
//! linear-response susceptibility `χ_GB(t)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{expm, min_symmetric_eigenvalue, nonzero_generator_eigenvalues};
use crate::markov::{
    backward_generator, check_dim, rho_inner, stationary_distribution, symmetric_part,
    time_reversed_generator, Distribution, Observable, RateModel,
};

/// `Q(f) = (L_s f, L f)_ρ`.
pub fn q_form(f: &Observable, model: &RateModel) -> Result<f64> {
    let rho = stationary_distribution(model)?;
    let lsf = symmetric_part(model, &rho)?.apply(f)?;
    let lf = backward_generator(model).apply(f)?;
    rho_inner(&lsf, &lf, &rho)
}

/// `(f, L_s L f)_ρ`, the same form evaluated through the composed operator.
pub fn q_form_composed(f: &Observable, model: &RateModel) -> Result<f64> {
    let rho = stationary_distribution(model)?;
    check_dim(model.n(), f.len())?;
    let ls = symmetric_part(model, &rho)?.matrix;
    let composed = ls * model.backward_matrix();
    let g = Observable::from_vector(composed * f.values());
    rho_inner(f, &g, &rho)
}

/// Columns form a basis of the zero-ρ-mean functions, orthonormal in `(·,·)_ρ`.
///
/// Built by ρ-Gram-Schmidt on the deviations `e_x − ρ(x)·1`, `x < n − 1`.
pub fn zero_mean_basis(rho: &Distribution) -> DMatrix<f64> {
    let n = rho.len();
    let w = rho.weights();
    let inner = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter().zip(b.iter()).zip(w.iter()).map(|((p, q), r)| p * q * r).sum()
    };
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    for x in 0..n - 1 {
        let mut v = DVector::from_element(n, -w[x]);
        v[x] += 1.0;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = inner(&v, b);
                v -= b * c;
            }
        }
        let norm = inner(&v, &v).sqrt();
        basis.push(v / norm);
    }
    DMatrix::from_columns(&basis)
}

/// Minimum of `(f, A f)_ρ` over zero-mean f with `(f, f)_ρ = 1`.
fn min_on_zero_mean(a: &DMatrix<f64>, rho: &Distribution, basis: &DMatrix<f64>) -> Result<f64> {
    let d = DMatrix::from_diagonal(rho.weights());
    let m = basis.transpose() * d * a * basis;
    min_symmetric_eigenvalue(&m)
}

#[derive(Debug, Clone, Serialize)]
pub struct SectorReport {
    /// Minimum of `Q(f)` over zero-mean, ρ-normalized f.
    pub min_q: f64,
    /// Minimum of `(f, L² f)_ρ` over the same set.
    pub min_sec: f64,
    pub hypothesis_holds: bool,
    pub sector_sec_holds: bool,
    /// Whether `L` commutes with its ρ-adjoint.
    pub normal: bool,
    /// Only for normal `L`: every nonzero eigenvalue `−a + ib` has `|b| < a`.
    pub wedge_holds: Option<bool>,
    /// `min_q` lies within the decision tolerance of zero.
    pub boundary: bool,
    /// Decision tolerance in units of rate².
    pub tolerance: f64,
}

pub fn sector_certificate(model: &RateModel) -> Result<SectorReport> {
    sector_certificate_with(model, &Tolerances::default())
}

pub fn sector_certificate_with(model: &RateModel, tol: &Tolerances) -> Result<SectorReport> {
    let rho = stationary_distribution(model)?;
    let n = model.n();
    let scale = model.max_escape_rate();
    let decision = tol.structural * scale * scale;
    let l = model.backward_matrix();
    let ls = symmetric_part(model, &rho)?.matrix;
    let basis = zero_mean_basis(&rho);

    let min_q = min_on_zero_mean(&(&ls * &l), &rho, &basis)?;
    let min_sec = min_on_zero_mean(&(&l * &l), &rho, &basis)?;
    let sector_sec_holds = min_sec > decision;
    // (L_s f, Lf) = ½|Lf|² + ½(f, L²f), so the sector condition implies the hypothesis.
    let hypothesis_holds = min_q > decision || sector_sec_holds;

    let adjoint = time_reversed_generator(model, &rho)?.matrix;
    let commutator = &l * &adjoint - &adjoint * &l;
    let normal = commutator.amax() <= tol.normality * scale * scale;
    let wedge_holds = if normal {
        let ev = nonzero_generator_eigenvalues(&l)?;
        let margin = tol.identity * scale;
        Some(ev.iter().all(|lam| lam.im.abs() < -lam.re - margin))
    } else {
        None
    };
    debug_assert_eq!(basis.ncols(), n - 1);
    Ok(SectorReport {
        min_q,
        min_sec,
        hypothesis_holds,
        sector_sec_holds,
        normal,
        wedge_holds,
        boundary: min_q.abs() <= decision,
        tolerance: decision,
    })
}

/// Sampled response function `t ↦ χ_GB(t)`.
#[derive(Debug, Clone, Serialize)]
pub struct Susceptibility {
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `χ_GB(t) = −½ Σ_x ρ(x) [B(x) (L e^{tL} G)(x) + (LB)(x) (e^{tL} G)(x)]`.
pub fn susceptibility(
    g: &Observable,
    b: &Observable,
    model: &RateModel,
    t_grid: &[f64],
) -> Result<Susceptibility> {
    let rho = stationary_distribution(model)?;
    check_dim(model.n(), g.len())?;
    check_dim(model.n(), b.len())?;
    let l = model.backward_matrix();
    let lb = Observable::from_vector(&l * b.values());
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "susceptibility time {t} must be finite and non-negative"
            )));
        }
        let evolved = Observable::from_vector(expm(&(&l * t))? * g.values());
        let l_evolved = Observable::from_vector(&l * evolved.values());
        let chi = -0.5 * (rho_inner(b, &l_evolved, &rho)? + rho_inner(&lb, &evolved, &rho)?);
        values.push(chi);
    }
    Ok(Susceptibility {
        g: g.as_slice().to_vec(),
        b: b.as_slice().to_vec(),
        times: t_grid.to_vec(),
        values,
    })
}

/// `∫_0^t χ_GB(τ) dτ`, with `∫_0^t e^{τL} dτ` read off the block exponential
/// `exp [[L, I], [0, 0]] t`.
pub fn integrated_susceptibility(g: &Observable, b: &Observable, model: &RateModel, t: f64) -> Result<f64> {
    let rho = stationary_distribution(model)?;
    let n = model.n();
    check_dim(n, g.len())?;
    check_dim(n, b.len())?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("time {t} must be finite and non-negative")));
    }
    let l = model.backward_matrix();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(&l * t));
    block.view_mut((0, n), (n, n)).fill_diagonal(t);
    let e = expm(&block)?;
    let propagator = e.view((0, 0), (n, n)).into_owned();
    let integral = e.view((0, n), (n, n)).into_owned();
    let evolved_change = Observable::from_vector(&propagator * g.values() - g.values());
    let integrated = Observable::from_vector(&integral * g.values());
    let lb = Observable::from_vector(&l * b.values());
    Ok(-0.5 * (rho_inner(b, &evolved_change, &rho)? + rho_inner(&lb, &integrated, &rho)?))
}

/// `[⟨G(x_t)⟩^ε − ⟨G⟩_ρ]/ε` for the step perturbation `k(x,y) e^{ε[B(y) − B(x)]/2}`
/// switched on at time 0, starting from ρ.
pub fn step_response(g: &Observable, b: &Observable, model: &RateModel, eps: f64, t: f64) -> Result<f64> {
    let rho = stationary_distribution(model)?;
    let n = model.n();
    check_dim(n, g.len())?;
    check_dim(n, b.len())?;
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("amplitude must be finite and non-zero, got {eps}")));
    }
    let bv = b.as_slice();
    let mut rates = model.rates().clone();
    for x in 0..n {
        for y in 0..n {
            rates[(x, y)] *= (eps * (bv[y] - bv[x]) / 2.0).exp();
        }
    }
    let perturbed = RateModel::new(rates)?;
    let mu_t = expm(&(perturbed.forward_matrix() * t))? * rho.weights();
    Ok((mu_t.dot(g.values()) - rho.weights().dot(g.values())) / eps)
}

/// `dχ_ff/dt` at `t = 0`, i.e. `−½[(f, L² f)_ρ + (Lf, Lf)_ρ]`.
pub fn initial_response_slope(f: &Observable, model: &RateModel) -> Result<f64> {
    let rho = stationary_distribution(model)?;
    check_dim(model.n(), f.len())?;
    let l = model.backward_matrix();
    let lf = Observable::from_vector(&l * f.values());
    let llf = Observable::from_vector(&l * lf.values());
    Ok(-0.5 * (rho_inner(f, &llf, &rho)? + rho_inner(&lf, &lf, &rho)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalResponse {
    /// Every sampled f has a strictly decreasing `χ_ff` at `t = 0`.
    pub holds: bool,
    /// The least-negative normalized slope is within tolerance of zero.
    pub boundary: bool,
    /// Largest sampled `dχ_ff/dt(0)` over ρ-normalized zero-mean f.
    pub max_slope: f64,
    pub samples: usize,
}

/// Normal-response test on sampled observables (centered and ρ-normalized first).
pub fn normal_response_check(model: &RateModel, f_samples: &[Observable]) -> Result<NormalResponse> {
    let rho = stationary_distribution(model)?;
    let scale = model.max_escape_rate();
    let decision = Tolerances::default().structural * scale * scale;
    let l = model.backward_matrix();
    let l2 = &l * &l;
    let mut max_slope = f64::NEG_INFINITY;
    let mut used = 0;
    for f in f_samples {
        check_dim(model.n(), f.len())?;
        let c = f.centered(&rho);
        let norm2 = rho_inner(&c, &c, &rho)?;
        if norm2 <= (1e-12 * f.values().amax()).powi(2) {
            continue;
        }
        let c = c.scale(1.0 / norm2.sqrt());
        let lf = Observable::from_vector(&l * c.values());
        let llf = Observable::from_vector(&l2 * c.values());
        let slope = -0.5 * (rho_inner(&c, &llf, &rho)? + rho_inner(&lf, &lf, &rho)?);
        max_slope = max_slope.max(slope);
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidParameter(
            "no non-constant observables among the samples".into(),
        ));
    }
    Ok(NormalResponse {
        holds: max_slope < -decision,
        boundary: max_slope.abs() <= decision,
        max_slope,
        samples: used,
    })
}

/// Deterministic dense sample of zero-mean directions: the nodes of a
/// `resolution`-per-axis grid on the surface of the cube `[−1, 1]^{n−1}`,
/// expressed in the ρ-orthonormal zero-mean basis.
pub fn dense_zero_mean_samples(rho: &Distribution, resolution: usize) -> Vec<Observable> {
    let basis = zero_mean_basis(rho);
    let dim = basis.ncols();
    let r = resolution.max(1);
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        if idx.iter().any(|&i| i == 0 || i == r) {
            let coords = DVector::from_iterator(dim, idx.iter().map(|&i| -1.0 + 2.0 * i as f64 / r as f64));
            out.push(Observable::from_vector(&basis * coords));
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] <= r {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(rates: &[f64]) -> RateModel {
        let n = rates.len();
        let triples: Vec<_> = (0..n).map(|x| (x, (x + 1) % n, rates[x])).collect();
        RateModel::from_triples(n, &triples).unwrap()
    }

    #[test]
    fn constants_have_zero_q() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        assert!(q_form(&Observable::constant(4, 3.0), &m).unwrap().abs() < 1e-12);
    }

    #[test]
    fn q_on_homogeneous_ring_by_hand() {
        // p = 1, N = 4, f = (1, 0, −1, 0): g(x) = f(x+1) − f(x) = (−1, −1, 1, 1),
        // Σ g(x)[g(x) − g(x−1)] = ½ Σ [g(x) − g(x−1)]² = ½ (4 + 0 + 4 + 0) = 4,
        // and Q = (C²/2) Σ (1/ρ) g(x)[g(x) − g(x−1)] with C = ρ = 1/4 gives (1/32) · 4 · 4 = 1/2.
        let m = ring(&[1.0; 4]);
        let f = Observable::new(vec![1.0, 0.0, -1.0, 0.0]);
        let q = q_form(&f, &m).unwrap();
        assert!((q - 0.5).abs() < 1e-14, "{q}");
        assert!((q - q_form_composed(&f, &m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn basis_is_rho_orthonormal_and_zero_mean() {
        let rho = Distribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = zero_mean_basis(&rho);
        let d = DMatrix::from_diagonal(rho.weights());
        let gram = b.transpose() * &d * &b;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-14);
        let means = b.transpose() * rho.weights();
        assert!(means.amax() < 1e-15);
    }

    #[test]
    fn counterexample_fails_certificate() {
        let r = sector_certificate(&ring(&[30.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(r.min_q < 0.0);
        assert!(!r.hypothesis_holds);
        assert!(!r.sector_sec_holds);
    }

    #[test]
    fn homogeneous_ring_certificates() {
        let r = sector_certificate(&ring(&[1.0; 3])).unwrap();
        assert!(r.hypothesis_holds && r.sector_sec_holds);
        assert!(r.normal);
        assert_eq!(r.wedge_holds, Some(true));
        // N = 6: eigenvalues leave the wedge, Q stays positive
        let r = sector_certificate(&ring(&[1.0; 6])).unwrap();
        assert!(r.hypothesis_holds);
        assert!(!r.sector_sec_holds);
        assert_eq!(r.wedge_holds, Some(false));
    }

    #[test]
    fn susceptibility_at_zero() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        let rho = stationary_distribution(&m).unwrap();
        let f = Observable::new(vec![0.3, -1.0, 0.7, 0.1]);
        let chi = susceptibility(&f, &f, &m, &[0.0]).unwrap().values[0];
        let lsf = symmetric_part(&m, &rho).unwrap().apply(&f).unwrap();
        assert!((chi + rho_inner(&f, &lsf, &rho).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dense_samples_count() {
        let rho = Distribution::uniform(3);
        let s = dense_zero_mean_samples(&rho, 4);
        // surface nodes of a 5×5 grid: 25 − 9
        assert_eq!(s.len(), 16);
    }
}
