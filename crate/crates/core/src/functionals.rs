//! Scalar functionals of a distribution: dynamical activity, the occupation-time
//! rate functional (excess-activity and variational routes), entropy production,
//! free energy, relative entropy and the reversible Dirichlet form.

use nalgebra::DVector;
use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::markov::{
    backward_generator, check_dim, detailed_balance_defect, rho_inner, stationary_distribution,
    Distribution, Observable, RateModel,
};
use crate::potential::{solve_potential_with, Potential, SolveOptions};

/// Expected escape rate `ξ(μ) = Σ_x μ(x) Σ_y k(x,y)`.
pub fn dynamical_activity(mu: &Distribution, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    Ok(mu.weights().dot(&model.escape_rates()))
}

/// The symmetrized form `½ Σ_{x,y} [μ(x)k(x,y) + μ(y)k(y,x)]` of the same quantity.
pub fn dynamical_activity_symmetric(mu: &Distribution, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    let w = mu.weights();
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            total += w[x] * model.rate(x, y) + w[y] * model.rate(y, x);
        }
    }
    Ok(0.5 * total)
}

/// `ξ_W(μ)`: expected escape rate under the tilted rates `k_W`.
pub fn tilted_activity(mu: &Distribution, w: &Potential, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    check_dim(model.n(), w.len())?;
    let v = w.values();
    let m = mu.weights();
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                total += m[x] * k * ((v[y] - v[x]) / 2.0).exp();
            }
        }
    }
    Ok(total)
}

/// Rate functional with the ingredients it was computed from.
#[derive(Debug, Clone)]
pub struct RateEvaluation {
    pub rate: f64,
    pub xi: f64,
    pub xi_tilted: f64,
    pub potential: Potential,
}

/// Rate functional as excess activity `ξ(μ) − ξ_{V_μ}(μ)`.
pub fn dv_rate_excess(mu: &Distribution, model: &RateModel) -> Result<f64> {
    dv_rate_excess_with(mu, model, &SolveOptions::default()).map(|e| e.rate)
}

pub fn dv_rate_excess_with(
    mu: &Distribution,
    model: &RateModel,
    opts: &SolveOptions,
) -> Result<RateEvaluation> {
    let potential = solve_potential_with(mu, model, opts)?.potential;
    Ok(excess_at(mu, model, potential))
}

pub(crate) fn excess_at(mu: &Distribution, model: &RateModel, potential: Potential) -> RateEvaluation {
    let v = potential.values();
    let m = mu.weights();
    let n = model.n();
    // Summed term by term with expm1 so that the result keeps relative accuracy
    // near the stationary law, where ξ and ξ_V nearly cancel.
    let mut rate = 0.0;
    let mut xi_tilted = 0.0;
    for x in 0..n {
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                let e = ((v[y] - v[x]) / 2.0).exp_m1();
                rate -= m[x] * k * e;
                xi_tilted += m[x] * k * (1.0 + e);
            }
        }
    }
    let xi = m.dot(&model.escape_rates());
    RateEvaluation {
        rate,
        xi,
        xi_tilted,
        potential,
    }
}

/// Objective of the variational formula,
/// `−Σ_x (μ(x)/g(x)) Σ_y k(x,y) [g(y) − g(x)]` for positive `g`.
pub fn dv_objective(mu: &Distribution, g: &[f64], model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    check_dim(model.n(), g.len())?;
    if let Some(bad) = g.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "test function must be positive, g({bad}) = {}",
            g[bad]
        )));
    }
    let n = model.n();
    let m = mu.weights();
    let mut total = 0.0;
    for x in 0..n {
        let mut inner = 0.0;
        for y in 0..n {
            inner += model.rate(x, y) * (g[y] - g[x]);
        }
        total -= m[x] / g[x] * inner;
    }
    Ok(total)
}

/// How to maximize the variational formula.
#[derive(Debug, Clone, Copy)]
pub enum SupMethod {
    /// Two-state models only: uniform grid for `W(1) ∈ [−half_width, half_width]`,
    /// followed by golden-section refinement around the best node.
    Grid { points: usize, half_width: f64 },
    /// Jacobi-preconditioned gradient ascent over `W` with `W(0) = 0`.
    GradientAscent { max_iter: usize, grad_tol: f64 },
}

impl Default for SupMethod {
    fn default() -> Self {
        SupMethod::GradientAscent {
            max_iter: 500_000,
            grad_tol: 1e-11,
        }
    }
}

/// Rate functional as the supremum over `g = e^{W/2}` of [`dv_objective`].
///
/// Slow; intended as an independent cross-check of [`dv_rate_excess`].
pub fn dv_rate_sup(mu: &Distribution, model: &RateModel, method: SupMethod) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    mu.require_positive(f64::MIN_POSITIVE)?;
    model.require_irreducible()?;
    let n = model.n();
    let objective = |w: &[f64]| -> f64 {
        let g: Vec<f64> = w.iter().map(|v| (v / 2.0).exp()).collect();
        dv_objective(mu, &g, model).unwrap_or(f64::NEG_INFINITY)
    };
    match method {
        SupMethod::Grid { points, half_width } => {
            if n != 2 {
                return Err(Error::InvalidParameter(
                    "grid maximization is only available for two-state models".into(),
                ));
            }
            if points < 3 {
                return Err(Error::InvalidParameter("grid needs at least 3 points".into()));
            }
            let h = 2.0 * half_width / (points - 1) as f64;
            let f = |t: f64| objective(&[0.0, t]);
            let (best, _) = (0..points)
                .map(|i| -half_width + h * i as f64)
                .map(|t| (t, f(t)))
                .fold((0.0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
            // golden section on [best − h, best + h]
            let (mut a, mut b) = (best - h, best + h);
            let phi = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if f(c) > f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            Ok(f(0.5 * (a + b)).max(f(best)))
        }
        SupMethod::GradientAscent { max_iter, grad_tol } => {
            let m = mu.weights();
            let mut w = vec![0.0; n];
            let mut value = objective(&w);
            let mut step = 1.0;
            let mut gnorm = f64::INFINITY;
            for _ in 0..max_iter {
                // ∂/∂W(z) of −Σ μ(x) k(x,y) e^{(W(y)−W(x))/2}, and the Hessian
                // diagonal used as a Jacobi preconditioner
                let mut grad = vec![0.0; n];
                let mut diag = vec![0.0; n];
                for x in 0..n {
                    for y in 0..n {
                        let k = model.rate(x, y);
                        if k > 0.0 {
                            let t = m[x] * k * ((w[y] - w[x]) / 2.0).exp();
                            grad[y] -= 0.5 * t;
                            grad[x] += 0.5 * t;
                            diag[x] += 0.25 * t;
                            diag[y] += 0.25 * t;
                        }
                    }
                }
                grad[0] = 0.0;
                gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if gnorm < grad_tol {
                    return Ok(value);
                }
                let dir: Vec<f64> = grad.iter().zip(&diag).map(|(g, d)| g / d).collect();
                let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                // predicted remaining gain is below the rounding of the objective
                if 0.5 * slope <= 4.0 * f64::EPSILON * value.abs() {
                    return Ok(value);
                }
                loop {
                    let trial: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                    let v = objective(&trial);
                    if v >= value + 1e-4 * step * slope {
                        w = trial;
                        value = v;
                        step = (step * 1.5).min(1.0);
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-300 {
                        return Ok(value);
                    }
                }
            }
            Err(Error::ConvergenceFailure {
                iterations: max_iter,
                residual: gnorm,
            })
        }
    }
}

/// Entropy production `Σ_{x,y} μ(x)k(x,y) log[μ(x)k(x,y) / μ(y)k(y,x)]`.
///
/// Uses `0·log 0 = 0`. A flow `μ(x)k(x,y) > 0` without reverse flow yields
/// `f64::INFINITY`.
pub fn entropy_production(mu: &Distribution, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    let m = mu.weights();
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let fwd = m[x] * model.rate(x, y);
            let bwd = m[y] * model.rate(y, x);
            if fwd > 0.0 {
                if bwd > 0.0 {
                    total += fwd * (fwd / bwd).ln();
                } else {
                    return Ok(f64::INFINITY);
                }
            }
        }
    }
    Ok(total)
}

/// Entropy production as `½ Σ j_μ(x,y) A_μ(x,y)`.
pub fn entropy_production_flux_force(mu: &Distribution, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    let m = mu.weights();
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            let fwd = m[x] * model.rate(x, y);
            let bwd = m[y] * model.rate(y, x);
            if x == y || (fwd == 0.0 && bwd == 0.0) {
                continue;
            }
            if fwd == 0.0 || bwd == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += 0.5 * (fwd - bwd) * (fwd / bwd).ln();
        }
    }
    Ok(total)
}

fn check_potential_u(model: &RateModel, u: &Observable, tol: f64) -> Result<()> {
    check_dim(model.n(), u.len())?;
    let n = model.n();
    let v = u.values();
    let shift = v.min();
    for x in 0..n {
        for y in (x + 1)..n {
            let a = model.rate(x, y) * (-(v[x] - shift)).exp();
            let b = model.rate(y, x) * (-(v[y] - shift)).exp();
            let defect = (a - b).abs() / a.max(b).max(f64::MIN_POSITIVE);
            if defect > tol {
                return Err(Error::NotDetailedBalance { x, y, defect });
            }
        }
    }
    Ok(())
}

/// Validates that `k(x,y) e^{−U(x)} = k(y,x) e^{−U(y)}` to relative `tol`.
pub fn check_detailed_balance_with(model: &RateModel, u: &Observable, tol: f64) -> Result<()> {
    check_potential_u(model, u, tol)
}

/// Free energy `Σ μU + Σ μ log μ` of a reversible model with energy `U`.
///
/// Evaluated as `F(ρ_U) + S(μ | ρ_U)` with `ρ_U ∝ e^{−U}`, which is the same
/// quantity but keeps monotone rounding near the minimum.
pub fn free_energy(mu: &Distribution, model: &RateModel, u: &Observable) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    check_potential_u(model, u, Tolerances::default().identity)?;
    let gibbs = gibbs_distribution(u);
    Ok(free_energy_minimum(u) + relative_entropy(mu, &gibbs)?)
}

/// `ρ_U(x) ∝ e^{−U(x)}`.
pub fn gibbs_distribution(u: &Observable) -> Distribution {
    let lo = u.values().min();
    let w: Vec<f64> = u.as_slice().iter().map(|e| (-(e - lo)).exp()).collect();
    let total: f64 = w.iter().sum();
    Distribution::from_vector_unchecked(DVector::from_iterator(w.len(), w.iter().map(|v| v / total)))
}

/// Minimum of the free energy, `−log Σ_x e^{−U(x)}`.
pub fn free_energy_minimum(u: &Observable) -> f64 {
    let lo = u.values().min();
    let s: f64 = u.as_slice().iter().map(|e| (-(e - lo)).exp()).sum();
    lo - s.ln()
}

/// Relative entropy `Σ μ log(μ/ρ)`.
///
/// Summed as `Σ ρ [(1+u) log(1+u) − u]` with `u = μ/ρ − 1`; the two agree for
/// normalized μ, ρ and the second keeps relative accuracy near ρ.
pub fn relative_entropy(mu: &Distribution, rho: &Distribution) -> Result<f64> {
    check_dim(rho.len(), mu.len())?;
    let mut total = 0.0;
    for (state, (&p, &r)) in mu.as_slice().iter().zip(rho.as_slice()).enumerate() {
        if r <= 0.0 {
            if p > 0.0 {
                return Err(Error::SupportViolation { state });
            }
            continue;
        }
        let u = p / r - 1.0;
        let phi = if p > 0.0 { p / r * u.ln_1p() - u } else { 1.0 };
        total += r * phi;
    }
    Ok(total.max(0.0))
}

/// Reversible models only: `−(f, L f)_ρ` with `f = √(μ/ρ)`.
pub fn dirichlet_form(mu: &Distribution, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    let rho = stationary_distribution(model)?;
    if let Some((x, y, defect)) = detailed_balance_defect(model, &rho) {
        if defect > Tolerances::default().identity {
            return Err(Error::NotDetailedBalance { x, y, defect });
        }
    }
    let f = Observable::from_vector(DVector::from_fn(model.n(), |x, _| {
        (mu.weights()[x] / rho.weights()[x]).sqrt()
    }));
    let lf = backward_generator(model).apply(&f)?;
    Ok(-rho_inner(&f, &lf, &rho)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalReport {
    pub xi: f64,
    pub xi_tilted: f64,
    pub dv_rate: f64,
    /// `+∞` when a one-way transition carries flow.
    pub entropy_production: f64,
    /// Present only when an energy function was supplied.
    pub free_energy: Option<f64>,
    pub relative_entropy: f64,
}

pub fn functional_report(
    mu: &Distribution,
    model: &RateModel,
    u: Option<&Observable>,
) -> Result<FunctionalReport> {
    let rho = stationary_distribution(model)?;
    let eval = dv_rate_excess_with(mu, model, &SolveOptions::default())?;
    Ok(FunctionalReport {
        xi: eval.xi,
        xi_tilted: eval.xi_tilted,
        dv_rate: eval.rate,
        entropy_production: entropy_production(mu, model)?,
        free_energy: u.map(|u| free_energy(mu, model, u)).transpose()?,
        relative_entropy: relative_entropy(mu, &rho)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn ring(rates: &[f64]) -> RateModel {
        let n = rates.len();
        let triples: Vec<_> = (0..n).map(|x| (x, (x + 1) % n, rates[x])).collect();
        RateModel::from_triples(n, &triples).unwrap()
    }

    fn two_state(a: f64, b: f64) -> RateModel {
        RateModel::from_triples(2, &[(0, 1, a), (1, 0, b)]).unwrap()
    }

    #[test]
    fn activity_forms_agree() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        let mu = Distribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = dynamical_activity(&mu, &m).unwrap();
        let b = dynamical_activity_symmetric(&mu, &m).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn activity_of_two_state_is_mean_escape_rate() {
        let mu = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(dynamical_activity(&mu, &two_state(2.0, 3.0)).unwrap(), 2.5);
    }

    #[test]
    fn activity_of_counterexample_at_rho() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        let rho = stationary_distribution(&m).unwrap();
        let xi = dynamical_activity(&rho, &m).unwrap();
        assert!((xi - 4.0 * 30.0 / 91.0).abs() < 1e-14);
    }

    #[test]
    fn small_ring_closed_form_value() {
        let m = ring(&[1.0, 1.0, 1.0]);
        let mu = Distribution::new(vec![0.5, 0.25, 0.25]).unwrap();
        let expected = 1.0 - 3.0 * (1.0f64 / 32.0).cbrt();
        let i = dv_rate_excess(&mu, &m).unwrap();
        assert!((i - expected).abs() < 1e-10, "{i} vs {expected}");
        assert!((i - 0.0550592).abs() < 1e-7);
    }

    #[test]
    fn rate_vanishes_at_rho() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        let rho = stationary_distribution(&m).unwrap();
        assert!(dv_rate_excess(&rho, &m).unwrap().abs() < 1e-10);
        let sup = dv_rate_sup(&rho, &m, SupMethod::default()).unwrap();
        assert!(sup.abs() < 1e-10);
    }

    #[test]
    fn entropy_production_of_one_way_ring_is_infinite() {
        let m = ring(&[1.0, 2.0, 3.0]);
        let mu = Distribution::uniform(3);
        assert_eq!(entropy_production(&mu, &m).unwrap(), f64::INFINITY);
        assert_eq!(entropy_production_flux_force(&mu, &m).unwrap(), f64::INFINITY);
    }

    #[test]
    fn entropy_production_zero_at_reversible_equilibrium() {
        let m = two_state(2.0, 1.0);
        let rho = stationary_distribution(&m).unwrap();
        assert!(entropy_production(&rho, &m).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_weights_use_zero_log_zero() {
        let m = two_state(2.0, 1.0);
        // no flow out of state 1 when μ(1) = 0, but flow 0 -> 1 has no reverse
        let mu = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(entropy_production(&mu, &m).unwrap(), f64::INFINITY);
        let rho = Distribution::new(vec![0.5, 0.5]).unwrap();
        let s = relative_entropy(&mu, &rho).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-15);
        assert_eq!(
            relative_entropy(&rho, &mu).unwrap_err(),
            Error::SupportViolation { state: 1 }
        );
    }

    #[test]
    fn free_energy_identities() {
        let u = Observable::new(vec![0.3, -1.0, 2.0]);
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 1.0, 0.0, 2.0, 0.5, 2.0, 0.0]);
        let m = RateModel::new(DMatrix::from_fn(3, 3, |x, y| {
            s[(x, y)] * ((u.as_slice()[x] - u.as_slice()[y]) / 2.0f64).exp()
        }))
        .unwrap();
        let rho = stationary_distribution(&m).unwrap();
        let f = free_energy(&rho, &m, &u).unwrap();
        assert!((f - free_energy_minimum(&u)).abs() < 1e-12);
        let flat = Observable::constant(3, 0.7);
        let sym = RateModel::new(s.clone()).unwrap();
        let f = free_energy(&Distribution::uniform(3), &sym, &flat).unwrap();
        assert!((f - (0.7 - 3f64.ln())).abs() < 1e-15);
        assert!(matches!(
            free_energy(&rho, &ring(&[1.0, 1.0, 1.0]), &flat),
            Err(Error::NotDetailedBalance { .. })
        ));
    }

    #[test]
    fn dirichlet_form_two_state_by_hand() {
        let m = two_state(1.0, 1.0);
        let mu = Distribution::new(vec![0.9, 0.1]).unwrap();
        // f = (√1.8, √0.2); −(f, Lf)_ρ = ½·½·(f1 − f0)² + ½·½·(f0 − f1)² = ½ (f0 − f1)²
        let (f0, f1) = (1.8f64.sqrt(), 0.2f64.sqrt());
        let expected = 0.5 * (f0 - f1).powi(2);
        let d = dirichlet_form(&mu, &m).unwrap();
        assert!((d - expected).abs() < 1e-14);
        assert!((d - dv_rate_excess(&mu, &m).unwrap()).abs() < 1e-10);
        assert!(matches!(
            dirichlet_form(&Distribution::uniform(3), &ring(&[1.0, 2.0, 1.0])),
            Err(Error::NotDetailedBalance { .. })
        ));
    }

    #[test]
    fn grid_sup_on_two_state() {
        let m = two_state(0.7, 2.2);
        let mu = Distribution::new(vec![0.35, 0.65]).unwrap();
        let grid = dv_rate_sup(
            &mu,
            &m,
            SupMethod::Grid {
                points: 2001,
                half_width: 20.0,
            },
        )
        .unwrap();
        let excess = dv_rate_excess(&mu, &m).unwrap();
        assert!((grid - excess).abs() < 1e-9, "{grid} vs {excess}");
    }

    #[test]
    fn report_is_consistent() {
        let m = ring(&[30.0, 1.0, 1.0, 1.0]);
        let mu = Distribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = functional_report(&mu, &m, None).unwrap();
        assert!((r.dv_rate - (r.xi - r.xi_tilted)).abs() < 1e-10);
        assert!(r.dv_rate > 0.0);
        assert!(r.free_energy.is_none());
        assert_eq!(r.entropy_production, f64::INFINITY);
    }
}
