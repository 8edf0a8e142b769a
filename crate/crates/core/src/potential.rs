//! Inverse stationarity: the potential `V_μ` whose tilted rates
//! `k_V(x,y) = k(x,y) exp[(V(y) − V(x))/2]` make a given μ stationary.
//!
//! `V_μ` is the minimizer of the convex functional
//! `Y_μ(W) = Σ_{x,y} μ(x) k_W(x,y)`, found by damped Newton iteration on the
//! coordinates `W(1..n)` with the root state fixed at zero. The gradient of
//! `Y_μ` is `−½` times the stationarity residual and its Hessian is a quarter of
//! the graph Laplacian weighted by the symmetrized tilted flows.

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::markov::{
    check_dim, stationary_distribution, symmetric_part, time_reversed_generator, Distribution,
    Observable, RateModel,
};

/// Potential on the state space, gauge-fixed so that the root state (index 0) is zero.
///
/// To convert to the zero-ρ-mean convention use [`Potential::rho_centered`].
#[derive(Debug, Clone, PartialEq)]
pub struct Potential(DVector<f64>);

impl Potential {
    pub fn new(values: Vec<f64>) -> Self {
        Self::from_vector(DVector::from_vec(values))
    }

    pub fn from_vector(mut values: DVector<f64>) -> Self {
        if !values.is_empty() {
            let root = values[0];
            values.add_scalar_mut(-root);
        }
        Self(values)
    }

    pub fn zero(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_observable(&self) -> Observable {
        Observable::from_vector(self.0.clone())
    }

    /// Representative with zero ρ-mean.
    pub fn rho_centered(&self, rho: &Distribution) -> Observable {
        self.to_observable().centered(rho)
    }

    pub fn variation(&self) -> f64 {
        self.to_observable().variation()
    }

    /// Whether all differences `V(y) − V(x)` agree to `tol`.
    pub fn approx_eq(&self, other: &Potential, tol: f64) -> bool {
        self.0.len() == other.0.len() && (&self.0 - &other.0).amax() <= tol
    }
}

/// Base model together with a potential and its tilted rates.
#[derive(Debug, Clone)]
pub struct TiltedModel {
    pub base: RateModel,
    pub potential: Potential,
    tilted: RateModel,
}

impl TiltedModel {
    pub fn new(base: &RateModel, potential: Potential) -> Result<Self> {
        check_dim(base.n(), potential.len())?;
        let tilted = RateModel::new(tilted_rates(base, potential.values()))?;
        Ok(Self {
            base: base.clone(),
            potential,
            tilted,
        })
    }

    /// The tilted dynamics as a rate model in its own right.
    pub fn model(&self) -> &RateModel {
        &self.tilted
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.tilted.rate(x, y)
    }
}

fn tilted_rates(model: &RateModel, w: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n();
    DMatrix::from_fn(n, n, |x, y| {
        let k = model.rate(x, y);
        if k > 0.0 {
            k * ((w[y] - w[x]) / 2.0).exp()
        } else {
            0.0
        }
    })
}

/// `Y_μ(W) = Σ_{x,y} μ(x) k(x,y) exp[(W(y) − W(x))/2]`.
pub fn y_functional(mu: &Distribution, w: &Observable, model: &RateModel) -> Result<f64> {
    check_dim(model.n(), mu.len())?;
    check_dim(model.n(), w.len())?;
    mu.require_positive(f64::MIN_POSITIVE)?;
    Ok(y_value(mu.weights(), w.values(), model))
}

fn y_value(mu: &DVector<f64>, w: &DVector<f64>, model: &RateModel) -> f64 {
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                total += mu[x] * k * ((w[y] - w[x]) / 2.0).exp();
            }
        }
    }
    total
}

/// Stationarity residual `r(x) = Σ_y [k_W(x,y) μ(x) − k_W(y,x) μ(y)]`.
pub fn stationarity_residual(
    mu: &Distribution,
    w: &Observable,
    model: &RateModel,
) -> Result<DVector<f64>> {
    check_dim(model.n(), mu.len())?;
    check_dim(model.n(), w.len())?;
    Ok(residual(mu.weights(), w.values(), model))
}

fn residual(mu: &DVector<f64>, w: &DVector<f64>, model: &RateModel) -> DVector<f64> {
    let flows = flows(mu, w, model);
    let n = model.n();
    DVector::from_fn(n, |x, _| {
        (0..n).map(|y| flows[(x, y)] - flows[(y, x)]).sum()
    })
}

// t(x,y) = μ(x) k_W(x,y)
fn flows(mu: &DVector<f64>, w: &DVector<f64>, model: &RateModel) -> DMatrix<f64> {
    let mut t = tilted_rates(model, w);
    for x in 0..model.n() {
        t.row_mut(x).scale_mut(mu[x]);
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Target for `max_x |r(x)|`.
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Smallest admissible component of μ.
    pub positivity: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        let tol = Tolerances::default();
        Self {
            residual_tol: tol.identity,
            max_iter: 200,
            positivity: tol.positivity,
        }
    }
}

impl SolveOptions {
    pub fn from_tolerances(tol: &Tolerances) -> Self {
        Self {
            residual_tol: tol.identity,
            positivity: tol.positivity,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSolution {
    pub potential: Potential,
    /// Final `max_x |r(x)|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Gauge-fixed potential `V_μ` making μ stationary under the tilted rates.
pub fn solve_potential(mu: &Distribution, model: &RateModel) -> Result<Potential> {
    solve_potential_with(mu, model, &SolveOptions::default()).map(|s| s.potential)
}

pub fn solve_potential_with(
    mu: &Distribution,
    model: &RateModel,
    opts: &SolveOptions,
) -> Result<PotentialSolution> {
    check_dim(model.n(), mu.len())?;
    mu.require_positive(opts.positivity)?;
    model.require_irreducible()?;

    let n = model.n();
    match newton(mu.weights(), DVector::zeros(n), model, opts) {
        Ok(sol) => Ok(sol),
        Err(NewtonStop::Stalled(iterations, _)) => {
            log::debug!("line search stalled after {iterations} steps, restarting from log(μ/ρ)");
            let rho = stationary_distribution(model)?;
            let start = DVector::from_fn(n, |x, _| (mu.weights()[x] / rho.weights()[x]).ln());
            newton(mu.weights(), start, model, opts).map_err(|stop| match stop {
                NewtonStop::Stalled(it, residual) | NewtonStop::Exhausted(it, residual) => {
                    Error::ConvergenceFailure {
                        iterations: iterations + it,
                        residual,
                    }
                }
                NewtonStop::Failed(e) => e,
            })
        }
        Err(NewtonStop::Exhausted(iterations, residual)) => Err(Error::ConvergenceFailure { iterations, residual }),
        Err(NewtonStop::Failed(e)) => Err(e),
    }
}

/// Iterations used and the last residual.
enum NewtonStop {
    Stalled(usize, f64),
    Exhausted(usize, f64),
    Failed(Error),
}

fn newton(
    mu: &DVector<f64>,
    start: DVector<f64>,
    model: &RateModel,
    opts: &SolveOptions,
) -> std::result::Result<PotentialSolution, NewtonStop> {
    let n = model.n();
    let mut w = start;
    let root = w[0];
    w.add_scalar_mut(-root);
    let mut y = y_value(mu, &w, model);
    let mut r = residual(mu, &w, model);
    let mut polish = 0;

    for iter in 0..opts.max_iter {
        let rmax = r.amax();
        if rmax < opts.residual_tol {
            // Quadratic convergence: a couple of extra steps are nearly free and
            // push the residual well below the tolerance.
            if polish >= 2 || rmax == 0.0 {
                return Ok(PotentialSolution {
                    potential: Potential(w),
                    residual: rmax,
                    iterations: iter,
                });
            }
            polish += 1;
        }

        // Reduced gradient and Hessian (root coordinate removed).
        let t = flows(mu, &w, model);
        let m = n - 1;
        let grad = DVector::from_fn(m, |i, _| -0.5 * r[i + 1]);
        let mut hess = DMatrix::zeros(m, m);
        for a in 1..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let c = 0.25 * (t[(a, b)] + t[(b, a)]);
                hess[(a - 1, a - 1)] += c;
                if b >= 1 {
                    hess[(a - 1, b - 1)] -= c;
                }
            }
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => match hess.lu().solve(&(-&grad)) {
                Some(s) => s,
                None => {
                    return Err(NewtonStop::Failed(Error::SolverFailure(
                        "singular Newton system".into(),
                    )))
                }
            },
        };
        let slope = grad.dot(&step);

        let mut s = 1.0;
        let accepted = loop {
            let mut trial = w.clone();
            for i in 0..m {
                trial[i + 1] += s * step[i];
            }
            let y_trial = y_value(mu, &trial, model);
            if y_trial.is_finite() {
                if y_trial <= y + 1e-4 * s * slope {
                    break Some((trial, y_trial));
                }
                // Near the minimum the decrease drops below the resolution of Y.
                if (y_trial - y).abs() <= 1e-14 * y {
                    let r_trial = residual(mu, &trial, model);
                    if r_trial.amax() < r.amax() {
                        break Some((trial, y_trial));
                    }
                }
            }
            s *= 0.5;
            if s < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((trial, y_trial)) => {
                w = trial;
                y = y_trial;
                r = residual(mu, &w, model);
            }
            None => {
                if r.amax() < opts.residual_tol {
                    return Ok(PotentialSolution {
                        potential: Potential(w),
                        residual: r.amax(),
                        iterations: iter,
                    });
                }
                return Err(NewtonStop::Stalled(iter, r.amax()));
            }
        }
    }
    if r.amax() < opts.residual_tol {
        return Ok(PotentialSolution {
            residual: r.amax(),
            potential: Potential(w),
            iterations: opts.max_iter,
        });
    }
    Err(NewtonStop::Exhausted(opts.max_iter, r.amax()))
}

/// First-order response of the potential: the zero-ρ-mean solution `v` of
/// `L_s v = L* h` for a zero-ρ-mean `h`.
pub fn linearized_potential(h: &Observable, model: &RateModel) -> Result<Observable> {
    let rho = stationary_distribution(model)?;
    check_dim(model.n(), h.len())?;
    let mean = h.mean(&rho);
    if mean.abs() > Tolerances::default().identity {
        return Err(Error::NonZeroMean(mean));
    }
    let n = model.n();
    let ls = symmetric_part(model, &rho)?.matrix;
    let rhs_top = time_reversed_generator(model, &rho)?.matrix * h.values();

    // Bordered system [[L_s, 1], [ρᵀ, 0]] [v; λ] = [L*h; 0].
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&ls);
    for x in 0..n {
        a[(x, n)] = 1.0;
        a[(n, x)] = rho.weights()[x];
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&rhs_top);
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure("singular bordered system for L_s".into()))?;
    Ok(Observable::from_vector(sol.rows(0, n).into_owned()).centered(&rho))
}

/// `(d(μ,ρ), |||V_μ|||)`, whose ratio stays in a bounded positive band.
pub fn potential_distance_bounds(mu: &Distribution, model: &RateModel) -> Result<(f64, f64)> {
    let rho = stationary_distribution(model)?;
    let v = solve_potential(mu, model)?;
    Ok((mu.variational_distance(&rho), v.variation()))
}
