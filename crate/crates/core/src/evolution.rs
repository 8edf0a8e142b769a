//! Master-equation evolution, functionals along the trajectory, the envelope
//! derivative of the rate functional and the monotonicity scan.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::functionals::{
    entropy_production, excess_at, free_energy, relative_entropy,
};
use crate::linalg::{expm, nonzero_generator_eigenvalues};
use crate::markov::{check_dim, master_rhs, stationary_distribution, Distribution, Observable, RateModel};
use crate::potential::{solve_potential_with, SolveOptions};

/// Exact propagator `μ_t = exp(tQ) μ_0` of the Master equation.
#[derive(Debug, Clone)]
pub struct Propagator {
    q: DMatrix<f64>,
}

impl Propagator {
    pub fn new(model: &RateModel) -> Self {
        Self {
            q: model.forward_matrix(),
        }
    }

    /// Transition matrix acting on column distributions.
    pub fn matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        expm(&(&self.q * t))
    }

    /// Raw propagated weights; no clipping or renormalization.
    pub fn propagate(&self, mu: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        check_dim(self.q.nrows(), mu.len())?;
        Ok(self.matrix(t)? * mu)
    }
}

/// Clips components below `floor` and renormalizes. Returns the number of clipped entries.
fn clip(mut w: DVector<f64>, floor: f64) -> (DVector<f64>, usize) {
    let mut clipped = 0;
    for v in w.iter_mut() {
        if *v < floor {
            *v = floor;
            clipped += 1;
        }
    }
    let total = w.sum();
    w /= total;
    (w, clipped)
}

/// Propagates μ by `t` and returns a valid distribution.
pub fn propagate(model: &RateModel, mu: &Distribution, t: f64) -> Result<Distribution> {
    let raw = Propagator::new(model).propagate(mu.weights(), t)?;
    to_distribution(raw, Tolerances::default().clip_floor)
}

fn to_distribution(raw: DVector<f64>, floor: f64) -> Result<Distribution> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegratorFailure("non-finite propagated weights".into()));
    }
    if raw.min() < floor {
        let (w, count) = clip(raw, floor);
        log::warn!("clipped {count} component(s) below {floor:e} and renormalized");
        Distribution::from_vector(w).map_err(|e| Error::IntegratorFailure(e.to_string()))
    } else {
        let total = raw.sum();
        Distribution::from_vector(raw / total).map_err(|e| Error::IntegratorFailure(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub mu: Vec<f64>,
    /// `NaN` when μ_t has a component below the solver's positivity floor.
    pub dv_rate: f64,
    pub entropy_production: f64,
    pub free_energy: Option<f64>,
    pub relative_entropy: f64,
    pub di_dt: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TraceMeta {
    pub model: String,
    pub initial: String,
    pub integrator: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionTrace {
    pub rows: Vec<TraceRow>,
    pub meta: TraceMeta,
}

impl EvolutionTrace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn initial_rate(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.dv_rate)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvolveOptions {
    /// Energy function of a reversible model; enables the free-energy column.
    pub energy: Option<Observable>,
    pub tolerances: Tolerances,
    pub model_name: String,
    pub initial_label: String,
}

pub fn evolve(model: &RateModel, mu0: &Distribution, t_grid: &[f64]) -> Result<EvolutionTrace> {
    evolve_with(model, mu0, t_grid, &EvolveOptions::default())
}

pub fn evolve_with(
    model: &RateModel,
    mu0: &Distribution,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    check_dim(model.n(), mu0.len())?;
    validate_grid(t_grid)?;
    let rho = stationary_distribution(model)?;
    let prop = Propagator::new(model);
    let solve = SolveOptions::from_tolerances(&opts.tolerances);
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mu = if t == 0.0 {
            mu0.clone()
        } else {
            to_distribution(prop.propagate(mu0.weights(), t)?, opts.tolerances.clip_floor)?
        };
        rows.push(trace_row(model, &rho, &mu, t, &solve, opts.energy.as_ref())?);
    }
    Ok(EvolutionTrace {
        rows,
        meta: TraceMeta {
            model: opts.model_name.clone(),
            initial: opts.initial_label.clone(),
            integrator: "expm-pade13".into(),
        },
    })
}

fn validate_grid(t_grid: &[f64]) -> Result<()> {
    match t_grid.first() {
        Some(&0.0) => {}
        _ => {
            return Err(Error::InvalidParameter(
                "time grid must start at 0".into(),
            ))
        }
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::InvalidParameter(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn trace_row(
    model: &RateModel,
    rho: &Distribution,
    mu: &Distribution,
    t: f64,
    solve: &SolveOptions,
    energy: Option<&Observable>,
) -> Result<TraceRow> {
    let (dv_rate, di_dt) = if mu.min() >= solve.positivity {
        let v = solve_potential_with(mu, model, solve)?.potential;
        let mu_dot = master_rhs(mu, model)?;
        let d = envelope_derivative(model, &mu_dot, v.values());
        (excess_at(mu, model, v).rate, d)
    } else {
        log::debug!("t = {t}: distribution below positivity floor, rate not evaluated");
        (f64::NAN, f64::NAN)
    };
    Ok(TraceRow {
        t,
        mu: mu.as_slice().to_vec(),
        dv_rate,
        entropy_production: entropy_production(mu, model)?,
        free_energy: energy.map(|u| free_energy(mu, model, u)).transpose()?,
        relative_entropy: relative_entropy(mu, rho)?,
        di_dt,
    })
}

// Σ_x μ̇(x) Σ_y k(x,y) [1 − e^{(V(y)−V(x))/2}]
fn envelope_derivative(model: &RateModel, mu_dot: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let n = model.n();
    let mut total = 0.0;
    for x in 0..n {
        let mut excess = 0.0;
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                excess -= k * ((v[y] - v[x]) / 2.0).exp_m1();
            }
        }
        total += mu_dot[x] * excess;
    }
    total
}

/// Time derivative of the rate functional along the Master equation at μ.
///
/// Because μ is stationary for its own tilted rates, the variation of `V_μ`
/// drops out and only the explicit μ-dependence remains.
pub fn di_dt(mu: &Distribution, model: &RateModel) -> Result<f64> {
    let v = solve_potential_with(mu, model, &SolveOptions::default())?.potential;
    let mu_dot = master_rhs(mu, model)?;
    Ok(envelope_derivative(model, &mu_dot, v.values()))
}

/// Envelope derivative next to a central finite difference of the rate functional
/// along the actual trajectory, with an estimate of the difference's rounding floor.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeCheck {
    pub envelope: f64,
    pub finite_difference: f64,
    /// Absolute size of the rounding noise in both values.
    pub noise_floor: f64,
}

impl DerivativeCheck {
    /// `|envelope − fd| ≤ rel·max(|envelope|, |fd|) + noise_floor`.
    pub fn agrees(&self, rel: f64) -> bool {
        let scale = self.envelope.abs().max(self.finite_difference.abs());
        (self.envelope - self.finite_difference).abs() <= rel * scale + self.noise_floor
    }

    pub fn relative_error(&self) -> f64 {
        let scale = self.envelope.abs().max(self.finite_difference.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.envelope - self.finite_difference).abs() / scale
        }
    }
}

/// Step for [`check_di_dt`]: a thousandth of the fastest local time scale,
/// `min(1/max escape rate, min_x μ(x)/|μ̇(x)|)`.
pub fn di_dt_step(model: &RateModel, mu: &Distribution) -> Result<f64> {
    let mu_dot = master_rhs(mu, model)?;
    let local = mu
        .as_slice()
        .iter()
        .zip(mu_dot.iter())
        .filter(|(_, d)| **d != 0.0)
        .map(|(m, d)| m / d.abs())
        .fold(1.0 / model.max_escape_rate(), f64::min);
    Ok(1e-3 * local)
}

/// Compares [`di_dt`] with the Richardson extrapolation of central differences
/// of `I(μ_t)` at steps `h` and `h/2`.
pub fn check_di_dt(model: &RateModel, mu: &Distribution, h: f64) -> Result<DerivativeCheck> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let solve = SolveOptions::default();
    let prop = Propagator::new(model);
    let rate_after = |dt: f64| -> Result<f64> {
        let nu = Distribution::from_vector_unchecked(prop.propagate(mu.weights(), dt)?);
        nu.require_positive(solve.positivity)?;
        Ok(excess_at(&nu, model, solve_potential_with(&nu, model, &solve)?.potential).rate)
    };
    let central = |step: f64| -> Result<f64> { Ok((rate_after(step)? - rate_after(-step)?) / (2.0 * step)) };
    let coarse = central(h)?;
    let fine = central(h / 2.0)?;
    let finite_difference = (4.0 * fine - coarse) / 3.0;

    let v = solve_potential_with(mu, model, &solve)?.potential;
    let mu_dot = master_rhs(mu, model)?;
    let envelope = envelope_derivative(model, &mu_dot, v.values());

    // Magnitudes of the summands entering I and its envelope derivative.
    let n = model.n();
    let (mut rate_terms, mut slope_terms) = (0.0, 0.0);
    for x in 0..n {
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                let d = (v.values()[y] - v.values()[x]) / 2.0;
                rate_terms += mu.weights()[x] * k * d.exp_m1().abs();
                slope_terms += mu_dot[x].abs() * k * (1.0 + d.exp());
            }
        }
    }
    // the extrapolation weights the h/2 difference by 4/3
    let noise_floor = 64.0 * f64::EPSILON * (3.0 * rate_terms / h + slope_terms);
    Ok(DerivativeCheck {
        envelope,
        finite_difference,
        noise_floor,
    })
}

/// `1/γ`, where γ is the smallest `−Re λ` over nonzero eigenvalues λ of `L`.
pub fn relaxation_time(model: &RateModel) -> Result<f64> {
    Ok(1.0 / spectral_gap(model)?)
}

pub fn spectral_gap(model: &RateModel) -> Result<f64> {
    model.require_irreducible()?;
    let ev = nonzero_generator_eigenvalues(&model.backward_matrix())?;
    let gap = ev.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::EigenFailure(format!("non-positive spectral gap {gap}")));
    }
    Ok(gap)
}

/// `0` followed by `points` geometrically spaced times from `1e-3·τ` to `30·τ`.
pub fn default_time_grid(model: &RateModel, points: usize) -> Result<Vec<f64>> {
    let tau = relaxation_time(model)?;
    Ok(geometric_grid(1e-3 * tau, 30.0 * tau, points))
}

pub fn geometric_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if points == 1 {
        grid.push(t_max);
    } else if points > 1 {
        let ratio = (t_max / t_min).ln() / (points - 1) as f64;
        grid.extend((0..points).map(|i| t_min * (ratio * i as f64).exp()));
    }
    grid
}

/// Evolves on `grid`, then inserts `refine` linearly spaced times inside every
/// interval across which `dI/dt` changes sign.
pub fn evolve_refined(
    model: &RateModel,
    mu0: &Distribution,
    grid: &[f64],
    refine: usize,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    let coarse = evolve_with(model, mu0, grid, opts)?;
    let mut extra = Vec::new();
    for w in coarse.rows.windows(2) {
        let (a, b) = (w[0].di_dt, w[1].di_dt);
        if a.is_finite() && b.is_finite() && (a > 0.0) != (b > 0.0) {
            let dt = (w[1].t - w[0].t) / (refine + 1) as f64;
            extra.extend((1..=refine).map(|i| w[0].t + dt * i as f64));
        }
    }
    if extra.is_empty() {
        return Ok(coarse);
    }
    let mut times = coarse.times();
    times.extend(extra);
    times.sort_by(f64::total_cmp);
    times.dedup();
    evolve_with(model, mu0, &times, opts)
}

/// Default evolution: 400-point geometric grid out to 30 relaxation times with
/// refinement around sign changes of `dI/dt`.
pub fn evolve_default(
    model: &RateModel,
    mu0: &Distribution,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    let grid = default_time_grid(model, 400)?;
    evolve_refined(model, mu0, &grid, 16, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityVerdict {
    /// First grid time after which every sampled `dI/dt ≤ tol_sign`;
    /// `None` if the last sampled derivative is still positive.
    pub monotone_from: Option<f64>,
    /// Whether `dI/dt > tol_sign` anywhere before `monotone_from`.
    pub initial_slip: bool,
    pub max_positive_derivative: f64,
}

/// Sign tolerance `1e-12 · I(μ_0) / τ`, floored at `64 ε² · (max escape rate)²`,
/// the rounding level of `dI/dt` at the stationary law.
pub fn default_sign_tolerance(trace: &EvolutionTrace, model: &RateModel) -> Result<f64> {
    let i0 = trace.initial_rate();
    let tau = relaxation_time(model)?;
    let scale = model.max_escape_rate();
    let floor = 64.0 * f64::EPSILON * f64::EPSILON * scale * scale;
    Ok(if i0.is_finite() { 1e-12 * i0.max(0.0) / tau + floor } else { floor })
}

pub fn monotonicity_scan(trace: &EvolutionTrace, tol_sign: f64) -> Result<MonotonicityVerdict> {
    if trace.rows.len() < 3 {
        return Err(Error::InsufficientTrace(trace.rows.len()));
    }
    let rows: Vec<&TraceRow> = trace.rows.iter().filter(|r| r.di_dt.is_finite()).collect();
    let last_positive = rows.iter().rposition(|r| r.di_dt > tol_sign);
    let max_positive_derivative = rows
        .iter()
        .map(|r| r.di_dt)
        .filter(|d| *d > tol_sign)
        .fold(0.0, f64::max);
    let monotone_from = match last_positive {
        None => Some(rows.first().map_or(0.0, |r| r.t)),
        Some(i) if i + 1 < rows.len() => Some(rows[i + 1].t),
        Some(_) => None,
    };
    Ok(MonotonicityVerdict {
        monotone_from,
        initial_slip: last_positive.is_some(),
        max_positive_derivative,
    })
}

/// Classical RK4 with step-doubling error control; a cross-check for the
/// exact propagator.
pub fn rk4_step_doubling(
    model: &RateModel,
    mu0: &Distribution,
    t_end: f64,
    tol: f64,
) -> Result<Distribution> {
    let q = model.forward_matrix();
    let rk4 = |y: &DVector<f64>, h: f64| -> DVector<f64> {
        let k1 = &q * y;
        let k2 = &q * (y + &k1 * (h / 2.0));
        let k3 = &q * (y + &k2 * (h / 2.0));
        let k4 = &q * (y + &k3 * h);
        y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    let mut y = mu0.weights().clone();
    let mut t = 0.0;
    let mut h = (0.1 / model.max_escape_rate()).min(t_end);
    let mut steps = 0usize;
    while t < t_end {
        if steps > 10_000_000 {
            return Err(Error::IntegratorFailure("too many RK4 steps".into()));
        }
        steps += 1;
        h = h.min(t_end - t);
        let full = rk4(&y, h);
        let half = rk4(&rk4(&y, h / 2.0), h / 2.0);
        let err = (&half - &full).amax() / 15.0;
        if err <= tol || h < 1e-14 {
            y = &half + (&half - &full) / 15.0;
            t += h;
            if err < tol / 32.0 {
                h *= 2.0;
            }
        } else {
            h *= 0.5;
        }
    }
    to_distribution(y, Tolerances::default().clip_floor)
}
