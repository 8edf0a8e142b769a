//! Trajectory sampling and the occupation-time cumulant generating function.
//!
//! Every trajectory draws from its own ChaCha8 stream, selected by
//! `(seed, trajectory index)`, so pooled estimates do not depend on how the
//! work is scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functionals::excess_at;
use crate::linalg::{eigenvalues, expm};
use crate::markov::{check_dim, stationary_distribution, Distribution, Observable, RateModel};
use crate::potential::{solve_potential_with, SolveOptions};

/// Piecewise-constant path: `states[0]` on `[0, jump_times[0])`, then
/// `states[i]` on `[jump_times[i−1], jump_times[i])`, up to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl Trajectory {
    /// Time spent in each visited state, in visiting order.
    pub fn holding_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut prev = 0.0;
        for &t in &self.jump_times {
            out.push(t - prev);
            prev = t;
        }
        out.push(self.horizon - prev);
        out
    }

    /// `∫_0^T f(x_s) ds`.
    pub fn integral(&self, f: &[f64]) -> f64 {
        self.states
            .iter()
            .zip(self.holding_times())
            .map(|(&x, d)| f[x] * d)
            .sum()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact stochastic simulation of the jump process on `[0, horizon)`.
pub fn gillespie(model: &RateModel, x0: usize, horizon: f64, seed: u64) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, 0);
    simulate(model, x0, horizon, &mut rng)
}

fn check_horizon(model: &RateModel, horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    model.require_irreducible()
}

fn simulate<R: Rng>(model: &RateModel, x0: usize, horizon: f64, rng: &mut R) -> Result<Trajectory> {
    check_horizon(model, horizon)?;
    let n = model.n();
    if x0 >= n {
        return Err(Error::InvalidParameter(format!("initial state {x0} out of range")));
    }
    let escape: Vec<f64> = (0..n).map(|x| model.escape_rate(x)).collect();
    let mut t = 0.0;
    let mut x = x0;
    let mut jump_times = Vec::new();
    let mut states = vec![x0];
    loop {
        let hold = Exp::new(escape[x])
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        t += hold;
        if t >= horizon {
            break;
        }
        let mut u = rng.random::<f64>() * escape[x];
        let mut next = x;
        for y in 0..n {
            let k = model.rate(x, y);
            if k > 0.0 {
                next = y;
                if u < k {
                    break;
                }
                u -= k;
            }
        }
        x = next;
        jump_times.push(t);
        states.push(x);
    }
    Ok(Trajectory {
        jump_times,
        states,
        horizon,
    })
}

fn sample_state<R: Rng>(dist: &Distribution, rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (x, w) in dist.as_slice().iter().enumerate() {
        acc += w;
        if u < acc {
            return x;
        }
    }
    dist.len() - 1
}

/// Pooled empirical occupation fractions.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationEstimate {
    pub p_t: Vec<f64>,
    pub horizon: f64,
    pub n_samples: usize,
    /// Standard error of each pooled fraction (zero for a single trajectory).
    pub stderr: Vec<f64>,
}

/// Fractions of time spent in each state; `n` is the number of states.
pub fn occupation_fraction(trajectory: &Trajectory, n: usize) -> OccupationEstimate {
    OccupationEstimate {
        p_t: occupation(trajectory, n),
        horizon: trajectory.horizon,
        n_samples: 1,
        stderr: vec![0.0; n],
    }
}

fn occupation(trajectory: &Trajectory, n: usize) -> Vec<f64> {
    let mut time = vec![0.0; n];
    for (&x, d) in trajectory.states.iter().zip(trajectory.holding_times()) {
        time[x] += d;
    }
    let total: f64 = time.iter().sum();
    time.into_iter().map(|t| t / total).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicReport {
    pub estimate: OccupationEstimate,
    pub rho: Vec<f64>,
    /// `|p_T(x) − ρ(x)| / stderr(x)`.
    pub deviation_sigma: Vec<f64>,
    /// States deviating by more than four standard errors.
    pub failures: Vec<usize>,
    pub passed: bool,
}

/// Pools `n_samples` trajectories started from ρ and compares `p_T` with ρ.
pub fn ergodic_check(model: &RateModel, horizon: f64, n_samples: usize, seed: u64) -> Result<ErgodicReport> {
    let rho = stationary_distribution(model)?;
    ergodic_check_from(model, &rho, horizon, n_samples, seed)
}

/// As [`ergodic_check`], with initial states drawn from `initial`.
pub fn ergodic_check_from(
    model: &RateModel,
    initial: &Distribution,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    check_dim(model.n(), initial.len())?;
    check_horizon(model, horizon)?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 trajectories".into()));
    }
    let n = model.n();
    let rho = stationary_distribution(model)?;
    let fractions: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let x0 = sample_state(initial, &mut rng);
            simulate(model, x0, horizon, &mut rng).map(|tr| occupation(&tr, n))
        })
        .collect::<Result<_>>()?;

    let ns = n_samples as f64;
    let mut p_t = vec![0.0; n];
    for row in &fractions {
        for x in 0..n {
            p_t[x] += row[x];
        }
    }
    p_t.iter_mut().for_each(|p| *p /= ns);
    let stderr: Vec<f64> = (0..n)
        .map(|x| {
            let var = fractions.iter().map(|r| (r[x] - p_t[x]).powi(2)).sum::<f64>() / (ns - 1.0);
            (var / ns).sqrt()
        })
        .collect();
    let deviation_sigma: Vec<f64> = (0..n)
        .map(|x| {
            let d = (p_t[x] - rho.as_slice()[x]).abs();
            if stderr[x] > 0.0 {
                d / stderr[x]
            } else if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let failures: Vec<usize> = (0..n).filter(|&x| deviation_sigma[x] > 4.0).collect();
    Ok(ErgodicReport {
        estimate: OccupationEstimate {
            p_t,
            horizon,
            n_samples,
            stderr,
        },
        rho: rho.as_slice().to_vec(),
        deviation_sigma,
        passed: failures.is_empty(),
        failures,
    })
}

/// Principal eigenvalue of the tilted generator `L + diag(f)`.
pub fn scgf(f: &Observable, model: &RateModel) -> Result<f64> {
    model.require_irreducible()?;
    check_dim(model.n(), f.len())?;
    let tilted = tilted_generator(f, model);
    let ev = eigenvalues(&tilted)?;
    let top = ev
        .iter()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .ok_or_else(|| Error::EigenFailure("empty spectrum".into()))?;
    let scale = model.max_escape_rate() + f.values().amax();
    if top.im.abs() > 1e-8 * scale.max(1.0) {
        return Err(Error::EigenFailure(format!(
            "leading eigenvalue is not real: {top}"
        )));
    }
    Ok(top.re)
}

fn tilted_generator(f: &Observable, model: &RateModel) -> DMatrix<f64> {
    let mut m = model.backward_matrix();
    for x in 0..model.n() {
        m[(x, x)] += f.values()[x];
    }
    m
}

/// Exact finite-horizon value `(1/T) log Σ_x ρ(x) [e^{T(L + diag f)} 1](x)`.
pub fn scgf_finite_time(f: &Observable, model: &RateModel, horizon: f64) -> Result<f64> {
    check_horizon(model, horizon)?;
    check_dim(model.n(), f.len())?;
    let rho = stationary_distribution(model)?;
    // shift by max f to keep the exponential bounded
    let shift = f.values().max();
    let mut m = tilted_generator(f, model);
    for x in 0..model.n() {
        m[(x, x)] -= shift;
    }
    let e = expm(&(m * horizon))?;
    let v = e.column_sum();
    Ok(shift + rho.weights().dot(&v).ln() / horizon)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScgfEstimate {
    pub value: f64,
    pub stderr: f64,
    pub effective_sample_size: f64,
}

/// Monte Carlo estimate of `(1/T) log ⟨exp ∫_0^T f(x_s) ds⟩_ρ`.
pub fn scgf_empirical(
    f: &Observable,
    model: &RateModel,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ScgfEstimate> {
    check_horizon(model, horizon)?;
    check_dim(model.n(), f.len())?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 trajectories".into()));
    }
    let rho = stationary_distribution(model)?;
    // ∫f = f(0)·T + ∫(f − f(0)); keeps constant observables exact
    let reference = f.as_slice()[0];
    let shifted: Vec<f64> = f.as_slice().iter().map(|v| v - reference).collect();
    let actions: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let x0 = sample_state(&rho, &mut rng);
            simulate(model, x0, horizon, &mut rng).map(|tr| tr.integral(&shifted))
        })
        .collect::<Result<_>>()?;

    let top = actions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = actions.iter().map(|a| (a - top).exp()).collect();
    let ns = n_samples as f64;
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let ess = sum * sum / sum_sq;
    if ess < 10.0 {
        return Err(Error::DegenerateSample { ess });
    }
    let mean = sum / ns;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (ns - 1.0);
    Ok(ScgfEstimate {
        value: reference + (top + mean.ln()) / horizon,
        stderr: (var / ns).sqrt() / mean / horizon,
        effective_sample_size: ess,
    })
}

/// Rate functional tabulated on the interior nodes of a barycentric grid.
#[derive(Debug, Clone)]
pub struct RateGrid {
    pub points: Vec<Distribution>,
    pub rates: Vec<f64>,
}

impl RateGrid {
    /// Nodes `μ = k/resolution` with every `k(x) ≥ 1`.
    pub fn new(model: &RateModel, resolution: usize) -> Result<Self> {
        let n = model.n();
        if resolution < n {
            return Err(Error::InvalidParameter(format!(
                "resolution {resolution} leaves no interior nodes for {n} states"
            )));
        }
        let mut points = Vec::new();
        let mut counts = vec![1usize; n];
        compositions(&mut counts, 0, resolution - n, &mut |c| {
            let w: Vec<f64> = c.iter().map(|&k| k as f64 / resolution as f64).collect();
            points.push(w);
        });
        let opts = SolveOptions::default();
        let evaluated: Vec<(Distribution, f64)> = points
            .into_par_iter()
            .map(|w| {
                let mu = Distribution::normalized(w)?;
                let v = solve_potential_with(&mu, model, &opts)?.potential;
                let rate = excess_at(&mu, model, v).rate;
                Ok((mu, rate))
            })
            .collect::<Result<_>>()?;
        let (points, rates) = evaluated.into_iter().unzip();
        Ok(Self { points, rates })
    }

    /// `max_μ [Σ f μ − I(μ)]` over the grid, with the maximizing node.
    pub fn max_dual(&self, f: &Observable) -> (f64, &Distribution) {
        let (i, v) = self
            .points
            .iter()
            .zip(&self.rates)
            .map(|(mu, rate)| mu.expectation(f) - rate)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("grid has nodes");
        (v, &self.points[i])
    }
}

// Distributes `remaining` extra units over counts[pos..].
fn compositions(counts: &mut Vec<usize>, pos: usize, remaining: usize, emit: &mut dyn FnMut(&[usize])) {
    if pos == counts.len() - 1 {
        counts[pos] += remaining;
        emit(counts);
        counts[pos] -= remaining;
        return;
    }
    for k in 0..=remaining {
        counts[pos] += k;
        compositions(counts, pos + 1, remaining - k, emit);
        counts[pos] -= k;
    }
}

/// Ascends `Σ f μ − I(μ)` from `start` with multiplicative (softmax) steps.
///
/// The gradient of I in μ is the excess escape rate `Σ_y [k(x,y) − k_V(x,y)]`.
pub fn polish_dual(f: &Observable, model: &RateModel, start: &Distribution) -> Result<(f64, Distribution)> {
    let opts = SolveOptions::default();
    let n = model.n();
    let value_and_grad = |mu: &Distribution| -> Result<(f64, Vec<f64>)> {
        let v = solve_potential_with(mu, model, &opts)?.potential;
        let vv = v.values().clone();
        let rate = excess_at(mu, model, v).rate;
        let grad: Vec<f64> = (0..n)
            .map(|x| {
                let excess: f64 = (0..n)
                    .filter(|&y| model.rate(x, y) > 0.0)
                    .map(|y| -model.rate(x, y) * ((vv[y] - vv[x]) / 2.0).exp_m1())
                    .sum();
                f.as_slice()[x] - excess
            })
            .collect();
        Ok((mu.expectation(f) - rate, grad))
    };
    let mut mu = start.clone();
    let (mut value, mut grad) = value_and_grad(&mu)?;
    let mut step = 1.0 / (model.max_escape_rate() + f.values().amax());
    for _ in 0..20_000 {
        let mean: f64 = mu.as_slice().iter().zip(&grad).map(|(m, g)| m * g).sum();
        let tangent: Vec<f64> = mu.as_slice().iter().zip(&grad).map(|(m, g)| m * (g - mean)).collect();
        let norm2: f64 = tangent.iter().map(|t| t * t).sum();
        if norm2.sqrt() < 1e-13 {
            break;
        }
        let mut accepted = false;
        while step > 1e-16 {
            let w: Vec<f64> = mu
                .as_slice()
                .iter()
                .zip(&grad)
                .map(|(m, g)| m * (step * (g - mean)).exp())
                .collect();
            let trial = Distribution::normalized(w)?;
            if trial.min() < opts.positivity {
                step *= 0.5;
                continue;
            }
            let (v, g) = value_and_grad(&trial)?;
            if v >= value + 1e-4 * step * norm2 {
                mu = trial;
                value = v;
                grad = g;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((value, mu))
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityCheck {
    pub scgf: f64,
    pub grid_max: f64,
    pub polished_max: f64,
    pub argmax: Vec<f64>,
}

impl DualityCheck {
    pub fn residual(&self) -> f64 {
        (self.scgf - self.polished_max).abs()
    }
}

/// Compares the principal eigenvalue with `sup_μ [Σ f μ − I(μ)]` on a grid plus polish.
pub fn legendre_duality(f: &Observable, model: &RateModel, grid: &RateGrid) -> Result<DualityCheck> {
    let lambda = scgf(f, model)?;
    let (grid_max, node) = grid.max_dual(f);
    let (polished, argmax) = polish_dual(f, model, node)?;
    Ok(DualityCheck {
        scgf: lambda,
        grid_max,
        polished_max: polished.max(grid_max),
        argmax: argmax.as_slice().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(a: f64, b: f64) -> RateModel {
        RateModel::from_triples(2, &[(0, 1, a), (1, 0, b)]).unwrap()
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = two_state(1.0, 2.0);
        let a = gillespie(&m, 0, 50.0, 7).unwrap();
        let b = gillespie(&m, 0, 50.0, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gillespie(&m, 0, 50.0, 8).unwrap());
    }

    #[test]
    fn consecutive_states_differ_and_jumps_are_allowed() {
        let m = RateModel::from_triples(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5)]).unwrap();
        let tr = gillespie(&m, 0, 200.0, 1).unwrap();
        for w in tr.states.windows(2) {
            assert_ne!(w[0], w[1]);
            assert!(m.rate(w[0], w[1]) > 0.0);
        }
        assert!(tr.jump_times.windows(2).all(|w| w[1] > w[0]));
        assert!(tr.jump_times.last().unwrap() < &200.0);
    }

    #[test]
    fn occupation_sums_to_one() {
        let m = two_state(1.0, 2.0);
        let tr = gillespie(&m, 1, 100.0, 3).unwrap();
        let est = occupation_fraction(&tr, 2);
        assert!((est.p_t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scgf_trivial_cases() {
        let m = RateModel::from_triples(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 0.5), (1, 0, 0.3)]).unwrap();
        assert!(scgf(&Observable::zeros(3), &m).unwrap().abs() < 1e-12);
        assert!((scgf(&Observable::constant(3, 0.7), &m).unwrap() - 0.7).abs() < 1e-12);
        let e = scgf_empirical(&Observable::zeros(3), &m, 10.0, 50, 1).unwrap();
        assert_eq!(e.value, 0.0);
        let e = scgf_empirical(&Observable::constant(3, -0.4), &m, 10.0, 50, 1).unwrap();
        assert_eq!(e.value, -0.4);
    }

    #[test]
    fn grid_node_count() {
        let m = two_state(1.0, 1.0);
        let g = RateGrid::new(&m, 10).unwrap();
        assert_eq!(g.points.len(), 9);
        assert!(RateGrid::new(&m, 1).is_err());
    }
}
