//! Rate models, generators and the stationary law.
//!
//! Conventions: `L` is the backward generator acting on observables,
//! `Lf(x) = Σ_y k(x,y)[f(y) − f(x)]`; distributions evolve under its transpose.
//! `L*` is the generator of the time-reversed process and `L_s = (L + L*)/2`.
//! Inner products `(f, g)_ρ = Σ_x f(x) g(x) ρ(x)` are always taken with respect
//! to the stationary law.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// Finite-state jump process given by its off-diagonal transition rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    rates: DMatrix<f64>,
    irreducible: bool,
}

impl RateModel {
    /// Builds a model from a square matrix of rates. The diagonal is ignored.
    pub fn new(mut rates: DMatrix<f64>) -> Result<Self> {
        let n = rates.nrows();
        if rates.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rates.ncols(),
            });
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "a rate model needs at least 2 states, got {n}"
            )));
        }
        for x in 0..n {
            rates[(x, x)] = 0.0;
            for y in 0..n {
                let k = rates[(x, y)];
                if !k.is_finite() || k < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "rate k({x},{y}) = {k} must be finite and non-negative"
                    )));
                }
            }
        }
        let irreducible = strongly_connected(&rates);
        Ok(Self { rates, irreducible })
    }

    /// Builds a model from `(from, to, rate)` triples over `n` states.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rates = DMatrix::zeros(n, n);
        for &(x, y, k) in triples {
            if x >= n || y >= n {
                return Err(Error::InvalidParameter(format!(
                    "rate ({x},{y}) references a state outside 0..{n}"
                )));
            }
            if x == y {
                return Err(Error::InvalidParameter(format!(
                    "self-transition rate on state {x}"
                )));
            }
            rates[(x, y)] = k;
        }
        Self::new(rates)
    }

    pub fn n(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.rates[(x, y)]
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn require_irreducible(&self) -> Result<()> {
        if self.irreducible {
            Ok(())
        } else {
            Err(Error::NotIrreducible)
        }
    }

    /// Total rate of leaving `x`.
    pub fn escape_rate(&self, x: usize) -> f64 {
        self.rates.row(x).sum()
    }

    pub fn escape_rates(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), (0..self.n()).map(|x| self.escape_rate(x)))
    }

    pub fn max_escape_rate(&self) -> f64 {
        (0..self.n())
            .map(|x| self.escape_rate(x))
            .fold(0.0, f64::max)
    }

    /// Matrix of the backward generator `L`.
    pub fn backward_matrix(&self) -> DMatrix<f64> {
        let mut l = self.rates.clone();
        for x in 0..self.n() {
            l[(x, x)] = -self.escape_rate(x);
        }
        l
    }

    /// Matrix `Q` with `dμ/dt = Q μ` for column vectors μ (transpose of `L`).
    pub fn forward_matrix(&self) -> DMatrix<f64> {
        self.backward_matrix().transpose()
    }

    /// Same graph with every rate multiplied by `s` (a change of time unit).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(&self.rates * s)
    }
}

fn strongly_connected(rates: &DMatrix<f64>) -> bool {
    let n = rates.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for y in 0..n {
                let k = if forward { rates[(x, y)] } else { rates[(y, x)] };
                if k > 0.0 && !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Probability vector on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(DVector<f64>);

impl Distribution {
    /// Validates non-negativity and normalization (to 1e-12).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(weights))
    }

    pub fn from_vector(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty weight vector".into()));
        }
        if let Some((x, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "weight {w} at state {x} is negative or not finite"
            )));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > Tolerances::default().structural {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Rescales non-negative weights to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    /// Point mass on `x`.
    pub fn dirac(n: usize, x: usize) -> Self {
        let mut w = DVector::zeros(n);
        w[x] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    /// Fails unless every weight is at least `floor`.
    pub fn require_positive(&self, floor: f64) -> Result<()> {
        match self.0.iter().enumerate().find(|(_, w)| **w < floor) {
            Some((state, &value)) => Err(Error::NonPositiveDistribution { state, value }),
            None => Ok(()),
        }
    }

    /// Variational distance `½ Σ |μ − ν|`.
    pub fn variational_distance(&self, other: &Distribution) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn expectation(&self, f: &Observable) -> f64 {
        self.0.dot(f.values())
    }

    /// Convex combination `λ self + (1 − λ) other`.
    pub fn mix(&self, other: &Distribution, lambda: f64) -> Distribution {
        Self(&self.0 * lambda + &other.0 * (1.0 - lambda))
    }

    pub(crate) fn from_vector_unchecked(weights: DVector<f64>) -> Self {
        Self(weights)
    }
}

/// Real function on the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable(DVector<f64>);

impl Observable {
    pub fn new(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn from_vector(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(DVector::from_element(n, c))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Variation norm `max_{x,y} |f(x) − f(y)|`.
    pub fn variation(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.max() - self.0.min()
    }

    /// `Σ_x ρ(x) f(x)`.
    pub fn mean(&self, rho: &Distribution) -> f64 {
        rho.expectation(self)
    }

    /// Shifts by a constant so that the ρ-mean vanishes.
    pub fn centered(&self, rho: &Distribution) -> Observable {
        let m = self.mean(rho);
        Self(self.0.add_scalar(-m))
    }

    pub fn scale(&self, c: f64) -> Observable {
        Self(&self.0 * c)
    }
}

impl std::ops::Sub for &Observable {
    type Output = Observable;
    fn sub(self, rhs: &Observable) -> Observable {
        Observable(&self.0 - &rhs.0)
    }
}

impl std::ops::Add for &Observable {
    type Output = Observable;
    fn add(self, rhs: &Observable) -> Observable {
        Observable(&self.0 + &rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Transpose of `L`, drives the Master equation.
    ForwardTranspose,
    Backward,
    TimeReversed,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub matrix: DMatrix<f64>,
    pub kind: GeneratorKind,
}

impl Generator {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, f: &Observable) -> Result<Observable> {
        check_dim(self.n(), f.len())?;
        Ok(Observable(&self.matrix * f.values()))
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Unique stationary law of an irreducible model.
///
/// Solves `Qρ = 0` with the last equation replaced by `Σρ = 1`, followed by one
/// step of iterative refinement.
pub fn stationary_distribution(model: &RateModel) -> Result<Distribution> {
    model.require_irreducible()?;
    let n = model.n();
    let mut a = model.forward_matrix();
    for y in 0..n {
        a[(n - 1, y)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut rho = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure("singular stationarity system".into()))?;
    let residual = &rhs - &a * &rho;
    if let Some(correction) = lu.solve(&residual) {
        rho += correction;
    }
    if rho.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::SolverFailure(
            "stationary solution is not strictly positive".into(),
        ));
    }
    rho /= rho.sum();

    // Null space must be one-dimensional: the full forward generator must annihilate ρ.
    let scale = model.max_escape_rate().max(f64::MIN_POSITIVE);
    let defect = (model.forward_matrix() * &rho).amax() / scale;
    if defect > 1e-9 {
        return Err(Error::SolverFailure(format!(
            "stationarity defect {defect:e} after solve"
        )));
    }
    Ok(Distribution(rho))
}

pub fn backward_generator(model: &RateModel) -> Generator {
    Generator {
        matrix: model.backward_matrix(),
        kind: GeneratorKind::Backward,
    }
}

pub fn forward_generator(model: &RateModel) -> Generator {
    Generator {
        matrix: model.forward_matrix(),
        kind: GeneratorKind::ForwardTranspose,
    }
}

/// `L*f(x) = Σ_y ρ(y) k(y,x)/ρ(x) [f(y) − f(x)]`.
pub fn time_reversed_generator(model: &RateModel, rho: &Distribution) -> Result<Generator> {
    let n = model.n();
    check_dim(n, rho.len())?;
    rho.require_positive(f64::MIN_POSITIVE)?;
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut out = 0.0;
        for y in 0..n {
            if y != x {
                let r = rho.0[y] * model.rate(y, x) / rho.0[x];
                m[(x, y)] = r;
                out += r;
            }
        }
        m[(x, x)] = -out;
    }
    Ok(Generator {
        matrix: m,
        kind: GeneratorKind::TimeReversed,
    })
}

/// `L_s = (L + L*)/2`.
pub fn symmetric_part(model: &RateModel, rho: &Distribution) -> Result<Generator> {
    let reversed = time_reversed_generator(model, rho)?;
    Ok(Generator {
        matrix: (model.backward_matrix() + reversed.matrix) * 0.5,
        kind: GeneratorKind::Symmetric,
    })
}

/// `(f, g)_ρ = Σ_x f(x) g(x) ρ(x)`.
pub fn rho_inner(f: &Observable, g: &Observable, rho: &Distribution) -> Result<f64> {
    check_dim(rho.len(), f.len())?;
    check_dim(rho.len(), g.len())?;
    Ok(f
        .0
        .iter()
        .zip(g.0.iter())
        .zip(rho.0.iter())
        .map(|((a, b), r)| a * b * r)
        .sum())
}

/// Probability current `j_μ(x,y) = k(x,y)μ(x) − k(y,x)μ(y)`.
pub fn current(mu: &Distribution, model: &RateModel) -> Result<DMatrix<f64>> {
    let n = model.n();
    check_dim(n, mu.len())?;
    Ok(DMatrix::from_fn(n, n, |x, y| {
        model.rate(x, y) * mu.0[x] - model.rate(y, x) * mu.0[y]
    }))
}

/// Master-equation right-hand side `μ̇(x) = −Σ_y j_μ(x,y)`.
pub fn master_rhs(mu: &Distribution, model: &RateModel) -> Result<DVector<f64>> {
    check_dim(model.n(), mu.len())?;
    Ok(model.forward_matrix() * mu.weights())
}

/// Whether `k(x,y)ρ(x) = k(y,x)ρ(y)` for every pair, to relative tolerance `tol`.
pub fn detailed_balance_defect(model: &RateModel, rho: &Distribution) -> Option<(usize, usize, f64)> {
    let n = model.n();
    let mut worst: Option<(usize, usize, f64)> = None;
    for x in 0..n {
        for y in (x + 1)..n {
            let a = model.rate(x, y) * rho.0[x];
            let b = model.rate(y, x) * rho.0[y];
            let defect = (a - b).abs() / a.max(b).max(f64::MIN_POSITIVE);
            if worst.is_none_or(|(_, _, d)| defect > d) {
                worst = Some((x, y, defect));
            }
        }
    }
    worst
}

pub fn is_detailed_balance(model: &RateModel, rho: &Distribution, tol: f64) -> bool {
    detailed_balance_defect(model, rho).is_none_or(|(_, _, d)| d <= tol)
}
