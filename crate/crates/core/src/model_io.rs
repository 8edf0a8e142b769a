//! Model files, example-model constructors and trace serialization.
//!
//! Models are TOML documents:
//!
//! ```toml
//! name = "ring4"
//! states = ["1", "2", "3", "4"]
//! potential_u = [0.0, 0.0, 0.0, 0.0]   # optional, declares a reversible model
//!
//! [[rate]]
//! from = "1"
//! to = "2"
//! value = 30.0
//!
//! [metadata]
//! note = "free-form strings"
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so
//! `load ∘ save ∘ load` reproduces every rate bit for bit.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::evolution::EvolutionTrace;
use crate::functionals::check_detailed_balance_with;
use crate::markov::{check_dim, Distribution, Observable, RateModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub from: String,
    pub to: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_u: Option<Vec<f64>>,
    #[serde(default, rename = "rate")]
    pub rates: Vec<RateEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ModelSpec {
    /// Describes `model` with states labelled `1..=n`.
    pub fn from_model(name: &str, model: &RateModel) -> Self {
        let n = model.n();
        let states: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        let mut rates = Vec::new();
        for x in 0..n {
            for y in 0..n {
                let k = model.rate(x, y);
                if k > 0.0 {
                    rates.push(RateEntry {
                        from: states[x].clone(),
                        to: states[y].clone(),
                        value: k,
                    });
                }
            }
        }
        Self {
            name: name.to_string(),
            states,
            potential_u: None,
            rates,
            metadata: BTreeMap::new(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn energy(&self) -> Option<Observable> {
        self.potential_u.as_ref().map(|u| Observable::new(u.clone()))
    }

    /// Checks every invariant of the document and builds the rate model.
    pub fn to_model(&self) -> Result<RateModel> {
        let n = self.states.len();
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 states, found {n}")));
        }
        let mut index = HashMap::new();
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(s.as_str(), i).is_some() {
                return Err(Error::Validation(format!("duplicate state label {s:?}")));
            }
        }
        let lookup = |label: &str, field: &str, i: usize| {
            index.get(label).copied().ok_or_else(|| {
                Error::Validation(format!("rate[{i}].{field}: undeclared state {label:?}"))
            })
        };
        let mut rates = DMatrix::zeros(n, n);
        let mut seen = vec![false; n * n];
        for (i, r) in self.rates.iter().enumerate() {
            let x = lookup(&r.from, "from", i)?;
            let y = lookup(&r.to, "to", i)?;
            if x == y {
                return Err(Error::Validation(format!("rate[{i}]: self-transition on {:?}", r.from)));
            }
            if !r.value.is_finite() || r.value < 0.0 {
                return Err(Error::Validation(format!(
                    "rate[{i}].value: must be finite and non-negative, got {}",
                    r.value
                )));
            }
            if std::mem::replace(&mut seen[x * n + y], true) {
                return Err(Error::Validation(format!(
                    "rate[{i}]: duplicate entry {:?} -> {:?}",
                    r.from, r.to
                )));
            }
            rates[(x, y)] = r.value;
        }
        let model = RateModel::new(rates).map_err(|e| Error::Validation(e.to_string()))?;
        if !model.is_irreducible() {
            return Err(Error::Validation("rate graph is not strongly connected".into()));
        }
        if let Some(u) = &self.potential_u {
            if u.len() != n {
                return Err(Error::Validation(format!(
                    "potential_u: expected {n} entries, found {}",
                    u.len()
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("potential_u: non-finite entry".into()));
            }
            check_detailed_balance_with(&model, &Observable::new(u.clone()), Tolerances::default().identity)
                .map_err(|e| Error::Validation(format!("potential_u: {e}")))?;
        }
        Ok(model)
    }
}

fn parse_error(text: &str, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        line,
        message: err.message().to_string(),
    }
}

/// Parses a model document without building the model.
pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    toml::from_str(text).map_err(|e| parse_error(text, e))
}

/// Parses and validates a model document.
pub fn load_model(text: &str) -> Result<RateModel> {
    parse_model_spec(text)?.to_model()
}

pub fn save_model_spec(spec: &ModelSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| Error::Validation(e.to_string()))
}

/// Serializes `model` with default name and labels.
pub fn save_model(model: &RateModel) -> Result<String> {
    save_model_spec(&ModelSpec::from_model("model", model))
}

/// Totally asymmetric ring with `k(x, x+1) = rates[x]`, indices mod N.
pub fn make_asymmetric_ring(rates: &[f64]) -> Result<RateModel> {
    let n = rates.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("ring needs N >= 3, got {n}")));
    }
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(format!("ring rates must be positive, got {r}")));
    }
    let triples: Vec<_> = (0..n).map(|x| (x, (x + 1) % n, rates[x])).collect();
    RateModel::from_triples(n, &triples)
}

pub fn make_homogeneous_ring(n: usize, p: f64) -> Result<RateModel> {
    make_asymmetric_ring(&vec![p; n])
}

/// Ring with `k(1,2) = 30` and all other forward rates 1; stationary law `(1, 30, 30, 30)/91`.
pub fn make_counterexample_ring() -> RateModel {
    make_asymmetric_ring(&[30.0, 1.0, 1.0, 1.0]).expect("valid ring")
}

/// `ρ(x) = C / k(x, x+1)` with `1/C = Σ 1/k(x, x+1)`.
pub fn ring_stationary(rates: &[f64]) -> Result<Distribution> {
    Distribution::normalized(rates.iter().map(|r| 1.0 / r).collect())
}

/// Reversible rates `k(x,y) = s(x,y) e^{(U(x) − U(y))/2}` with stationary law `∝ e^{−U}`.
pub fn make_detailed_balance(u: &Observable, s: &DMatrix<f64>) -> Result<RateModel> {
    let n = u.len();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.nrows(),
        });
    }
    for x in 0..n {
        for y in 0..n {
            if x != y && (s[(x, y)] != s[(y, x)] || !(s[(x, y)] >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "symmetric base must satisfy s(x,y) = s(y,x) >= 0, fails at ({x}, {y})"
                )));
            }
        }
    }
    let uv = u.as_slice();
    let mut rates = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x != y && s[(x, y)] > 0.0 {
                rates[(x, y)] = s[(x, y)] * ((uv[x] - uv[y]) / 2.0).exp();
            }
        }
    }
    let model = RateModel::new(rates)?;
    if !model.is_irreducible() {
        return Err(Error::InvalidParameter("symmetric base has reducible support".into()));
    }
    Ok(model)
}

/// How the additive constant in `h = −V + c` is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OffsetConvention {
    /// `c = Σ ρ V`, so that `Σ ρ h = 0`.
    #[default]
    RhoWeighted,
    /// `c = (1/N) Σ V`.
    Unweighted,
}

#[derive(Debug, Clone, Copy)]
pub enum Perturbation<'a> {
    H(&'a Observable),
    V(&'a Observable, OffsetConvention),
}

impl Perturbation<'_> {
    pub fn to_h(&self, rho: &Distribution) -> Observable {
        match *self {
            Perturbation::H(h) => h.clone(),
            Perturbation::V(v, conv) => {
                let c = match conv {
                    OffsetConvention::RhoWeighted => v.mean(rho),
                    OffsetConvention::Unweighted => v.values().mean(),
                };
                Observable::from_vector(v.values().map(|x| c - x))
            }
        }
    }
}

/// `μ ∝ ρ(1 + εh)`.
pub fn make_perturbed_initial(rho: &Distribution, p: Perturbation<'_>, eps: f64) -> Result<Distribution> {
    let h = p.to_h(rho);
    check_dim(rho.len(), h.len())?;
    let w: Vec<f64> = rho
        .as_slice()
        .iter()
        .zip(h.as_slice())
        .map(|(r, h)| r * (1.0 + eps * h))
        .collect();
    if let Some(x) = w.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "perturbation with eps = {eps} leaves state {x} without mass"
        )));
    }
    Distribution::normalized(w)
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
pub fn format_real(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// CSV with header `t, <state columns>, I, E, F, S_rel, dI_dt`.
pub fn trace_to_csv(trace: &EvolutionTrace, labels: &[String]) -> Result<String> {
    let n = trace.rows.first().map_or(labels.len(), |r| r.mu.len());
    check_dim(n, labels.len())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().map(|l| format!("mu_{l}")));
    header.extend(["I", "E", "F", "S_rel", "dI_dt"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for row in &trace.rows {
        let mut rec = vec![format_real(row.t)];
        rec.extend(row.mu.iter().copied().map(format_real));
        rec.push(format_real(row.dv_rate));
        rec.push(format_real(row.entropy_production));
        rec.push(row.free_energy.map_or_else(String::new, format_real));
        rec.push(format_real(row.relative_entropy));
        rec.push(format_real(row.di_dt));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(e.to_string())
}

/// Reads a distribution file: one weight per line, or whitespace/comma separated.
/// Lines starting with `#` are ignored. Weights are normalized.
pub fn parse_distribution(text: &str) -> Result<Distribution> {
    Distribution::normalized(parse_reals(text)?)
}

pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            out.push(tok.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{tok:?}: {e}"),
            })?);
        }
    }
    Ok(out)
}
