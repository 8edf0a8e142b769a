use std::path::Path;

use dvlab::evolution::{
    default_sign_tolerance, default_time_grid, di_dt, evolve_refined, evolve_with, geometric_grid,
    monotonicity_scan, relaxation_time, EvolutionTrace, EvolveOptions,
};
use dvlab::functionals::{dynamical_activity, functional_report};
use dvlab::markov::stationary_distribution;
use dvlab::model_io::trace_to_csv;
use dvlab::potential::{solve_potential_with, SolveOptions};
use dvlab::response::{sector_certificate_with, susceptibility};
use dvlab::sampling::{ergodic_check, ergodic_check_from, legendre_duality, RateGrid};
use dvlab::RateModel;
use serde_json::json;

use crate::inputs::{load_distribution, load_model, load_observable, parse_time_grid, LoadedModel};
use crate::output::{opt, real, to_json, Output, Table};
use crate::{CliError, Context};

pub fn stationary(_ctx: &Context, path: &Path) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let rho = stationary_distribution(&m.model)?;
    let mut table = Table::new(["state", "rho"]);
    for (label, r) in m.labels().iter().zip(rho.as_slice()) {
        table.push(vec![label.clone(), real(*r)]);
    }
    Ok(Output {
        table,
        json: json!({ "states": m.labels(), "rho": rho.as_slice() }),
    })
}

pub fn potential(ctx: &Context, path: &Path, mu: &str) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let mu = load_distribution(mu, &m.model)?;
    let sol = solve_potential_with(&mu, &m.model, &SolveOptions::from_tolerances(&ctx.tolerances))?;
    let mut table = Table::new(["state", "mu", "V"]);
    for (i, label) in m.labels().iter().enumerate() {
        table.push(vec![
            label.clone(),
            real(mu.as_slice()[i]),
            real(sol.potential.as_slice()[i]),
        ]);
    }
    Ok(Output {
        table,
        json: json!({
            "states": m.labels(),
            "mu": mu.as_slice(),
            "potential": sol.potential.as_slice(),
            "residual": sol.residual,
            "iterations": sol.iterations,
        }),
    })
}

pub fn rate(_ctx: &Context, path: &Path, mu: &str) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let mu = load_distribution(mu, &m.model)?;
    let energy = m.spec.energy();
    let report = functional_report(&mu, &m.model, energy.as_ref())?;
    let activity = dynamical_activity(&mu, &m.model)?;
    let slope = di_dt(&mu, &m.model)?;
    let mut table = Table::key_value();
    table.real("activity", activity);
    table.real("xi", report.xi);
    table.real("xi_tilted", report.xi_tilted);
    table.real("I", report.dv_rate);
    table.real("E", report.entropy_production);
    table.pair("F", opt(report.free_energy));
    table.real("S_rel", report.relative_entropy);
    table.real("dI_dt", slope);
    let mut json = to_json(&report)?;
    json["activity"] = json!(activity);
    json["di_dt"] = json!(slope);
    Ok(Output { table, json })
}

fn time_grid(model: &RateModel, t_max: Option<f64>, points: usize) -> Result<Vec<f64>, CliError> {
    if points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    match t_max {
        None => Ok(default_time_grid(model, points)?),
        Some(t) if t > 0.0 && t.is_finite() => {
            let tau = relaxation_time(model)?;
            Ok(geometric_grid(1e-3 * tau.min(t), t, points))
        }
        Some(t) => Err(CliError::Usage(format!("--t-max must be positive and finite, got {t}"))),
    }
}

fn evolve_options(ctx: &Context, m: &LoadedModel, mu_arg: &str) -> EvolveOptions {
    EvolveOptions {
        energy: m.spec.energy(),
        tolerances: ctx.tolerances,
        model_name: m.spec.name.clone(),
        initial_label: mu_arg.to_string(),
    }
}

pub fn trace_output(trace: &EvolutionTrace, labels: &[String]) -> Result<Output, CliError> {
    let csv = trace_to_csv(trace, labels)?;
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Io(e.to_string()))?
        .iter()
        .map(String::from)
        .collect::<Vec<_>>();
    let mut table = Table::new(header);
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
        table.push(rec.iter().map(String::from).collect());
    }
    Ok(Output {
        table,
        json: to_json(trace)?,
    })
}

pub fn evolve(ctx: &Context, path: &Path, mu_arg: &str, t_max: Option<f64>, points: usize) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let mu = load_distribution(mu_arg, &m.model)?;
    let grid = time_grid(&m.model, t_max, points)?;
    let trace = evolve_with(&m.model, &mu, &grid, &evolve_options(ctx, &m, mu_arg))?;
    trace_output(&trace, m.labels())
}

pub fn scan(
    ctx: &Context,
    path: &Path,
    mu_arg: &str,
    t_max: Option<f64>,
    points: usize,
    tol_sign: Option<f64>,
) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let mu = load_distribution(mu_arg, &m.model)?;
    let grid = time_grid(&m.model, t_max, points)?;
    let trace = evolve_refined(&m.model, &mu, &grid, 16, &evolve_options(ctx, &m, mu_arg))?;
    let tol = match tol_sign {
        Some(t) if t >= 0.0 && t.is_finite() => t,
        Some(t) => return Err(CliError::Usage(format!("--tol-sign must be non-negative, got {t}"))),
        None => default_sign_tolerance(&trace, &m.model)?,
    };
    let verdict = monotonicity_scan(&trace, tol)?;
    let tau = relaxation_time(&m.model)?;
    let slope0 = trace.rows[0].di_dt;
    let mut table = Table::key_value();
    table.pair("initial_slip", verdict.initial_slip);
    table.pair("monotone_from", opt(verdict.monotone_from));
    table.real("max_positive_derivative", verdict.max_positive_derivative);
    table.real("dI_dt_0", slope0);
    table.real("tol_sign", tol);
    table.real("relaxation_time", tau);
    table.pair("samples", trace.rows.len());
    let mut json = to_json(&verdict)?;
    json["di_dt_0"] = json!(slope0);
    json["tol_sign"] = json!(tol);
    json["relaxation_time"] = json!(tau);
    json["samples"] = json!(trace.rows.len());
    Ok(Output { table, json })
}

pub fn sector(ctx: &Context, path: &Path) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let r = sector_certificate_with(&m.model, &ctx.tolerances)?;
    let mut table = Table::key_value();
    table.real("min_q", r.min_q);
    table.real("min_sec", r.min_sec);
    table.pair("hypothesis_holds", r.hypothesis_holds);
    table.pair("sector_sec_holds", r.sector_sec_holds);
    table.pair("normal", r.normal);
    table.pair("wedge_holds", r.wedge_holds.map_or_else(String::new, |w| w.to_string()));
    table.pair("boundary", r.boundary);
    table.real("tolerance", r.tolerance);
    Ok(Output {
        table,
        json: to_json(&r)?,
    })
}

pub fn chi(_ctx: &Context, path: &Path, g: &str, b: &str, t_grid: &str) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let n = m.model.n();
    let g = load_observable(g, n)?;
    let b = load_observable(b, n)?;
    let times = parse_time_grid(t_grid)?;
    let chi = susceptibility(&g, &b, &m.model, &times)?;
    let mut table = Table::new(["t", "chi"]);
    for (t, v) in chi.times.iter().zip(&chi.values) {
        table.push(vec![real(*t), real(*v)]);
    }
    Ok(Output {
        table,
        json: to_json(&chi)?,
    })
}

/// Largest resolution up to 60 whose interior grid has at most 20 000 nodes.
fn default_resolution(n: usize) -> usize {
    let nodes = |r: usize| -> f64 {
        // C(r − 1, n − 1)
        (1..n).map(|i| (r - n + i) as f64 / i as f64).product()
    };
    (n..=60.max(n)).rev().find(|&r| nodes(r) <= 20_000.0).unwrap_or(n)
}

pub fn scgf(_ctx: &Context, path: &Path, f: &str, resolution: Option<usize>) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let n = m.model.n();
    let f = load_observable(f, n)?;
    let resolution = resolution.unwrap_or_else(|| default_resolution(n));
    let grid = RateGrid::new(&m.model, resolution)?;
    let check = legendre_duality(&f, &m.model, &grid)?;
    let mut table = Table::key_value();
    table.real("scgf", check.scgf);
    table.real("legendre_sup", check.polished_max);
    table.real("grid_sup", check.grid_max);
    table.real("residual", check.residual());
    table.pair("resolution", resolution);
    for (label, w) in m.labels().iter().zip(&check.argmax) {
        table.real(&format!("argmax_{label}"), *w);
    }
    let mut json = to_json(&check)?;
    json["residual"] = json!(check.residual());
    json["resolution"] = json!(resolution);
    Ok(Output { table, json })
}

pub fn sample(
    _ctx: &Context,
    path: &Path,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    from: Option<&str>,
) -> Result<Output, CliError> {
    let m = load_model(path)?;
    let report = match from {
        None => ergodic_check(&m.model, horizon, n_samples, seed)?,
        Some(arg) => {
            let mu = load_distribution(arg, &m.model)?;
            ergodic_check_from(&m.model, &mu, horizon, n_samples, seed)?
        }
    };
    let mut table = Table::new(["state", "p_T", "stderr", "rho", "sigma"]);
    for (i, label) in m.labels().iter().enumerate() {
        table.push(vec![
            label.clone(),
            real(report.estimate.p_t[i]),
            real(report.estimate.stderr[i]),
            real(report.rho[i]),
            real(report.deviation_sigma[i]),
        ]);
    }
    Ok(Output {
        table,
        json: to_json(&report)?,
    })
}
