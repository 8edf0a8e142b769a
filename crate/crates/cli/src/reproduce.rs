use std::path::Path;

use dvlab::evolution::{default_sign_tolerance, di_dt, evolve_default, monotonicity_scan, EvolutionTrace, EvolveOptions};
use dvlab::functionals::dirichlet_form;
use dvlab::markov::stationary_distribution;
use dvlab::model_io::{
    make_counterexample_ring, make_detailed_balance, make_homogeneous_ring, make_perturbed_initial,
    trace_to_csv, OffsetConvention, Perturbation,
};
use dvlab::{Distribution, Observable, RateModel};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::output::{opt, real, Output, Table};
use crate::{CliError, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    /// Inhomogeneous versus homogeneous four-state ring started near ρ.
    Fig1,
    /// Homogeneous six-state ring: I(μ_t) decreases from the start.
    RingHomogeneous,
    /// Three-state reversible model: I equals the Dirichlet form along the trace.
    DbDirichlet,
}

struct Run {
    name: &'static str,
    model: RateModel,
    labels: Vec<String>,
    mu: Distribution,
    energy: Option<Observable>,
    expect_slip: bool,
}

struct RunResult {
    name: &'static str,
    file: String,
    slope0: f64,
    slip: bool,
    monotone_from: Option<f64>,
    max_positive: f64,
    expect_slip: bool,
    trace: EvolutionTrace,
}

fn labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

fn execute(ctx: &Context, run: Run, dir: &Path) -> Result<RunResult, CliError> {
    let opts = EvolveOptions {
        energy: run.energy,
        tolerances: ctx.tolerances,
        model_name: run.name.to_string(),
        initial_label: run.name.to_string(),
    };
    let trace = evolve_default(&run.model, &run.mu, &opts)?;
    let tol = default_sign_tolerance(&trace, &run.model)?;
    let verdict = monotonicity_scan(&trace, tol)?;
    let file = format!("{}.csv", run.name);
    let path = dir.join(&file);
    std::fs::write(&path, trace_to_csv(&trace, &run.labels)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(RunResult {
        name: run.name,
        file,
        slope0: di_dt(&run.mu, &run.model)?,
        slip: verdict.initial_slip,
        monotone_from: verdict.monotone_from,
        max_positive: verdict.max_positive_derivative,
        expect_slip: run.expect_slip,
        trace,
    })
}

fn gnuplot_script(results: &[RunResult]) -> String {
    let mut s = String::from(
        "set datafile separator \",\"\nset xlabel \"t\"\nset ylabel \"I(mu_t)\"\nset key top right\nplot ",
    );
    let curves: Vec<String> = results
        .iter()
        .map(|r| format!("\"{}\" using \"t\":\"I\" with linespoints pt 6 title \"{}\"", r.file, r.name))
        .collect();
    s.push_str(&curves.join(", \\\n     "));
    s.push('\n');
    s
}

pub fn run(ctx: &Context, target: Target, dir: &Path, gnuplot: bool) -> Result<Output, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let runs = match target {
        Target::Fig1 => fig1_runs()?,
        Target::RingHomogeneous => vec![ring_run()?],
        Target::DbDirichlet => vec![db_run()?],
    };
    let results = runs
        .into_iter()
        .map(|r| execute(ctx, r, dir))
        .collect::<Result<Vec<_>, _>>()?;

    let mut table = Table::new([
        "trace",
        "file",
        "dI_dt_0",
        "initial_slip",
        "expected_slip",
        "monotone_from",
        "max_positive_derivative",
        "dirichlet_gap",
        "free_energy_increases",
    ]);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in &results {
        table.push(vec![
            r.name.to_string(),
            r.file.clone(),
            real(r.slope0),
            r.slip.to_string(),
            r.expect_slip.to_string(),
            opt(r.monotone_from),
            real(r.max_positive),
            String::new(),
            String::new(),
        ]);
        rows.push(json!({
            "trace": r.name,
            "file": r.file,
            "di_dt_0": r.slope0,
            "initial_slip": r.slip,
            "expected_slip": r.expect_slip,
            "monotone_from": r.monotone_from,
            "max_positive_derivative": r.max_positive,
        }));
        if r.slip != r.expect_slip {
            failures.push(format!("{}: initial_slip = {}, expected {}", r.name, r.slip, r.expect_slip));
        }
        if r.expect_slip && !(r.slope0 > 0.0) {
            failures.push(format!("{}: dI/dt(0) = {} is not positive", r.name, r.slope0));
        }
    }
    let mut json = json!({ "target": format!("{target:?}"), "traces": rows });
    if target == Target::DbDirichlet {
        extra_db_checks(&results[0], &mut table, &mut json, &mut failures)?;
    }
    if gnuplot {
        let name = match target {
            Target::Fig1 => "fig1.gp",
            Target::RingHomogeneous => "ring_homogeneous.gp",
            Target::DbDirichlet => "db_dirichlet.gp",
        };
        let path = dir.join(name);
        std::fs::write(&path, gnuplot_script(&results)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if !failures.is_empty() {
        eprint!("{}", table.to_csv()?);
        return Err(CliError::Check(failures.join("; ")));
    }
    Ok(Output { table, json })
}

fn extra_db_checks(r: &RunResult, table: &mut Table, json: &mut Value, failures: &mut Vec<String>) -> Result<(), CliError> {
    let model = db_model()?;
    let mut worst = 0.0f64;
    for row in &r.trace.rows {
        if !row.dv_rate.is_finite() {
            continue;
        }
        let mu = Distribution::new(row.mu.clone())?;
        worst = worst.max((row.dv_rate - dirichlet_form(&mu, &model)?).abs());
    }
    let f_up = r.trace.rows.windows(2).filter(|w| match (w[0].free_energy, w[1].free_energy) {
        (Some(a), Some(b)) => b > a + 1e-13 * a.abs().max(1.0),
        _ => false,
    });
    let increases = f_up.count();
    let row = table.rows.last_mut().expect("one trace");
    row[7] = real(worst);
    row[8] = increases.to_string();
    json["max_abs_rate_minus_dirichlet"] = json!(worst);
    json["free_energy_increases"] = json!(increases);
    if worst > 1e-8 {
        failures.push(format!("max |I − D| = {worst:e} along the trace"));
    }
    if increases > 0 {
        failures.push(format!("free energy increased on {increases} steps"));
    }
    Ok(())
}

fn fig1_runs() -> Result<Vec<Run>, CliError> {
    let v = Observable::new(vec![1.0, -3.0, 0.0, 2.0]);
    let start = |model: &RateModel| -> Result<Distribution, CliError> {
        let rho = stationary_distribution(model)?;
        Ok(make_perturbed_initial(&rho, Perturbation::V(&v, OffsetConvention::Unweighted), 0.02)?)
    };
    let inhom = make_counterexample_ring();
    let hom = make_homogeneous_ring(4, 1.0)?;
    Ok(vec![
        Run {
            name: "fig1_inhomogeneous",
            mu: start(&inhom)?,
            model: inhom,
            labels: labels(4),
            energy: None,
            expect_slip: true,
        },
        Run {
            name: "fig1_homogeneous",
            mu: start(&hom)?,
            model: hom,
            labels: labels(4),
            energy: None,
            expect_slip: false,
        },
    ])
}

fn ring_run() -> Result<Run, CliError> {
    Ok(Run {
        name: "ring_homogeneous",
        model: make_homogeneous_ring(6, 1.0)?,
        labels: labels(6),
        mu: Distribution::normalized((1..=6).map(f64::from).collect())?,
        energy: None,
        expect_slip: false,
    })
}

fn db_energy() -> Observable {
    Observable::new(vec![0.0, 1.0, 0.5])
}

fn db_model() -> Result<RateModel, CliError> {
    let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 0.5, 2.0, 0.5, 0.0]);
    Ok(make_detailed_balance(&db_energy(), &s)?)
}

fn db_run() -> Result<Run, CliError> {
    Ok(Run {
        name: "db_dirichlet",
        model: db_model()?,
        labels: ["low", "high", "mid"].map(String::from).to_vec(),
        mu: Distribution::new(vec![0.6, 0.1, 0.3])?,
        energy: Some(db_energy()),
        expect_slip: false,
    })
}
