//! Command implementations. Every command takes a validated [`Scenario`],
//! writes its artifacts under one output directory and returns the paths it
//! wrote, in a fixed order. All outputs are reproducible byte-for-byte from
//! (scenario, seed).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fastslow::averaging::{
    cycle_measure, detect_limit_cycle, find_critical_points, integrate_ode, CycleOptions,
    LimitCycle, VectorField,
};
use fastslow::measures::{
    convergence_sweep, default_neighborhood_radius, empirical_measure, SweepConfig,
};
use fastslow::sde::{
    exit_time_experiment, simulate, ExitParams, SimParams, Trajectory, DEFAULT_EXIT_MARGIN,
    DEFAULT_EXIT_PREFACTOR,
};

use crate::scenario::{ConfigError, Resolved, Scenario};

/// A command failure: bad configuration, a module error, or an unwritable
/// output file.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Toolkit(#[from] fastslow::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The experiment selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Average,
    Cycle,
    Invariant,
    ExitTime,
    Converge,
    ReproduceExample,
}

/// Runs one command and returns the files it wrote.
pub fn execute(
    scenario: &Scenario,
    command: CommandKind,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let resolved = scenario.resolve()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Write {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    match command {
        CommandKind::Simulate => cmd_simulate(scenario, &resolved, out_dir),
        CommandKind::Average => cmd_average(scenario, &resolved, out_dir),
        CommandKind::Cycle => cmd_cycle(scenario, &resolved, out_dir),
        CommandKind::Invariant => cmd_invariant(scenario, &resolved, out_dir),
        CommandKind::ExitTime => cmd_exit_time(scenario, &resolved, out_dir),
        CommandKind::Converge => cmd_converge(scenario, &resolved, out_dir),
        CommandKind::ReproduceExample => cmd_reproduce(scenario, &resolved, out_dir),
    }
}

fn write_file(
    path: PathBuf,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf, CliError> {
    let wrap = |source| CliError::Write { path: path.clone(), source };
    let file = File::create(&path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)?;
    Ok(path)
}

/// First (coarsest) schedule row: the scales one-shot commands run at.
fn head_scales(resolved: &Resolved) -> (f64, f64) {
    resolved.schedule.pairs()[0]
}

fn sim_params(scenario: &Scenario, eps: f64, delta: f64) -> SimParams {
    SimParams::new(
        eps,
        delta,
        scenario.sim.x0.clone(),
        scenario.sim.i0,
        scenario.sim.t_end,
        scenario.sim.dt,
        scenario.sim.seed,
    )
}

fn averaged(resolved: &Resolved) -> Result<VectorField, fastslow::Error> {
    let nu = resolved.generator.stationary_distribution()?;
    fastslow::averaging::averaged_field(&resolved.model, &nu)
}

fn detect_cycle(scenario: &Scenario, field: &VectorField) -> Result<LimitCycle, fastslow::Error> {
    detect_limit_cycle(field, &scenario.sim.x0, &CycleOptions::default())
}

// ---------------------------------------------------------------------------
// simulate: one hybrid trajectory at the head of the schedule
// ---------------------------------------------------------------------------

fn cmd_simulate(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let (eps, delta) = head_scales(resolved);
    let traj = simulate(&resolved.model, &resolved.generator, &sim_params(scenario, eps, delta))?;
    let path = write_file(
        out.join(format!("trajectory_eps_{eps}_delta_{delta}.csv")),
        |w| traj.write_csv(w),
    )?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// average: field sampled on the grid + one ODE trajectory
// ---------------------------------------------------------------------------

fn cmd_average(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let field = averaged(resolved)?;
    let spec = &scenario.grid;
    let sample = write_file(out.join("averaged_field.csv"), |w| {
        writeln!(w, "x1,x2,f1,f2")?;
        for cell in 0..spec.num_cells() {
            let c = spec.cell_center(cell);
            let f = field.eval_vec(&c);
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", c[0], c[1], f[0], f[1])?;
        }
        Ok(())
    })?;
    let ode = integrate_ode(&field, &scenario.sim.x0, 0.0, scenario.sim.t_end, scenario.sim.dt)?;
    let traj = write_file(out.join("averaged_trajectory.csv"), |w| ode.write_csv(w))?;
    Ok(vec![sample, traj])
}

// ---------------------------------------------------------------------------
// cycle: detected limit cycle + its period
// ---------------------------------------------------------------------------

fn cmd_cycle(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let field = averaged(resolved)?;
    let cycle = detect_cycle(scenario, &field)?;
    let orbit = write_file(out.join("cycle.csv"), |w| cycle.write_csv(w))?;
    let period = write_file(out.join("cycle_period.txt"), |w| {
        writeln!(w, "{:.16e}", cycle.period())
    })?;
    Ok(vec![orbit, period])
}

// ---------------------------------------------------------------------------
// invariant: empirical occupation measure + the cycle's occupation measure
// ---------------------------------------------------------------------------

fn cmd_invariant(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let (eps, delta) = head_scales(resolved);
    let mu = empirical_measure(
        &resolved.model,
        &resolved.generator,
        &sim_params(scenario, eps, delta),
        &scenario.grid,
        scenario.sim.burn_in,
    )?;
    let empirical = out.join(format!("invariant_eps_{eps}_delta_{delta}.measure"));
    mu.save(&empirical)?;

    let field = averaged(resolved)?;
    let cycle = detect_cycle(scenario, &field)?;
    let mu0 = cycle_measure(&cycle, &scenario.grid)?;
    let reference = out.join("invariant_cycle.measure");
    mu0.save(&reference)?;
    Ok(vec![empirical, reference])
}

// ---------------------------------------------------------------------------
// exit-time: escape from a ball around the most unstable critical point
// ---------------------------------------------------------------------------

fn cmd_exit_time(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let field = averaged(resolved)?;
    let search =
        find_critical_points(&field, scenario.grid.lo(), scenario.grid.hi(), 32, 1e-9)?;
    let center = search
        .points
        .iter()
        .max_by(|a, b| a.max_real_part().total_cmp(&b.max_real_part()))
        .ok_or_else(|| {
            fastslow::Error::InvalidInput("no critical point inside the grid box".into())
        })?
        .location
        .clone();
    let cycle = detect_cycle(scenario, &field)?;
    let radius = default_neighborhood_radius(&cycle, &[center.clone()]);
    let (eps, delta) = head_scales(resolved);
    let budget = resolved.schedule.exit_budget(eps, DEFAULT_EXIT_PREFACTOR, DEFAULT_EXIT_MARGIN);
    let stats = exit_time_experiment(
        &resolved.model,
        &resolved.generator,
        &ExitParams {
            eps,
            delta,
            center,
            radius,
            budget,
            dt: scenario.sim.dt,
            n: scenario.sim.n,
            seed: scenario.sim.seed,
        },
    )?;
    let path = write_file(out.join("exit_times.csv"), |w| stats.write_csv(w))?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// converge: the full sweep along the schedule
// ---------------------------------------------------------------------------

fn cmd_converge(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let field = averaged(resolved)?;
    let cycle = detect_cycle(scenario, &field)?;
    let search =
        find_critical_points(&field, scenario.grid.lo(), scenario.grid.hi(), 32, 1e-9)?;
    let points: Vec<Vec<f64>> = search.points.iter().map(|p| p.location.clone()).collect();
    let radius = default_neighborhood_radius(&cycle, &points);
    let cfg = SweepConfig {
        t_end: scenario.sim.t_end,
        dt: scenario.sim.dt,
        burn_in: scenario.sim.burn_in,
        seed: scenario.sim.seed,
        x0: scenario.sim.x0.clone(),
        i0: scenario.sim.i0,
        grid: scenario.grid.clone(),
        neighborhood_radius: radius,
    };
    let report = convergence_sweep(
        &resolved.model,
        &resolved.generator,
        &resolved.schedule,
        &cycle,
        &points,
        &resolved.test_functions,
        &cfg,
    )?;
    let path = write_file(out.join("convergence.csv"), |w| report.write_csv(w))?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// reproduce-example: the benchmark figures
// ---------------------------------------------------------------------------

/// Scales of the two stochastic figure panels.
const FIGURE_SCALES: [(f64, f64); 2] = [(0.01, 0.01), (0.001, 0.001)];

fn write_series(path: PathBuf, traj: &Trajectory) -> Result<PathBuf, CliError> {
    write_file(path, |w| traj.write_csv(w))
}

fn write_phase(path: PathBuf, states: impl Iterator<Item = (f64, f64)>) -> Result<PathBuf, CliError> {
    write_file(path, |w| {
        writeln!(w, "x1,x2")?;
        for (x, y) in states {
            writeln!(w, "{x:.16e},{y:.16e}")?;
        }
        Ok(())
    })
}

/// Runs the full benchmark pipeline: hybrid trajectories at the two figure
/// scales, the averaged trajectory, matching phase portraits, and the echoed
/// scenario. Writes exactly seven files.
fn cmd_reproduce(
    scenario: &Scenario,
    resolved: &Resolved,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::with_capacity(7);
    for (k, (eps, delta)) in FIGURE_SCALES.into_iter().enumerate() {
        let params = sim_params(scenario, eps, delta).with_replicate(k as u64);
        let traj = simulate(&resolved.model, &resolved.generator, &params)?;
        written.push(write_series(out.join(format!("example_series_eps_{eps}.csv")), &traj)?);
        written.push(write_phase(
            out.join(format!("example_phase_eps_{eps}.csv")),
            (0..traj.len()).map(|j| {
                let s = traj.state(j);
                (s[0], s[1])
            }),
        )?);
    }
    let field = averaged(resolved)?;
    let ode = integrate_ode(&field, &scenario.sim.x0, 0.0, scenario.sim.t_end, scenario.sim.dt)?;
    written.push(write_file(out.join("example_series_averaged.csv"), |w| {
        writeln!(w, "t,x1,x2")?;
        for j in 0..ode.len() {
            let s = ode.state(j);
            writeln!(w, "{:.16e},{:.16e},{:.16e}", ode.time(j), s[0], s[1])?;
        }
        Ok(())
    })?);
    written.push(write_phase(
        out.join("example_phase_averaged.csv"),
        (0..ode.len()).map(|j| {
            let s = ode.state(j);
            (s[0], s[1])
        }),
    )?);
    written.push(write_file(out.join("example_scenario.json"), |w| {
        writeln!(w, "{}", scenario.to_json())
    })?);
    Ok(written)
}
