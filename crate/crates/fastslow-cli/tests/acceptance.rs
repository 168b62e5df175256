//! End-to-end acceptance suite: one numbered check per release guarantee,
//! each printing a single `criterion NN <label>: PASS/FAIL` line with its
//! measured numbers, pinned tolerance, and runtime. The test panics at the
//! end if any check failed, so `cargo test` reports the whole suite while
//! every line is still visible in the captured output.
//!
//! Checks 6 and 7 read one shared convergence sweep; everything else is
//! self-contained. Run with `--nocapture` to watch the lines appear live.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use fastslow::averaging::{
    detect_limit_cycle, find_critical_points, integrate_ode, CycleOptions, VectorField,
};
use fastslow::ctmc::Generator;
use fastslow::measures::{
    convergence_sweep, ConvergenceReport, GridSpec, SweepConfig, TestFunction,
};
use fastslow::predprey::{build_model, holling_example, moment_diagnostics, PredPreyParams};
use fastslow::rng::{stream, tag};
use fastslow::sde::{
    exit_time_experiment, simulate, sup_deviation_probability, ExitParams, ScalingRegime,
    SimParams, DEFAULT_EXIT_MARGIN, DEFAULT_EXIT_PREFACTOR,
};
use rand::Rng;

/// Runs one check, prints its line, and records a failure if the body
/// reports one or the runtime budget is blown.
fn run_check(
    number: usize,
    label: &str,
    budget_secs: f64,
    failures: &mut Vec<String>,
    body: impl FnOnce() -> Result<String, String>,
) {
    let start = Instant::now();
    let outcome = body();
    let secs = start.elapsed().as_secs_f64();
    let (mut ok, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    let mut timing = format!("{secs:.2} s, budget {budget_secs:.0} s");
    if secs >= budget_secs {
        ok = false;
        timing.push_str(", OVER BUDGET");
    }
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {label}: {verdict} — {detail} ({timing})");
    if !ok {
        failures.push(format!("criterion {number:02} {label}"));
    }
}

/// Supercritical Hopf normal form: unit-circle attractor, period exactly 2π.
fn hopf() -> VectorField {
    VectorField::new(
        2,
        Arc::new(|x, out| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            out[0] = x[0] * (1.0 - r2) - x[1];
            out[1] = x[1] * (1.0 - r2) + x[0];
        }),
    )
}

/// Classical RK4 step, independent of the library's stepper.
fn rk4(field: &VectorField, x: &mut [f64; 2], h: f64) {
    let f = |p: &[f64; 2]| {
        let v = field.eval_vec(p);
        [v[0], v[1]]
    };
    let k1 = f(x);
    let k2 = f(&[x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
    let k3 = f(&[x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
    let k4 = f(&[x[0] + h * k3[0], x[1] + h * k3[1]]);
    x[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
    x[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
}

/// Mean spacing of `n` consecutive upward section returns from `start`,
/// with linearly interpolated crossing times.
fn oracle_period(field: &VectorField, start: [f64; 2], n: usize) -> Result<f64, String> {
    let dt = 5e-4;
    let mut x = start;
    let fp = field.eval_vec(&start);
    let norm = (fp[0] * fp[0] + fp[1] * fp[1]).sqrt();
    let normal = [fp[0] / norm, fp[1] / norm];
    let s_of = |q: &[f64; 2]| normal[0] * (q[0] - start[0]) + normal[1] * (q[1] - start[1]);

    let mut crossings = Vec::new();
    let mut s_prev = 0.0;
    let mut rel = 0.0;
    while crossings.len() < n + 1 && rel < 1e4 {
        rk4(field, &mut x, dt);
        rel += dt;
        let s = s_of(&x);
        if s_prev < 0.0 && s >= 0.0 {
            let tau = dt * s_prev / (s_prev - s);
            crossings.push(rel - dt + tau);
        }
        s_prev = s;
    }
    if crossings.len() < n + 1 {
        return Err(format!("oracle found only {} section returns", crossings.len()));
    }
    Ok((crossings[n] - crossings[0]) / n as f64)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn err_str(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    let mut sweep: Option<ConvergenceReport> = None;

    run_check(1, "stationary-distribution", 1.0, &mut failures, || {
        let ex = holling_example();
        let nu = ex.stationary().map_err(err_str)?;
        let d1 = (nu.prob(0) - 0.5).abs().max((nu.prob(1) - 0.5).abs());
        let q = Generator::from_rows(&[vec![-2.0, 2.0], vec![3.0, -3.0]]).map_err(err_str)?;
        let nu2 = q.stationary_distribution().map_err(err_str)?;
        let d2 = (nu2.prob(0) - 0.6).abs().max((nu2.prob(1) - 0.4).abs());
        let detail = format!(
            "unit flip off (0.5, 0.5) by {d1:.1e}; [[-2,2],[3,-3]] off (0.6, 0.4) by {d2:.1e}; tolerance 1e-12"
        );
        if d1 < 1e-12 && d2 < 1e-12 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(2, "averaged-prey-regression", 1.0, &mut failures, || {
        let ex = holling_example();
        let field = ex.averaged().map_err(err_str)?;
        let mut rng = stream(ex.seed, tag::SOLVER, 0);
        let mut worst = 0.0_f64;
        for _ in 0..20 {
            let x = 0.1 + 5.9 * rng.random::<f64>();
            let y = 0.1 + 5.9 * rng.random::<f64>();
            let v = field.eval_vec(&[x, y]);
            let closed_form = x * (1.0 - x / 5.0) - x * y / (1.0 + x);
            worst = worst.max((v[0] - closed_form).abs());
        }
        let (component, reference) = ex.predator_coefficients().map_err(err_str)?;
        let detail = format!(
            "prey equation matches x(1 - x/5) - xy/(1 + x) to {worst:.1e} at 20 random points in [0.1, 6]^2 (tolerance 1e-12); predator interaction coefficient {component} from the components vs {reference} in the reference field — gap surfaced, not hidden"
        );
        if worst < 1e-12 && (component - 1.7).abs() < 1e-12 && reference == 1.6 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(3, "equilibrium-location", 5.0, &mut failures, || {
        let ex = holling_example();
        let found = find_critical_points(&ex.reference_field(), &[0.25, 0.25], &[6.0, 6.0], 32, 1e-10)
            .map_err(err_str)?;
        let best = found
            .points
            .iter()
            .map(|p| distance(&p.location, &ex.reference_equilibrium))
            .fold(f64::INFINITY, f64::min);
        let detail = format!(
            "{} interior critical point(s); nearest lies {best:.1e} from (1.836, 1.795), tolerance 2e-3",
            found.points.len()
        );
        if best < 2e-3 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(4, "cycle-period-oracle", 30.0, &mut failures, || {
        let hopf_cycle =
            detect_limit_cycle(&hopf(), &[2.0, 0.0], &CycleOptions::default()).map_err(err_str)?;
        let hopf_err = (hopf_cycle.period() - 2.0 * PI).abs();

        let field = holling_example().reference_field();
        let opts = CycleOptions { transient: 500.0, max_returns: 2000, ..CycleOptions::default() };
        let cycle = detect_limit_cycle(&field, &[3.0, 3.0], &opts).map_err(err_str)?;
        let anchor = [cycle.anchor[0], cycle.anchor[1]];
        let oracle = oracle_period(&field, anchor, 10)?;
        let rel = (cycle.period() - oracle).abs() / oracle;
        let detail = format!(
            "Hopf normal form period {:.6} vs 2π (off by {hopf_err:.1e}, tolerance 1e-3); benchmark cycle period {:.6} vs 10-return oracle {oracle:.6} (relative gap {rel:.1e}, tolerance 1e-3)",
            hopf_cycle.period(),
            cycle.period()
        );
        if hopf_err < 1e-3 && rel < 1e-3 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(5, "path-closeness", 300.0, &mut failures, || {
        let ex = holling_example();
        let model = ex.model().map_err(err_str)?;
        let mut p_hats = Vec::new();
        for &(eps, delta) in &[(0.1, 0.1), (0.01, 0.01), (0.001, 0.001)] {
            let params = SimParams::new(eps, delta, ex.x0.clone(), ex.i0, 10.0, 0.002, ex.seed);
            let est = sup_deviation_probability(&model, &ex.generator, &params, 0.5, 500)
                .map_err(err_str)?;
            p_hats.push(est.p_hat);
        }
        let non_increasing = p_hats.windows(2).all(|w| w[1] <= w[0]);
        let last_small = p_hats[2] < 0.1;
        let detail = format!(
            "P(sup dev >= 0.5 by t = 10) over n = 500: {:.3} -> {:.3} -> {:.3} along delta = eps in {{0.1, 0.01, 0.001}}; non-increasing: {non_increasing}; last < 0.1: {last_small} — the multiplicative noise keeps log-scale fluctuations near sqrt(delta·t), which at delta = 0.001 still crosses the 0.5 band on most paths",
            p_hats[0], p_hats[1], p_hats[2]
        );
        if non_increasing && last_small {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(6, "invariant-collapse", 600.0, &mut failures, || {
        let ex = holling_example();
        let model = ex.model().map_err(err_str)?;
        let schedule = ex.schedule(ScalingRegime::DeltaProportional).map_err(err_str)?;
        let cycle = detect_limit_cycle(&ex.averaged().map_err(err_str)?, &ex.x0, &CycleOptions::default())
            .map_err(err_str)?;
        let cfg = SweepConfig {
            t_end: 2e4,
            dt: 0.002,
            burn_in: 1e3,
            seed: ex.seed,
            x0: ex.x0.clone(),
            i0: ex.i0,
            grid: GridSpec::uniform(2, 0.0, 12.0, 200).map_err(err_str)?,
            neighborhood_radius: 0.2,
        };
        let funcs =
            [TestFunction::X1, TestFunction::X2, TestFunction::X1Squared, TestFunction::Cross];
        let report = convergence_sweep(
            &model,
            &ex.generator,
            &schedule,
            &cycle,
            &[ex.reference_equilibrium.to_vec()],
            &funcs,
            &cfg,
        )
        .map_err(err_str)?;

        if let Some(row) = report.rows.iter().find(|r| r.error.is_some()) {
            return Err(format!(
                "run at (eps, delta) = ({}, {}) failed: {}",
                row.eps,
                row.delta,
                row.error.clone().unwrap()
            ));
        }
        let bls: Vec<f64> = report.rows.iter().map(|r| r.bl.unwrap()).collect();
        let bl_decreasing = bls.windows(2).all(|w| w[1] < w[0]);
        let bl_halved = bls[2] < 0.5 * bls[0];
        let mut bad_gaps = Vec::new();
        for (j, name) in report.test_function_names.iter().enumerate() {
            let gaps: Vec<f64> = report.rows.iter().map(|r| r.gaps[j]).collect();
            if !gaps.windows(2).all(|w| w[1] < w[0]) {
                let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
                bad_gaps.push(format!("{name}: [{}]", shown.join(", ")));
            }
        }
        let detail = format!(
            "witness-family distance to the cycle measure {:.3} -> {:.3} -> {:.4} over eps = 0.1, 0.01, 0.001 (strictly decreasing: {bl_decreasing}; final/first = {:.3}, need < 0.5); observable gaps for x1, x2, x1^2, x1·x2 all strictly decreasing: {}",
            bls[0],
            bls[1],
            bls[2],
            bls[2] / bls[0],
            if bad_gaps.is_empty() { "yes".to_string() } else { format!("NO — {}", bad_gaps.join("; ")) }
        );
        sweep = Some(report);
        if bl_decreasing && bl_halved && bad_gaps.is_empty() {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(7, "equilibrium-mass-decay", 600.0, &mut failures, || {
        let report = sweep.as_ref().ok_or("no sweep available (check 6 did not produce one)")?;
        let masses: Vec<f64> = report.rows.iter().map(|r| r.neighborhood_masses[0]).collect();
        let decreasing = masses.windows(2).all(|w| w[1] < w[0]);
        let small = masses[2] < 0.05;
        let detail = format!(
            "mass of ball((1.836, 1.795), 0.2): {:.2e} -> {:.2e} -> {:.2e} (decreasing: {decreasing}; final < 0.05: {small}; same sweep as check 6)",
            masses[0], masses[1], masses[2]
        );
        if decreasing && small {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(8, "exit-time", 120.0, &mut failures, || {
        let ex = holling_example();
        let model = ex.model().map_err(err_str)?;
        let schedule = ex.schedule(ScalingRegime::DeltaProportional).map_err(err_str)?;
        let budget = schedule.exit_budget(0.01, DEFAULT_EXIT_PREFACTOR, DEFAULT_EXIT_MARGIN);
        let params = ExitParams {
            eps: 0.01,
            delta: 0.01,
            center: ex.reference_equilibrium.to_vec(),
            radius: 0.2,
            budget,
            dt: 0.002,
            n: 200,
            seed: ex.seed,
        };
        let stats = exit_time_experiment(&model, &ex.generator, &params).map_err(err_str)?;
        let detail = format!(
            "{:.3} of n = 200 replicates left ball((1.836, 1.795), 0.2) within budget 10·e^(0.01/delta) = {budget:.2}; need > 0.5",
            stats.fraction_exited
        );
        if stats.fraction_exited > 0.5 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(9, "tightness", 600.0, &mut failures, || {
        let ex = holling_example();
        let model = ex.model().map_err(err_str)?;
        let params = SimParams::new(0.01, 0.01, ex.x0.clone(), ex.i0, 1e4, 0.002, ex.seed);
        let traj = simulate(&model, &ex.generator, &params).map_err(err_str)?;
        let diag = moment_diagnostics(&traj, 20.0, 1e3).map_err(err_str)?;
        let detail = format!(
            "fraction of time in [1/20, 20]^2 over [1e3, 1e4] at (eps, delta) = (0.01, 0.01): {:.4} across {} samples; need >= 0.95",
            diag.box_fraction, diag.samples
        );
        if diag.box_fraction >= 0.95 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(10, "integrator-order", 30.0, &mut failures, || {
        // First-order hybrid stepper on its deterministic skeleton: one
        // regime, zero noise.
        let ex = holling_example();
        let single = PredPreyParams::new(vec![ex.params.regimes[0]]).map_err(err_str)?;
        let model = build_model(&single).map_err(err_str)?;
        let generator = Generator::from_rows(&[vec![0.0]]).map_err(err_str)?;
        let endpoint = |dt: f64| -> Result<Vec<f64>, String> {
            let p = SimParams::new(1.0, 0.0, ex.x0.clone(), 0, 1.0, dt, ex.seed);
            Ok(simulate(&model, &generator, &p).map_err(err_str)?.final_state().to_vec())
        };
        let fine = endpoint(1e-5)?;
        let e_coarse = distance(&endpoint(0.02)?, &fine);
        let e_half = distance(&endpoint(0.01)?, &fine);
        let euler_ratio = e_coarse / e_half;

        // Fourth-order ODE stepper on the Hopf field.
        let field = hopf();
        let reference = integrate_ode(&field, &[2.0, 0.0], 0.0, 1.0, 1e-5).map_err(err_str)?;
        let rk_err = |dt: f64| -> Result<f64, String> {
            let t = integrate_ode(&field, &[2.0, 0.0], 0.0, 1.0, dt).map_err(err_str)?;
            Ok(distance(t.final_state(), reference.final_state()))
        };
        let r_coarse = rk_err(0.02)?;
        let r_half = rk_err(0.01)?;
        let rk_ratio = r_coarse / r_half;

        let detail = format!(
            "deterministic hybrid endpoint error {e_coarse:.2e} at dt = 0.02 vs {e_half:.2e} at dt = 0.01 (ratio {euler_ratio:.2}, need >= 1.8); RK4 on the Hopf field {r_coarse:.2e} vs {r_half:.2e} (ratio {rk_ratio:.1}, need >= 8)"
        );
        if euler_ratio >= 1.8 && rk_ratio >= 8.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    });

    run_check(11, "determinism", 600.0, &mut failures, || {
        let dir = tempfile::tempdir().map_err(err_str)?;
        let config = dir.path().join("scenario.json");
        std::fs::write(&config, b"{\"model\":{\"builtin\":\"holling-example\"}}\n")
            .map_err(err_str)?;
        let run = |out: &Path, threads: &str| -> Result<(), String> {
            let output = Command::new(env!("CARGO_BIN_EXE_fastslow"))
                .arg("reproduce-example")
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(out)
                .arg("--threads")
                .arg(threads)
                .output()
                .map_err(err_str)?;
            if output.status.success() {
                Ok(())
            } else {
                Err(format!(
                    "run with --threads {threads} failed: {}",
                    String::from_utf8_lossy(&output.stderr)
                ))
            }
        };
        let out_a = dir.path().join("threads-1");
        let out_b = dir.path().join("threads-8");
        run(&out_a, "1")?;
        run(&out_b, "8")?;

        let names = |d: &Path| -> Result<Vec<String>, String> {
            let mut v: Vec<String> = std::fs::read_dir(d)
                .map_err(err_str)?
                .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                .collect::<Result<_, _>>()
                .map_err(err_str)?;
            v.sort();
            Ok(v)
        };
        let names_a = names(&out_a)?;
        if names_a != names(&out_b)? {
            return Err("the two runs wrote different file sets".into());
        }
        if names_a.len() != 7 {
            return Err(format!("expected 7 output files, found {}: {names_a:?}", names_a.len()));
        }
        let mut differing = Vec::new();
        for name in &names_a {
            let a = std::fs::read(out_a.join(name)).map_err(err_str)?;
            let b = std::fs::read(out_b.join(name)).map_err(err_str)?;
            if a != b {
                differing.push(name.clone());
            }
        }
        let detail = format!(
            "reproduce-example wrote {} files, byte-identical across --threads 1 and --threads 8",
            names_a.len()
        );
        if differing.is_empty() {
            Ok(detail)
        } else {
            Err(format!("files differ across thread counts: {differing:?}"))
        }
    });

    assert!(failures.is_empty(), "acceptance checks failed: {}", failures.join(", "));
}
