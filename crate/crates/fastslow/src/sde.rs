//! Hybrid Euler–Maruyama integration and the experiments built on it.
//!
//! The integrator advances
//!
//! ```text
//! dX(t) = f(X(t), α(t)) dt + sqrt(δ) σ(X(t), α(t)) dW(t)
//! ```
//!
//! with steps of size `min(dt, time to the next regime jump)`, so every
//! regime switch lands exactly on a substep boundary and the chain is never
//! sampled on a coarse grid. Jump times come from the exact sampler in
//! [`crate::ctmc`]; the regime path is right-continuous at sample times.
//!
//! Positive models (multiplicative coefficients, see
//! [`HybridModel::positive`]) are integrated in log coordinates: with
//! `U = ln X` coordinatewise,
//!
//! ```text
//! dU_k = (g_k(X, α) − δ/2 Σ_j s_kj(X, α)²) dt + sqrt(δ) Σ_j s_kj(X, α) dW_j
//! ```
//!
//! which keeps every coordinate strictly positive for any step size.
//!
//! Randomness is keyed as `(seed, purpose, replicate)`: the regime chain of
//! replicate `k` draws from `stream(seed, tag::CHAIN, k)` and its Brownian
//! increments from `stream(seed, tag::BROWNIAN, k)`. This contract is stable:
//! tests and oracles reconstruct the exact jump sequence of a simulation by
//! re-deriving the chain stream.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::averaging;
use crate::ctmc::{Generator, JumpSampler, SwitchingPath};
use crate::error::Error;
use crate::model::HybridModel;
use crate::rng::{stream, tag};
use crate::Result;

/// Hard cap on the number of grid steps of a single integration.
pub const MAX_STEPS: f64 = (1u64 << 40) as f64;

/// Replicates are folded in fixed chunks of this size so ensemble summaries
/// are bit-identical regardless of how many worker threads run the chunks.
const ENSEMBLE_CHUNK: usize = 32;

/// Default prefactor `H` of the exit-time budget.
pub const DEFAULT_EXIT_PREFACTOR: f64 = 10.0;
/// Default exponential margin `Δ` of the exit-time budget.
pub const DEFAULT_EXIT_MARGIN: f64 = 0.01;

// ---------------------------------------------------------------------------
// Parameters and trajectories
// ---------------------------------------------------------------------------

/// Inputs of a single hybrid simulation.
#[derive(Debug, Clone)]
pub struct SimParams {
    /// Switching speedup: the chain runs at rate `1/eps`.
    pub eps: f64,
    /// Noise intensity: the diffusion is scaled by `sqrt(delta)`.
    pub delta: f64,
    pub x0: Vec<f64>,
    pub i0: usize,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    /// Replicate index in the stream key; 0 for standalone runs.
    pub replicate: u64,
}

impl SimParams {
    pub fn new(eps: f64, delta: f64, x0: Vec<f64>, i0: usize, t_end: f64, dt: f64, seed: u64) -> Self {
        Self { eps, delta, x0, i0, t0: 0.0, t_end, dt, seed, replicate: 0 }
    }

    pub fn with_replicate(mut self, replicate: u64) -> Self {
        self.replicate = replicate;
        self
    }

    pub(crate) fn validate(&self, model: &HybridModel, generator: &Generator) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidInput(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!("delta must be nonnegative, got {}", self.delta)));
        }
        if model.num_regimes() != generator.num_states() {
            return Err(Error::InvalidModel(format!(
                "model has {} regimes but generator has {} states",
                model.num_regimes(),
                generator.num_states()
            )));
        }
        if self.i0 >= model.num_regimes() {
            return Err(Error::InvalidInput(format!("initial regime {} out of range", self.i0)));
        }
        validate_grid(model, &self.x0, self.t0, self.t_end, self.dt)
    }
}

fn validate_grid(model: &HybridModel, x0: &[f64], t0: f64, t_end: f64, dt: f64) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::InvalidModel(format!(
            "x0 has dimension {} but the model has {}",
            x0.len(),
            model.dim()
        )));
    }
    if model.is_positive() && x0.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidModel(
            "positive model requires a strictly positive initial state".into(),
        ));
    }
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::InvalidSpan { t0, t_end });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    if (t_end - t0) / dt > MAX_STEPS {
        return Err(Error::InvalidInput(format!(
            "span/dt = {:e} exceeds the step cap {MAX_STEPS:e}",
            (t_end - t0) / dt
        )));
    }
    Ok(())
}

/// Number of grid steps covering `[t0, t_end]` at nominal spacing `dt`; the
/// final step is shortened to land exactly on `t_end`.
pub(crate) fn num_steps(t0: f64, t_end: f64, dt: f64) -> usize {
    (((t_end - t0) / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Time of grid sample `k` out of `n`; `k = n` is exactly `t_end`.
pub(crate) fn grid_time(t0: f64, t_end: f64, dt: f64, k: usize, n: usize) -> f64 {
    if k == n {
        t_end
    } else {
        t0 + k as f64 * dt
    }
}

/// Provenance of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryMeta {
    pub eps: f64,
    pub delta: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Time-stamped states of one simulated path, with regime labels.
///
/// Also used for deterministic ODE solutions (regimes all zero, `eps` and
/// `delta` zero in the metadata).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    /// Row-major `len × dim` states.
    states: Vec<f64>,
    regimes: Vec<usize>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub(crate) fn from_parts(
        dim: usize,
        times: Vec<f64>,
        states: Vec<f64>,
        regimes: Vec<usize>,
        meta: TrajectoryMeta,
    ) -> Self {
        debug_assert_eq!(states.len(), times.len() * dim);
        debug_assert_eq!(regimes.len(), times.len());
        Self { dim, times, states, regimes, meta }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// State at sample `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn regime(&self, k: usize) -> usize {
        self.regimes[k]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// CSV export: header `t,x1,...,xd,regime`, 17 significant digits so
    /// values round-trip exactly.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{},regime", cols.join(","))?;
        for k in 0..self.len() {
            write!(w, "{:.16e}", self.times[k])?;
            for v in self.state(k) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{}", self.regimes[k])?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Core integrator
// ---------------------------------------------------------------------------

/// Receives the integration as it happens. Both hooks return `true` to
/// continue and `false` to stop the run early (not an error).
pub(crate) trait Observer {
    /// Grid sample `k` at time `t`; regimes are right-continuous here.
    fn on_sample(&mut self, k: usize, t: f64, x: &[f64], regime: usize) -> bool;

    /// A substep of length `len` starting at `t`, during which the Euler
    /// scheme holds state `x` and regime `regime`.
    fn on_substep(&mut self, _t: f64, _len: f64, _x: &[f64], _regime: usize) -> bool {
        true
    }
}

/// Euler–Maruyama over `[t0, t_end]` with substeps cut at regime jumps.
///
/// `next_jump` yields the strictly increasing jump sequence `(time, new
/// regime)`; `None` means no further jumps. Returns `Blowup` as soon as a
/// coordinate leaves the finite range (or hits zero on a positive model).
pub(crate) fn integrate<O: Observer>(
    model: &HybridModel,
    delta: f64,
    x0: &[f64],
    i0: usize,
    t0: f64,
    t_end: f64,
    dt: f64,
    mut next_jump: impl FnMut() -> Option<(f64, usize)>,
    brownian: &mut impl Rng,
    obs: &mut O,
) -> Result<()> {
    let dim = model.dim();
    let mw = model.noise_dim();
    let positive = model.is_positive();

    let mut x = x0.to_vec();
    let mut u: Vec<f64> = if positive { x.iter().map(|v| v.ln()).collect() } else { Vec::new() };
    let mut fbuf = vec![0.0; dim];
    let mut sbuf = vec![0.0; dim * mw];
    let mut z = vec![0.0; mw];

    let n = num_steps(t0, t_end, dt);
    let mut t = t0;
    let mut regime = i0;
    let mut pending = next_jump();

    // Right continuity at the start: absorb jumps stamped at or before t0.
    loop {
        match pending {
            Some((tj, j)) if tj <= t => {
                regime = j;
                pending = next_jump();
            }
            _ => break,
        }
    }
    if !obs.on_sample(0, t0, &x, regime) {
        return Ok(());
    }

    for k in 1..=n {
        let target = grid_time(t0, t_end, dt, k, n);
        while t < target {
            let (sub_end, jump_to) = match pending {
                Some((tj, j)) if tj < target => (tj, Some(j)),
                _ => (target, None),
            };
            let h = sub_end - t;
            if h > 0.0 {
                if !obs.on_substep(t, h, &x, regime) {
                    return Ok(());
                }
                let sqdh = (delta * h).sqrt();
                let noisy = delta > 0.0;
                if noisy {
                    for zj in z.iter_mut() {
                        *zj = brownian.sample(StandardNormal);
                    }
                }
                if positive {
                    model.rate_drift(&x, regime, &mut fbuf);
                    if noisy {
                        model.rate_diffusion(&x, regime, &mut sbuf);
                    }
                    for c in 0..dim {
                        let mut du = fbuf[c] * h;
                        if noisy {
                            let row = &sbuf[c * mw..(c + 1) * mw];
                            let s2: f64 = row.iter().map(|s| s * s).sum();
                            let dw: f64 = row.iter().zip(&z).map(|(s, zj)| s * zj).sum();
                            du += -0.5 * delta * s2 * h + sqdh * dw;
                        }
                        u[c] += du;
                        x[c] = u[c].exp();
                    }
                    if x.iter().any(|&v| !v.is_finite() || v == 0.0) {
                        return Err(Error::Blowup { time: sub_end, replicate: None });
                    }
                } else {
                    model.drift(&x, regime, &mut fbuf);
                    if noisy {
                        model.diffusion(&x, regime, &mut sbuf);
                    }
                    for c in 0..dim {
                        let mut dx = fbuf[c] * h;
                        if noisy {
                            let row = &sbuf[c * mw..(c + 1) * mw];
                            let dw: f64 = row.iter().zip(&z).map(|(s, zj)| s * zj).sum();
                            dx += sqdh * dw;
                        }
                        x[c] += dx;
                    }
                    if x.iter().any(|&v| !v.is_finite()) {
                        return Err(Error::Blowup { time: sub_end, replicate: None });
                    }
                }
            }
            t = sub_end;
            if let Some(j) = jump_to {
                regime = j;
                pending = next_jump();
            }
        }
        // Jumps stamped exactly on the grid point keep right continuity.
        loop {
            match pending {
                Some((tj, j)) if tj <= t => {
                    regime = j;
                    pending = next_jump();
                }
                _ => break,
            }
        }
        if !obs.on_sample(k, target, &x, regime) {
            return Ok(());
        }
    }
    Ok(())
}

/// Records grid samples into a [`Trajectory`].
struct Recorder {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    regimes: Vec<usize>,
}

impl Recorder {
    fn with_capacity(dim: usize, n: usize) -> Self {
        Self {
            dim,
            times: Vec::with_capacity(n + 1),
            states: Vec::with_capacity((n + 1) * dim),
            regimes: Vec::with_capacity(n + 1),
        }
    }

    fn into_trajectory(self, meta: TrajectoryMeta) -> Trajectory {
        Trajectory::from_parts(self.dim, self.times, self.states, self.regimes, meta)
    }
}

impl Observer for Recorder {
    fn on_sample(&mut self, _k: usize, t: f64, x: &[f64], regime: usize) -> bool {
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.regimes.push(regime);
        true
    }
}

/// Simulates one hybrid path and records it on the `dt` grid.
///
/// The regime chain is drawn from `stream(seed, tag::CHAIN, replicate)` and
/// the Brownian increments from `stream(seed, tag::BROWNIAN, replicate)`;
/// identical inputs give byte-identical trajectories.
pub fn simulate(model: &HybridModel, generator: &Generator, params: &SimParams) -> Result<Trajectory> {
    params.validate(model, generator)?;
    let chain = stream(params.seed, tag::CHAIN, params.replicate);
    let mut sampler = JumpSampler::new(generator, params.eps, params.i0, params.t0, chain)?;
    let mut brownian = stream(params.seed, tag::BROWNIAN, params.replicate);
    let n = num_steps(params.t0, params.t_end, params.dt);
    let mut rec = Recorder::with_capacity(model.dim(), n);
    integrate(
        model,
        params.delta,
        &params.x0,
        params.i0,
        params.t0,
        params.t_end,
        params.dt,
        || sampler.next_jump(),
        &mut brownian,
        &mut rec,
    )?;
    Ok(rec.into_trajectory(TrajectoryMeta {
        eps: params.eps,
        delta: params.delta,
        dt: params.dt,
        seed: params.seed,
    }))
}

/// Integrates against a fixed, already-sampled regime path instead of a live
/// chain. `delta = 0` reduces to a piecewise-deterministic ODE solve, which
/// is what the convergence oracles compare against.
pub fn simulate_on_path(
    model: &HybridModel,
    path: &SwitchingPath,
    delta: f64,
    x0: &[f64],
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    validate_grid(model, x0, path.t0, path.t_end, dt)?;
    if path.states.iter().any(|&s| s >= model.num_regimes()) {
        return Err(Error::InvalidInput("path visits a regime outside the model".into()));
    }
    let mut idx = 0;
    let mut brownian = stream(seed, tag::BROWNIAN, 0);
    let n = num_steps(path.t0, path.t_end, dt);
    let mut rec = Recorder::with_capacity(model.dim(), n);
    integrate(
        model,
        delta,
        x0,
        path.states[0],
        path.t0,
        path.t_end,
        dt,
        || {
            if idx < path.jump_times.len() {
                let out = (path.jump_times[idx], path.states[idx + 1]);
                idx += 1;
                Some(out)
            } else {
                None
            }
        },
        &mut brownian,
        &mut rec,
    )?;
    Ok(rec.into_trajectory(TrajectoryMeta { eps: 0.0, delta, dt, seed }))
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Per-time first and second moments across an ensemble of replicates.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    dim: usize,
    times: Vec<f64>,
    /// Row-major `len × dim` ensemble means.
    mean: Vec<f64>,
    /// Row-major `len × dim` ensemble second moments `E[X_c(t)²]`.
    second_moment: Vec<f64>,
    pub n: usize,
    /// The first `retain` replicate trajectories, in replicate order.
    pub retained: Vec<Trajectory>,
}

impl EnsembleSummary {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mean_at(&self, k: usize) -> &[f64] {
        &self.mean[k * self.dim..(k + 1) * self.dim]
    }

    pub fn second_moment_at(&self, k: usize) -> &[f64] {
        &self.second_moment[k * self.dim..(k + 1) * self.dim]
    }

    /// Unbiased per-coordinate variance at sample `k`.
    pub fn variance_at(&self, k: usize) -> Vec<f64> {
        let n = self.n as f64;
        self.mean_at(k)
            .iter()
            .zip(self.second_moment_at(k))
            .map(|(m, m2)| (m2 - m * m) * n / (n - 1.0))
            .collect()
    }
}

/// Accumulates grid samples into running sums, optionally recording the path.
struct MomentSink<'a> {
    dim: usize,
    sum: &'a mut [f64],
    sum_sq: &'a mut [f64],
    rec: Option<Recorder>,
}

impl Observer for MomentSink<'_> {
    fn on_sample(&mut self, k: usize, t: f64, x: &[f64], regime: usize) -> bool {
        let row = &mut self.sum[k * self.dim..(k + 1) * self.dim];
        for (acc, v) in row.iter_mut().zip(x) {
            *acc += v;
        }
        let row = &mut self.sum_sq[k * self.dim..(k + 1) * self.dim];
        for (acc, v) in row.iter_mut().zip(x) {
            *acc += v * v;
        }
        if let Some(rec) = &mut self.rec {
            rec.on_sample(k, t, x, regime);
        }
        true
    }
}

/// Simulates `n` replicates and reduces their per-time moments.
///
/// Replicate `k` uses streams keyed by replicate index `k`, so the ensemble
/// is reproducible replicate by replicate. Reduction happens in fixed chunks
/// of [`ENSEMBLE_CHUNK`] folded in index order: the summary is bit-identical
/// no matter how many rayon threads execute the chunks.
pub fn simulate_ensemble(
    model: &HybridModel,
    generator: &Generator,
    params: &SimParams,
    n: usize,
    retain: usize,
) -> Result<EnsembleSummary> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble size must be positive".into()));
    }
    params.validate(model, generator)?;
    let dim = model.dim();
    let steps = num_steps(params.t0, params.t_end, params.dt);
    let times: Vec<f64> = (0..=steps)
        .map(|k| grid_time(params.t0, params.t_end, params.dt, k, steps))
        .collect();
    let width = times.len() * dim;

    struct Chunk {
        sum: Vec<f64>,
        sum_sq: Vec<f64>,
        retained: Vec<Trajectory>,
    }

    let num_chunks = n.div_ceil(ENSEMBLE_CHUNK);
    let chunks: Vec<Result<Chunk>> = (0..num_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * ENSEMBLE_CHUNK;
            let hi = ((ci + 1) * ENSEMBLE_CHUNK).min(n);
            let mut chunk = Chunk {
                sum: vec![0.0; width],
                sum_sq: vec![0.0; width],
                retained: Vec::new(),
            };
            for r in lo..hi {
                let rec = (r < retain).then(|| Recorder::with_capacity(dim, steps));
                let mut sink = MomentSink {
                    dim,
                    sum: &mut chunk.sum,
                    sum_sq: &mut chunk.sum_sq,
                    rec,
                };
                let chain = stream(params.seed, tag::CHAIN, r as u64);
                let mut sampler =
                    JumpSampler::new(generator, params.eps, params.i0, params.t0, chain)?;
                let mut brownian = stream(params.seed, tag::BROWNIAN, r as u64);
                integrate(
                    model,
                    params.delta,
                    &params.x0,
                    params.i0,
                    params.t0,
                    params.t_end,
                    params.dt,
                    || sampler.next_jump(),
                    &mut brownian,
                    &mut sink,
                )
                .map_err(|e| match e {
                    Error::Blowup { time, .. } => Error::Blowup { time, replicate: Some(r) },
                    other => other,
                })?;
                if let Some(rec) = sink.rec.take() {
                    chunk.retained.push(rec.into_trajectory(TrajectoryMeta {
                        eps: params.eps,
                        delta: params.delta,
                        dt: params.dt,
                        seed: params.seed,
                    }));
                }
            }
            Ok(chunk)
        })
        .collect();

    let mut sum = vec![0.0; width];
    let mut sum_sq = vec![0.0; width];
    let mut retained = Vec::new();
    for chunk in chunks {
        let chunk = chunk?;
        for (acc, v) in sum.iter_mut().zip(&chunk.sum) {
            *acc += v;
        }
        for (acc, v) in sum_sq.iter_mut().zip(&chunk.sum_sq) {
            *acc += v;
        }
        retained.extend(chunk.retained);
    }
    let inv = 1.0 / n as f64;
    sum.iter_mut().for_each(|v| *v *= inv);
    sum_sq.iter_mut().for_each(|v| *v *= inv);
    Ok(EnsembleSummary { dim, times, mean: sum, second_moment: sum_sq, n, retained })
}

// ---------------------------------------------------------------------------
// Deviation from the averaged flow
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of `P{ sup_{t ≤ T} |X(t) − X̄(t)| ≥ γ }`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationEstimate {
    pub gamma: f64,
    pub n: usize,
    pub exceed_count: usize,
    pub p_hat: f64,
    /// 95% normal-approximation interval, clipped to `[0, 1]`.
    pub ci: (f64, f64),
}

struct SupDeviation<'a> {
    reference: &'a Trajectory,
    gamma_sq: f64,
    exceeded: bool,
}

impl Observer for SupDeviation<'_> {
    fn on_sample(&mut self, k: usize, _t: f64, x: &[f64], _regime: usize) -> bool {
        let r = self.reference.state(k);
        let d2: f64 = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 >= self.gamma_sq {
            self.exceeded = true;
            return false;
        }
        true
    }
}

/// Estimates the probability that a hybrid path strays distance `gamma`
/// (Euclidean, checked on the shared `dt` grid) from the averaged flow
/// started at the same point.
pub fn sup_deviation_probability(
    model: &HybridModel,
    generator: &Generator,
    params: &SimParams,
    gamma: f64,
    n: usize,
) -> Result<DeviationEstimate> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    params.validate(model, generator)?;
    let nu = generator.stationary_distribution()?;
    let field = averaging::averaged_field(model, &nu)?;
    let reference =
        averaging::integrate_ode(&field, &params.x0, params.t0, params.t_end, params.dt)?;

    let flags: Vec<Result<bool>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut obs = SupDeviation {
                reference: &reference,
                gamma_sq: gamma * gamma,
                exceeded: false,
            };
            let chain = stream(params.seed, tag::CHAIN, r as u64);
            let mut sampler = JumpSampler::new(generator, params.eps, params.i0, params.t0, chain)?;
            let mut brownian = stream(params.seed, tag::BROWNIAN, r as u64);
            integrate(
                model,
                params.delta,
                &params.x0,
                params.i0,
                params.t0,
                params.t_end,
                params.dt,
                || sampler.next_jump(),
                &mut brownian,
                &mut obs,
            )
            .map_err(|e| match e {
                Error::Blowup { time, .. } => Error::Blowup { time, replicate: Some(r) },
                other => other,
            })?;
            Ok(obs.exceeded)
        })
        .collect();

    let mut exceed_count = 0;
    for f in flags {
        if f? {
            exceed_count += 1;
        }
    }
    let p_hat = exceed_count as f64 / n as f64;
    let half = 1.96 * (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    Ok(DeviationEstimate {
        gamma,
        n,
        exceed_count,
        p_hat,
        ci: ((p_hat - half).max(0.0), (p_hat + half).min(1.0)),
    })
}

// ---------------------------------------------------------------------------
// Exit times
// ---------------------------------------------------------------------------

/// Inputs of an exit-time experiment.
#[derive(Debug, Clone)]
pub struct ExitParams {
    pub eps: f64,
    pub delta: f64,
    /// Starting point and center of the ball.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Time budget; samples still inside at the budget are censored.
    pub budget: f64,
    pub dt: f64,
    pub n: usize,
    pub seed: u64,
}

/// One replicate's exit record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSample {
    /// Exit time, or the budget when censored.
    pub time: f64,
    pub censored: bool,
}

/// Exit times of an ensemble started at the ball's center.
#[derive(Debug, Clone)]
pub struct ExitTimeStats {
    pub center: Vec<f64>,
    pub radius: f64,
    pub budget: f64,
    pub samples: Vec<ExitSample>,
    pub fraction_exited: f64,
}

impl ExitTimeStats {
    /// CSV export: `replicate,exit_time,censored` (censored rows keep the
    /// budget as their time).
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "replicate,exit_time,censored")?;
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(w, "{k},{:.16e},{}", s.time, u8::from(s.censored))?;
        }
        Ok(())
    }
}

struct ExitWatch {
    center: Vec<f64>,
    radius_sq: f64,
    exit_time: Option<f64>,
}

impl ExitWatch {
    fn outside(&self, x: &[f64]) -> bool {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 > self.radius_sq
    }
}

impl Observer for ExitWatch {
    fn on_sample(&mut self, _k: usize, t: f64, x: &[f64], _regime: usize) -> bool {
        if self.outside(x) {
            self.exit_time = Some(t);
            return false;
        }
        true
    }

    fn on_substep(&mut self, t: f64, _len: f64, x: &[f64], _regime: usize) -> bool {
        if self.outside(x) {
            self.exit_time = Some(t);
            return false;
        }
        true
    }
}

/// Times the first exit from the ball `B(center, radius)` across `n`
/// replicates started at the center; replicate `k` starts in regime
/// `k mod m0` so every starting regime is exercised.
pub fn exit_time_experiment(
    model: &HybridModel,
    generator: &Generator,
    params: &ExitParams,
) -> Result<ExitTimeStats> {
    if !(params.radius > 0.0 && params.radius.is_finite()) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {}", params.radius)));
    }
    if params.n == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    if !(params.budget > 0.0) || !params.budget.is_finite() || params.budget / params.dt > MAX_STEPS
    {
        return Err(Error::InvalidBudget { budget: params.budget, dt: params.dt });
    }
    let probe = SimParams::new(
        params.eps,
        params.delta,
        params.center.clone(),
        0,
        params.budget,
        params.dt,
        params.seed,
    );
    probe.validate(model, generator)?;

    let m0 = generator.num_states();
    let results: Vec<Result<ExitSample>> = (0..params.n)
        .into_par_iter()
        .map(|r| {
            let mut watch = ExitWatch {
                center: params.center.clone(),
                radius_sq: params.radius * params.radius,
                exit_time: None,
            };
            let i0 = r % m0;
            let chain = stream(params.seed, tag::CHAIN, r as u64);
            let mut sampler = JumpSampler::new(generator, params.eps, i0, 0.0, chain)?;
            let mut brownian = stream(params.seed, tag::BROWNIAN, r as u64);
            integrate(
                model,
                params.delta,
                &params.center,
                i0,
                0.0,
                params.budget,
                params.dt,
                || sampler.next_jump(),
                &mut brownian,
                &mut watch,
            )
            .map_err(|e| match e {
                Error::Blowup { time, .. } => Error::Blowup { time, replicate: Some(r) },
                other => other,
            })?;
            Ok(match watch.exit_time {
                Some(t) => ExitSample { time: t, censored: false },
                None => ExitSample { time: params.budget, censored: true },
            })
        })
        .collect();

    let mut samples = Vec::with_capacity(params.n);
    for r in results {
        samples.push(r?);
    }
    let exited = samples.iter().filter(|s| !s.censored).count();
    Ok(ExitTimeStats {
        center: params.center.clone(),
        radius: params.radius,
        budget: params.budget,
        fraction_exited: exited as f64 / params.n as f64,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Scaling schedules
// ---------------------------------------------------------------------------

/// How the noise scale `δ` is slaved to the switching scale `ε` along a
/// sweep. The three regimes realize `δ/ε → l`, `→ 0`, and `→ ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingRegime {
    /// `δ = l ε`: the ratio is the constant `l`.
    DeltaProportional,
    /// `δ = ε²`: noise vanishes faster than switching.
    DeltaQuadratic,
    /// `δ = min(√ε, 0.25)`: switching vanishes faster than noise.
    DeltaSqrt,
}

/// A decreasing list of `ε` values with the slaved `δ` per regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule {
    regime: ScalingRegime,
    l: f64,
    eps: Vec<f64>,
}

impl ScaleSchedule {
    /// `l` is only meaningful for [`ScalingRegime::DeltaProportional`] and
    /// must be positive there. `eps` must be finite, positive and strictly
    /// decreasing; the resulting `δ` sequence must be strictly decreasing
    /// too (the √ε cap can violate this for large `ε`).
    pub fn new(regime: ScalingRegime, l: f64, eps: Vec<f64>) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::InvalidSchedule("empty eps list".into()));
        }
        if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidSchedule("eps values must be positive and finite".into()));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule("eps values must be strictly decreasing".into()));
        }
        if regime == ScalingRegime::DeltaProportional && !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidSchedule(format!("l must be positive, got {l}")));
        }
        let sched = Self { regime, l, eps };
        let deltas: Vec<f64> = sched.eps.iter().map(|&e| sched.delta_of(e)).collect();
        if deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(
                "delta sequence is not strictly decreasing (√ε cap active?)".into(),
            ));
        }
        Ok(sched)
    }

    pub fn regime(&self) -> ScalingRegime {
        self.regime
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    /// The `δ` slaved to a given `ε`.
    pub fn delta_of(&self, eps: f64) -> f64 {
        match self.regime {
            ScalingRegime::DeltaProportional => self.l * eps,
            ScalingRegime::DeltaQuadratic => eps * eps,
            ScalingRegime::DeltaSqrt => eps.sqrt().min(0.25),
        }
    }

    /// The `(ε, δ)` rows of the sweep, in schedule order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.eps.iter().map(|&e| (e, self.delta_of(e))).collect()
    }

    /// Exit-time budget at scale `ε`: `H exp(Δ/ε)` when noise vanishes
    /// faster than switching (only the chain can push the state out), and
    /// `H exp(Δ/δ)` otherwise (the diffusion dominates the escape rate).
    pub fn exit_budget(&self, eps: f64, prefactor: f64, margin: f64) -> f64 {
        match self.regime {
            ScalingRegime::DeltaQuadratic => prefactor * (margin / eps).exp(),
            _ => prefactor * (margin / self.delta_of(eps)).exp(),
        }
    }
}
