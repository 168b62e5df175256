//! The averaged system and its attractors.
//!
//! Averaging a hybrid model against the stationary law `ν` of its switching
//! chain gives the deterministic field
//!
//! ```text
//! f̄(x) = Σ_i f(x, i) ν_i ,
//! ```
//!
//! whose flow the hybrid paths shadow when switching is fast and noise is
//! small. This module integrates that flow (classical RK4, fixed step),
//! locates its critical points (coarse-grid sign scan + Newton), and detects
//! attracting periodic orbits with a Poincaré section: after a transient,
//! the section is the hyperplane through the current point orthogonal to the
//! local flow direction, upward crossings are refined by bisection, and a
//! cycle is declared when consecutive returns coincide to the closure
//! tolerance. The orbit is then resampled uniformly in time over one period,
//! which is exactly the sampling needed for its occupation measure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ctmc::StationaryDist;
use crate::error::Error;
use crate::measures::{GridMeasure, GridSpec};
use crate::model::HybridModel;
use crate::sde::{grid_time, num_steps, Trajectory, TrajectoryMeta};
use crate::Result;

/// A deterministic field `R^dim → R^dim`.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl VectorField {
    pub fn new(dim: usize, eval: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>) -> Self {
        Self { dim, eval }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(x, &mut out);
        out
    }
}

impl std::fmt::Debug for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField").field("dim", &self.dim).finish()
    }
}

/// `f̄(x) = Σ_i f(x, i) ν_i` for a model and the stationary law of its chain.
pub fn averaged_field(model: &HybridModel, nu: &StationaryDist) -> Result<VectorField> {
    if nu.len() != model.num_regimes() {
        return Err(Error::InvalidModel(format!(
            "stationary law has {} entries but the model has {} regimes",
            nu.len(),
            model.num_regimes()
        )));
    }
    let dim = model.dim();
    let weights: Vec<f64> = nu.probs().to_vec();
    // Cloning the model copies Arc'd closures, so the field stays cheap to
    // build and `'static` for use inside solvers.
    let model = model.clone();
    Ok(VectorField::new(
        dim,
        Arc::new(move |x, out| {
            out.fill(0.0);
            let mut buf = vec![0.0; out.len()];
            for (i, w) in weights.iter().enumerate() {
                model.drift(x, i, &mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += w * b;
                }
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// RK4
// ---------------------------------------------------------------------------

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// One classical RK4 step of size `h`, in place. Returns the speed
    /// `|f(x)|` at the step's start for free.
    fn step(&mut self, field: &VectorField, x: &mut [f64], h: f64) -> f64 {
        field.eval(x, &mut self.k1);
        for (t, (xi, k)) in self.tmp.iter_mut().zip(x.iter().zip(&self.k1)) {
            *t = xi + 0.5 * h * k;
        }
        field.eval(&self.tmp, &mut self.k2);
        for (t, (xi, k)) in self.tmp.iter_mut().zip(x.iter().zip(&self.k2)) {
            *t = xi + 0.5 * h * k;
        }
        field.eval(&self.tmp, &mut self.k3);
        for (t, (xi, k)) in self.tmp.iter_mut().zip(x.iter().zip(&self.k3)) {
            *t = xi + h * k;
        }
        field.eval(&self.tmp, &mut self.k4);
        let speed = self.k1.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (c, xi) in x.iter_mut().enumerate() {
            *xi += h / 6.0 * (self.k1[c] + 2.0 * self.k2[c] + 2.0 * self.k3[c] + self.k4[c]);
        }
        speed
    }
}

/// Fixed-step RK4 solve of `ẋ = field(x)` recorded on the `dt` grid.
pub fn integrate_ode(
    field: &VectorField,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x0.len() != field.dim() {
        return Err(Error::InvalidModel(format!(
            "x0 has dimension {}, field has {}",
            x0.len(),
            field.dim()
        )));
    }
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::InvalidSpan { t0, t_end });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    let n = num_steps(t0, t_end, dt);
    let dim = field.dim();
    let mut rk = Rk4::new(dim);
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity((n + 1) * dim);
    times.push(t0);
    states.extend_from_slice(&x);
    let mut t = t0;
    for k in 1..=n {
        let target = grid_time(t0, t_end, dt, k, n);
        rk.step(field, &mut x, target - t);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { time: target, replicate: None });
        }
        t = target;
        times.push(t);
        states.extend_from_slice(&x);
    }
    let regimes = vec![0; times.len()];
    Ok(Trajectory::from_parts(
        dim,
        times,
        states,
        regimes,
        TrajectoryMeta { eps: 0.0, delta: 0.0, dt, seed: 0 },
    ))
}

// ---------------------------------------------------------------------------
// Critical points
// ---------------------------------------------------------------------------

/// A zero of the field with its local linearization.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    /// `‖f̄(location)‖_∞` after Newton.
    pub residual: f64,
    /// Jacobian eigenvalues as `(re, im)`, sorted by real part then
    /// imaginary part.
    pub eigenvalues: Vec<(f64, f64)>,
}

impl CriticalPoint {
    /// Largest real part over the spectrum; positive means unstable.
    pub fn max_real_part(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of a critical-point scan; seeds that failed to converge are
/// reported as warnings, not errors.
#[derive(Debug, Clone, Default)]
pub struct CriticalPointSearch {
    pub points: Vec<CriticalPoint>,
    pub warnings: Vec<String>,
}

/// Central-difference Jacobian with relative step `1e-5`.
fn jacobian(field: &VectorField, x: &[f64]) -> DMatrix<f64> {
    let d = field.dim();
    let mut j = DMatrix::<f64>::zeros(d, d);
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for c in 0..d {
        let h = 1e-5 * x[c].abs().max(1.0);
        xp[c] = x[c] + h;
        xm[c] = x[c] - h;
        field.eval(&xp, &mut fp);
        field.eval(&xm, &mut fm);
        for r in 0..d {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
        xp[c] = x[c];
        xm[c] = x[c];
    }
    j
}

/// Finds the field's zeros inside the box `[lo, hi]`.
///
/// Seeds Newton from the center of every coarse-grid cell on which *every*
/// field component changes sign over the cell's corners; converged roots are
/// deduplicated within `10 · tol` and classified by the eigenvalues of the
/// central-difference Jacobian.
pub fn find_critical_points(
    field: &VectorField,
    lo: &[f64],
    hi: &[f64],
    coarse_n: usize,
    tol: f64,
) -> Result<CriticalPointSearch> {
    let d = field.dim();
    if lo.len() != d || hi.len() != d {
        return Err(Error::InvalidInput("box dimensions do not match the field".into()));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidInput("box must satisfy lo < hi".into()));
    }
    if coarse_n < 8 {
        return Err(Error::InvalidInput(format!("coarse grid needs ≥ 8 cells per axis, got {coarse_n}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be positive, got {tol}")));
    }

    // Field values on the (coarse_n + 1)^d nodes.
    let nodes = coarse_n + 1;
    let num_nodes = nodes.pow(d as u32);
    let mut values = vec![0.0; num_nodes * d];
    let mut x = vec![0.0; d];
    let node_coord = |idx: usize, axis: usize| -> f64 {
        let mut rem = idx;
        for _ in 0..axis {
            rem /= nodes;
        }
        let i = rem % nodes;
        lo[axis] + (hi[axis] - lo[axis]) * i as f64 / coarse_n as f64
    };
    let mut buf = vec![0.0; d];
    for idx in 0..num_nodes {
        for (axis, xi) in x.iter_mut().enumerate() {
            *xi = node_coord(idx, axis);
        }
        field.eval(&x, &mut buf);
        values[idx * d..(idx + 1) * d].copy_from_slice(&buf);
    }

    let mut search = CriticalPointSearch::default();
    let num_cells = coarse_n.pow(d as u32);
    let corners = 1usize << d;
    for cell in 0..num_cells {
        // Cell index per axis.
        let mut cell_idx = vec![0usize; d];
        let mut rem = cell;
        for ci in cell_idx.iter_mut() {
            *ci = rem % coarse_n;
            rem /= coarse_n;
        }
        // Does every component change sign over the corners?
        let mut all_straddle = true;
        for comp in 0..d {
            let mut has_nonneg = false;
            let mut has_nonpos = false;
            for corner in 0..corners {
                let mut node = 0usize;
                let mut stride = 1usize;
                for (axis, ci) in cell_idx.iter().enumerate() {
                    let off = (corner >> axis) & 1;
                    node += (ci + off) * stride;
                    stride *= nodes;
                }
                let v = values[node * d + comp];
                has_nonneg |= v >= 0.0;
                has_nonpos |= v <= 0.0;
            }
            if !(has_nonneg && has_nonpos) {
                all_straddle = false;
                break;
            }
        }
        if !all_straddle {
            continue;
        }

        // Newton from the cell center.
        let mut p: Vec<f64> = (0..d)
            .map(|axis| {
                let w = (hi[axis] - lo[axis]) / coarse_n as f64;
                lo[axis] + w * (cell_idx[axis] as f64 + 0.5)
            })
            .collect();
        let mut converged = false;
        let mut fval = vec![0.0; d];
        for _ in 0..50 {
            field.eval(&p, &mut fval);
            let res = fval.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if res < tol {
                converged = true;
                break;
            }
            let j = jacobian(field, &p);
            let rhs = DVector::from_iterator(d, fval.iter().map(|v| -v));
            match j.lu().solve(&rhs) {
                Some(step) => {
                    for (pc, s) in p.iter_mut().zip(step.iter()) {
                        *pc += s;
                    }
                    if p.iter().any(|v| !v.is_finite()) {
                        break;
                    }
                }
                None => break,
            }
        }
        if !converged {
            search.warnings.push(format!(
                "Newton did not converge from cell {:?}",
                cell_idx
            ));
            continue;
        }
        // Only roots inside the requested box count.
        if p.iter().zip(lo.iter().zip(hi)).any(|(v, (a, b))| v < a || v > b) {
            continue;
        }
        if search
            .points
            .iter()
            .any(|q| q.location.iter().zip(&p).all(|(a, b)| (a - b).abs() < 10.0 * tol))
        {
            continue;
        }
        field.eval(&p, &mut fval);
        let residual = fval.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let j = jacobian(field, &p);
        let mut eigenvalues: Vec<(f64, f64)> =
            j.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        search.points.push(CriticalPoint { location: p, residual, eigenvalues });
    }
    search
        .points
        .sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap());
    Ok(search)
}

// ---------------------------------------------------------------------------
// Limit cycles
// ---------------------------------------------------------------------------

/// Knobs of the limit-cycle detector. The defaults suit O(1)-speed planar
/// fields with periods up to a few hundred time units.
#[derive(Debug, Clone)]
pub struct CycleOptions {
    /// RK4 step.
    pub dt: f64,
    /// Time to integrate before placing the section.
    pub transient: f64,
    /// Consecutive section returns closer than this declare the cycle.
    pub closure_tol: f64,
    /// Give up (`NoCycle`) after this much post-transient time.
    pub max_time: f64,
    /// Give up after this many returns without closure.
    pub max_returns: usize,
    /// Bisection width for crossing times.
    pub refine_tol: f64,
    /// Samples of the resampled orbit (uniform in time over one period).
    pub samples: usize,
    /// Speeds below this classify the run as equilibrium convergence.
    pub min_speed: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            transient: 100.0,
            closure_tol: 1e-6,
            max_time: 1e4,
            max_returns: 500,
            refine_tol: 1e-10,
            samples: 4096,
            min_speed: 1e-7,
        }
    }
}

/// An attracting periodic orbit, resampled uniformly in time.
///
/// `states` holds `samples + 1` points: the first and last coincide up to
/// the closure tolerance used at detection.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    dim: usize,
    period: f64,
    /// Sample times `j · period / samples`, `j = 0..=samples`.
    times: Vec<f64>,
    /// Row-major `(samples + 1) × dim` orbit points.
    states: Vec<f64>,
    /// Anchor return point on the section.
    pub anchor: Vec<f64>,
    /// Unit normal of the Poincaré section (the flow direction at anchor).
    pub section_normal: Vec<f64>,
}

impl LimitCycle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of stored points (`samples + 1`).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Axis-aligned bounding box of the orbit.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for k in 0..self.len() {
            for (c, v) in self.state(k).iter().enumerate() {
                lo[c] = lo[c].min(*v);
                hi[c] = hi[c].max(*v);
            }
        }
        (lo, hi)
    }

    /// Builds a cycle directly from uniform samples (testing and synthetic
    /// measures). `states` must hold `n + 1` points whose first and last
    /// entries coincide.
    pub fn from_uniform_samples(dim: usize, period: f64, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || !(period > 0.0) || states.len() % dim != 0 || states.len() / dim < 3 {
            return Err(Error::InvalidInput("malformed uniform cycle samples".into()));
        }
        let n = states.len() / dim - 1;
        let times = (0..=n).map(|j| period * j as f64 / n as f64).collect();
        let anchor = states[..dim].to_vec();
        Ok(Self { dim, period, times, states, anchor, section_normal: vec![0.0; dim] })
    }

    /// CSV export over one period: header `t,x1,...,xd`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{}", cols.join(","))?;
        for k in 0..self.len() {
            write!(w, "{:.16e}", self.times[k])?;
            for v in self.state(k) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Detects an attracting limit cycle of `field` reachable from `x0`.
///
/// Integrates through `opts.transient`, erects the section there, and tracks
/// upward section crossings (refined by bisection to `opts.refine_tol` in
/// time). Consecutive returns within the closure tolerance declare the
/// cycle; the period is the time between the two final returns. Runs whose
/// speed drops below `opts.min_speed` return `ConvergesToEquilibrium`;
/// exceeding `opts.max_time` or `opts.max_returns` returns `NoCycle`.
pub fn detect_limit_cycle(field: &VectorField, x0: &[f64], opts: &CycleOptions) -> Result<LimitCycle> {
    let d = field.dim();
    if x0.len() != d {
        return Err(Error::InvalidModel(format!(
            "x0 has dimension {}, field has {}",
            x0.len(),
            d
        )));
    }
    if !(opts.dt > 0.0) || !(opts.transient >= 0.0) || !(opts.closure_tol > 0.0) || opts.samples < 16 {
        return Err(Error::InvalidInput("malformed cycle options".into()));
    }
    let mut rk = Rk4::new(d);
    let mut x = x0.to_vec();

    // Transient.
    let mut t = 0.0;
    while t < opts.transient {
        let h = opts.dt.min(opts.transient - t);
        let speed = rk.step(field, &mut x, h);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: t + h, replicate: None });
        }
        if speed < opts.min_speed {
            return Err(Error::ConvergesToEquilibrium { location: x });
        }
        t += h;
    }

    // Section through p, normal along the flow.
    let p = x.clone();
    let fp = field.eval_vec(&p);
    let fp_norm = fp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fp_norm < opts.min_speed {
        return Err(Error::ConvergesToEquilibrium { location: p });
    }
    let normal: Vec<f64> = fp.iter().map(|v| v / fp_norm).collect();
    let s_of = |x: &[f64]| -> f64 {
        x.iter().zip(&normal).zip(&p).map(|((xi, ni), pi)| ni * (xi - pi)).sum()
    };

    // Detection is declared at a quarter of the closure tolerance so the
    // resampled orbit still closes within the full tolerance.
    let declare_tol = 0.25 * opts.closure_tol;

    let mut s_prev = 0.0;
    let mut t_rel = 0.0;
    let mut prev_return: Option<(f64, Vec<f64>)> = None;
    let mut returns = 0usize;
    let mut anchor: Option<(f64, Vec<f64>)> = None;
    let mut period = 0.0;

    while t_rel < opts.max_time {
        let x_before = x.clone();
        let speed = rk.step(field, &mut x, opts.dt);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { time: opts.transient + t_rel + opts.dt, replicate: None });
        }
        if speed < opts.min_speed {
            return Err(Error::ConvergesToEquilibrium { location: x });
        }
        t_rel += opts.dt;
        let s_new = s_of(&x);
        if s_prev < 0.0 && s_new >= 0.0 {
            // Upward crossing inside (t_rel − dt, t_rel]; bisect the step.
            let (tau, crossing) = refine_crossing(field, &mut rk, &x_before, opts.dt, &s_of, opts.refine_tol);
            let t_cross = t_rel - opts.dt + tau;
            returns += 1;
            if let Some((t_prev, r_prev)) = &prev_return {
                let gap: f64 = r_prev
                    .iter()
                    .zip(&crossing)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if gap < declare_tol {
                    period = t_cross - t_prev;
                    anchor = Some((t_cross, crossing.clone()));
                    break;
                }
            }
            if returns >= opts.max_returns {
                return Err(Error::NoCycle { max_time: opts.max_time, returns });
            }
            prev_return = Some((t_cross, crossing));
        }
        s_prev = s_new;
    }

    let (_, anchor) = anchor.ok_or(Error::NoCycle { max_time: opts.max_time, returns })?;
    if !(period > 0.0) {
        return Err(Error::NoCycle { max_time: opts.max_time, returns });
    }

    // Resample uniformly in time over one period.
    let n_s = opts.samples;
    let mut states = Vec::with_capacity((n_s + 1) * d);
    let mut times = Vec::with_capacity(n_s + 1);
    let mut y = anchor.clone();
    states.extend_from_slice(&y);
    times.push(0.0);
    let tau = period / n_s as f64;
    let sub = (tau / opts.dt).ceil().max(1.0);
    let h = tau / sub;
    let mut min_speed_seen = f64::INFINITY;
    for j in 1..=n_s {
        for _ in 0..sub as usize {
            let speed = rk.step(field, &mut y, h);
            min_speed_seen = min_speed_seen.min(speed);
        }
        times.push(period * j as f64 / n_s as f64);
        states.extend_from_slice(&y);
    }
    if min_speed_seen < opts.min_speed {
        return Err(Error::ConvergesToEquilibrium { location: y });
    }
    let closure_gap: f64 = anchor
        .iter()
        .zip(&states[n_s * d..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if closure_gap > opts.closure_tol {
        return Err(Error::InvalidTrajectory(format!(
            "resampled orbit fails to close: gap {closure_gap:e} > {:e}",
            opts.closure_tol
        )));
    }
    Ok(LimitCycle { dim: d, period, times, states, anchor, section_normal: normal })
}

/// Bisection refinement of an upward crossing known to lie in `(0, h]` from
/// `x_start`. Returns `(τ, x(τ))` with the bracket narrowed to `tol`.
fn refine_crossing(
    field: &VectorField,
    rk: &mut Rk4,
    x_start: &[f64],
    h: f64,
    s_of: &impl Fn(&[f64]) -> f64,
    tol: f64,
) -> (f64, Vec<f64>) {
    let mut lo = 0.0;
    let mut hi = h;
    let mut x_hi = x_start.to_vec();
    rk.step(field, &mut x_hi, h);
    for _ in 0..64 {
        if hi - lo < tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let mut x_mid = x_start.to_vec();
        if mid > 0.0 {
            rk.step(field, &mut x_mid, mid);
        }
        if s_of(&x_mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            x_hi = x_mid;
        }
    }
    (hi, x_hi)
}

/// Occupation measure of the cycle on a grid: each uniform-in-time sample
/// carries weight `1/samples`. The whole orbit must land inside the grid.
pub fn cycle_measure(cycle: &LimitCycle, spec: &GridSpec) -> Result<GridMeasure> {
    if spec.dim() != cycle.dim() {
        return Err(Error::SpecMismatch(format!(
            "grid dimension {} vs cycle dimension {}",
            spec.dim(),
            cycle.dim()
        )));
    }
    let n_s = cycle.len() - 1;
    let mut weights = vec![0.0; spec.num_cells()];
    let mut overflow = 0.0;
    for j in 0..n_s {
        match spec.cell_index(cycle.state(j)) {
            Some(c) => weights[c] += 1.0,
            None => overflow += 1.0,
        }
    }
    GridMeasure::from_weighted_counts(spec.clone(), 1, weights, overflow, 0.0)
}

/// Time average `(1/T) ∫_0^T g(X̄(t)) dt` over one period, by the trapezoid
/// rule on the uniform samples (spectrally accurate for periodic data).
pub fn cycle_average(cycle: &LimitCycle, g: impl Fn(&[f64]) -> f64) -> f64 {
    let n_s = cycle.len() - 1;
    let mut acc = 0.5 * (g(cycle.state(0)) + g(cycle.state(n_s)));
    for j in 1..n_s {
        acc += g(cycle.state(j));
    }
    acc / n_s as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_from(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> VectorField {
        VectorField::new(dim, Arc::new(f))
    }

    /// Supercritical Hopf normal form: the unit circle is the attractor and
    /// the angular speed is exactly 1, so the period is 2π.
    fn hopf() -> VectorField {
        field_from(2, |x, out| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            out[0] = x[0] * (1.0 - r2) - x[1];
            out[1] = x[1] * (1.0 - r2) + x[0];
        })
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let f = field_from(1, |x, out| out[0] = -x[0]);
        let traj = integrate_ode(&f, &[1.0], 0.0, 1.0, 1e-3).unwrap();
        assert!((traj.final_state()[0] - (-1.0_f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_closes_a_full_rotation() {
        let f = field_from(2, |x, out| {
            out[0] = -x[1];
            out[1] = x[0];
        });
        let traj = integrate_ode(&f, &[1.0, 0.0], 0.0, 2.0 * std::f64::consts::PI, 1e-3).unwrap();
        let end = traj.final_state();
        let err = ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt();
        assert!(err < 1e-6, "rotation error {err:e}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err_at = |dt: f64| -> f64 {
            let reference = integrate_ode(&hopf(), &[2.0, 0.0], 0.0, 1.0, dt / 16.0).unwrap();
            let coarse = integrate_ode(&hopf(), &[2.0, 0.0], 0.0, 1.0, dt).unwrap();
            let (a, b) = (coarse.final_state(), reference.final_state());
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        };
        let ratio = err_at(0.02) / err_at(0.01);
        assert!(ratio >= 8.0, "fourth-order ratio {ratio}");
    }

    #[test]
    fn averaged_field_weights_regimes() {
        use crate::ctmc::Generator;
        let model = HybridModel::new(
            1,
            2,
            1,
            Arc::new(|_x, i, out| out[0] = if i == 0 { 1.0 } else { -1.0 }),
            Arc::new(|_x, _i, out| out[0] = 0.0),
        )
        .unwrap();
        let g = Generator::from_rows(&[vec![-2.0, 2.0], vec![3.0, -3.0]]).unwrap();
        let nu = g.stationary_distribution().unwrap();
        let field = averaged_field(&model, &nu).unwrap();
        let v = field.eval_vec(&[0.3]);
        assert!((v[0] - 0.2).abs() < 1e-12, "ν-weighted drift {}", v[0]);
    }

    #[test]
    fn hopf_cycle_has_period_two_pi() {
        let cycle = detect_limit_cycle(&hopf(), &[2.0, 0.0], &CycleOptions::default()).unwrap();
        assert!(
            (cycle.period() - 2.0 * std::f64::consts::PI).abs() < 1e-3,
            "period {}",
            cycle.period()
        );
        for k in 0..cycle.len() {
            let s = cycle.state(k);
            let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-3, "sample {k} radius {r}");
        }
        // Starting inside the circle spirals outward to the same orbit.
        let inner = detect_limit_cycle(&hopf(), &[0.1, 0.1], &CycleOptions::default()).unwrap();
        assert!((inner.period() - cycle.period()).abs() / cycle.period() < 1e-3);
    }

    #[test]
    fn cycle_first_and_last_samples_coincide() {
        let cycle = detect_limit_cycle(&hopf(), &[2.0, 0.0], &CycleOptions::default()).unwrap();
        let first = cycle.state(0);
        let last = cycle.state(cycle.len() - 1);
        let gap = ((first[0] - last[0]).powi(2) + (first[1] - last[1]).powi(2)).sqrt();
        assert!(gap <= 1e-6, "closure gap {gap:e}");
        // Uniform time spacing.
        let dt = cycle.times()[1] - cycle.times()[0];
        for w in cycle.times().windows(2) {
            assert!((w[1] - w[0] - dt).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_flow_is_classified_as_equilibrium() {
        let f = field_from(2, |x, out| {
            out[0] = -2.0 * x[0];
            out[1] = -2.0 * x[1];
        });
        match detect_limit_cycle(&f, &[1.0, 1.0], &CycleOptions::default()) {
            Err(Error::ConvergesToEquilibrium { location }) => {
                assert!(location.iter().all(|v| v.abs() < 1e-6), "{location:?}");
            }
            other => panic!("expected equilibrium classification, got {other:?}"),
        }
    }

    #[test]
    fn cycle_average_of_coordinates_recovers_circle_center() {
        let cycle = detect_limit_cycle(&hopf(), &[2.0, 0.0], &CycleOptions::default()).unwrap();
        let mean_x = cycle_average(&cycle, |s| s[0]);
        let mean_y = cycle_average(&cycle, |s| s[1]);
        assert!(mean_x.abs() < 1e-6, "mean x {mean_x:e}");
        assert!(mean_y.abs() < 1e-6, "mean y {mean_y:e}");
        let mean_r2 = cycle_average(&cycle, |s| s[0] * s[0] + s[1] * s[1]);
        assert!((mean_r2 - 1.0).abs() < 1e-6, "mean r² {mean_r2}");
    }

    #[test]
    fn critical_points_of_a_product_field() {
        // Zeros at the four intersections of x ∈ {0, 1} and y ∈ {0, 2}.
        let f = field_from(2, |x, out| {
            out[0] = x[0] * (1.0 - x[0]);
            out[1] = x[1] * (2.0 - x[1]);
        });
        let found =
            find_critical_points(&f, &[-0.5, -0.5], &[2.5, 2.5], 16, 1e-10).unwrap();
        assert_eq!(found.points.len(), 4, "{:?}", found.points);
        let mut locs: Vec<(f64, f64)> =
            found.points.iter().map(|p| (p.location[0], p.location[1])).collect();
        locs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [(0.0, 0.0), (0.0, 2.0), (1.0, 0.0), (1.0, 2.0)];
        for (l, e) in locs.iter().zip(expect) {
            assert!((l.0 - e.0).abs() < 1e-8 && (l.1 - e.1).abs() < 1e-8, "{l:?} vs {e:?}");
        }
        for p in &found.points {
            assert!(p.residual < 1e-10);
            // Jacobian is diag(1 − 2x, 2 − 2y): eigenvalues ±1 and ±2.
            for (re, im) in &p.eigenvalues {
                assert!(im.abs() < 1e-6);
                assert!((re.abs() - 1.0).abs() < 1e-4 || (re.abs() - 2.0).abs() < 1e-4);
            }
        }
        // The source at the origin and the sink at (1, 2).
        let origin = found.points.iter().find(|p| p.location[0].abs() < 1e-6).unwrap();
        assert!(origin.max_real_part() > 0.0);
        let sink = found
            .points
            .iter()
            .find(|p| (p.location[0] - 1.0).abs() < 1e-6 && (p.location[1] - 2.0).abs() < 1e-6)
            .unwrap();
        assert!(sink.max_real_part() < 0.0);
    }

    #[test]
    fn critical_point_scan_rejects_bad_inputs() {
        let f = field_from(1, |x, out| out[0] = -x[0]);
        assert!(find_critical_points(&f, &[1.0], &[0.0], 16, 1e-8).is_err());
        assert!(find_critical_points(&f, &[0.0], &[1.0], 4, 1e-8).is_err());
    }

    #[test]
    fn synthetic_cycle_roundtrip() {
        // Unit-speed circle entered directly.
        let n = 256;
        let mut states = Vec::with_capacity((n + 1) * 2);
        for j in 0..=n {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            states.push(th.cos());
            states.push(th.sin());
        }
        let cycle =
            LimitCycle::from_uniform_samples(2, 2.0 * std::f64::consts::PI, states).unwrap();
        assert_eq!(cycle.len(), n + 1);
        let (lo, hi) = cycle.bounding_box();
        assert!((lo[0] + 1.0).abs() < 1e-12 && (hi[1] - 1.0).abs() < 1e-12);
        let mean_x = cycle_average(&cycle, |s| s[0]);
        assert!(mean_x.abs() < 1e-12);
    }
}
