//! Empirical occupation measures on regular grids.
//!
//! The long-run law of a hybrid path is summarized by how much *time* it
//! spends in each cell of a regular grid, split by regime: every Euler
//! substep deposits its length onto the cell containing the state at the
//! substep's start. Weights over the grid are normalized to one; time spent
//! outside the grid is tracked separately as overflow and becomes an error
//! when it exceeds [`MAX_OVERFLOW_FRACTION`].
//!
//! Distances between measures are probed with a fixed 64-member family of
//! bounded Lipschitz witnesses (Lip ≤ 1, sup ≤ 1) evaluated at cell
//! centers; the reported distance is the family maximum, a deterministic
//! lower bound of the full bounded-Lipschitz metric that is comparable
//! across runs with the same grid and seed.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::averaging::{cycle_average, cycle_measure, LimitCycle};
use crate::ctmc::{Generator, JumpSampler};
use crate::error::Error;
use crate::model::HybridModel;
use crate::rng::{stream, tag};
use crate::sde::{integrate, Observer, ScaleSchedule, SimParams};
use crate::Result;

/// Largest tolerated fraction of time outside the grid.
pub const MAX_OVERFLOW_FRACTION: f64 = 0.01;

/// Number of witnesses used by [`bl_distance`].
pub const BL_FAMILY_SIZE: usize = 64;

const MAX_CELLS: usize = 100_000_000;

// ---------------------------------------------------------------------------
// Grid geometry
// ---------------------------------------------------------------------------

/// A regular axis-aligned grid over a box.
///
/// Cell `k` on an axis covers `(lo + k·w, lo + (k+1)·w]` with the first cell
/// closed at `lo`: points on an interior boundary belong to the lower cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRaw", into = "GridSpecRaw")]
pub struct GridSpec {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

#[derive(Serialize, Deserialize, Clone)]
struct GridSpecRaw {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

impl From<GridSpec> for GridSpecRaw {
    fn from(s: GridSpec) -> Self {
        Self { lo: s.lo, hi: s.hi, n: s.n }
    }
}

impl TryFrom<GridSpecRaw> for GridSpec {
    type Error = Error;

    fn try_from(raw: GridSpecRaw) -> Result<Self> {
        GridSpec::new(raw.lo, raw.hi, raw.n)
    }
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != n.len() {
            return Err(Error::InvalidGrid(
                "lo, hi and n must share a positive length".into(),
            ));
        }
        for ((a, b), m) in lo.iter().zip(&hi).zip(&n) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::InvalidGrid(format!("axis bounds must satisfy lo < hi, got [{a}, {b}]")));
            }
            if *m == 0 {
                return Err(Error::InvalidGrid("each axis needs at least one cell".into()));
            }
        }
        let mut cells = 1usize;
        for m in &n {
            cells = cells
                .checked_mul(*m)
                .filter(|c| *c <= MAX_CELLS)
                .ok_or_else(|| Error::InvalidGrid(format!("grid exceeds {MAX_CELLS} cells")))?;
        }
        Ok(Self { lo, hi, n })
    }

    /// The same bounds and resolution on every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    /// A grid covering a cycle's bounding box inflated by `pad` (≥ 1) about
    /// its center, `cells_per_axis` cells on every axis.
    pub fn around_cycle(cycle: &LimitCycle, pad: f64, cells_per_axis: usize) -> Result<Self> {
        if !(pad >= 1.0) {
            return Err(Error::InvalidGrid(format!("pad factor must be ≥ 1, got {pad}")));
        }
        let (blo, bhi) = cycle.bounding_box();
        let mut lo = Vec::with_capacity(blo.len());
        let mut hi = Vec::with_capacity(blo.len());
        for (a, b) in blo.iter().zip(&bhi) {
            let mid = 0.5 * (a + b);
            let half = (0.5 * (b - a) * pad).max(1e-6 * mid.abs().max(1.0));
            lo.push(mid - half);
            hi.push(mid + half);
        }
        Self::new(lo, hi, vec![cells_per_axis; blo.len()])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.n
    }

    pub fn num_cells(&self) -> usize {
        self.n.iter().product()
    }

    pub fn cell_widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(&self.n)
            .map(|((a, b), m)| (b - a) / *m as f64)
            .collect()
    }

    /// Diameter of one cell (the length of its diagonal).
    pub fn cell_diameter(&self) -> f64 {
        self.cell_widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Flat index of the cell containing `x`, or `None` outside the box.
    /// Axis 0 varies fastest.
    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        debug_assert_eq!(x.len(), self.dim());
        let mut flat = 0usize;
        let mut stride = 1usize;
        for (axis, v) in x.iter().enumerate() {
            let (a, b, m) = (self.lo[axis], self.hi[axis], self.n[axis]);
            if *v < a || *v > b || !v.is_finite() {
                return None;
            }
            let u = (v - a) / (b - a) * m as f64;
            // Boundary points belong to the lower cell; lo itself to cell 0.
            let idx = (u.ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
            flat += idx * stride;
            stride *= m;
        }
        Some(flat)
    }

    /// Per-axis cell coordinates of a flat index.
    pub fn cell_coords(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        self.n
            .iter()
            .map(|m| {
                let i = rem % m;
                rem /= m;
                i
            })
            .collect()
    }

    /// Center of the cell with flat index `flat`.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let coords = self.cell_coords(flat);
        coords
            .iter()
            .enumerate()
            .map(|(axis, i)| {
                let w = (self.hi[axis] - self.lo[axis]) / self.n[axis] as f64;
                self.lo[axis] + w * (*i as f64 + 0.5)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// A probability measure on `grid cells × regimes`.
///
/// In-grid weights sum to one; the fraction of weight that fell outside the
/// grid before normalization is kept as `overflow_fraction`.
#[derive(Debug, Clone)]
pub struct GridMeasure {
    spec: GridSpec,
    num_regimes: usize,
    /// Cell-major: `weights[cell * num_regimes + regime]`.
    weights: Vec<f64>,
    overflow_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureHeader {
    spec: GridSpec,
    regimes: usize,
    overflow: f64,
}

impl GridMeasure {
    /// Normalizes raw nonnegative weights into a measure. Rejects the input
    /// when the out-of-grid fraction exceeds `max_overflow`.
    pub(crate) fn from_weighted_counts(
        spec: GridSpec,
        num_regimes: usize,
        raw: Vec<f64>,
        overflow_weight: f64,
        max_overflow: f64,
    ) -> Result<Self> {
        if num_regimes == 0 || raw.len() != spec.num_cells() * num_regimes {
            return Err(Error::InvalidGrid("weight array does not match the grid".into()));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) || !(overflow_weight >= 0.0) {
            return Err(Error::InvalidGrid("weights must be finite and nonnegative".into()));
        }
        let in_total: f64 = raw.iter().sum();
        let total = in_total + overflow_weight;
        if !(total > 0.0) {
            return Err(Error::InvalidGrid("measure carries no mass".into()));
        }
        let overflow_fraction = overflow_weight / total;
        if overflow_fraction > max_overflow {
            return Err(Error::GridCoverage { overflow_fraction });
        }
        let mut weights = raw;
        for w in weights.iter_mut() {
            *w /= in_total;
        }
        Ok(Self { spec, num_regimes, weights, overflow_fraction })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_regimes(&self) -> usize {
        self.num_regimes
    }

    pub fn overflow_fraction(&self) -> f64 {
        self.overflow_fraction
    }

    pub fn weight(&self, cell: usize, regime: usize) -> f64 {
        self.weights[cell * self.num_regimes + regime]
    }

    /// Total weight of a cell across regimes.
    pub fn cell_weight(&self, cell: usize) -> f64 {
        let base = cell * self.num_regimes;
        self.weights[base..base + self.num_regimes].iter().sum()
    }

    /// State marginal over cells.
    pub fn cell_marginal(&self) -> Vec<f64> {
        (0..self.spec.num_cells()).map(|c| self.cell_weight(c)).collect()
    }

    /// Regime marginal.
    pub fn regime_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_regimes];
        for (k, w) in self.weights.iter().enumerate() {
            out[k % self.num_regimes] += w;
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ g(center, regime) · weight`, evaluated at cell centers in flat
    /// cell order (deterministic).
    pub fn integrate(&self, g: impl Fn(&[f64], usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for cell in 0..self.spec.num_cells() {
            let base = cell * self.num_regimes;
            if self.weights[base..base + self.num_regimes].iter().all(|w| *w == 0.0) {
                continue;
            }
            let center = self.spec.cell_center(cell);
            for regime in 0..self.num_regimes {
                let w = self.weights[base + regime];
                if w != 0.0 {
                    acc += w * g(&center, regime);
                }
            }
        }
        acc
    }

    /// `Σ g(center) · cell weight` for regime-independent observables.
    pub fn integrate_state(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.integrate(|x, _| g(x))
    }

    /// Mass of cells whose centers lie within `radius` of `center`. The cell
    /// containing `center` always counts, so a radius below the cell size
    /// still returns that cell's weight.
    pub fn neighborhood_mass(&self, center: &[f64], radius: f64) -> f64 {
        let own = self.spec.cell_index(center);
        let mut acc = 0.0;
        for cell in 0..self.spec.num_cells() {
            let inside = Some(cell) == own || {
                let c = self.spec.cell_center(cell);
                c.iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    <= radius
            };
            if inside {
                acc += self.cell_weight(cell);
            }
        }
        acc
    }

    /// Serializes as a one-line JSON header (grid, regime count, overflow)
    /// followed by CSV rows `cell coords..., regime, weight` for every
    /// nonzero weight, in flat cell order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = MeasureHeader {
            spec: self.spec.clone(),
            regimes: self.num_regimes,
            overflow: self.overflow_fraction,
        };
        let line = serde_json::to_string(&header).map_err(|e| Error::InvalidInput(e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err)?;
        for cell in 0..self.spec.num_cells() {
            for regime in 0..self.num_regimes {
                let wt = self.weight(cell, regime);
                if wt == 0.0 {
                    continue;
                }
                let coords: Vec<String> =
                    self.spec.cell_coords(cell).iter().map(|c| c.to_string()).collect();
                writeln!(w, "{},{regime},{wt:.16e}", coords.join(",")).map_err(io_err)?;
            }
        }
        Ok(())
    }

    /// Inverse of [`write_to`](Self::write_to). Total mass must come back
    /// within `1e-9` of one; weights are renormalized exactly after reading.
    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut header_line = String::new();
        r.read_line(&mut header_line).map_err(io_err)?;
        let header: MeasureHeader = serde_json::from_str(header_line.trim())
            .map_err(|e| Error::InvalidInput(format!("bad measure header: {e}")))?;
        if header.regimes == 0 {
            return Err(Error::InvalidInput("measure needs at least one regime".into()));
        }
        let spec = header.spec;
        let d = spec.dim();
        let mut weights = vec![0.0; spec.num_cells() * header.regimes];
        for line in r.lines() {
            let line = line.map_err(io_err)?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::InvalidInput(format!(
                    "measure row has {} fields, expected {}",
                    fields.len(),
                    d + 2
                )));
            }
            let mut flat = 0usize;
            let mut stride = 1usize;
            for (axis, f) in fields[..d].iter().enumerate() {
                let idx: usize = f
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad cell index `{f}`")))?;
                if idx >= spec.cells_per_axis()[axis] {
                    return Err(Error::InvalidInput(format!("cell index {idx} out of range")));
                }
                flat += idx * stride;
                stride *= spec.cells_per_axis()[axis];
            }
            let regime: usize = fields[d]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad regime `{}`", fields[d])))?;
            if regime >= header.regimes {
                return Err(Error::InvalidInput(format!("regime {regime} out of range")));
            }
            let wt: f64 = fields[d + 1]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad weight `{}`", fields[d + 1])))?;
            weights[flat * header.regimes + regime] = wt;
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("measure mass reads back as {total}, expected 1")));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { spec, num_regimes: header.regimes, weights, overflow_fraction: header.overflow })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);
        Self::read_from(&mut f)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidInput(format!("io: {e}"))
}

// ---------------------------------------------------------------------------
// Empirical measure of a hybrid path
// ---------------------------------------------------------------------------

struct Histogram<'a> {
    spec: &'a GridSpec,
    num_regimes: usize,
    /// Absolute time before which substeps carry no weight.
    burn_until: f64,
    weights: Vec<f64>,
    overflow: f64,
}

impl Observer for Histogram<'_> {
    fn on_sample(&mut self, _k: usize, _t: f64, _x: &[f64], _regime: usize) -> bool {
        true
    }

    fn on_substep(&mut self, t: f64, len: f64, x: &[f64], regime: usize) -> bool {
        let start = t.max(self.burn_until);
        let w = t + len - start;
        if w <= 0.0 {
            return true;
        }
        match self.spec.cell_index(x) {
            Some(cell) => self.weights[cell * self.num_regimes + regime] += w,
            None => self.overflow += w,
        }
        true
    }
}

/// Time-occupation measure of one hybrid path over `[t0 + burn_in, t_end]`.
///
/// Every Euler substep deposits its length (clipped to the post-burn-in
/// window) on the cell/regime pair holding at the substep's start. Fails
/// with `GridCoverage` when more than [`MAX_OVERFLOW_FRACTION`] of the time
/// falls outside the grid. Randomness follows the same stream contract as
/// `simulate`: chain from `(seed, CHAIN, replicate)`, increments from
/// `(seed, BROWNIAN, replicate)`.
pub fn empirical_measure(
    model: &HybridModel,
    generator: &Generator,
    params: &SimParams,
    spec: &GridSpec,
    burn_in: f64,
) -> Result<GridMeasure> {
    params.validate(model, generator)?;
    if spec.dim() != model.dim() {
        return Err(Error::SpecMismatch(format!(
            "grid dimension {} vs model dimension {}",
            spec.dim(),
            model.dim()
        )));
    }
    if !(burn_in >= 0.0) || burn_in >= params.t_end - params.t0 {
        return Err(Error::InvalidInput(format!(
            "burn-in {burn_in} must lie in [0, span)",
        )));
    }
    let chain = stream(params.seed, tag::CHAIN, params.replicate);
    let mut sampler = JumpSampler::new(generator, params.eps, params.i0, params.t0, chain)?;
    let mut brownian = stream(params.seed, tag::BROWNIAN, params.replicate);
    let mut hist = Histogram {
        spec,
        num_regimes: model.num_regimes(),
        burn_until: params.t0 + burn_in,
        weights: vec![0.0; spec.num_cells() * model.num_regimes()],
        overflow: 0.0,
    };
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
        &mut hist,
    )?;
    GridMeasure::from_weighted_counts(
        spec.clone(),
        model.num_regimes(),
        hist.weights,
        hist.overflow,
        MAX_OVERFLOW_FRACTION,
    )
}

// ---------------------------------------------------------------------------
// Bounded-Lipschitz witnesses
// ---------------------------------------------------------------------------

/// One witness `g(x) = clamp(u·(x − o), −1, 1)` with `|u| = 1`: Lipschitz
/// constant 1 and sup norm ≤ 1.
struct Witness {
    u: Vec<f64>,
    o: Vec<f64>,
}

impl Witness {
    fn eval(&self, x: &[f64]) -> f64 {
        let s: f64 = self.u.iter().zip(x).zip(&self.o).map(|((u, xi), o)| u * (xi - o)).sum();
        s.clamp(-1.0, 1.0)
    }
}

/// The first `dim` witnesses are the coordinate functions centered on the
/// box; the rest use a uniform random direction and an offset uniform in the
/// box, drawn from `(seed, BL_FAMILY, 0)`. The family is a deterministic
/// function of the grid box and the seed.
fn bl_family(spec: &GridSpec, seed: u64) -> Vec<Witness> {
    let d = spec.dim();
    let center: Vec<f64> = spec.lo().iter().zip(spec.hi()).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut family = Vec::with_capacity(BL_FAMILY_SIZE);
    for axis in 0..d.min(BL_FAMILY_SIZE) {
        let mut u = vec![0.0; d];
        u[axis] = 1.0;
        family.push(Witness { u, o: center.clone() });
    }
    let mut rng = stream(seed, tag::BL_FAMILY, 0);
    while family.len() < BL_FAMILY_SIZE {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        for v in u.iter_mut() {
            *v /= norm;
        }
        let o: Vec<f64> = spec
            .lo()
            .iter()
            .zip(spec.hi())
            .map(|(a, b)| a + rng.random::<f64>() * (b - a))
            .collect();
        family.push(Witness { u, o });
    }
    family
}

/// Empirical bounded-Lipschitz distance between the state marginals of two
/// measures on the same grid: the maximum of `|∫g dμ − ∫g dν|` over the
/// witness family derived from `seed`.
pub fn bl_distance(a: &GridMeasure, b: &GridMeasure, seed: u64) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch("measures live on different grids".into()));
    }
    let spec = a.spec();
    let wa = a.cell_marginal();
    let wb = b.cell_marginal();
    let family = bl_family(spec, seed);
    let mut best = 0.0_f64;
    for g in &family {
        let mut diff = 0.0;
        for cell in 0..spec.num_cells() {
            let dw = wa[cell] - wb[cell];
            if dw != 0.0 {
                diff += dw * g.eval(&spec.cell_center(cell));
            }
        }
        best = best.max(diff.abs());
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// Named observables `g(x)` used in convergence reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    /// `x₁`
    X1,
    /// `x₂`
    X2,
    /// `x₁²`
    X1Squared,
    /// `x₁ x₂`
    Cross,
    /// `|x|²`
    NormSquared,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::X1 => x[0],
            Self::X2 => x[1],
            Self::X1Squared => x[0] * x[0],
            Self::Cross => x[0] * x[1],
            Self::NormSquared => x.iter().map(|v| v * v).sum(),
        }
    }

    /// Smallest state dimension on which the observable is defined.
    pub fn requires_dim(&self) -> usize {
        match self {
            Self::X1 | Self::X1Squared | Self::NormSquared => 1,
            Self::X2 | Self::Cross => 2,
        }
    }

    pub const ALL: [TestFunction; 5] =
        [Self::X1, Self::X2, Self::X1Squared, Self::Cross, Self::NormSquared];
}

impl std::fmt::Display for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::X1 => "x1",
            Self::X2 => "x2",
            Self::X1Squared => "x1_squared",
            Self::Cross => "x1_x2",
            Self::NormSquared => "norm_squared",
        };
        f.write_str(name)
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x1" => Ok(Self::X1),
            "x2" => Ok(Self::X2),
            "x1_squared" => Ok(Self::X1Squared),
            "x1_x2" => Ok(Self::Cross),
            "norm_squared" => Ok(Self::NormSquared),
            other => Err(Error::InvalidInput(format!(
                "unknown test function `{other}`; expected one of x1, x2, x1_squared, x1_x2, norm_squared"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Convergence sweep
// ---------------------------------------------------------------------------

/// Fixed (non-scaled) knobs of a convergence sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub t_end: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub i0: usize,
    pub grid: GridSpec,
    /// Ball radius for the critical-point mass columns.
    pub neighborhood_radius: f64,
}

/// One `(ε, δ)` row of a sweep. A failed run keeps its scales and carries
/// the error text instead of values.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub delta: f64,
    /// Witness-family distance between the path measure and the cycle
    /// measure.
    pub bl: Option<f64>,
    /// `∫ g dμ` per test function.
    pub hybrid_averages: Vec<f64>,
    /// `(1/T) ∫ g(X̄(t)) dt` per test function (identical across rows).
    pub cycle_averages: Vec<f64>,
    /// `|hybrid − cycle|` per test function.
    pub gaps: Vec<f64>,
    /// μ-mass of the radius ball around each critical point.
    pub neighborhood_masses: Vec<f64>,
    /// Fraction of post-burn-in time spent inside the grid.
    pub in_grid_fraction: Option<f64>,
    pub error: Option<String>,
}

/// Sweep output: one row per scale pair, most-to-least coarse.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub test_function_names: Vec<String>,
    pub critical_points: Vec<Vec<f64>>,
    pub neighborhood_radius: f64,
}

impl ConvergenceReport {
    /// CSV export: `eps,delta,bl,in_grid,avg_*,cycle_*,gap_*,mass_*,error`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut cols = vec!["eps".to_string(), "delta".into(), "bl".into(), "in_grid".into()];
        for name in &self.test_function_names {
            cols.push(format!("avg_{name}"));
            cols.push(format!("cycle_{name}"));
            cols.push(format!("gap_{name}"));
        }
        for k in 0..self.critical_points.len() {
            cols.push(format!("mass_cp{k}"));
        }
        cols.push("error".into());
        writeln!(w, "{}", cols.join(","))?;
        for row in &self.rows {
            let mut fields = vec![format!("{:.16e}", row.eps), format!("{:.16e}", row.delta)];
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
            fields.push(opt(row.bl));
            fields.push(opt(row.in_grid_fraction));
            for i in 0..self.test_function_names.len() {
                fields.push(row.hybrid_averages.get(i).map(|v| format!("{v:.16e}")).unwrap_or_default());
                fields.push(row.cycle_averages.get(i).map(|v| format!("{v:.16e}")).unwrap_or_default());
                fields.push(row.gaps.get(i).map(|v| format!("{v:.16e}")).unwrap_or_default());
            }
            for k in 0..self.critical_points.len() {
                fields.push(row.neighborhood_masses.get(k).map(|v| format!("{v:.16e}")).unwrap_or_default());
            }
            fields.push(row.error.clone().unwrap_or_default().replace(',', ";"));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Default ball radius for critical-point masses: a tenth of the closest
/// approach between the cycle and any critical point.
pub fn default_neighborhood_radius(cycle: &LimitCycle, critical_points: &[Vec<f64>]) -> f64 {
    let mut min_dist = f64::INFINITY;
    for p in critical_points {
        for k in 0..cycle.len() {
            let d: f64 = cycle
                .state(k)
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if min_dist.is_finite() {
        0.1 * min_dist
    } else {
        0.0
    }
}

/// Runs one long path per `(ε, δ)` pair of the schedule and compares its
/// occupation measure against the averaged cycle.
///
/// Pair `k` uses replicate index `k` of the seed's streams, so rows are
/// independent and the whole sweep is reproducible from `cfg.seed`. A row
/// whose run fails (blow-up, grid overflow) records the error and the sweep
/// continues.
pub fn convergence_sweep(
    model: &HybridModel,
    generator: &Generator,
    schedule: &ScaleSchedule,
    cycle: &LimitCycle,
    critical_points: &[Vec<f64>],
    test_functions: &[TestFunction],
    cfg: &SweepConfig,
) -> Result<ConvergenceReport> {
    for g in test_functions {
        if g.requires_dim() > model.dim() {
            return Err(Error::InvalidInput(format!(
                "test function {g} needs dimension {}, model has {}",
                g.requires_dim(),
                model.dim()
            )));
        }
    }
    // The cycle must be resolvable on the sweep grid.
    let mu0 = cycle_measure(cycle, &cfg.grid)?;
    let cycle_avgs: Vec<f64> =
        test_functions.iter().map(|g| cycle_average(cycle, |x| g.eval(x))).collect();

    let mut rows = Vec::new();
    for (k, (eps, delta)) in schedule.pairs().into_iter().enumerate() {
        let params = SimParams::new(
            eps,
            delta,
            cfg.x0.clone(),
            cfg.i0,
            cfg.t_end,
            cfg.dt,
            cfg.seed,
        )
        .with_replicate(k as u64);
        match empirical_measure(model, generator, &params, &cfg.grid, cfg.burn_in) {
            Ok(mu) => {
                let bl = bl_distance(&mu, &mu0, cfg.seed)?;
                let hybrid: Vec<f64> =
                    test_functions.iter().map(|g| mu.integrate_state(|x| g.eval(x))).collect();
                let gaps: Vec<f64> =
                    hybrid.iter().zip(&cycle_avgs).map(|(a, b)| (a - b).abs()).collect();
                let masses: Vec<f64> = critical_points
                    .iter()
                    .map(|p| mu.neighborhood_mass(p, cfg.neighborhood_radius))
                    .collect();
                rows.push(ConvergenceRow {
                    eps,
                    delta,
                    bl: Some(bl),
                    hybrid_averages: hybrid,
                    cycle_averages: cycle_avgs.clone(),
                    gaps,
                    neighborhood_masses: masses,
                    in_grid_fraction: Some(1.0 - mu.overflow_fraction()),
                    error: None,
                });
            }
            Err(e) => rows.push(ConvergenceRow {
                eps,
                delta,
                bl: None,
                hybrid_averages: Vec::new(),
                cycle_averages: cycle_avgs.clone(),
                gaps: Vec::new(),
                neighborhood_masses: Vec::new(),
                in_grid_fraction: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(ConvergenceReport {
        rows,
        test_function_names: test_functions.iter().map(|g| g.to_string()).collect(),
        critical_points: critical_points.to_vec(),
        neighborhood_radius: cfg.neighborhood_radius,
    })
}
