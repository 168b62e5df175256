//! Continuous-time Markov chains on a finite regime set.
//!
//! A generator `Q = (q_ij)` has nonnegative off-diagonal rates and zero row
//! sums; the chain holds in state `i` for an `Exp(|q_ii| / ε)` time and then
//! jumps to `j ≠ i` with probability `q_ij / |q_ii|`. The speedup `1/ε` is a
//! sampling-time parameter, not part of the stored matrix. Irreducibility is
//! required at construction so the stationary law `ν` (the unique positive
//! solution of `νQ = 0`, `Σν = 1`) exists and is unique.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::error::Error;
use crate::Result;

/// Row sums of a generator must vanish to this absolute tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Residual tolerance `‖νQ‖_∞` accepted from the stationary solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Validated generator matrix of a finite-state chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    m0: usize,
    /// Row-major `m0 × m0` rates.
    q: Vec<f64>,
}

impl Generator {
    /// Validates and wraps a square rate matrix.
    ///
    /// Requirements: nonempty and square; finite entries; `q_ij ≥ 0` for
    /// `i ≠ j`; every row sums to zero within [`ROW_SUM_TOL`]; the directed
    /// graph of positive rates is strongly connected.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m0 = rows.len();
        if m0 == 0 {
            return Err(Error::InvalidGenerator("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m0 {
                return Err(Error::InvalidGenerator(format!(
                    "row {i} has {} entries, expected {m0}",
                    row.len()
                )));
            }
        }
        let q: Vec<f64> = rows.iter().flatten().copied().collect();
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidGenerator(format!("q[{i}][{j}] is not finite")));
                }
                if i != j && v < 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "off-diagonal q[{i}][{j}] = {v} is negative"
                    )));
                }
                sum += v;
            }
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::InvalidGenerator(format!("row {i} sums to {sum:e}")));
            }
        }
        let g = Self { m0, q };
        g.check_irreducible()?;
        Ok(g)
    }

    /// Number of regimes.
    pub fn num_states(&self) -> usize {
        self.m0
    }

    /// Rate `q_ij`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.m0 + j]
    }

    /// Exit rate `|q_ii|` of state `i` (before the `1/ε` speedup).
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.rate(i, i)
    }

    /// Strong connectivity of the positive-rate graph. A single state is
    /// trivially irreducible.
    fn check_irreducible(&self) -> Result<()> {
        if self.m0 == 1 {
            return Ok(());
        }
        let reach = |transpose: bool| -> usize {
            let mut seen = vec![false; self.m0];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(i) = stack.pop() {
                for j in 0..self.m0 {
                    let r = if transpose { self.rate(j, i) } else { self.rate(i, j) };
                    if i != j && r > 0.0 && !seen[j] {
                        seen[j] = true;
                        count += 1;
                        stack.push(j);
                    }
                }
            }
            count
        };
        if reach(false) != self.m0 || reach(true) != self.m0 {
            return Err(Error::Irreducibility(format!(
                "positive-rate graph on {} states is not strongly connected",
                self.m0
            )));
        }
        Ok(())
    }

    /// Unique stationary distribution `ν`: `νQ = 0`, `Σ ν_i = 1`, `ν > 0`.
    ///
    /// Solved as the least-squares solution of the augmented system
    /// `[Qᵀ; 1ᵀ] ν = [0; 1]`, then renormalized exactly. The residual
    /// `‖νQ‖_∞` is verified against [`STATIONARY_RESIDUAL_TOL`].
    pub fn stationary_distribution(&self) -> Result<StationaryDist> {
        let m0 = self.m0;
        let a = DMatrix::<f64>::from_fn(m0 + 1, m0, |r, c| {
            if r < m0 {
                self.rate(c, r)
            } else {
                1.0
            }
        });
        let mut b = DVector::<f64>::zeros(m0 + 1);
        b[m0] = 1.0;
        let svd = a.svd(true, true);
        let nu = svd
            .solve(&b, 1e-14)
            .map_err(|e| Error::InvalidGenerator(format!("stationary solve failed: {e}")))?;
        let sum: f64 = nu.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::InvalidGenerator(
                "stationary solve returned a degenerate distribution".into(),
            ));
        }
        let probs: Vec<f64> = nu.iter().map(|v| v / sum).collect();
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Irreducibility(
                "stationary distribution has a nonpositive component".into(),
            ));
        }
        let mut residual = 0.0_f64;
        for j in 0..m0 {
            let mut col = 0.0;
            for i in 0..m0 {
                col += probs[i] * self.rate(i, j);
            }
            residual = residual.max(col.abs());
        }
        if residual > STATIONARY_RESIDUAL_TOL {
            return Err(Error::InvalidGenerator(format!(
                "stationary residual {residual:e} exceeds {STATIONARY_RESIDUAL_TOL:e}"
            )));
        }
        Ok(StationaryDist { probs })
    }
}

/// Stationary law of an irreducible generator.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    probs: Vec<f64>,
}

impl StationaryDist {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Lazy exact sampler of the sped-up chain's jump sequence.
///
/// Emits `(jump time, new state)` pairs one at a time so callers can
/// consume arbitrarily long horizons in constant memory. Holding times are
/// `Exp(exit_rate(i)/ε)`; the embedded chain jumps with probabilities
/// `q_ij / |q_ii|`.
pub struct JumpSampler<'a, R> {
    generator: &'a Generator,
    eps: f64,
    state: usize,
    t: f64,
    rng: R,
}

impl<'a, R: Rng> JumpSampler<'a, R> {
    pub fn new(generator: &'a Generator, eps: f64, i0: usize, t0: f64, rng: R) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
        }
        if i0 >= generator.num_states() {
            return Err(Error::InvalidInput(format!(
                "initial regime {i0} out of range for {} states",
                generator.num_states()
            )));
        }
        Ok(Self { generator, eps, state: i0, t: t0, rng })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Next jump, or `None` if the current state is absorbing (single-state
    /// chains only, given irreducibility).
    pub fn next_jump(&mut self) -> Option<(f64, usize)> {
        let rate = self.generator.exit_rate(self.state) / self.eps;
        if rate <= 0.0 {
            return None;
        }
        let e: f64 = self.rng.sample(Exp1);
        self.t += e / rate;
        let out = self.generator.exit_rate(self.state);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut next = usize::MAX;
        for j in 0..self.generator.num_states() {
            if j == self.state {
                continue;
            }
            let r = self.generator.rate(self.state, j);
            if r <= 0.0 {
                continue;
            }
            acc += r / out;
            next = j;
            if u < acc {
                break;
            }
        }
        // u can exceed the accumulated sum by rounding; fall back to the
        // last positive-rate target.
        self.state = next;
        Some((self.t, next))
    }
}

/// Piecewise-constant regime path on `[t0, t_end]`, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPath {
    pub t0: f64,
    pub t_end: f64,
    /// Strictly increasing jump times in `(t0, t_end]`.
    pub jump_times: Vec<f64>,
    /// Visited states; `states[k]` holds on `[jump_times[k-1], jump_times[k])`
    /// with `states[0]` holding from `t0`. Length `jump_times.len() + 1`.
    pub states: Vec<usize>,
}

impl SwitchingPath {
    /// State at time `t ∈ [t0, t_end]` (right-continuous at jumps).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    pub fn num_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Fraction of `[t0, t_end]` spent in each state.
    pub fn occupation_fractions(&self, num_states: usize) -> Vec<f64> {
        self.occupation_fractions_in(num_states, self.t0, self.t_end)
    }

    /// Fraction of `[from, to] ⊆ [t0, t_end]` spent in each state.
    pub fn occupation_fractions_in(&self, num_states: usize, from: f64, to: f64) -> Vec<f64> {
        assert!(from >= self.t0 && to <= self.t_end && from < to, "window outside path span");
        let mut occ = vec![0.0; num_states];
        let mut t = from;
        let mut k = self.jump_times.partition_point(|&s| s <= from);
        while t < to {
            let seg_end = if k < self.jump_times.len() {
                self.jump_times[k].min(to)
            } else {
                to
            };
            occ[self.states[k]] += seg_end - t;
            t = seg_end;
            k += 1;
        }
        let span = to - from;
        occ.iter_mut().for_each(|v| *v /= span);
        occ
    }
}

/// Exact simulation of the sped-up chain over `[t0, t_end]`.
pub fn sample_path<R: Rng>(
    generator: &Generator,
    eps: f64,
    i0: usize,
    t0: f64,
    t_end: f64,
    rng: R,
) -> Result<SwitchingPath> {
    if !(t_end > t0) {
        return Err(Error::InvalidSpan { t0, t_end });
    }
    let mut sampler = JumpSampler::new(generator, eps, i0, t0, rng)?;
    let mut jump_times = Vec::new();
    let mut states = vec![i0];
    while let Some((t, j)) = sampler.next_jump() {
        if t > t_end {
            break;
        }
        jump_times.push(t);
        states.push(j);
    }
    Ok(SwitchingPath { t0, t_end, jump_times, states })
}
