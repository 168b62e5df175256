//! Regime-switching predator-prey models.
//!
//! Both populations follow per-capita dynamics switched by the fast chain:
//!
//! ```text
//! dX = X [a − b X − Y h(X, Y)] dt + √δ λ X dW₁
//! dY = Y [−c − d Y + f X h(X, Y)] dt + √δ ρ Y dW₂
//! ```
//!
//! with every coefficient and the functional response `h` depending on the
//! regime. The per-capita form makes both coordinates positivity-flagged, so
//! simulation runs in log coordinates and never leaves the open quadrant.
//! The noise is multiplicative in each population's own coordinate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::averaging::VectorField;
use crate::ctmc::{Generator, StationaryDist};
use crate::error::Error;
use crate::model::HybridModel;
use crate::sde::{ScaleSchedule, ScalingRegime, Trajectory};
use crate::Result;

/// Per-predator consumption rate `h(x, y)` as a function of prey and
/// predator density. All kinds are positive and bounded on the open
/// positive quadrant, which the constructors check per kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FunctionalResponse {
    /// `h = value` (mass-action predation).
    #[serde(rename = "constant")]
    Constant { value: f64 },
    /// `h = scale / (offset + slope·x)`: saturating in prey density.
    #[serde(rename = "holling_ii")]
    HollingII { scale: f64, offset: f64, slope: f64 },
    /// `h = scale / (offset + prey_slope·x + pred_slope·y)`: saturating in
    /// prey and diluted by predator interference.
    #[serde(rename = "beddington_deangelis")]
    BeddingtonDeAngelis { scale: f64, offset: f64, prey_slope: f64, pred_slope: f64 },
}

impl FunctionalResponse {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::HollingII { scale, offset, slope } => scale / (offset + slope * x),
            Self::BeddingtonDeAngelis { scale, offset, prey_slope, pred_slope } => {
                scale / (offset + prey_slope * x + pred_slope * y)
            }
        }
    }

    /// Positivity and boundedness on the positive quadrant, per kind.
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { value } => value > 0.0 && value.is_finite(),
            Self::HollingII { scale, offset, slope } => {
                scale > 0.0 && offset > 0.0 && slope >= 0.0 && (scale + offset + slope).is_finite()
            }
            Self::BeddingtonDeAngelis { scale, offset, prey_slope, pred_slope } => {
                scale > 0.0
                    && offset > 0.0
                    && prey_slope >= 0.0
                    && pred_slope >= 0.0
                    && (scale + offset + prey_slope + pred_slope).is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "functional response must be positive and bounded on the quadrant: {self:?}"
            )))
        }
    }
}

/// Coefficients of one regime. Rates are strictly positive; noise
/// intensities may be zero (deterministic population).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeCoeffs {
    /// Per-capita prey growth at low density.
    pub prey_growth: f64,
    /// Logistic self-limitation of the prey.
    pub prey_crowding: f64,
    /// Per-capita predator death rate.
    pub predator_death: f64,
    /// Predator self-limitation.
    pub predator_crowding: f64,
    /// Conversion efficiency of consumed prey into predators.
    pub conversion: f64,
    /// Multiplicative noise intensity on the prey.
    pub prey_noise: f64,
    /// Multiplicative noise intensity on the predator.
    pub predator_noise: f64,
    pub response: FunctionalResponse,
}

impl RegimeCoeffs {
    fn validate(&self) -> Result<()> {
        let rates =
            [self.prey_growth, self.prey_crowding, self.predator_death, self.predator_crowding, self.conversion];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidModel(format!("rates must be positive and finite: {self:?}")));
        }
        if !(self.prey_noise >= 0.0 && self.predator_noise >= 0.0)
            || !self.prey_noise.is_finite()
            || !self.predator_noise.is_finite()
        {
            return Err(Error::InvalidModel("noise intensities must be nonnegative".into()));
        }
        self.response.validate()
    }

    /// Per-capita prey growth `a − b x − y h(x, y)`.
    fn prey_rate(&self, x: f64, y: f64) -> f64 {
        self.prey_growth - self.prey_crowding * x - y * self.response.eval(x, y)
    }

    /// Per-capita predator growth `−c − d y + f x h(x, y)`.
    fn predator_rate(&self, x: f64, y: f64) -> f64 {
        -self.predator_death - self.predator_crowding * y
            + self.conversion * x * self.response.eval(x, y)
    }
}

/// A complete switching predator-prey specification, one entry per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredPreyParams {
    pub regimes: Vec<RegimeCoeffs>,
}

impl PredPreyParams {
    pub fn new(regimes: Vec<RegimeCoeffs>) -> Result<Self> {
        let p = Self { regimes };
        p.validate()?;
        Ok(p)
    }

    /// Re-checks every regime; deserialized values must pass through here.
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::InvalidModel("at least one regime is required".into()));
        }
        for r in &self.regimes {
            r.validate()?;
        }
        Ok(())
    }

    pub fn num_regimes(&self) -> usize {
        self.regimes.len()
    }
}

/// Builds the switching SDE: dimension 2, one independent Brownian motion
/// per population, positivity-flagged coordinates (the drift and diffusion
/// are per capita).
pub fn build_model(params: &PredPreyParams) -> Result<HybridModel> {
    params.validate()?;
    let drift_params = params.clone();
    let noise_params = params.clone();
    HybridModel::positive(
        2,
        params.num_regimes(),
        2,
        Arc::new(move |x: &[f64], i: usize, out: &mut [f64]| {
            let c = &drift_params.regimes[i];
            out[0] = c.prey_rate(x[0], x[1]);
            out[1] = c.predator_rate(x[0], x[1]);
        }),
        Arc::new(move |_x: &[f64], i: usize, out: &mut [f64]| {
            let c = &noise_params.regimes[i];
            out[0] = c.prey_noise;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = c.predator_noise;
        }),
    )
}

/// The averaged drift assembled directly from the coefficient averages:
///
/// ```text
/// ẋ = x [ā − b̄ x − y h₁(x, y)],   ẏ = y [−c̄ − d̄ y + x h₂(x, y)]
/// ```
///
/// with `h₁ = Σ h(·, i) ν_i` and `h₂ = Σ f(i) h(·, i) ν_i`. Agrees pointwise
/// with averaging the built model's drift; the two routes cross-check each
/// other in tests.
pub fn averaged_predprey(params: &PredPreyParams, nu: &StationaryDist) -> Result<VectorField> {
    params.validate()?;
    if nu.len() != params.num_regimes() {
        return Err(Error::InvalidModel(format!(
            "stationary law has {} entries but the model has {} regimes",
            nu.len(),
            params.num_regimes()
        )));
    }
    let params = params.clone();
    let weights: Vec<f64> = nu.probs().to_vec();
    Ok(VectorField::new(
        2,
        Arc::new(move |z, out| {
            let (x, y) = (z[0], z[1]);
            let mut prey = 0.0;
            let mut pred = 0.0;
            for (c, w) in params.regimes.iter().zip(&weights) {
                prey += w * c.prey_rate(x, y);
                pred += w * c.predator_rate(x, y);
            }
            out[0] = x * prey;
            out[1] = y * pred;
        }),
    ))
}

// ---------------------------------------------------------------------------
// The built-in two-regime Holling benchmark
// ---------------------------------------------------------------------------

/// Interaction coefficient of the reference field's predator equation.
pub const REFERENCE_PREDATOR_COEFF: f64 = 1.6;

/// A fully configured two-regime benchmark with Holling-type predation.
///
/// The switching generator is the symmetric unit-rate flip, so both regimes
/// carry stationary weight 1/2. The averaged prey equation collapses to the
/// logistic-plus-saturation form `x(1 − x/5) − xy/(1 + x)` exactly; the
/// averaged predator equation is close to — but intentionally not identical
/// with — the fixed [`reference_field`](HollingExample::reference_field)
/// (see [`predator_coefficients`](HollingExample::predator_coefficients)).
#[derive(Debug, Clone)]
pub struct HollingExample {
    pub params: PredPreyParams,
    pub generator: Generator,
    /// Default initial populations for simulations.
    pub x0: Vec<f64>,
    /// Default initial regime.
    pub i0: usize,
    /// Horizon of the portrait trajectories.
    pub t_end: f64,
    /// Euler/RK step for the portrait runs.
    pub dt: f64,
    /// Base seed of the scenario.
    pub seed: u64,
    /// `(ε, δ)` pairs of the portrait runs, coarse to fine.
    pub portrait_scales: Vec<(f64, f64)>,
    /// Shared ε ladder of the three scaling schedules.
    pub eps_ladder: Vec<f64>,
    /// Proportionality constant of the δ = l·ε schedule.
    pub proportional_l: f64,
    /// Unique interior equilibrium of the reference field.
    pub reference_equilibrium: [f64; 2],
}

/// The built-in benchmark scenario used by the command-line tool and the
/// acceptance suite.
pub fn holling_example() -> HollingExample {
    let regime = |growth: f64, crowding: f64, death: f64, pcrowd: f64, conv: f64, ln: f64, pn: f64, scale: f64| {
        RegimeCoeffs {
            prey_growth: growth,
            prey_crowding: crowding,
            predator_death: death,
            predator_crowding: pcrowd,
            conversion: conv,
            prey_noise: ln,
            predator_noise: pn,
            response: FunctionalResponse::HollingII { scale, offset: 1.0, slope: 1.0 },
        }
    };
    // Crowding rates are growth/capacity with capacities 90/19 and 110/21;
    // the resulting ratios 0.19 and 0.21 average to exactly 1/5, which the
    // averaged prey equation relies on.
    let params = PredPreyParams::new(vec![
        regime(0.9, 0.19, 0.85, 0.03, 1.5, 1.0, 3.0, 1.2),
        regime(1.1, 0.21, 1.15, 0.01, 2.0, 2.0, 1.0, 0.8),
    ])
    .expect("built-in parameters are valid");
    let generator = Generator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]])
        .expect("built-in generator is valid");
    HollingExample {
        params,
        generator,
        x0: vec![3.0, 2.0],
        i0: 0,
        t_end: 200.0,
        dt: 1e-3,
        seed: 20,
        portrait_scales: vec![(0.01, 0.01), (0.001, 0.001)],
        eps_ladder: vec![0.1, 0.01, 0.001],
        proportional_l: 1.0,
        reference_equilibrium: [1.836, 1.795],
    }
}

impl HollingExample {
    pub fn model(&self) -> Result<HybridModel> {
        build_model(&self.params)
    }

    pub fn stationary(&self) -> Result<StationaryDist> {
        self.generator.stationary_distribution()
    }

    /// Averaged field assembled from the components.
    pub fn averaged(&self) -> Result<VectorField> {
        averaged_predprey(&self.params, &self.stationary()?)
    }

    /// The fixed planar benchmark field
    ///
    /// ```text
    /// ẋ = x (1 − x/5) − x y / (1 + x)
    /// ẏ = y (−1 + 1.6 x / (1 + x) − 0.02 y)
    /// ```
    ///
    /// whose unique interior equilibrium is `(1.836, 1.795)` and whose limit
    /// cycle attracts every other positive orbit. Regression baselines pin
    /// against this field, not the component average.
    pub fn reference_field(&self) -> VectorField {
        VectorField::new(
            2,
            Arc::new(|z, out| {
                let (x, y) = (z[0], z[1]);
                out[0] = x * (1.0 - x / 5.0) - x * y / (1.0 + x);
                out[1] = y * (-1.0 + REFERENCE_PREDATOR_COEFF * x / (1.0 + x) - 0.02 * y);
            }),
        )
    }

    /// Prey carrying capacities implied by growth/crowding (≈ 4.737 and
    /// ≈ 5.238; the exact ratios 90/19 and 110/21 keep the averaged
    /// crowding rate at exactly 1/5).
    pub fn capacities(&self) -> [f64; 2] {
        let c = |r: &RegimeCoeffs| r.prey_growth / r.prey_crowding;
        [c(&self.params.regimes[0]), c(&self.params.regimes[1])]
    }

    /// `(component, reference)` interaction coefficients of the predator
    /// equation: the ν-average of conversion × response scale is 1.7, while
    /// the reference field fixes 1.6. The gap is real and intentionally
    /// surfaced — convergence experiments must use the component-built
    /// averaged field, regressions the reference field.
    pub fn predator_coefficients(&self) -> Result<(f64, f64)> {
        let nu = self.stationary()?;
        let mut component = 0.0;
        for (c, w) in self.params.regimes.iter().zip(nu.probs()) {
            let scale = match c.response {
                FunctionalResponse::HollingII { scale, .. } => scale,
                FunctionalResponse::Constant { value } => value,
                FunctionalResponse::BeddingtonDeAngelis { scale, .. } => scale,
            };
            component += w * c.conversion * scale;
        }
        Ok((component, REFERENCE_PREDATOR_COEFF))
    }

    /// Scaling schedule over the example's ε ladder for one of the three
    /// cases.
    pub fn schedule(&self, regime: ScalingRegime) -> Result<ScaleSchedule> {
        ScaleSchedule::new(regime, self.proportional_l, self.eps_ladder.clone())
    }
}

// ---------------------------------------------------------------------------
// Moment diagnostics
// ---------------------------------------------------------------------------

/// Long-run moment summaries of one positive planar trajectory.
#[derive(Debug, Clone, Copy)]
pub struct MomentDiagnostics {
    /// Sample average of `|Z(t)|²` over the window.
    pub time_avg_norm2: f64,
    /// Largest `|Z(t)|²` seen in the window.
    pub sup_norm2: f64,
    /// Fraction of window samples with both coordinates in `[1/L, L]`.
    pub box_fraction: f64,
    /// `(window start, trajectory end)`.
    pub window: (f64, f64),
    /// Number of samples in the window.
    pub samples: usize,
}

/// Computes the boundedness diagnostics over `[window_start, T]` for a
/// strictly positive 2-d trajectory: mean and sup of `|Z|²`, and the
/// fraction of time spent in the compact box `[1/L, L]²`.
pub fn moment_diagnostics(traj: &Trajectory, l: f64, window_start: f64) -> Result<MomentDiagnostics> {
    if traj.dim() != 2 {
        return Err(Error::InvalidTrajectory(format!(
            "diagnostics need a planar trajectory, got dimension {}",
            traj.dim()
        )));
    }
    if !(l > 1.0) || !l.is_finite() {
        return Err(Error::InvalidInput(format!("box parameter must exceed 1, got {l}")));
    }
    let t_end = traj.time(traj.len() - 1);
    if !(window_start < t_end) {
        return Err(Error::InvalidInput(format!(
            "window start {window_start} lies past the trajectory end {t_end}"
        )));
    }
    let mut acc = 0.0;
    let mut sup = 0.0_f64;
    let mut in_box = 0usize;
    let mut count = 0usize;
    for k in 0..traj.len() {
        if traj.time(k) < window_start {
            continue;
        }
        let s = traj.state(k);
        if !(s[0] > 0.0 && s[1] > 0.0) {
            return Err(Error::InvalidTrajectory(format!(
                "non-positive state ({}, {}) at t = {}",
                s[0],
                s[1],
                traj.time(k)
            )));
        }
        let n2 = s[0] * s[0] + s[1] * s[1];
        acc += n2;
        sup = sup.max(n2);
        let inv = 1.0 / l;
        if (inv..=l).contains(&s[0]) && (inv..=l).contains(&s[1]) {
            in_box += 1;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("window contains no samples".into()));
    }
    Ok(MomentDiagnostics {
        time_avg_norm2: acc / count as f64,
        sup_norm2: sup,
        box_fraction: in_box as f64 / count as f64,
        window: (window_start, t_end),
        samples: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{averaged_field, find_critical_points};
    use crate::sde::TrajectoryMeta;

    fn example_field() -> VectorField {
        holling_example().averaged().unwrap()
    }

    /// Deterministic pseudo-random points in (0.1, 6)².
    fn probe_points(n: usize) -> Vec<[f64; 2]> {
        let mut s = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.1 + 5.9 * ((s >> 11) as f64 / (1u64 << 53) as f64)
        };
        (0..n).map(|_| [next(), next()]).collect()
    }

    #[test]
    fn averaged_prey_equation_collapses_to_the_reference_form() {
        let field = example_field();
        for p in probe_points(20) {
            let v = field.eval_vec(&p);
            let (x, y) = (p[0], p[1]);
            let reference = x * (1.0 - x / 5.0) - x * y / (1.0 + x);
            assert!(
                (v[0] - reference).abs() < 1e-12,
                "prey field at {p:?}: {} vs {reference}",
                v[0]
            );
        }
    }

    #[test]
    fn predator_coefficient_gap_is_exposed() {
        let ex = holling_example();
        let (component, reference) = ex.predator_coefficients().unwrap();
        assert!((component - 1.7).abs() < 1e-12, "component coefficient {component}");
        assert_eq!(reference, 1.6);
        // The two averaged fields genuinely differ in the predator equation.
        let comp = ex.averaged().unwrap();
        let reff = ex.reference_field();
        let p = [2.0, 1.5];
        let gap = (comp.eval_vec(&p)[1] - reff.eval_vec(&p)[1]).abs();
        let expect = 1.5 * 0.1 * 2.0 / 3.0; // y·Δcoeff·x/(1+x)
        assert!((gap - expect).abs() < 1e-12, "predator gap {gap}");
    }

    #[test]
    fn two_construction_routes_agree() {
        let ex = holling_example();
        let nu = ex.stationary().unwrap();
        let direct = averaged_predprey(&ex.params, &nu).unwrap();
        let via_model = averaged_field(&ex.model().unwrap(), &nu).unwrap();
        for p in probe_points(20) {
            let a = direct.eval_vec(&p);
            let b = via_model.eval_vec(&p);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn boundary_equilibria_annihilate_the_averaged_field() {
        let field = example_field();
        let origin = field.eval_vec(&[0.0, 0.0]);
        assert_eq!(origin, vec![0.0, 0.0]);
        // Averaged growth/crowding = 1/0.2: the prey-only carrying point.
        let carry = field.eval_vec(&[5.0, 0.0]);
        assert!(carry[0].abs() < 1e-12 && carry[1] == 0.0, "{carry:?}");
    }

    #[test]
    fn reference_equilibrium_is_recovered_by_the_root_finder() {
        let ex = holling_example();
        let field = ex.reference_field();
        let found = find_critical_points(&field, &[0.25, 0.25], &[6.0, 6.0], 16, 1e-10).unwrap();
        assert_eq!(found.points.len(), 1, "{:?}", found.points);
        let p = &found.points[0].location;
        let d = ((p[0] - 1.836).powi(2) + (p[1] - 1.795).powi(2)).sqrt();
        assert!(d < 2e-3, "equilibrium at {p:?}, distance {d}");
        // Residual at the pinned 3-decimal point is tiny but nonzero.
        let v = field.eval_vec(&ex.reference_equilibrium.to_vec());
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!(norm < 1e-3, "reference residual {norm}");
    }

    #[test]
    fn component_drift_does_not_vanish_at_the_reference_equilibrium() {
        // The convergence theory needs the per-regime drift to be nonzero at
        // the averaged system's equilibrium.
        let ex = holling_example();
        let model = ex.model().unwrap();
        for regime in 0..2 {
            let mut out = [0.0; 2];
            model.drift(&[1.836, 1.795], regime, &mut out);
            let norm = (out[0] * out[0] + out[1] * out[1]).sqrt();
            assert!(norm > 0.05, "regime {regime} drift norm {norm}");
        }
    }

    #[test]
    fn capacities_match_their_three_decimal_roundings() {
        let caps = holling_example().capacities();
        assert!((caps[0] - 4.737).abs() < 5e-4, "capacity 0: {}", caps[0]);
        assert!((caps[1] - 5.238).abs() < 5e-4, "capacity 1: {}", caps[1]);
        // And the averaged crowding rate is exactly one fifth.
        let ex = holling_example();
        let b_bar = 0.5 * (ex.params.regimes[0].prey_crowding + ex.params.regimes[1].prey_crowding);
        assert!((b_bar - 0.2).abs() < 1e-15);
    }

    #[test]
    fn response_kinds_reduce_to_each_other() {
        let bd0 = FunctionalResponse::BeddingtonDeAngelis {
            scale: 1.2,
            offset: 2.0,
            prey_slope: 0.0,
            pred_slope: 0.0,
        };
        let constant = FunctionalResponse::Constant { value: 0.6 };
        let bd1 = FunctionalResponse::BeddingtonDeAngelis {
            scale: 1.2,
            offset: 1.0,
            prey_slope: 0.5,
            pred_slope: 0.0,
        };
        let holling = FunctionalResponse::HollingII { scale: 1.2, offset: 1.0, slope: 0.5 };
        for p in probe_points(10) {
            let (x, y) = (p[0], p[1]);
            assert!((bd0.eval(x, y) - constant.eval(x, y)).abs() < 1e-14);
            assert!((bd1.eval(x, y) - holling.eval(x, y)).abs() < 1e-14);
        }
    }

    #[test]
    fn doubling_conversion_doubles_the_interaction_term() {
        let ex = holling_example();
        let nu = ex.stationary().unwrap();
        let mut doubled = ex.params.clone();
        for r in doubled.regimes.iter_mut() {
            r.conversion *= 2.0;
        }
        let base = averaged_predprey(&ex.params, &nu).unwrap();
        let twice = averaged_predprey(&doubled, &nu).unwrap();
        for p in probe_points(10) {
            let y = p[1];
            // ψ̄ + c̄ + d̄y = x·h₂ is linear in the conversion rates.
            let cbar = 1.0;
            let dbar = 0.02;
            let lhs = twice.eval_vec(&p)[1] / y + cbar + dbar * y;
            let rhs = 2.0 * (base.eval_vec(&p)[1] / y + cbar + dbar * y);
            assert!((lhs - rhs).abs() < 1e-12, "at {p:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut regs = holling_example().params.regimes;
        regs[0].prey_growth = 0.0;
        assert!(PredPreyParams::new(regs.clone()).is_err());
        regs[0].prey_growth = 0.9;
        regs[0].prey_noise = -1.0;
        assert!(PredPreyParams::new(regs.clone()).is_err());
        regs[0].prey_noise = 1.0;
        regs[0].response = FunctionalResponse::HollingII { scale: 1.0, offset: 0.0, slope: 1.0 };
        assert!(PredPreyParams::new(regs).is_err());
        assert!(PredPreyParams::new(Vec::new()).is_err());
    }

    #[test]
    fn zero_noise_single_regime_matches_its_own_average() {
        // One regime and no noise: the averaged field is the regime's drift.
        let coeffs = RegimeCoeffs {
            prey_growth: 1.0,
            prey_crowding: 0.2,
            predator_death: 1.0,
            predator_crowding: 0.02,
            conversion: 1.6,
            prey_noise: 0.0,
            predator_noise: 0.0,
            response: FunctionalResponse::Constant { value: 0.5 },
        };
        let params = PredPreyParams::new(vec![coeffs]).unwrap();
        let generator = Generator::from_rows(&[vec![0.0]]).unwrap();
        let nu = generator.stationary_distribution().unwrap();
        let field = averaged_predprey(&params, &nu).unwrap();
        let model = build_model(&params).unwrap();
        for p in probe_points(10) {
            let mut drift = [0.0; 2];
            model.drift(&p, 0, &mut drift);
            let avg = field.eval_vec(&p);
            assert!((drift[0] - avg[0]).abs() < 1e-14 && (drift[1] - avg[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn diagnostics_of_a_constant_trajectory() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let states: Vec<f64> = times.iter().flat_map(|_| [1.0, 1.0]).collect();
        let regimes = vec![0; times.len()];
        let traj = Trajectory::from_parts(
            2,
            times,
            states,
            regimes,
            TrajectoryMeta { eps: 1.0, delta: 0.0, dt: 1.0, seed: 0 },
        );
        let d = moment_diagnostics(&traj, 20.0, 0.0).unwrap();
        assert_eq!(d.time_avg_norm2, 2.0);
        assert_eq!(d.sup_norm2, 2.0);
        assert_eq!(d.box_fraction, 1.0);
        assert_eq!(d.samples, 101);
    }

    #[test]
    fn diagnostics_count_box_exits_exactly() {
        // Alternating inside/outside the box [1/20, 20]².
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let states: Vec<f64> =
            (0..100).flat_map(|k| if k % 2 == 0 { [1.0, 1.0] } else { [30.0, 1.0] }).collect();
        let regimes = vec![0; 100];
        let traj = Trajectory::from_parts(
            2,
            times,
            states,
            regimes,
            TrajectoryMeta { eps: 1.0, delta: 0.0, dt: 1.0, seed: 0 },
        );
        let d = moment_diagnostics(&traj, 20.0, 0.0).unwrap();
        assert_eq!(d.box_fraction, 0.5);
        assert_eq!(d.sup_norm2, 901.0);
        // Non-positive data is rejected.
        let bad = Trajectory::from_parts(
            2,
            vec![0.0, 1.0],
            vec![1.0, 1.0, -0.5, 1.0],
            vec![0, 0],
            TrajectoryMeta { eps: 1.0, delta: 0.0, dt: 1.0, seed: 0 },
        );
        assert!(matches!(moment_diagnostics(&bad, 2.0, 0.0), Err(Error::InvalidTrajectory(_))));
    }

    #[test]
    fn response_configuration_roundtrips_through_json() {
        let ex = holling_example();
        let text = serde_json::to_string(&ex.params).unwrap();
        let back: PredPreyParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ex.params);
        assert!(text.contains("holling_ii"));
    }
}
