//! Scenario files: one JSON document selects the model, chain generator,
//! scale schedule, simulation knobs, grid and test functions for every
//! command. Parsing fills documented defaults, so the smallest useful file is
//! `{"model":{"builtin":"holling-example"}}`.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use fastslow::ctmc::Generator;
use fastslow::measures::{GridSpec, TestFunction};
use fastslow::predprey::{build_model, holling_example, PredPreyParams};
use fastslow::sde::{ScaleSchedule, ScalingRegime};
use fastslow::HybridModel;
use serde::{Deserialize, Serialize};

/// Failure to load or validate a scenario file.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    /// A missing or rejected key; `key` is its dotted path in the document.
    #[error("config key `{key}`: {reason}")]
    Key { key: String, reason: String },
}

impl ConfigError {
    /// Dotted path of the offending key, when the failure is key-specific.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Key { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn key_err(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Key { key: key.into(), reason: reason.to_string() }
}

/// Model selection: a named builtin or inline predator-prey parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Builtin(String),
    Predprey(PredPreyParams),
}

/// How `δ` is slaved to `ε` over the sweep ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    /// `case1` (δ = l·ε), `case2` (δ = ε²) or `case3` (δ = √ε capped at 0.25).
    pub case: String,
    pub l: f64,
    pub eps: Vec<f64>,
}

/// Time-stepping and ensemble knobs shared by all commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t_end: f64,
    pub dt: f64,
    /// Leading time span discarded by occupation measures.
    pub burn_in: f64,
    /// Replicate count for ensemble commands (`exit-time`).
    pub n: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub i0: usize,
}

/// A fully populated run description; `parse_config` always returns one with
/// every default filled in, so echoing and re-parsing is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelSpec,
    /// Chain generator rows; each row sums to zero.
    pub generator: Vec<Vec<f64>>,
    pub schedule: ScheduleSpec,
    pub sim: SimSpec,
    pub grid: GridSpec,
    /// Observables for the convergence sweep, by name.
    pub test_functions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_dir: Option<String>,
}

/// Everything a command needs, built from a validated scenario.
pub struct Resolved {
    pub params: PredPreyParams,
    pub model: HybridModel,
    pub generator: Generator,
    pub schedule: ScaleSchedule,
    pub test_functions: Vec<TestFunction>,
}

// Raw mirror with every field optional so defaults can be filled per key.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    model: ModelSpec,
    generator: Option<Vec<Vec<f64>>>,
    schedule: Option<RawSchedule>,
    sim: Option<RawSim>,
    grid: Option<GridSpec>,
    test_functions: Option<Vec<String>>,
    out_dir: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    case: Option<String>,
    l: Option<f64>,
    eps: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSim {
    t_end: Option<f64>,
    dt: Option<f64>,
    burn_in: Option<f64>,
    n: Option<usize>,
    seed: Option<u64>,
    x0: Option<Vec<f64>>,
    i0: Option<usize>,
}

/// The fully defaulted builtin scenario; a minimal config naming
/// `holling-example` parses to exactly this value.
pub fn holling_scenario() -> Scenario {
    let ex = holling_example();
    let t_end = ex.t_end;
    Scenario {
        model: ModelSpec::Builtin("holling-example".into()),
        generator: generator_rows(&ex.generator),
        schedule: ScheduleSpec {
            case: "case1".into(),
            l: ex.proportional_l,
            eps: ex.eps_ladder.clone(),
        },
        sim: SimSpec {
            t_end,
            dt: ex.dt,
            burn_in: t_end / 20.0,
            n: 100,
            seed: ex.seed,
            x0: ex.x0.clone(),
            i0: ex.i0,
        },
        grid: GridSpec::uniform(2, 0.0, 12.0, 200).expect("static grid"),
        test_functions: vec!["x1".into(), "x2".into(), "x1_squared".into(), "x1_x2".into()],
        out_dir: None,
    }
}

fn generator_rows(g: &Generator) -> Vec<Vec<f64>> {
    let m = g.num_states();
    (0..m).map(|i| (0..m).map(|j| g.rate(i, j)).collect()).collect()
}

/// Reads, default-fills and validates a scenario file.
pub fn parse_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = fs::read_to_string(path)?;
    parse_str(&text)
}

/// [`parse_config`] on an in-memory document.
pub fn parse_str(text: &str) -> Result<Scenario, ConfigError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let scenario = fill_defaults(raw)?;
    scenario.resolve()?;
    Ok(scenario)
}

fn fill_defaults(raw: RawScenario) -> Result<Scenario, ConfigError> {
    let defaults = holling_scenario();
    let generator = match raw.generator {
        Some(rows) => rows,
        None => match &raw.model {
            ModelSpec::Builtin(_) => defaults.generator.clone(),
            ModelSpec::Predprey(_) => {
                return Err(key_err("generator", "a custom model must supply the chain generator"))
            }
        },
    };
    let sched = raw.schedule.unwrap_or_default();
    let sim = raw.sim.unwrap_or_default();
    let t_end = sim.t_end.unwrap_or(defaults.sim.t_end);
    Ok(Scenario {
        model: raw.model,
        generator,
        schedule: ScheduleSpec {
            case: sched.case.unwrap_or_else(|| defaults.schedule.case.clone()),
            l: sched.l.unwrap_or(defaults.schedule.l),
            eps: sched.eps.unwrap_or_else(|| defaults.schedule.eps.clone()),
        },
        sim: SimSpec {
            t_end,
            dt: sim.dt.unwrap_or(defaults.sim.dt),
            // measures discard the leading 5% unless told otherwise
            burn_in: sim.burn_in.unwrap_or(t_end / 20.0),
            n: sim.n.unwrap_or(defaults.sim.n),
            seed: sim.seed.unwrap_or(defaults.sim.seed),
            x0: sim.x0.unwrap_or_else(|| defaults.sim.x0.clone()),
            i0: sim.i0.unwrap_or(defaults.sim.i0),
        },
        grid: raw.grid.unwrap_or_else(|| defaults.grid.clone()),
        test_functions: raw.test_functions.unwrap_or_else(|| defaults.test_functions.clone()),
        out_dir: raw.out_dir,
    })
}

impl Scenario {
    /// Validates every cross-field invariant and builds the runnable pieces.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let params = match &self.model {
            ModelSpec::Builtin(name) if name == "holling-example" => holling_example().params,
            ModelSpec::Builtin(name) => {
                return Err(key_err("model.builtin", format!("unknown builtin `{name}`")))
            }
            ModelSpec::Predprey(p) => {
                p.validate().map_err(|e| key_err("model.predprey", e))?;
                p.clone()
            }
        };
        let generator =
            Generator::from_rows(&self.generator).map_err(|e| key_err("generator", e))?;
        if generator.num_states() != params.num_regimes() {
            return Err(key_err(
                "generator",
                format!(
                    "{} chain states for {} model regimes",
                    generator.num_states(),
                    params.num_regimes()
                ),
            ));
        }
        let case = match self.schedule.case.as_str() {
            "case1" => ScalingRegime::DeltaProportional,
            "case2" => ScalingRegime::DeltaQuadratic,
            "case3" => ScalingRegime::DeltaSqrt,
            other => {
                return Err(key_err("schedule.case", format!("unknown case label `{other}`")))
            }
        };
        let schedule = ScaleSchedule::new(case, self.schedule.l, self.schedule.eps.clone())
            .map_err(|e| key_err("schedule", e))?;

        if !(self.sim.dt > 0.0) || !self.sim.dt.is_finite() {
            return Err(key_err("sim.dt", format!("step must be positive, got {}", self.sim.dt)));
        }
        if !(self.sim.t_end > self.sim.dt) {
            return Err(key_err("sim.t_end", "horizon must exceed one step"));
        }
        if !(0.0..self.sim.t_end).contains(&self.sim.burn_in) {
            return Err(key_err("sim.burn_in", "burn-in must lie in [0, t_end)"));
        }
        if self.sim.n == 0 {
            return Err(key_err("sim.n", "need at least one replicate"));
        }
        if self.sim.x0.len() != 2 {
            return Err(key_err("sim.x0", "predator-prey state has two coordinates"));
        }
        if self.sim.x0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(key_err("sim.x0", "both populations must start positive"));
        }
        if self.sim.i0 >= generator.num_states() {
            return Err(key_err("sim.i0", format!("regime {} out of range", self.sim.i0)));
        }
        if self.grid.dim() != 2 {
            return Err(key_err("grid", "grid must be two-dimensional"));
        }
        let mut test_functions = Vec::with_capacity(self.test_functions.len());
        for name in &self.test_functions {
            let g = TestFunction::from_str(name).map_err(|e| key_err("test_functions", e))?;
            test_functions.push(g);
        }
        let model = build_model(&params).map_err(|e| key_err("model.predprey", e))?;
        Ok(Resolved { params, model, generator, schedule, test_functions })
    }

    /// Pretty JSON echo of the complete scenario; re-parsing it reproduces
    /// `self` exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
