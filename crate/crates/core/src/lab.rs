//! Scenario presets, parameter sweeps, weak-coupling calibration and the
//! CSV/JSON result files.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::control::{bang_bang_condition, condition_residual, rect_condition, sine_for_zero, PulseShape};
use crate::engine::{bose_baseline, evolve, evolve_with, DtPolicy, EvolutionSpec, Trajectory};
use crate::lattice::{CouplingProfile, HoppingMatrix, SpectralDecomposition};
use crate::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sine presets must reach `|residual| ≤ SINE_RESIDUAL_LIMIT · τ`.
pub const SINE_RESIDUAL_LIMIT: f64 = 1e-5;

pub const CALIBRATION_RANGE: (f64, f64) = (0.01, 0.3);
pub const CALIBRATION_POINTS: usize = 2000;
pub const CALIBRATION_FLOOR: f64 = 0.5;

/// Transfer time of the weak-coupling scenarios.
pub const WC_TIME: f64 = 210.0 * PI;

/// Chain length whose calibrated `j0` is reused for the shared-`j0` runs.
pub const SHARED_J0_LENGTH: usize = 20;

/// Approximate number of trajectory rows a preset run writes.
const PRESET_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    Fig1a,
    Fig1b,
    Fig2,
    Fig3,
    BoseBaseline,
    Custom,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::Fig1a,
        ScenarioName::Fig1b,
        ScenarioName::Fig2,
        ScenarioName::Fig3,
        ScenarioName::BoseBaseline,
        ScenarioName::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Fig1a => "fig1a",
            ScenarioName::Fig1b => "fig1b",
            ScenarioName::Fig2 => "fig2",
            ScenarioName::Fig3 => "fig3",
            ScenarioName::BoseBaseline => "bose_baseline",
            ScenarioName::Custom => "custom",
        }
    }

    /// Default chain lengths of a preset.
    pub fn default_lengths(&self) -> &'static [usize] {
        match self {
            ScenarioName::Fig1a => &[5, 20],
            ScenarioName::Fig1b => &[10],
            ScenarioName::Fig2 => &[20, 30, 40],
            ScenarioName::Fig3 => &[10, 20, 30, 40],
            ScenarioName::BoseBaseline => &[5, 10, 20, 40],
            ScenarioName::Custom => &[],
        }
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ScenarioName::ALL.iter().map(|n| n.as_str()).collect();
                Error::Config(format!("unknown scenario {s:?} (expected one of {})", known.join(", ")))
            })
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Tau,
    Intensity,
    J0,
    ChainLength,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::Tau => "tau",
            SweepParameter::Intensity => "intensity",
            SweepParameter::J0 => "j0",
            SweepParameter::ChainLength => "chain_length",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    FinalFidelity,
    MaxFidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub from: f64,
    pub to: f64,
    pub points: usize,
    #[serde(default)]
    pub reduction: Reduction,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.from.is_finite() && self.to.is_finite() && self.from < self.to) {
            return Err(Error::Config(format!("sweep needs from < to, got [{}, {}]", self.from, self.to)));
        }
        if self.points < 2 {
            return Err(Error::Config(format!("sweep needs at least 2 points, got {}", self.points)));
        }
        Ok(())
    }

    /// Evenly spaced values from `from` to `to` inclusive.
    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                if k + 1 == self.points {
                    self.to
                } else {
                    self.from + (self.to - self.from) * k as f64 / last
                }
            })
            .collect()
    }

    pub fn grid_step(&self) -> f64 {
        (self.to - self.from) / (self.points - 1) as f64
    }
}

/// One evolution of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub id: String,
    pub spec: EvolutionSpec,
}

/// One parameter sweep of a scenario around `base`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepJob {
    pub id: String,
    pub base: EvolutionSpec,
    pub sweep: SweepSpec,
}

/// Outcome of [`calibrate_j0`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub n: usize,
    pub total_time: f64,
    pub j0: f64,
    /// `F(T)` under the weak-coupling chain alone at `j0`.
    pub fidelity: f64,
    /// Best point of the log grid before refinement.
    pub grid_best: (f64, f64),
    #[serde(skip)]
    pub sweep: Vec<(f64, f64)>,
}

/// Everything a scenario executes, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub scenario: ScenarioName,
    pub runs: Vec<Variant>,
    pub sweeps: Vec<SweepJob>,
    pub calibrations: Vec<Calibration>,
}

impl Plan {
    fn empty(scenario: ScenarioName) -> Self {
        Plan {
            scenario,
            runs: Vec::new(),
            sweeps: Vec::new(),
            calibrations: Vec::new(),
        }
    }

    /// Hex SHA-256 of the resolved plan.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plan serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn with_rows(mut spec: EvolutionSpec, rows: usize) -> EvolutionSpec {
    spec.sample_stride = (spec.step_count() / rows).max(1);
    spec
}

fn lengths_or<'a>(name: ScenarioName, lengths: Option<&'a [usize]>) -> &'a [usize] {
    match lengths {
        Some(l) => l,
        None => name.default_lengths(),
    }
}

/// Named preset with its default chain lengths.
pub fn preset(name: ScenarioName) -> Result<Plan> {
    preset_for(name, None)
}

/// Named preset restricted to (or extended to) the given chain lengths.
pub fn preset_for(name: ScenarioName, lengths: Option<&[usize]>) -> Result<Plan> {
    let ns = lengths_or(name, lengths);
    let mut plan = Plan::empty(name);
    match name {
        ScenarioName::Fig1a => {
            for pulse in [PulseShape::rectangular(40.0, PI / 20.0), sine_for_zero(80.0, 1)?] {
                for &n in ns {
                    let spec = EvolutionSpec {
                        n,
                        channel: CouplingProfile::uniform(),
                        leo_generator: Some(CouplingProfile::Pst),
                        pulse,
                        total_time: PI / 2.0,
                        dt_policy: DtPolicy::default(),
                        sample_stride: 1,
                    };
                    plan.runs.push(Variant {
                        id: format!("fig1a_{}_n{n}", pulse.label()),
                        spec: with_rows(spec, PRESET_ROWS / 4),
                    });
                }
            }
        }
        ScenarioName::Fig1b => {
            let sweep = SweepSpec {
                parameter: SweepParameter::Tau,
                from: PI / 500.0,
                to: 0.6,
                points: 600,
                reduction: Reduction::FinalFidelity,
            };
            for pulse in [PulseShape::rectangular(50.0, 2.0 * PI / 50.0), sine_for_zero(50.0, 1)?] {
                for &n in ns {
                    plan.sweeps.push(SweepJob {
                        id: format!("fig1b_{}_n{n}", pulse.label()),
                        base: EvolutionSpec {
                            n,
                            channel: CouplingProfile::uniform(),
                            leo_generator: Some(CouplingProfile::Pst),
                            pulse,
                            total_time: PI / 2.0,
                            dt_policy: DtPolicy::default(),
                            sample_stride: 1,
                        },
                        sweep,
                    });
                }
            }
        }
        ScenarioName::Fig2 => {
            let mut cals: Vec<Calibration> = ns
                .par_iter()
                .map(|&n| calibrate_j0(n, WC_TIME))
                .collect::<Result<_>>()?;
            let shared = match cals.iter().find(|c| c.n == SHARED_J0_LENGTH) {
                Some(c) => c.j0,
                None => {
                    let c = calibrate_j0(SHARED_J0_LENGTH, WC_TIME)?;
                    let j0 = c.j0;
                    cals.push(c);
                    j0
                }
            };
            let shapes = [
                (PulseShape::rectangular(60.0, PI / 30.0), 64),
                (sine_for_zero(120.0, 1)?, 256),
            ];
            for (pulse, substeps) in shapes {
                let dt_policy = DtPolicy {
                    substeps_per_pulse_segment: substeps,
                    ..DtPolicy::default()
                };
                let spec_for = |n: usize, j0: f64| EvolutionSpec {
                    n,
                    channel: CouplingProfile::uniform(),
                    leo_generator: Some(CouplingProfile::weak_ends(j0)),
                    pulse,
                    total_time: WC_TIME,
                    dt_policy,
                    sample_stride: 1,
                };
                for cal in cals.iter().filter(|c| ns.contains(&c.n)) {
                    plan.runs.push(Variant {
                        id: format!("fig2_{}_n{}", pulse.label(), cal.n),
                        spec: with_rows(spec_for(cal.n, cal.j0), PRESET_ROWS),
                    });
                }
                for &n in ns.iter().filter(|&&n| n != SHARED_J0_LENGTH) {
                    plan.runs.push(Variant {
                        id: format!("fig2_{}_n{n}_shared_j0", pulse.label()),
                        spec: with_rows(spec_for(n, shared), PRESET_ROWS),
                    });
                }
            }
            plan.calibrations = cals;
        }
        ScenarioName::Fig3 => {
            let pulse = PulseShape::bang_bang(120.0, PI / 120.0);
            for &n in ns {
                let spec = EvolutionSpec {
                    n,
                    channel: CouplingProfile::uniform(),
                    leo_generator: Some(CouplingProfile::Pst),
                    pulse,
                    total_time: PI / 2.0,
                    dt_policy: DtPolicy::default(),
                    sample_stride: 1,
                };
                plan.runs.push(Variant {
                    id: format!("fig3_bb_n{n}"),
                    spec: with_rows(spec, PRESET_ROWS / 2),
                });
            }
        }
        ScenarioName::BoseBaseline => {
            for &n in ns {
                let spec = EvolutionSpec {
                    n,
                    channel: CouplingProfile::uniform(),
                    leo_generator: None,
                    pulse: PulseShape::None,
                    total_time: bose_window(n),
                    dt_policy: DtPolicy::default(),
                    sample_stride: 1,
                };
                plan.runs.push(Variant {
                    id: format!("bose_baseline_n{n}"),
                    spec: with_rows(spec, PRESET_ROWS),
                });
            }
        }
        ScenarioName::Custom => {
            return Err(Error::Config("custom scenarios need a complete config".into()));
        }
    }
    Ok(plan)
}

/// Time window searched for the uncontrolled chain's best transfer.
pub fn bose_window(n: usize) -> f64 {
    4.0 * n as f64
}

/// Refuses pulses that violate their decoupling condition.
pub fn check_pulse(pulse: &PulseShape) -> Result<()> {
    match *pulse {
        PulseShape::None => Ok(()),
        PulseShape::Rectangular { intensity, half_period } => {
            let (ok, m) = rect_condition(intensity, half_period);
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidPulse(format!(
                    "rectangular I·τ = {} is not a multiple of 2π (nearest m = {m})",
                    intensity * half_period
                )))
            }
        }
        PulseShape::Sine { .. } => {
            let tau = pulse.half_period().expect("sine has a half period");
            let report = condition_residual(pulse, tau, 64)?;
            let r = report.residual.norm();
            if r <= SINE_RESIDUAL_LIMIT * tau {
                Ok(())
            } else {
                Err(Error::InvalidPulse(format!(
                    "sine residual {r:.3e} exceeds {:.1e}·τ = {:.3e}",
                    SINE_RESIDUAL_LIMIT,
                    SINE_RESIDUAL_LIMIT * tau
                )))
            }
        }
        PulseShape::BangBang { .. } => match bang_bang_condition(pulse) {
            Some(true) => Ok(()),
            _ => Err(Error::InvalidPulse(format!(
                "bang-bang kick area {:?} is not π",
                pulse.kick_area()
            ))),
        },
    }
}

const SPEC_FIELDS: [&str; 7] = [
    "n",
    "channel",
    "leo_generator",
    "pulse",
    "total_time",
    "dt_policy",
    "sample_stride",
];

/// A preset (or custom config) plus user overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    /// Partial `EvolutionSpec` merged into every run.
    pub overrides: Map<String, Value>,
    pub sweep: Option<SweepSpec>,
    pub chain_lengths: Option<Vec<usize>>,
    /// Run the pulse condition checks before any evolution.
    pub enforce_conditions: bool,
}

impl Scenario {
    pub fn named(name: ScenarioName) -> Self {
        Scenario {
            name,
            overrides: Map::new(),
            sweep: None,
            chain_lengths: None,
            enforce_conditions: true,
        }
    }

    /// Reads a JSON config: `EvolutionSpec` field names, plus optional
    /// `sweep` and `enforce_conditions`.
    pub fn from_config(name: ScenarioName, config: &Value) -> Result<Self> {
        let obj = config
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let mut sc = Scenario::named(name);
        for (k, v) in obj {
            match k.as_str() {
                "sweep" => {
                    let s: SweepSpec = serde_json::from_value(v.clone())
                        .map_err(|e| Error::Config(format!("sweep: {e}")))?;
                    sc.sweep = Some(s);
                }
                "enforce_conditions" => {
                    sc.enforce_conditions = v
                        .as_bool()
                        .ok_or_else(|| Error::Config("enforce_conditions must be a boolean".into()))?;
                }
                f if SPEC_FIELDS.contains(&f) => {
                    sc.overrides.insert(k.clone(), v.clone());
                }
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        Ok(sc)
    }

    pub fn from_config_file(name: ScenarioName, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Scenario::from_config(name, &value)
    }

    /// Restricts a preset to one chain length, or sets `n` of a custom run.
    pub fn with_chain_length(mut self, n: usize) -> Self {
        self.chain_lengths = Some(vec![n]);
        self
    }

    pub fn plan(&self) -> Result<Plan> {
        let mut plan = match self.name {
            ScenarioName::Custom => {
                let mut obj = self.overrides.clone();
                if let Some(&[n]) = self.chain_lengths.as_deref() {
                    obj.insert("n".into(), n.into());
                }
                let spec: EvolutionSpec = serde_json::from_value(Value::Object(obj))
                    .map_err(|e| Error::Config(format!("custom scenario: {e}")))?;
                let mut plan = Plan::empty(ScenarioName::Custom);
                plan.runs.push(Variant {
                    id: "custom".into(),
                    spec,
                });
                plan
            }
            name => {
                let mut patch = self.overrides.clone();
                let lengths = match (&self.chain_lengths, patch.remove("n")) {
                    (Some(l), _) => Some(l.clone()),
                    (None, Some(v)) => {
                        let n = v
                            .as_u64()
                            .ok_or_else(|| Error::Config(format!("n must be a positive integer, got {v}")))?;
                        Some(vec![n as usize])
                    }
                    (None, None) => None,
                };
                let mut plan = preset_for(name, lengths.as_deref())?;
                let patch = Value::Object(patch);
                for v in &mut plan.runs {
                    v.spec = patched(&v.spec, &patch)?;
                }
                for s in &mut plan.sweeps {
                    s.base = patched(&s.base, &patch)?;
                }
                plan
            }
        };
        if let Some(sweep) = self.sweep {
            sweep.validate()?;
            let runs = std::mem::take(&mut plan.runs);
            for s in &mut plan.sweeps {
                s.sweep = sweep;
            }
            plan.sweeps.extend(runs.into_iter().map(|v| SweepJob {
                id: v.id,
                base: v.spec,
                sweep,
            }));
        }
        for v in &plan.runs {
            v.spec.validate()?;
        }
        for s in &plan.sweeps {
            s.base.validate()?;
            s.sweep.validate()?;
        }
        if self.enforce_conditions {
            for spec in plan.runs.iter().map(|v| &v.spec).chain(plan.sweeps.iter().map(|s| &s.base)) {
                check_pulse(&spec.pulse)?;
            }
        }
        Ok(plan)
    }
}

fn merge(dst: &mut Value, src: &Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            let kind_changes = matches!((d.get("kind"), s.get("kind")), (Some(a), Some(b)) if a != b);
            if kind_changes {
                *d = s.clone();
                return;
            }
            for (k, v) in s {
                match d.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (d, s) => *d = s.clone(),
    }
}

fn patched(spec: &EvolutionSpec, patch: &Value) -> Result<EvolutionSpec> {
    if patch.as_object().is_some_and(|o| o.is_empty()) {
        return Ok(spec.clone());
    }
    let mut v = serde_json::to_value(spec).expect("spec serializes");
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("override: {e}")))
}

/// `spec` with one swept parameter replaced.
pub fn apply_sweep(spec: &EvolutionSpec, parameter: SweepParameter, value: f64) -> Result<EvolutionSpec> {
    let mut out = spec.clone();
    match parameter {
        SweepParameter::Tau => {
            if out.pulse.is_none() {
                return Err(Error::Config("tau sweep needs a pulse".into()));
            }
            out.pulse = out.pulse.with_half_period(value);
        }
        SweepParameter::Intensity => {
            if out.pulse.is_none() {
                return Err(Error::Config("intensity sweep needs a pulse".into()));
            }
            out.pulse = out.pulse.with_intensity(value);
        }
        SweepParameter::J0 => match &mut out.leo_generator {
            Some(CouplingProfile::WeakEnds { j0, .. }) => *j0 = value,
            _ => return Err(Error::Config("j0 sweep needs a weak_ends leo_generator".into())),
        },
        SweepParameter::ChainLength => {
            let n = value.round();
            if !(n >= 2.0) {
                return Err(Error::Config(format!("chain_length {value} is too small")));
            }
            out.n = n as usize;
        }
    }
    Ok(out)
}

fn reduce(spec: &EvolutionSpec, reduction: Reduction, run: impl Fn(&EvolutionSpec) -> Result<Trajectory>) -> Result<f64> {
    let mut s = spec.clone();
    s.sample_stride = match reduction {
        Reduction::FinalFidelity => s.step_count().max(1),
        Reduction::MaxFidelity => 1,
    };
    let tr = run(&s)?;
    Ok(match reduction {
        Reduction::FinalFidelity => tr.final_fidelity(),
        Reduction::MaxFidelity => tr.max_fidelity(),
    })
}

/// `(value, reduced fidelity)` for every point of the sweep.
pub fn run_sweep(job: &SweepJob, parallel: bool) -> Result<Vec<(f64, f64)>> {
    job.sweep.validate()?;
    let values = job.sweep.values();
    let shares_operators = matches!(job.sweep.parameter, SweepParameter::Tau | SweepParameter::Intensity);
    let ops = if shares_operators { Some(job.base.build()?) } else { None };
    let point = |&v: &f64| -> Result<(f64, f64)> {
        let spec = apply_sweep(&job.base, job.sweep.parameter, v)?;
        let f = match &ops {
            Some((h0, basis)) => reduce(&spec, job.sweep.reduction, |s| evolve_with(s, h0, basis.as_ref()))?,
            None => reduce(&spec, job.sweep.reduction, evolve)?,
        };
        Ok((v, f))
    };
    if parallel {
        values.par_iter().map(point).collect()
    } else {
        values.iter().map(point).collect()
    }
}

/// A local maximum of sampled data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Grid index of the maximum (leftmost point of a plateau).
    pub index: usize,
    /// Parameter value after parabolic refinement.
    pub value: f64,
    pub fidelity: f64,
    pub grid_value: f64,
}

/// Strict 3-point local maxima. A flat top counts once, at its leftmost
/// point, and is not refined.
pub fn find_peaks(data: &[(f64, f64)]) -> Vec<Peak> {
    let mut peaks = Vec::new();
    if data.len() < 3 {
        return peaks;
    }
    let mut i = 1;
    while i + 1 < data.len() {
        let (x, y) = data[i];
        if data[i - 1].1 < y {
            let mut j = i;
            while j + 1 < data.len() && data[j + 1].1 == y {
                j += 1;
            }
            if j + 1 < data.len() && data[j + 1].1 < y {
                let (value, fidelity) = if j == i {
                    parabolic_vertex(data[i - 1], data[i], data[i + 1])
                } else {
                    (x, y)
                };
                peaks.push(Peak {
                    index: i,
                    value,
                    fidelity,
                    grid_value: x,
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn parabolic_vertex((x0, y0): (f64, f64), (x1, y1): (f64, f64), (x2, y2): (f64, f64)) -> (f64, f64) {
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let a = (d1 - d0) / (x2 - x0);
    if !(a < 0.0) {
        return (x1, y1);
    }
    let xv = (0.5 * (x0 + x1) - d0 / (2.0 * a)).clamp(x0, x2);
    let yv = y0 + d0 * (xv - x0) + a * (xv - x0) * (xv - x1);
    (xv, yv.max(y1))
}

/// `F(T)` of the weak-coupling chain alone, started at site 1.
pub fn wc_fidelity(n: usize, j0: f64, total_time: f64) -> Result<f64> {
    let sd = SpectralDecomposition::new(&HoppingMatrix::from_profile(&CouplingProfile::weak_ends(j0), n)?)?;
    let v = sd.eigenvectors();
    let amp = sd
        .eigenvalues()
        .iter()
        .enumerate()
        .fold(crate::C64::new(0.0, 0.0), |acc, (k, &lam)| {
            acc + crate::C64::from_polar(v[(0, k)] * v[(n - 1, k)], -lam * total_time)
        });
    Ok(amp.norm().min(1.0))
}

/// Picks the end coupling maximizing the pulse-free transfer fidelity at
/// `T`: a log grid over [`CALIBRATION_RANGE`] followed by golden-section
/// refinement between the best point's neighbours.
pub fn calibrate_j0(n: usize, total_time: f64) -> Result<Calibration> {
    if n < 4 {
        return Err(Error::InvalidSize { n, min: 4 });
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(Error::Config(format!("calibration time {total_time} must be positive")));
    }
    let (lo, hi) = CALIBRATION_RANGE;
    let ratio = hi / lo;
    let grid: Vec<f64> = (0..CALIBRATION_POINTS)
        .map(|k| lo * ratio.powf(k as f64 / (CALIBRATION_POINTS - 1) as f64))
        .collect();
    let sweep: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&j0| wc_fidelity(n, j0, total_time).map(|f| (j0, f)))
        .collect::<Result<_>>()?;
    let (best_k, &grid_best) = sweep
        .iter()
        .enumerate()
        .fold((0, &sweep[0]), |acc, (k, p)| if p.1 > acc.1 .1 { (k, p) } else { acc });
    if grid_best.1 < CALIBRATION_FLOOR {
        return Err(Error::Calibration {
            best: grid_best.1,
            threshold: CALIBRATION_FLOOR,
            sweep,
        });
    }
    let a = grid[best_k.saturating_sub(1)];
    let b = grid[(best_k + 1).min(grid.len() - 1)];
    let refined = golden_max(|x| wc_fidelity(n, x, total_time), a, b)?;
    let (j0, fidelity) = if refined.1 >= grid_best.1 { refined } else { grid_best };
    Ok(Calibration {
        n,
        total_time,
        j0,
        fidelity,
        grid_best,
        sweep,
    })
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if b - a <= 1e-13 * (a.abs() + b.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Location and height of the uncontrolled chain's best transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BosePeak {
    pub n: usize,
    pub window: f64,
    pub t: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub id: String,
    pub spec: EvolutionSpec,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub steps: usize,
    pub samples: usize,
    pub final_fidelity: f64,
    pub max_fidelity: f64,
    pub max_leakage: Option<f64>,
    pub max_norm_drift: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub id: String,
    pub base: EvolutionSpec,
    pub sweep: SweepSpec,
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub grid_step: f64,
    pub peaks: Vec<Peak>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationEntry {
    #[serde(flatten)]
    pub calibration: Calibration,
    pub csv: PathBuf,
}

/// Provenance of one scenario execution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    /// Hash of the resolved plan.
    pub id: String,
    pub scenario: ScenarioName,
    pub code_version: String,
    pub enforce_conditions: bool,
    pub wall_time_s: f64,
    pub runs: Vec<RunEntry>,
    pub sweeps: Vec<SweepEntry>,
    pub calibrations: Vec<CalibrationEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bose_peaks: Vec<BosePeak>,
    pub record_path: PathBuf,
}

impl RunRecord {
    pub fn outputs(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        for r in &self.runs {
            out.push(&r.csv);
            out.push(&r.sidecar);
        }
        for s in &self.sweeps {
            out.push(&s.csv);
            out.push(&s.sidecar);
        }
        for c in &self.calibrations {
            out.push(&c.csv);
        }
        out.push(&self.record_path);
        out
    }

    pub fn run(&self, id: &str) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn sweep(&self, id: &str) -> Option<&SweepEntry> {
        self.sweeps.iter().find(|s| s.id == id)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("record serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "fidelity", "leakage", "norm_drift"];
pub const SWEEP_HEADER: [&str; 3] = ["param", "value", "fidelity_at_T"];

pub fn write_trajectory_csv(path: &Path, tr: &Trajectory) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRAJECTORY_HEADER).map_err(|e| csv_err(path, e))?;
    for k in 0..tr.times.len() {
        w.write_record([
            fmt_f64(tr.times[k]),
            fmt_f64(tr.fidelity[k]),
            fmt_f64(tr.leakage[k]),
            fmt_f64(tr.norm_drift[k]),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep_csv(path: &Path, parameter: &str, data: &[(f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SWEEP_HEADER).map_err(|e| csv_err(path, e))?;
    for &(v, f) in data {
        w.write_record([parameter.to_string(), fmt_f64(v), fmt_f64(f)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(value, fidelity_at_T)` pairs of a sweep CSV.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column {name:?}", path.display())))
    };
    let (vi, fi) = (col("value")?, col("fidelity_at_T")?);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parse = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.trim().parse().map_err(|_| {
                Error::Config(format!("{}: row {}: cannot parse {s:?}", path.display(), line + 2))
            })
        };
        out.push((parse(vi)?, parse(fi)?));
    }
    Ok(out)
}

/// Writes `calibration_n{n}.csv` into `dir`.
pub fn write_calibration(cal: &Calibration, dir: &Path, prefix: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{prefix}calibration_n{}.csv", cal.n));
    write_sweep_csv(&path, SweepParameter::J0.as_str(), &cal.sweep)?;
    Ok(path)
}

#[derive(Serialize)]
struct RunSidecar<'a> {
    record_id: &'a str,
    scenario: ScenarioName,
    code_version: &'a str,
    #[serde(flatten)]
    entry: &'a RunEntry,
}

#[derive(Serialize)]
struct SweepSidecar<'a> {
    record_id: &'a str,
    scenario: ScenarioName,
    code_version: &'a str,
    #[serde(flatten)]
    entry: &'a SweepEntry,
}

fn tag(id: &str, e: Error) -> Error {
    Error::Run {
        id: id.to_string(),
        source: Box::new(e),
    }
}

/// Executes a scenario into `out_dir`, variants in parallel.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunRecord> {
    run_with(scenario, out_dir, true)
}

pub fn run_with(scenario: &Scenario, out_dir: &Path, parallel: bool) -> Result<RunRecord> {
    let clock = Instant::now();
    let plan = scenario.plan()?;
    execute(&plan, scenario.enforce_conditions, out_dir, parallel, clock)
}

/// Executes an already resolved plan.
pub fn execute_plan(plan: &Plan, out_dir: &Path, parallel: bool) -> Result<RunRecord> {
    execute(plan, true, out_dir, parallel, Instant::now())
}

fn execute(plan: &Plan, enforce: bool, out_dir: &Path, parallel: bool, clock: Instant) -> Result<RunRecord> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let record_id = plan.id();

    let one_run = |v: &Variant| -> Result<RunEntry> {
        let start = Instant::now();
        let tr = evolve(&v.spec).map_err(|e| tag(&v.id, e))?;
        let csv = out_dir.join(format!("{}.csv", v.id));
        write_trajectory_csv(&csv, &tr)?;
        let leak = tr.max_leakage();
        let entry = RunEntry {
            id: v.id.clone(),
            spec: v.spec.clone(),
            sidecar: out_dir.join(format!("{}.json", v.id)),
            csv,
            steps: tr.steps,
            samples: tr.times.len(),
            final_fidelity: tr.final_fidelity(),
            max_fidelity: tr.max_fidelity(),
            max_leakage: if leak.is_nan() { None } else { Some(leak) },
            max_norm_drift: tr.max_norm_drift(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let side = RunSidecar {
            record_id: &record_id,
            scenario: plan.scenario,
            code_version: CODE_VERSION,
            entry: &entry,
        };
        write_json(&entry.sidecar, &side)?;
        Ok(entry)
    };
    let one_sweep = |job: &SweepJob| -> Result<SweepEntry> {
        let start = Instant::now();
        let data = run_sweep(job, parallel).map_err(|e| tag(&job.id, e))?;
        let csv = out_dir.join(format!("{}.csv", job.id));
        write_sweep_csv(&csv, job.sweep.parameter.as_str(), &data)?;
        let entry = SweepEntry {
            id: job.id.clone(),
            base: job.base.clone(),
            sweep: job.sweep,
            sidecar: out_dir.join(format!("{}.json", job.id)),
            csv,
            grid_step: job.sweep.grid_step(),
            peaks: find_peaks(&data),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let side = SweepSidecar {
            record_id: &record_id,
            scenario: plan.scenario,
            code_version: CODE_VERSION,
            entry: &entry,
        };
        write_json(&entry.sidecar, &side)?;
        Ok(entry)
    };

    let (runs, sweeps): (Vec<RunEntry>, Vec<SweepEntry>) = if parallel {
        (
            plan.runs.par_iter().map(one_run).collect::<Result<_>>()?,
            plan.sweeps.par_iter().map(one_sweep).collect::<Result<_>>()?,
        )
    } else {
        (
            plan.runs.iter().map(one_run).collect::<Result<_>>()?,
            plan.sweeps.iter().map(one_sweep).collect::<Result<_>>()?,
        )
    };

    let prefix = format!("{}_", plan.scenario);
    let calibrations = plan
        .calibrations
        .iter()
        .map(|c| {
            Ok(CalibrationEntry {
                csv: write_calibration(c, out_dir, &prefix)?,
                calibration: c.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let bose_peaks = if plan.scenario == ScenarioName::BoseBaseline {
        plan.runs
            .iter()
            .map(|v| {
                let window = v.spec.total_time;
                let (t, fidelity) = bose_baseline(v.spec.n, window)?;
                Ok(BosePeak {
                    n: v.spec.n,
                    window,
                    t,
                    fidelity,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let record = RunRecord {
        id: record_id,
        scenario: plan.scenario,
        code_version: CODE_VERSION.to_string(),
        enforce_conditions: enforce,
        wall_time_s: clock.elapsed().as_secs_f64(),
        runs,
        sweeps,
        calibrations,
        bose_peaks,
        record_path: out_dir.join(format!("{}.record.json", plan.scenario)),
    };
    write_json(&record.record_path, &record)?;
    Ok(record)
}
