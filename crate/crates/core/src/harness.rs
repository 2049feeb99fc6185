//! Closed-loop scenario runner.
//!
//! The plant is always stepped with RK4 at `h`; the controller is consulted
//! every control period `T = k·h`. MPC and the network hold their decision
//! for the whole period, the PI loop updates its duty once per period and
//! the PWM comparator runs on every plant step.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::ann::{read_model_file, FeatureVector, Mlp};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, MpcController};
use crate::pi::{PiController, PiGains, PwmCarrier};
use crate::plant::{
    conductance_for_power, conductance_for_resistance, step_rk4, ConverterParams, ConverterState, LoadSchedule,
    SwitchState,
};

/// Where the network controller gets its weights.
#[derive(Clone, Debug)]
pub enum AnnSource {
    File(PathBuf),
    Model(Arc<Mlp>),
}

#[derive(Clone, Debug)]
pub enum ControllerSpec {
    Mpc(MpcConfig),
    Pi(PiGains),
    Ann(AnnSource),
}

impl ControllerSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerSpec::Mpc(_) => "mpc",
            ControllerSpec::Pi(_) => "pi",
            ControllerSpec::Ann(_) => "ann",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub name: String,
    pub v_ref: f64,
    pub duration: f64,
    pub load_schedule: LoadSchedule,
    pub controller: ControllerSpec,
    pub initial_state: ConverterState,
    /// Time of the load event the scenario is built around, if any.
    pub event_time: Option<f64>,
    pub seed: u64,
}

pub const REFERENCE_VOLTAGE: f64 = 95.0;
pub const NOMINAL_LOAD_OHMS: f64 = 20.0;

impl ScenarioSpec {
    fn base(name: &str, duration: f64, segments: Vec<(f64, f64)>, event_time: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            v_ref: REFERENCE_VOLTAGE,
            duration,
            load_schedule: LoadSchedule::new(segments).expect("built-in schedule"),
            controller: ControllerSpec::Mpc(MpcConfig::default()),
            initial_state: ConverterState::default(),
            event_time,
            seed: 0,
        }
    }

    /// Startup into a 20 Ω load.
    pub fn fig7() -> Self {
        let g = conductance_for_resistance(NOMINAL_LOAD_OHMS);
        Self::base("fig7", 0.3, vec![(0.0, g)], None)
    }

    /// Full load, disconnect at 0.4 s, reconnect at 0.5 s, then 750 W and
    /// 1500 W at 0.6 s and 0.7 s.
    pub fn fig8() -> Self {
        let g = conductance_for_resistance(NOMINAL_LOAD_OHMS);
        let v = REFERENCE_VOLTAGE;
        Self::base(
            "fig8",
            1.0,
            vec![
                (0.0, g),
                (0.4, 0.0),
                (0.5, g),
                (0.6, conductance_for_power(750.0, v)),
                (0.7, conductance_for_power(1500.0, v)),
            ],
            Some(0.4),
        )
    }

    /// The 20 Ω load doubles (10 Ω) at 0.5 s.
    pub fn fig9() -> Self {
        let g = conductance_for_resistance(NOMINAL_LOAD_OHMS);
        Self::base("fig9", 1.0, vec![(0.0, g), (0.5, 2.0 * g)], Some(0.5))
    }

    /// Training-data rollout: 1.5 s sweeping no-load to 1500 W.
    pub fn collection() -> Self {
        let g = conductance_for_resistance(NOMINAL_LOAD_OHMS);
        let v = REFERENCE_VOLTAGE;
        Self::base(
            "collect",
            1.5,
            vec![
                (0.0, g),
                (0.3, 0.0),
                (0.6, conductance_for_power(750.0, v)),
                (0.9, conductance_for_power(1500.0, v)),
                (1.2, g),
            ],
            None,
        )
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "fig7" => Some(Self::fig7()),
            "fig8" => Some(Self::fig8()),
            "fig9" => Some(Self::fig9()),
            "collect" => Some(Self::collection()),
            _ => None,
        }
    }

    pub fn with_controller(mut self, controller: ControllerSpec) -> Self {
        self.controller = controller;
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    /// Hard errors for an unusable scenario.
    pub fn validate(&self) -> Result<()> {
        if !self.duration.is_finite() || self.duration < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "{}: duration {} must be finite and nonnegative",
                self.name, self.duration
            )));
        }
        if !self.v_ref.is_finite() || !self.initial_state.is_finite() {
            return Err(Error::InvalidScenario(format!(
                "{}: non-finite reference or initial state",
                self.name
            )));
        }
        Ok(())
    }

    /// Non-fatal remarks (e.g. a reference a boost stage cannot produce).
    pub fn warnings(&self, params: &ConverterParams) -> Vec<String> {
        let mut w = Vec::new();
        if self.v_ref <= params.v_in {
            w.push(format!(
                "{}: reference {} V does not exceed the input {} V",
                self.name, self.v_ref, params.v_in
            ));
        }
        w
    }

    /// Plant steps covering the duration.
    pub fn step_count(&self, params: &ConverterParams) -> Result<usize> {
        let n = (self.duration / params.plant_step).round();
        if (n * params.plant_step - self.duration).abs() > 1e-9 * self.duration.max(params.plant_step) {
            return Err(Error::InvalidScenario(format!(
                "{}: duration {} is not a multiple of the plant step {}",
                self.name, self.duration, params.plant_step
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub v_c: f64,
    pub i_l: f64,
    pub u: SwitchState,
    pub load_g: f64,
    pub v_ref: f64,
}

impl TraceRecord {
    /// Current drawn by the resistive load.
    pub fn load_current(&self) -> f64 {
        self.load_g * self.v_c
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Records with `t` in `[from, to)`.
    pub fn window(&self, from: f64, to: f64) -> &[TraceRecord] {
        let lo = self.records.partition_point(|r| r.t < from);
        let hi = self.records.partition_point(|r| r.t < to);
        &self.records[lo..hi.max(lo)]
    }

    /// Keep every `stride`-th record.
    pub fn thin(&mut self, stride: usize) {
        if stride > 1 {
            let mut k = 0;
            self.records.retain(|_| {
                k += 1;
                (k - 1) % stride == 0
            });
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 64 + 32);
        out.push_str("t,v_ref,v_c,i_l,u,load_g\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                r.v_ref,
                r.v_c,
                r.i_l,
                r.u.as_u8(),
                r.load_g
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t,v_ref,v_c,i_l,u,load_g" => {}
            _ => {
                return Err(Error::Parse {
                    path: PathBuf::from("<trace>"),
                    line: 1,
                    msg: "expected header t,v_ref,v_c,i_l,u,load_g".into(),
                })
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: PathBuf::from("<trace>"),
                line: idx + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
            let u = f[4]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(SwitchState::from_u8)
                .ok_or_else(|| bad("switch state must be 0 or 1"))?;
            records.push(TraceRecord {
                t: num(f[0])?,
                v_ref: num(f[1])?,
                v_c: num(f[2])?,
                i_l: num(f[3])?,
                u,
                load_g: num(f[5])?,
            });
        }
        Ok(Self { records })
    }
}

/// Controller decision at a control instant.
#[derive(Clone, Copy, Debug)]
pub struct ControlEvent {
    pub k: usize,
    pub t: f64,
    pub state: ConverterState,
    pub load_g: f64,
    pub v_ref: f64,
    pub u: SwitchState,
}

enum Runtime {
    Mpc {
        ctrl: MpcController,
        u: SwitchState,
    },
    Pi {
        ctrl: PiController,
        pwm: PwmCarrier,
        duty: f64,
    },
    Ann {
        net: Arc<Mlp>,
        u: SwitchState,
    },
}

impl Runtime {
    fn build(spec: &ControllerSpec, params: &ConverterParams) -> Result<Self> {
        Ok(match spec {
            ControllerSpec::Mpc(cfg) => Runtime::Mpc {
                ctrl: MpcController::new(*cfg),
                u: SwitchState::Off,
            },
            ControllerSpec::Pi(gains) => Runtime::Pi {
                ctrl: PiController::new(*gains),
                pwm: PwmCarrier::new(1.0 / params.control_period),
                duty: 0.0,
            },
            ControllerSpec::Ann(AnnSource::Model(net)) => Runtime::Ann {
                net: Arc::clone(net),
                u: SwitchState::Off,
            },
            ControllerSpec::Ann(AnnSource::File(path)) => Runtime::Ann {
                net: Arc::new(read_model_file(path)?),
                u: SwitchState::Off,
            },
        })
    }

    /// Called at each control instant; returns the held decision, or for PI
    /// the duty-independent placeholder `Off` (PWM decides per sub-step).
    fn decide(&mut self, state: ConverterState, v_ref: f64, params: &ConverterParams, load_g: f64) -> SwitchState {
        match self {
            Runtime::Mpc { ctrl, u } => {
                *u = ctrl.select_switch(state, v_ref, params, load_g, *u).u;
                *u
            }
            Runtime::Pi { ctrl, duty, .. } => {
                *duty = ctrl.step(v_ref, state.v_c, params.control_period).duty;
                if *duty > 0.0 {
                    SwitchState::On
                } else {
                    SwitchState::Off
                }
            }
            Runtime::Ann { net, u } => {
                *u = net.classify(&FeatureVector::new(v_ref, state.v_c, state.i_l));
                *u
            }
        }
    }

    fn substep_switch(&mut self, h: f64) -> SwitchState {
        match self {
            Runtime::Mpc { u, .. } | Runtime::Ann { u, .. } => *u,
            Runtime::Pi { pwm, duty, .. } => pwm.compare(*duty, h),
        }
    }
}

/// A run that stopped on a non-finite state, with everything recorded so far.
#[derive(Debug)]
pub struct SimulationAborted {
    pub partial: Trace,
    pub error: Error,
}

impl From<SimulationAborted> for Error {
    fn from(a: SimulationAborted) -> Self {
        a.error
    }
}

/// Core loop shared by every controller. `stride` thins the recorded trace
/// (1 keeps every plant step); `on_control` sees every control decision.
pub fn simulate(
    spec: &ScenarioSpec,
    params: &ConverterParams,
    stride: usize,
    mut on_control: impl FnMut(&ControlEvent),
) -> std::result::Result<Trace, SimulationAborted> {
    let fail = |error: Error| SimulationAborted {
        partial: Trace::default(),
        error,
    };
    params.validate().map_err(fail)?;
    spec.validate().map_err(fail)?;
    let n = spec.step_count(params).map_err(fail)?;
    let mut runtime = Runtime::build(&spec.controller, params).map_err(fail)?;
    let stride = stride.max(1);
    let sub = params.substeps();
    let h = params.plant_step;

    let mut trace = Trace {
        records: Vec::with_capacity(n / stride + 1),
    };
    let mut state = spec.initial_state;
    for step in 0..=n {
        let t = step as f64 * h;
        let load_g = spec.load_schedule.load_at(t);
        if step % sub == 0 {
            let u = runtime.decide(state, spec.v_ref, params, load_g);
            on_control(&ControlEvent {
                k: step / sub,
                t,
                state,
                load_g,
                v_ref: spec.v_ref,
                u,
            });
        }
        let u = runtime.substep_switch(h);
        if step % stride == 0 {
            trace.records.push(TraceRecord {
                t,
                v_c: state.v_c,
                i_l: state.i_l,
                u,
                load_g,
                v_ref: spec.v_ref,
            });
        }
        if step == n {
            break;
        }
        state = match step_rk4(state, u, params, load_g) {
            Ok(s) => s,
            Err(e) => {
                return Err(SimulationAborted {
                    partial: trace,
                    error: Error::Diverged {
                        t: t + h,
                        source: Box::new(e),
                    },
                })
            }
        };
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Entry into the ±2 % band that is never left again; `None` if the
    /// trace ends outside the band.
    pub settling_time: Option<f64>,
    pub overshoot_pct: f64,
    /// Mean |v_c - v_ref| over the final 20 % of the trace.
    pub steady_state_error: f64,
    /// Peak-to-peak voltage over the final 20 % of the trace.
    pub ripple_pp: f64,
    pub mean_switching_freq: f64,
}

pub const SETTLING_BAND: f64 = 0.02;
pub const STEADY_STATE_FRACTION: f64 = 0.2;

pub fn compute_metrics(records: &[TraceRecord], v_ref: f64) -> Metrics {
    assert!(!records.is_empty(), "metrics need at least one record");
    let t0 = records[0].t;
    let t_end = records[records.len() - 1].t;
    let duration = t_end - t0;
    let band = SETTLING_BAND * v_ref.abs();

    let settling_time = match records.iter().rposition(|r| (r.v_c - v_ref).abs() > band) {
        None => Some(0.0),
        Some(last) if last + 1 == records.len() => None,
        Some(last) => Some(records[last + 1].t - t0),
    };

    let peak = records.iter().map(|r| r.v_c).fold(f64::NEG_INFINITY, f64::max);
    let overshoot_pct = ((peak - v_ref) / v_ref * 100.0).max(0.0);

    let tail_start = t_end - STEADY_STATE_FRACTION * duration;
    let tail = &records[records.partition_point(|r| r.t < tail_start)..];
    let steady_state_error = tail.iter().map(|r| (r.v_c - v_ref).abs()).sum::<f64>() / tail.len() as f64;
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.v_c), hi.max(r.v_c))
    });
    let ripple_pp = hi - lo;

    let transitions = records.windows(2).filter(|w| w[0].u != w[1].u).count();
    let mean_switching_freq = if duration > 0.0 {
        transitions as f64 / duration / 2.0
    } else {
        0.0
    };

    Metrics {
        settling_time,
        overshoot_pct,
        steady_state_error,
        ripple_pp,
        mean_switching_freq,
    }
}

impl Metrics {
    pub fn to_kv(&self) -> String {
        let settle = self
            .settling_time
            .map_or_else(|| "not-settled".to_string(), |t| t.to_string());
        format!(
            "settling_time = {settle}\novershoot_pct = {}\nsteady_state_error = {}\nripple_pp = {}\nmean_switching_freq = {}\n",
            self.overshoot_pct, self.steady_state_error, self.ripple_pp, self.mean_switching_freq
        )
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub trace: Trace,
    pub metrics: Metrics,
}

pub fn run_scenario(
    spec: &ScenarioSpec,
    params: &ConverterParams,
) -> std::result::Result<ScenarioRun, SimulationAborted> {
    run_scenario_strided(spec, params, 1)
}

pub fn run_scenario_strided(
    spec: &ScenarioSpec,
    params: &ConverterParams,
    stride: usize,
) -> std::result::Result<ScenarioRun, SimulationAborted> {
    if spec.duration.is_nan() || spec.duration <= 0.0 {
        return Err(SimulationAborted {
            partial: Trace::default(),
            error: Error::InvalidScenario(format!("{}: duration must be positive", spec.name)),
        });
    }
    // metrics always see every plant step; only the returned trace is thinned
    let mut trace = simulate(spec, params, 1, |_| {})?;
    let metrics = compute_metrics(&trace.records, spec.v_ref);
    trace.thin(stride);
    Ok(ScenarioRun { trace, metrics })
}

#[derive(Clone, Debug)]
pub struct ControllerResult {
    pub name: String,
    pub metrics: Metrics,
    /// Metrics restricted to the trace after the scenario's load event.
    pub event_metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDelta {
    pub a: String,
    pub b: String,
    /// `a - b`
    pub overshoot_delta: f64,
    pub ripple_delta: f64,
    pub event_overshoot_delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub results: Vec<ControllerResult>,
    pub deltas: Vec<PairDelta>,
    pub times: Vec<f64>,
    /// Per controller, `(v_c, i_l, u)` on the shared time grid.
    pub series: Vec<Vec<(f64, f64, SwitchState)>>,
}

pub fn compare_controllers(
    specs: &[ScenarioSpec],
    params: &ConverterParams,
    stride: usize,
) -> Result<ComparisonReport> {
    if specs.len() < 2 {
        return Err(Error::InvalidScenario("comparison needs at least two scenarios".into()));
    }
    let runs = specs
        .iter()
        .map(|s| run_scenario_strided(s, params, 1).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;

    let len = runs.iter().map(|r| r.trace.len()).min().unwrap_or(0);
    let stride = stride.max(1);
    let times: Vec<f64> = runs[0].trace.records[..len]
        .iter()
        .step_by(stride)
        .map(|r| r.t)
        .collect();
    let series = runs
        .iter()
        .map(|r| {
            r.trace.records[..len]
                .iter()
                .step_by(stride)
                .map(|x| (x.v_c, x.i_l, x.u))
                .collect()
        })
        .collect();

    let results: Vec<ControllerResult> = specs
        .iter()
        .zip(&runs)
        .map(|(spec, run)| {
            let records = &run.trace.records[..len];
            let event_metrics = spec.event_time.and_then(|te| {
                let start = records.partition_point(|r| r.t < te);
                (start < records.len()).then(|| compute_metrics(&records[start..], spec.v_ref))
            });
            ControllerResult {
                name: spec.name.clone(),
                metrics: compute_metrics(records, spec.v_ref),
                event_metrics,
            }
        })
        .collect();

    let mut deltas = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let (a, b) = (&results[i], &results[j]);
            deltas.push(PairDelta {
                a: a.name.clone(),
                b: b.name.clone(),
                overshoot_delta: a.metrics.overshoot_pct - b.metrics.overshoot_pct,
                ripple_delta: a.metrics.ripple_pp - b.metrics.ripple_pp,
                event_overshoot_delta: match (a.event_metrics, b.event_metrics) {
                    (Some(x), Some(y)) => Some(x.overshoot_pct - y.overshoot_pct),
                    _ => None,
                },
            });
        }
    }
    Ok(ComparisonReport {
        results,
        deltas,
        times,
        series,
    })
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for r in &self.results {
            write!(out, ",v_c_{0},i_l_{0},u_{0}", r.name).unwrap();
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for s in &self.series {
                let (v, i, u) = s[k];
                write!(out, ",{v},{i},{}", u.as_u8()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<16} {:>12} {:>12} {:>12} {:>12} {:>14} {:>14}",
            "controller", "settle_s", "overshoot_%", "sse_V", "ripple_V", "f_sw_Hz", "event_ovs_%"
        )
        .unwrap();
        for r in &self.results {
            let m = &r.metrics;
            let settle = m.settling_time.map_or("not-settled".to_string(), |t| format!("{t:.6}"));
            let ev = r
                .event_metrics
                .map_or("-".to_string(), |e| format!("{:.4}", e.overshoot_pct));
            writeln!(
                out,
                "{:<16} {:>12} {:>12.4} {:>12.4} {:>12.4} {:>14.1} {:>14}",
                r.name, settle, m.overshoot_pct, m.steady_state_error, m.ripple_pp, m.mean_switching_freq, ev
            )
            .unwrap();
        }
        for d in &self.deltas {
            write!(
                out,
                "delta {} - {}: overshoot {:+.4} %, ripple {:+.4} V",
                d.a, d.b, d.overshoot_delta, d.ripple_delta
            )
            .unwrap();
            if let Some(e) = d.event_overshoot_delta {
                write!(out, ", event overshoot {e:+.4} %").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
