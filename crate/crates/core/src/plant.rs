//! Averaged-switch model of a boost converter.
//!
//! State is the inductor current `i_l` and the capacitor voltage `v_c`. The
//! switch `u` shorts the inductor to ground when on (`u = 1`) and routes the
//! inductor current into the output capacitor when off (`u = 0`):
//!
//! ```text
//! L  di/dt = -r_damp·i_l - v_c + v_c·u + v_in
//! Cf dv/dt = i_l·(1 - u) - G·v_c
//! ```
//!
//! `G` is the load conductance, so a disconnected load is simply `G = 0`.
//! The fine-step reference integrator is classical RK4; the controller's
//! one-step predictor is forward Euler at the control period.

use crate::error::{Error, Result};

/// Physical constants and timing of the converter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConverterParams {
    pub v_in: f64,
    pub l: f64,
    /// Series damping resistance of the inductor branch.
    pub r_damp: f64,
    pub c_f: f64,
    /// Controller sampling period `T`.
    pub control_period: f64,
    /// Fixed integration step `h` of the reference plant.
    pub plant_step: f64,
    /// Clamp the inductor current at zero while the switch is off (ideal diode).
    pub diode_clamp: bool,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            v_in: 70.0,
            l: 10e-3,
            r_damp: 80e-3,
            c_f: 100e-3,
            control_period: 50e-6,
            plant_step: 1e-6,
            diode_clamp: false,
        }
    }
}

impl ConverterParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_in,
            self.l,
            self.r_damp,
            self.c_f,
            self.control_period,
            self.plant_step,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite converter parameter".into()));
        }
        if self.l <= 0.0 || self.c_f <= 0.0 || self.v_in <= 0.0 || self.r_damp < 0.0 {
            return Err(Error::InvalidParams(
                "require l > 0, c_f > 0, v_in > 0, r_damp >= 0".into(),
            ));
        }
        if self.plant_step <= 0.0 || self.control_period <= 0.0 {
            return Err(Error::InvalidParams("time steps must be positive".into()));
        }
        let ratio = self.control_period / self.plant_step;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParams(format!(
                "control period {} is not an integer multiple of plant step {}",
                self.control_period, self.plant_step
            )));
        }
        Ok(())
    }

    /// Number of plant steps per control period.
    pub fn substeps(&self) -> usize {
        (self.control_period / self.plant_step).round() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConverterState {
    pub i_l: f64,
    pub v_c: f64,
}

impl ConverterState {
    pub fn new(i_l: f64, v_c: f64) -> Self {
        Self { i_l, v_c }
    }

    pub fn is_finite(&self) -> bool {
        self.i_l.is_finite() && self.v_c.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.i_l.hypot(self.v_c)
    }
}

/// Position of the converter switch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SwitchState {
    #[default]
    Off,
    On,
}

impl SwitchState {
    pub const ALL: [SwitchState; 2] = [SwitchState::Off, SwitchState::On];

    pub fn as_f64(self) -> f64 {
        match self {
            SwitchState::Off => 0.0,
            SwitchState::On => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            SwitchState::Off => 0,
            SwitchState::On => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SwitchState::Off),
            1 => Some(SwitchState::On),
            _ => None,
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            SwitchState::Off => SwitchState::On,
            SwitchState::On => SwitchState::Off,
        }
    }
}

/// Piecewise-constant load conductance over time.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadSchedule {
    segments: Vec<(f64, f64)>,
}

impl LoadSchedule {
    /// Segments are `(start_time, conductance)`; the first must start at zero.
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        match segments.first() {
            None => return Err(Error::InvalidSchedule("no segments".into())),
            Some(&(t0, _)) if t0 != 0.0 => {
                return Err(Error::InvalidSchedule(format!(
                    "first segment starts at {t0}, expected 0"
                )))
            }
            _ => {}
        }
        for w in segments.windows(2) {
            if w[1].0.is_nan() || w[1].0 <= w[0].0 {
                return Err(Error::InvalidSchedule(format!(
                    "start times not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some(&(t, g)) = segments
            .iter()
            .find(|(t, g)| !g.is_finite() || *g < 0.0 || !t.is_finite())
        {
            return Err(Error::InvalidSchedule(format!("invalid conductance {g} at t = {t}")));
        }
        Ok(Self { segments })
    }

    pub fn constant(g: f64) -> Result<Self> {
        Self::new(vec![(0.0, g)])
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    /// Conductance active at `t`; a boundary instant belongs to the later segment.
    pub fn load_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|&(start, _)| start <= t);
        self.segments[idx.saturating_sub(1)].1
    }
}

/// Conductance drawing `power` watts at `v_ref` volts.
pub fn conductance_for_power(power: f64, v_ref: f64) -> f64 {
    power / (v_ref * v_ref)
}

/// Conductance of a resistive load; infinite resistance maps to zero.
pub fn conductance_for_resistance(ohms: f64) -> f64 {
    if ohms.is_infinite() {
        0.0
    } else {
        1.0 / ohms
    }
}

/// Right-hand side of the continuous model, `(di/dt, dv/dt)`.
pub fn derivatives(state: ConverterState, u: SwitchState, params: &ConverterParams, load_g: f64) -> (f64, f64) {
    let u = u.as_f64();
    let di = (-params.r_damp * state.i_l - state.v_c + state.v_c * u + params.v_in) / params.l;
    let dv = state.i_l * (1.0 - u) / params.c_f - (load_g / params.c_f) * state.v_c;
    (di, dv)
}

/// One classical RK4 step of length `params.plant_step` with `u` and the
/// load held constant.
pub fn step_rk4(
    state: ConverterState,
    u: SwitchState,
    params: &ConverterParams,
    load_g: f64,
) -> Result<ConverterState> {
    rk4_with_step(state, u, params, load_g, params.plant_step)
}

/// RK4 step with an explicit step size; used by convergence studies.
pub fn rk4_with_step(
    state: ConverterState,
    u: SwitchState,
    params: &ConverterParams,
    load_g: f64,
    h: f64,
) -> Result<ConverterState> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState {
            i_l: state.i_l,
            v_c: state.v_c,
        });
    }
    let f = |s: ConverterState| derivatives(s, u, params, load_g);
    let shift = |s: ConverterState, k: (f64, f64), a: f64| ConverterState::new(s.i_l + a * k.0, s.v_c + a * k.1);
    let k1 = f(state);
    let k2 = f(shift(state, k1, h / 2.0));
    let k3 = f(shift(state, k2, h / 2.0));
    let k4 = f(shift(state, k3, h));
    let mut next = ConverterState::new(
        state.i_l + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.v_c + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    );
    if params.diode_clamp && u == SwitchState::Off && next.i_l < 0.0 {
        next.i_l = 0.0;
    }
    if !next.is_finite() {
        return Err(Error::NonFiniteState {
            i_l: next.i_l,
            v_c: next.v_c,
        });
    }
    Ok(next)
}

/// Which discrete-time prediction model the controller uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiscreteModel {
    /// Forward Euler of the continuous model.
    #[default]
    Euler,
    /// The variant with coefficient `(T·R/L - 1)` on the current and no
    /// source term. Kept for side-by-side comparison only; it is not a
    /// discretization of the continuous model.
    PrintedVariant,
}

/// One-step forward-Euler prediction at the control period `T`.
pub fn predict_euler(state: ConverterState, u: SwitchState, params: &ConverterParams, load_g: f64) -> ConverterState {
    predict(state, u, params, load_g, DiscreteModel::Euler)
}

pub fn predict(
    state: ConverterState,
    u: SwitchState,
    params: &ConverterParams,
    load_g: f64,
    model: DiscreteModel,
) -> ConverterState {
    predict_with_period(state, u, params, load_g, params.control_period, model)
}

pub fn predict_with_period(
    state: ConverterState,
    u: SwitchState,
    params: &ConverterParams,
    load_g: f64,
    t: f64,
    model: DiscreteModel,
) -> ConverterState {
    let uf = u.as_f64();
    let t_l = t / params.l;
    let i_next = match model {
        DiscreteModel::Euler => {
            (1.0 - t * params.r_damp / params.l) * state.i_l + (uf - 1.0) * t_l * state.v_c + t_l * params.v_in
        }
        DiscreteModel::PrintedVariant => {
            (t * params.r_damp / params.l - 1.0) * state.i_l + (uf - 1.0) * t_l * state.v_c
        }
    };
    let v_next = t / params.c_f * state.i_l * (1.0 - uf) + (1.0 - t * load_g / params.c_f) * state.v_c;
    ConverterState::new(i_next, v_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table_params() -> ConverterParams {
        ConverterParams::default()
    }

    #[test]
    fn derivative_at_rest() {
        let p = table_params();
        let (di, dv) = derivatives(ConverterState::new(0.0, 0.0), SwitchState::Off, &p, 0.05);
        assert_relative_eq!(di, 7000.0, max_relative = 1e-12);
        assert_eq!(dv, 0.0);
    }

    #[test]
    fn switch_on_decouples_capacitor() {
        let p = table_params();
        let g = 0.05;
        let (_, dv1) = derivatives(ConverterState::new(3.0, 80.0), SwitchState::On, &p, g);
        let (_, dv2) = derivatives(ConverterState::new(-40.0, 80.0), SwitchState::On, &p, g);
        assert_eq!(dv1, dv2);
        assert_relative_eq!(dv1, -g / p.c_f * 80.0, max_relative = 1e-15);
    }

    #[test]
    fn unloaded_idle_capacitor_holds() {
        let p = table_params();
        let s = ConverterState::new(0.0, 95.0);
        let (_, dv) = derivatives(s, SwitchState::Off, &p, 0.0);
        assert_eq!(dv, 0.0);
        assert_eq!(predict_euler(s, SwitchState::Off, &p, 0.0).v_c, 95.0);
        // RK4 sees the current start to move, so the voltage only drifts at O(h^2)
        let next = step_rk4(s, SwitchState::Off, &p, 0.0).unwrap();
        assert!((next.v_c - 95.0).abs() < 1e-7);
        // at v_c = v_in nothing moves at all
        let rest = ConverterState::new(0.0, p.v_in);
        assert_eq!(step_rk4(rest, SwitchState::Off, &p, 0.0).unwrap(), rest);
    }

    #[test]
    fn rk4_fixed_point() {
        // di = 0 needs v_c(1-u) + r i = v_in; dv = 0 needs i(1-u) = G v.
        // With u = 1 and G = 0: i = v_in / r, any v.
        let p = table_params();
        let s = ConverterState::new(p.v_in / p.r_damp, 42.0);
        let next = step_rk4(s, SwitchState::On, &p, 0.0).unwrap();
        assert_relative_eq!(next.i_l, s.i_l, max_relative = 1e-14);
        assert_eq!(next.v_c, s.v_c);
    }

    #[test]
    fn rk4_first_step_from_rest() {
        let p = table_params();
        let s0 = ConverterState::default();
        let one = step_rk4(s0, SwitchState::Off, &p, 0.05).unwrap();
        // oracle: four quarter steps of the same integrator
        let mut fine = s0;
        for _ in 0..4 {
            fine = rk4_with_step(fine, SwitchState::Off, &p, 0.05, p.plant_step / 4.0).unwrap();
        }
        assert!((one.i_l - fine.i_l).abs() < 1e-9);
        assert!((one.i_l - 7.0e-3).abs() < 1e-6);
    }

    #[test]
    fn rk4_rejects_non_finite() {
        let p = table_params();
        let err = step_rk4(ConverterState::new(f64::NAN, 0.0), SwitchState::Off, &p, 0.0);
        assert!(matches!(err, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn diode_clamp_stops_reverse_current() {
        let p = ConverterParams {
            diode_clamp: true,
            ..table_params()
        };
        let next = step_rk4(ConverterState::new(0.0, 200.0), SwitchState::Off, &p, 0.0).unwrap();
        assert_eq!(next.i_l, 0.0);
        let unclamped = step_rk4(ConverterState::new(0.0, 200.0), SwitchState::Off, &table_params(), 0.0).unwrap();
        assert!(unclamped.i_l < 0.0);
    }

    #[test]
    fn euler_prediction_from_rest() {
        let p = table_params();
        let next = predict_euler(ConverterState::default(), SwitchState::Off, &p, 0.05);
        assert_relative_eq!(next.i_l, 0.35, max_relative = 1e-12);
        assert_eq!(next.v_c, 0.0);
    }

    #[test]
    fn euler_switch_on_ignores_voltage_in_current_row() {
        let p = table_params();
        for v in [0.0, 50.0, 95.0, 300.0] {
            let next = predict_euler(ConverterState::new(0.0, v), SwitchState::On, &p, 0.1);
            assert_relative_eq!(next.i_l, p.control_period * p.v_in / p.l, max_relative = 1e-12);
        }
    }

    #[test]
    fn printed_variant_differs() {
        let p = table_params();
        let s = ConverterState::new(5.0, 90.0);
        let a = predict(s, SwitchState::Off, &p, 0.05, DiscreteModel::Euler);
        let b = predict(s, SwitchState::Off, &p, 0.05, DiscreteModel::PrintedVariant);
        assert_eq!(a.v_c, b.v_c);
        assert!(b.i_l < 0.0 && a.i_l > 0.0);
    }

    #[test]
    fn load_lookup() {
        let s = LoadSchedule::new(vec![(0.0, 0.05), (0.4, 0.0)]).unwrap();
        assert_eq!(s.load_at(0.39), 0.05);
        assert_eq!(s.load_at(0.4), 0.0);
        assert_eq!(s.load_at(10.0), 0.0);
        let c = LoadSchedule::constant(0.1).unwrap();
        for t in [0.0, 0.3, 1e6] {
            assert_eq!(c.load_at(t), 0.1);
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(LoadSchedule::new(vec![]).is_err());
        assert!(LoadSchedule::new(vec![(0.1, 0.05)]).is_err());
        assert!(LoadSchedule::new(vec![(0.0, 0.05), (0.0, 0.1)]).is_err());
        assert!(LoadSchedule::new(vec![(0.0, -0.05)]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(table_params().validate().is_ok());
        assert_eq!(table_params().substeps(), 50);
        let bad = ConverterParams {
            control_period: 50.5e-6,
            ..table_params()
        };
        assert!(bad.validate().is_err());
        let bad = ConverterParams {
            l: 0.0,
            ..table_params()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn power_to_conductance() {
        assert_relative_eq!(conductance_for_power(1500.0, 95.0), 1500.0 / 9025.0);
        assert_eq!(conductance_for_resistance(f64::INFINITY), 0.0);
        assert_eq!(conductance_for_resistance(20.0), 0.05);
    }
}
