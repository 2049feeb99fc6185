//! PI voltage loop with trailing-edge PWM, used as the baseline controller.

use crate::plant::SwitchState;

/// Parallel-form PI gains with a clamped duty output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiGains {
    pub kp: f64,
    /// Integral gain in 1/s.
    pub ki: f64,
    pub duty_min: f64,
    pub duty_max: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            kp: 0.054,
            ki: 8.86,
            duty_min: 0.0,
            duty_max: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiOutput {
    pub duty: f64,
    pub unclamped: f64,
}

#[derive(Clone, Debug)]
pub struct PiController {
    pub gains: PiGains,
    /// Accumulated error in volt-seconds.
    pub integrator: f64,
}

impl PiController {
    pub fn new(gains: PiGains) -> Self {
        assert!(
            0.0 <= gains.duty_min && gains.duty_min < gains.duty_max && gains.duty_max <= 1.0,
            "duty limits must satisfy 0 <= min < max <= 1"
        );
        Self { gains, integrator: 0.0 }
    }

    /// One controller update. The integrator only accumulates while the
    /// unclamped command is inside the duty limits, or when the error pulls
    /// a saturated command back toward them.
    pub fn step(&mut self, v_ref: f64, v_meas: f64, dt: f64) -> PiOutput {
        debug_assert!(dt > 0.0);
        let g = self.gains;
        let e = v_ref - v_meas;
        let unclamped = g.kp * e + g.ki * self.integrator;
        let inside = (g.duty_min..=g.duty_max).contains(&unclamped);
        let recovering = (unclamped > g.duty_max && e < 0.0) || (unclamped < g.duty_min && e > 0.0);
        if inside || recovering {
            self.integrator += e * dt;
        }
        PiOutput {
            duty: unclamped.clamp(g.duty_min, g.duty_max),
            unclamped,
        }
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
    }
}

/// Sawtooth carrier compared against the duty command.
#[derive(Clone, Debug)]
pub struct PwmCarrier {
    pub frequency: f64,
    phase: f64,
}

impl PwmCarrier {
    pub fn new(frequency: f64) -> Self {
        assert!(frequency > 0.0, "carrier frequency must be positive");
        Self { frequency, phase: 0.0 }
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Switch state for the current sub-step, then advance the carrier by `dt`.
    pub fn compare(&mut self, duty: f64, dt: f64) -> SwitchState {
        let u = if self.phase < duty {
            SwitchState::On
        } else {
            SwitchState::Off
        };
        let mut next = self.phase + dt * self.frequency;
        next -= next.floor();
        // accumulated rounding can leave the phase a hair below a period boundary
        if 1.0 - next < 1e-9 {
            next = 0.0;
        }
        self.phase = next;
        u
    }
}
