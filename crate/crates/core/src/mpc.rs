//! Horizon-one finite-control-set predictive controller.
//!
//! Both switch positions are enumerated, each is pushed one control period
//! forward through the Euler predictor, and the position whose predicted
//! capacitor voltage lands closest to the reference is applied.

use crate::plant::{predict, ConverterParams, ConverterState, DiscreteModel, SwitchState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    #[default]
    KeepPrevious,
    PreferZero,
}

/// Form of the tracking cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CostForm {
    /// `(v_ref - v)^2`
    #[default]
    SquaredError,
    /// `(v_ref^2 - v)^2`, only for comparison against the squared error.
    SquaredReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub tie_break: TieBreak,
    pub model: DiscreteModel,
    pub cost_form: CostForm,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            tie_break: TieBreak::KeepPrevious,
            model: DiscreteModel::Euler,
            cost_form: CostForm::SquaredError,
        }
    }
}

/// Squared tracking error; always nonnegative.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct CostValue(pub f64);

pub fn cost(v_ref: f64, v_predicted: f64) -> CostValue {
    let e = v_ref - v_predicted;
    CostValue(e * e)
}

fn cost_with(form: CostForm, v_ref: f64, v_predicted: f64) -> CostValue {
    match form {
        CostForm::SquaredError => cost(v_ref, v_predicted),
        CostForm::SquaredReference => cost(v_ref * v_ref, v_predicted),
    }
}

/// Result of one controller evaluation. `costs` is indexed by `u as usize`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub u: SwitchState,
    pub costs: [CostValue; 2],
}

#[derive(Clone, Debug, Default)]
pub struct MpcController {
    pub config: MpcConfig,
}

impl MpcController {
    pub fn new(config: MpcConfig) -> Self {
        assert_eq!(config.horizon, 1, "only horizon 1 is supported");
        Self { config }
    }

    pub fn select_switch(
        &self,
        state: ConverterState,
        v_ref: f64,
        params: &ConverterParams,
        load_g: f64,
        prev_u: SwitchState,
    ) -> Decision {
        let costs = SwitchState::ALL.map(|u| {
            let next = predict(state, u, params, load_g, self.config.model);
            cost_with(self.config.cost_form, v_ref, next.v_c)
        });
        let (c0, c1) = (costs[0].0, costs[1].0);
        let u = if c0 < c1 {
            SwitchState::Off
        } else if c1 < c0 {
            SwitchState::On
        } else {
            match self.config.tie_break {
                TieBreak::KeepPrevious => prev_u,
                TieBreak::PreferZero => SwitchState::Off,
            }
        };
        Decision { u, costs }
    }
}

/// Default-configured controller decision.
pub fn select_switch(
    state: ConverterState,
    v_ref: f64,
    params: &ConverterParams,
    load_g: f64,
    prev_u: SwitchState,
) -> Decision {
    MpcController::default().select_switch(state, v_ref, params, load_g, prev_u)
}
