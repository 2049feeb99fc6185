use boost_imitator::ann::{activate, Activation, FeatureVector, InputScale, Mlp};
use boost_imitator::harness::{run_scenario, ControllerSpec, ScenarioSpec};
use boost_imitator::mpc::{cost, select_switch, MpcConfig, MpcController, TieBreak};
use boost_imitator::pi::{PiController, PiGains, PwmCarrier};
use boost_imitator::plant::{ConverterParams, ConverterState, SwitchState};
use proptest::prelude::*;

/// Euler prediction of the capacitor voltage, written out by hand.
fn predicted_voltage(s: ConverterState, u: f64, p: &ConverterParams, g: f64) -> f64 {
    let t = p.control_period;
    t / p.c_f * s.i_l * (1.0 - u) + (1.0 - t * g / p.c_f) * s.v_c
}

fn arb_switch() -> impl Strategy<Value = SwitchState> {
    prop_oneof![Just(SwitchState::Off), Just(SwitchState::On)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mpc_picks_the_cheaper_candidate(
        i in -50.0..1000.0f64,
        v in 0.0..300.0f64,
        v_ref in 0.0..300.0f64,
        g in 0.0..0.2f64,
        prev in arb_switch(),
    ) {
        let p = ConverterParams::default();
        let s = ConverterState::new(i, v);
        let d = select_switch(s, v_ref, &p, g, prev);
        let brute = [0.0, 1.0].map(|u| (v_ref - predicted_voltage(s, u, &p, g)).powi(2));
        for (c, b) in d.costs.iter().zip(brute) {
            prop_assert!((c.0 - b).abs() <= 1e-9 * b.max(1.0));
        }
        let expected = if brute[0] < brute[1] {
            SwitchState::Off
        } else if brute[1] < brute[0] {
            SwitchState::On
        } else {
            prev
        };
        prop_assert_eq!(d.u, expected);
        // reported costs are consistent with the returned decision
        prop_assert!(d.costs[d.u.as_u8() as usize].0 <= d.costs[d.u.toggled().as_u8() as usize].0);
    }

    #[test]
    fn cost_is_symmetric_and_nonnegative(a in -1e3..1e3f64, b in -1e3..1e3f64) {
        prop_assert_eq!(cost(a, b).0, cost(b, a).0);
        prop_assert!(cost(a, b).0 >= 0.0);
    }

    #[test]
    fn pwm_period_mean_matches_duty(duty in 0.0..=1.0f64, periods in 1usize..5) {
        let p = ConverterParams::default();
        let mut c = PwmCarrier::new(1.0 / p.control_period);
        let sub = p.substeps();
        for _ in 0..periods {
            let on = (0..sub).filter(|_| c.compare(duty, p.plant_step) == SwitchState::On).count();
            let quantum = p.plant_step / p.control_period;
            prop_assert!((on as f64 / sub as f64 - duty).abs() <= quantum + 1e-12);
        }
    }

    #[test]
    fn pi_duty_stays_within_limits(errors in proptest::collection::vec(-200.0..200.0f64, 1..400)) {
        let gains = PiGains::default();
        let mut pi = PiController::new(gains);
        for e in errors {
            let out = pi.step(95.0, 95.0 - e, 50e-6);
            prop_assert!((gains.duty_min..=gains.duty_max).contains(&out.duty));
            prop_assert!(pi.integrator.is_finite());
        }
    }

    #[test]
    fn sigmoid_is_point_symmetric(x in -50.0..50.0f64) {
        let s = activate(Activation::Sigmoid, x) + activate(Activation::Sigmoid, -x);
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_training_features_lie_in_unit_box(
        rows in proptest::collection::vec((0.0..200.0f64, -10.0..300.0f64, -50.0..900.0f64), 2..60)
    ) {
        let feats: Vec<FeatureVector> = rows.iter().map(|&(a, b, c)| FeatureVector::new(a, b, c)).collect();
        let scale = InputScale::fit(feats.iter());
        for f in &feats {
            for x in scale.apply(f) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x), "{x}");
            }
        }
    }
}

#[test]
fn mpc_is_deterministic() {
    let p = ConverterParams::default();
    let ctrl = MpcController::new(MpcConfig::default());
    let s = ConverterState::new(12.0, 80.0);
    let a = ctrl.select_switch(s, 95.0, &p, 0.05, SwitchState::On);
    let b = ctrl.select_switch(s, 95.0, &p, 0.05, SwitchState::On);
    assert_eq!(a, b);
}

#[test]
fn tie_breaks_on_equal_costs() {
    // with zero current the switch has no effect on the predicted voltage
    let p = ConverterParams::default();
    let s = ConverterState::new(0.0, 90.0);
    for prev in SwitchState::ALL {
        assert_eq!(select_switch(s, 95.0, &p, 0.05, prev).u, prev);
    }
    let ctrl = MpcController::new(MpcConfig {
        tie_break: TieBreak::PreferZero,
        ..Default::default()
    });
    assert_eq!(
        ctrl.select_switch(s, 95.0, &p, 0.05, SwitchState::On).u,
        SwitchState::Off
    );
}

#[test]
fn saturated_integrator_stays_bounded() {
    let mut pi = PiController::new(PiGains::default());
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        pi.step(95.0, 0.0, 50e-6);
        worst = worst.max(pi.integrator.abs());
    }
    // saturation is reached on the first call, so nothing is ever integrated
    assert!(worst < 1.0, "{worst}");
}

#[test]
fn pi_settles_near_ideal_boost_duty() {
    // the nominal gains do not settle this plant, so the steady-state duty is
    // checked with a slower loop
    let gains = PiGains {
        kp: 0.004,
        ki: 0.02,
        ..PiGains::default()
    };
    let p = ConverterParams::default();
    let spec = ScenarioSpec::fig7()
        .with_controller(ControllerSpec::Pi(gains))
        .with_duration(3.0);
    let run = run_scenario(&spec, &p).unwrap();
    let tail = run.trace.window(2.5, 3.0);
    let duty = tail.iter().map(|r| r.u.as_f64()).sum::<f64>() / tail.len() as f64;
    let ideal = 1.0 - p.v_in / 95.0;
    assert!((duty - ideal).abs() < 0.05, "mean duty {duty}, ideal {ideal}");
    assert!(run.metrics.settling_time.is_some());
}

#[test]
fn classify_matches_threshold_on_random_nets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let mut net = Mlp::zeros(4);
        let w: Vec<f64> = (0..net.param_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        net.set_params(&w);
        for _ in 0..200 {
            let f = FeatureVector::new(95.0, rng.gen_range(0.0..120.0), rng.gen_range(-10.0..900.0));
            let y = net.forward(&f);
            assert!(y > 0.0 && y < 1.0);
            let expected = if y >= 0.5 { SwitchState::On } else { SwitchState::Off };
            assert_eq!(net.classify(&f), expected);
        }
    }
}
