use dac_core::critic::CriticState;
use dac_core::envs::toy::ToyTarget;
use dac_core::envs::{QuadraticToy, ToySpec};
use dac_core::eval::{
    ascent_check, assemble_curves, evaluate_policy, trace_points, write_curve_csv, write_trace_csv, AscentConfig,
    AscentVerdict, EvalProtocol, EvalResult, CURVE_CSV_HEADER, TRACE_CSV_HEADER,
};
use dac_core::features::{PolicyParams, RbfFeatureMap};
use dac_core::trainer::TrainRecord;
use dac_core::TrainTrace;
use proptest::prelude::*;

fn map() -> RbfFeatureMap {
    RbfFeatureMap::new(1, vec![vec![-0.5], vec![0.0], vec![0.5]], vec![0.5; 3]).unwrap()
}

/// One agent whose target is the constant `c`.
fn constant_toy(c: f64) -> QuadraticToy {
    QuadraticToy::new(ToySpec {
        targets: vec![ToyTarget { offset: c, amplitude: 0.0, frequency: 1.0, phase: 0.0 }],
        ..ToySpec::default()
    })
    .unwrap()
}

#[test]
fn constant_reward_return_is_exact() {
    let env = constant_toy(2.0);
    let theta = PolicyParams::zeros(0, 3, 1);
    let protocol = EvalProtocol { horizon: 10, rollouts: 4, discounted: false };
    let r = evaluate_policy(&theta, &env, &map(), &protocol, 0.9, 0).unwrap();
    assert_eq!(r, EvalResult { mean: -40.0, stderr: 0.0 });

    let discounted = EvalProtocol { discounted: true, ..protocol };
    let r = evaluate_policy(&theta, &env, &map(), &discounted, 0.5, 0).unwrap();
    // −4 · (1 − 0.5¹⁰) / (1 − 0.5)
    assert!((r.mean - (-4.0 * (1.0 - 0.5f64.powi(10)) / 0.5)).abs() < 1e-12);
}

#[test]
fn evaluation_leaves_the_environment_alone_and_repeats() {
    let env = QuadraticToy::new(ToySpec::default()).unwrap();
    let before = env.clone();
    let theta = PolicyParams::from_flat(0, 3, 1, vec![0.2, -0.4, 0.9]).unwrap();
    let protocol = EvalProtocol { horizon: 30, rollouts: 8, discounted: false };
    let a = evaluate_policy(&theta, &env, &map(), &protocol, 0.9, 5).unwrap();
    let b = evaluate_policy(&theta, &env, &map(), &protocol, 0.9, 5).unwrap();
    let c = evaluate_policy(&theta, &env, &map(), &protocol, 0.9, 6).unwrap();
    assert_eq!(env, before);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_ne!(a.mean, c.mean);
    assert!(a.stderr > 0.0);
}

#[test]
fn zero_critics_give_a_zero_inner_product() {
    let toy = QuadraticToy::new(ToySpec::default()).unwrap();
    let theta = PolicyParams::from_flat(0, 3, 1, vec![0.5, 0.5, 0.5]).unwrap();
    let critics = vec![CriticState::zeros(3, 1); 3];
    let cfg = AscentConfig { samples: 200, bootstrap: 100, ..AscentConfig::default() };
    let r = ascent_check(&theta, &critics, &toy, &map(), 0.5, &cfg).unwrap();
    assert_eq!(r.inner_product, 0.0);
    assert!(r.approx_gradient.iter().all(|g| *g == 0.0));
    assert_eq!(r.verdict, AscentVerdict::Inconclusive);
    // the finite-difference side still sees the slope
    assert!(r.fd_gradient.iter().any(|g| g.abs() > 1e-3));
}

#[test]
fn ascent_check_rejects_bad_inputs() {
    let toy = QuadraticToy::new(ToySpec::default()).unwrap();
    let theta = PolicyParams::zeros(0, 3, 1);
    let cfg = AscentConfig::default();
    assert!(ascent_check(&theta, &[CriticState::zeros(3, 1)], &toy, &map(), 0.5, &cfg).is_err());
    let critics = vec![CriticState::zeros(3, 1); 3];
    let bad = AscentConfig { samples: 1, ..cfg };
    assert!(ascent_check(&theta, &critics, &toy, &map(), 0.5, &bad).is_err());
}

fn record(update: u64, returns: Option<Vec<f64>>) -> TrainRecord {
    TrainRecord {
        step: update * 20,
        update,
        disagreement: 0.25,
        alpha_theta: 0.0,
        alpha_w: 0.0,
        returns: returns.map(|r| r.into_iter().map(|mean| EvalResult { mean, stderr: 0.5 }).collect()),
        params: None,
    }
}

fn trace(values: &[[f64; 2]]) -> TrainTrace {
    TrainTrace {
        records: values
            .iter()
            .enumerate()
            .flat_map(|(i, v)| {
                let k = 2 * i as u64;
                [record(k, Some(v.to_vec())), record(k + 1, None)]
            })
            .collect(),
        wall_clock: vec![0.0; 2 * values.len()],
    }
}

#[test]
fn trace_csv_has_the_exact_header_and_one_row_per_evaluation() {
    let t = trace(&[[1.0, 2.0], [3.0, 4.0]]);
    let mut out = Vec::new();
    write_trace_csv(&mut out, &trace_points(3, 42, &t)).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TRACE_CSV_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    assert_eq!(lines[1], "3,42,0,0,1,0.5,0.25");
    assert_eq!(lines[4], "3,42,2,1,4,0.5,0.25");
}

#[test]
fn curves_use_population_variance() {
    let rows = assemble_curves(&[trace(&[[1.0, 0.0]]), trace(&[[3.0, 0.0]])]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].mean_return, rows[0].variance_return, rows[0].trials), (2.0, 1.0, 2));
    assert_eq!(rows[1].variance_return, 0.0);
    let mut out = Vec::new();
    write_curve_csv(&mut out, &rows).unwrap();
    assert!(String::from_utf8(out).unwrap().starts_with(CURVE_CSV_HEADER));
}

#[test]
fn curves_reject_empty_and_mismatched_inputs() {
    assert!(assemble_curves(&[]).is_err());
    assert!(assemble_curves(&[trace(&[[1.0, 2.0]]), trace(&[[1.0, 2.0], [3.0, 4.0]])]).is_err());
}

proptest! {
    #[test]
    fn curve_assembly_is_permutation_invariant(
        values in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 6), 2..6),
        rotate in 0usize..6,
    ) {
        let traces: Vec<TrainTrace> = values
            .iter()
            .map(|v| trace(&[[v[0], v[1]], [v[2], v[3]], [v[4], v[5]]]))
            .collect();
        let mut shuffled = traces.clone();
        shuffled.rotate_left(rotate % traces.len());
        shuffled.swap(0, traces.len() - 1);
        let a = assemble_curves(&traces).unwrap();
        let b = assemble_curves(&shuffled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.mean_return.to_bits(), y.mean_return.to_bits());
            prop_assert_eq!(x.variance_return.to_bits(), y.variance_return.to_bits());
        }
    }
}
