use cikan::checkpoint::{load_network, save_network};
use cikan::dataset::{read_csv, write_csv, TsgSample};
use cikan::governor::{
    run_governed_mission, tsg_exact, Branch, GovernorConfig, MissionMode, OracleStats, ScenarioFamily,
    ShiftWindow,
};
use cikan::sim::{Scenario, Simulator};
use cikan::spline::bspline_basis;
use cikan::train::{loss_from_predictions, transform_output, AdamWConfig, AdamWState, LossMode, LossSpec};
use cikan::{EdgeKind, KanNetwork, KnotGrid, Model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn sim() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(Scenario::default()).unwrap())
}

fn batch_strategy() -> impl Strategy<Value = (Vec<TsgSample>, Vec<f64>)> {
    (1usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec((-1.0f64..1.0, -500.0f64..-0.01), n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(|(rows, preds)| {
                let batch = rows.into_iter().map(|(x, t)| TsgSample::new(vec![x], t)).collect();
                (batch, preds)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_is_a_nonnegative_partition_of_unity(
        g in 1usize..25, k in 0usize..4, lo in -5.0f64..0.0, span in 0.1f64..10.0, u in 0.0f64..=1.0,
    ) {
        let grid = KnotGrid::new(lo, lo + span, g, k).unwrap();
        let x = lo + u * span;
        let b = bspline_basis(x, &grid).unwrap();
        prop_assert_eq!(b.len(), g + k);
        prop_assert!(b.iter().all(|v| *v >= 0.0));
        prop_assert!(b.iter().filter(|v| **v > 0.0).count() <= k + 1);
        prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_total_is_the_weighted_sum(
        (batch, preds) in batch_strategy(), theta_c in 0.0f64..100.0, reg_weight in 0.0f64..1.0,
        r in 0.0f64..5.0, log in any::<bool>(),
    ) {
        let mode = if log { LossMode::LogMsRelu } else { LossMode::PlainMsRelu };
        let spec = LossSpec { mode, theta_c, reg_weight, ..LossSpec::default() };
        let b = loss_from_predictions(&batch, &preds, r, &spec).unwrap();
        prop_assert_eq!(b.total, b.regression + theta_c * b.constraint + reg_weight * b.regularizer);
        prop_assert!(b.regression >= 0.0 && b.constraint >= 0.0);
        prop_assert!(b.constraint <= b.regression + 1e-12 || !log);
    }

    #[test]
    fn constraint_vanishes_when_predictions_exceed_targets(
        (batch, _) in batch_strategy(), lift in 0.0f64..5.0,
    ) {
        let spec = LossSpec::default();
        let preds: Vec<f64> = batch.iter().map(|s| spec.target(s.t_star) + lift).collect();
        let b = loss_from_predictions(&batch, &preds, 0.0, &spec).unwrap();
        prop_assert_eq!(b.constraint, 0.0);
    }

    #[test]
    fn transform_inverts_the_log_target(t in -1e4f64..-1e-6) {
        let spec = LossSpec::default();
        let back = transform_output(spec.target(t), &spec);
        prop_assert!((back - t).abs() <= 1e-12 * t.abs().max(1.0));
        prop_assert!(back < 0.0);
    }

    #[test]
    fn adamw_without_gradient_or_decay_is_a_noop(params in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut state = AdamWState::new(cfg, params.len());
        let mut p = params.clone();
        state.step(&mut p, &vec![0.0; params.len()]).unwrap();
        prop_assert_eq!(p, params);
    }

    #[test]
    fn dataset_csv_roundtrip_is_exact(rows in prop::collection::vec((prop::collection::vec(-1e3f64..1e3, 3), -1e4f64..0.0), 1..20)) {
        let samples: Vec<TsgSample> = rows.into_iter().map(|(f, t)| TsgSample::new(f, t)).collect();
        let mut buf = Vec::new();
        write_csv(&samples, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), samples);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_roundtrip_preserves_predictions(seed in any::<u64>(), kind in 0usize..3, x in prop::collection::vec(-1.0f64..1.0, 2)) {
        let kind = [EdgeKind::BSpline, EdgeKind::Grbf, EdgeKind::Rswaf][kind];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = KanNetwork::new(&[2, 3, 1], kind, KnotGrid::default(), &mut rng).unwrap();
        let back = load_network(&save_network(&net).unwrap()).unwrap();
        prop_assert_eq!(back.parameters(), net.parameters());
        prop_assert_eq!(back.forward(&x).unwrap().to_bits(), net.forward(&x).unwrap().to_bits());
    }

    #[test]
    fn exact_shift_is_feasible_and_tight(seed in 0u64..1000) {
        let s = sim();
        let state = ScenarioFamily::default().sample(seed, 0);
        let window = GovernorConfig::default().initial_window(s);
        let mut stats = OracleStats::default();
        if let Ok(t) = tsg_exact(s, &state, window, 0.1, &mut stats) {
            prop_assert!(window.contains(t));
            prop_assert!(s.is_feasible(&state, t).unwrap());
            if t < 0.0 {
                prop_assert!(!s.is_feasible(&state, t + 0.1).unwrap());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn governed_missions_keep_window_invariants(seed in 0u64..10_000) {
        let s = sim();
        let cfg = GovernorConfig::default();
        let initial = ScenarioFamily::default().sample(seed, 0);
        let out = match run_governed_mission(s, &initial, &cfg, MissionMode::ExactOnly) {
            Ok(o) => o,
            Err(abort) => { prop_assume!(abort.partial.trace.is_empty()); return Ok(()); }
        };
        prop_assert_eq!(out.summary.violations, 0);
        prop_assert_eq!(out.summary.anchor_failures, 0);
        for w in out.trace.windows(2) {
            prop_assert!(w[1].accepted >= w[0].accepted);
        }
        for row in &out.trace {
            prop_assert_eq!(row.window.hi, 0.0);
            prop_assert_eq!(row.window.lo, row.accepted);
            if row.branch != Branch::Hold {
                prop_assert!(s.is_feasible(&row.state, row.accepted).unwrap());
            }
        }
        prop_assert!(out.margins.iter().all(|m| *m > 0.0));
        let _ = ShiftWindow::new(out.summary.final_shift, 0.0).unwrap();
    }
}
