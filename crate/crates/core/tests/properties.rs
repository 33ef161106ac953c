use std::sync::Arc;

use proptest::prelude::*;
use rainflow_dqn::env::{action_to_power, DEFAULT_ACTIONS};
use rainflow_dqn::rainflow::{count_cycles, extract_turning_points, rainflow_decompose, CycleKind};
use rainflow_dqn::*;

fn params() -> DegradationParams {
    DegradationParams::default()
}

/// Walks in [0.1, 1.0]: mixes continuous steps with steps on a 0.05 grid so
/// plateaus and exactly equal ranges show up.
fn walk() -> impl Strategy<Value = Vec<f64>> {
    let step = prop_oneof![
        3 => -0.05f64..=0.05,
        2 => (-2i32..=2).prop_map(|k| f64::from(k) * 0.025),
        1 => Just(0.0),
    ];
    (0.1f64..=1.0, prop::collection::vec(step, 1..400)).prop_map(|(start, steps)| {
        let mut soc = start;
        let mut out = vec![soc];
        for b in steps {
            soc = (soc + b).clamp(0.1, 1.0);
            out.push(soc);
        }
        out
    })
}

/// Coarse grid walks with large jumps: deep nesting and many ties.
fn grid_walk() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1u8..=10, 2..60)
        .prop_map(|v| v.into_iter().map(|k| f64::from(k) / 10.0).collect())
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let gap = (a - b).abs();
    if gap == 0.0 {
        0.0
    } else {
        gap / b.abs().max(1e-300)
    }
}

fn engine_total(walk: &[f64], p: DegradationParams) -> (f64, Vec<f64>) {
    let mut t = CycleTracker::new(walk[0], p).unwrap();
    let inc: Vec<f64> = walk[1..].iter().map(|&s| t.step_to(s)).collect();
    (inc.iter().sum(), inc)
}

fn oracle_total(walk: &[f64], p: DegradationParams) -> f64 {
    rainflow_decompose(&SocTrajectory::new(walk.to_vec(), 1.0).unwrap(), &p).total_cost
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn engine_matches_oracle(w in walk()) {
        let (engine, _) = engine_total(&w, params());
        prop_assert!(relative_gap(engine, oracle_total(&w, params())) < 1e-9);
    }

    #[test]
    fn engine_matches_oracle_on_grid(w in grid_walk()) {
        let (engine, _) = engine_total(&w, params());
        prop_assert!(relative_gap(engine, oracle_total(&w, params())) < 1e-9);
    }

    #[test]
    fn increments_are_nonnegative(w in walk()) {
        let (_, inc) = engine_total(&w, params());
        prop_assert!(inc.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn stack_ranges_shrink_toward_top(w in grid_walk()) {
        let mut t = CycleTracker::new(w[0], params()).unwrap();
        for &s in &w[1..] {
            t.step_to(s);
            let st = t.stack();
            let ranges: Vec<f64> = st.windows(2).map(|p| (p[1] - p[0]).abs()).collect();
            prop_assert!(ranges.windows(2).all(|r| r[1] < r[0]), "{st:?}");
            if let Some(&last) = ranges.last() {
                prop_assert!((t.current_soc() - st[st.len() - 1]).abs() < last);
            }
        }
    }

    #[test]
    fn scale_covariance(w in walk(), k in 0.1f64..10.0) {
        let base = params();
        let scaled = DegradationParams::new(base.alpha_d * k, base.beta).unwrap();
        let (_, a) = engine_total(&w, base);
        let (_, b) = engine_total(&w, scaled);
        // increments are differences of Φ values, so rounding is relative to Φ(1)
        let ulp_scale = scaled.alpha_d * scaled.beta.exp();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((k * x - y).abs() <= 1e-13 * ulp_scale);
        }
    }

    #[test]
    fn capped_projection_matches_while_shallow(w in grid_walk()) {
        let mut full = CycleTracker::new(w[0], params()).unwrap();
        let mut capped = CycleTracker::new(w[0], params()).unwrap().with_cap(3);
        for &s in &w[1..] {
            // a reversal pushes before closing, so three SPs may become four
            if full.stack().len() >= 3 {
                break;
            }
            full.step_to(s);
            capped.step_to(s);
            prop_assert_eq!(full.observe_sps(), capped.observe_sps());
        }
    }

    #[test]
    fn time_mirror_preserves_cost(w in grid_walk()) {
        let rev: Vec<f64> = w.iter().rev().copied().collect();
        prop_assert!(relative_gap(oracle_total(&rev, params()), oracle_total(&w, params())) < 1e-12);
    }

    #[test]
    fn level_mirror_preserves_cost(w in walk()) {
        let flipped: Vec<f64> = w.iter().map(|c| 1.1 - c).collect();
        prop_assert!(relative_gap(oracle_total(&flipped, params()), oracle_total(&w, params())) < 1e-9);
    }

    #[test]
    fn decomposition_conserves_range(w in walk()) {
        let traj = SocTrajectory::new(w.clone(), 1.0).unwrap();
        let tps = extract_turning_points(&traj);
        let range: f64 = tps.windows(2).map(|p| (p[1].1 - p[0].1).abs()).sum();
        let counted: f64 = count_cycles(&tps).iter().map(|c| c.depth_of_discharge()).sum();
        prop_assert!((range - counted).abs() < 1e-9);
        prop_assert!((range - traj.throughput()).abs() < 1e-9);
    }

    #[test]
    fn cycle_counts_are_consistent(w in grid_walk()) {
        let traj = SocTrajectory::new(w, 1.0).unwrap();
        let tps = extract_turning_points(&traj);
        let cycles = count_cycles(&tps);
        let halves = cycles.iter().filter(|c| c.kind == CycleKind::Half).count();
        let fulls = cycles.len() - halves;
        prop_assert_eq!(2 * fulls + halves + 1, tps.len().max(1));
    }

    #[test]
    fn depth_subadditivity(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, beta in 0.1f64..=1.3) {
        prop_assume!(beta * (d1 + d2) <= 1.3);
        let e = |x: f64| (beta * x).exp();
        prop_assert!(e(d1 + d2) <= e(d1) + e(d2) + 1e-12);
    }

    #[test]
    fn soc_stays_in_bounds(start in 0.1f64..=1.0, actions in prop::collection::vec(0usize..11, 1..500)) {
        let bat = BatteryParams::reference(300.0);
        let mut soc = start;
        for a in actions {
            let b = action_to_power(a, soc, &bat, &DEFAULT_ACTIONS).unwrap();
            soc = (soc + b).clamp(bat.soc_min, bat.soc_max);
            prop_assert!((bat.soc_min..=bat.soc_max).contains(&soc));
        }
    }

    #[test]
    fn env_rollouts_are_deterministic_and_match_oracle(
        actions in prop::collection::vec(0usize..11, 20..200),
        seed in 0u64..1000,
    ) {
        let profile = Arc::new(data::synth_profile(&SyntheticSpec {
            seed,
            dt_seconds: 300,
            ..Default::default()
        }).unwrap());
        let cfg = EnvConfig::new(BatteryParams::reference(300.0), CostParams::default());
        let run = || {
            let mut env = BatteryEnv::new(profile.clone(), cfg.clone()).unwrap();
            let rewards: Vec<_> = actions.iter().map(|&a| env.step(a).unwrap().reward).collect();
            (rewards, env.soc_history().to_vec())
        };
        let (r1, soc) = run();
        let (r2, _) = run();
        prop_assert_eq!(&r1, &r2);
        let hd: f64 = r1.iter().map(|r| r.degradation_cost).sum::<f64>() / cfg.costs.degradation_scale;
        prop_assert!(relative_gap(hd, oracle_total(&soc, cfg.costs.degradation)) < 1e-9);
        for r in &r1 {
            prop_assert_eq!(r.reward, -(r.energy_cost + r.fr_penalty + r.degradation_cost));
        }
    }

    #[test]
    fn pure_arbitrage_reward(actions in prop::collection::vec(0usize..11, 1..200), seed in 0u64..100) {
        let profile = Arc::new(data::synth_profile(&SyntheticSpec {
            seed,
            dt_seconds: 300,
            ..Default::default()
        }).unwrap());
        let costs = CostParams { delta: 0.0, degradation_scale: 0.0, ..Default::default() };
        let bat = BatteryParams::reference(300.0);
        let mut env = BatteryEnv::new(profile.clone(), EnvConfig::new(bat, costs)).unwrap();
        let mut total = 0.0;
        let mut expected = 0.0;
        for (t, &a) in actions.iter().enumerate() {
            let (out, rec) = env.step_detailed(a).unwrap();
            total += out.reward.reward;
            expected -= profile.price[t] * rec.b * bat.energy_mwh();
        }
        prop_assert!((total - expected).abs() < 1e-9);
    }

    #[test]
    fn linear_cost_doubles_with_throughput(level in 1usize..5, a_d in 0.001f64..0.1) {
        let profile = Arc::new(MarketProfile::new("flat", 300.0, vec![30.0; 4], vec![0.0; 4]).unwrap());
        let costs = CostParams { mode: DegradationMode::Linear, a_d, ..Default::default() };
        let cfg = EnvConfig::new(BatteryParams::reference(300.0), costs);
        let cost = |action: usize| {
            let mut env = BatteryEnv::new(profile.clone(), cfg.clone()).unwrap();
            env.step(action).unwrap().reward.degradation_cost
        };
        // levels k and 2k stay unclamped from SoC 0.5
        let small = cost(5 + level / 2);
        let large = cost(5 + 2 * (level / 2));
        prop_assert!((large - 2.0 * small).abs() < 1e-12);
    }

    #[test]
    fn resampling_preserves_mean(values in prop::collection::vec(-1.0f64..=1.0, 5..200), window in 1usize..8) {
        let out = data::resample_fr(&values, window);
        prop_assume!(out.is_ok());
        let out = out.unwrap();
        let kept = out.len() * window;
        let mean_in = values[..kept].iter().sum::<f64>() / kept as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-12);
        prop_assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn weights_round_trip_bit_exact(seed in any::<u64>(), h1 in 1usize..40, h2 in 1usize..20) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let net = QNetwork::random(&[6, h1, h2, 11], &mut rng).unwrap();
        let mut buf = Vec::new();
        data::write_weights(&mut buf, &net).unwrap();
        let back = data::read_weights(&buf, Some(&[6, h1, h2, 11])).unwrap();
        let bits = |n: &QNetwork| n.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&net), bits(&back));
    }
}

#[test]
fn fr_draws_are_white() {
    let spec = SyntheticSpec {
        seed: 17,
        dt_seconds: 2,
        ..Default::default()
    };
    let p = data::synth_profile(&spec).unwrap();
    assert_eq!(p.len(), 43_200);
    let n = p.fr.len() as f64;
    let mean = p.fr.iter().sum::<f64>() / n;
    let var: f64 = p.fr.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let cov: f64 =
        p.fr.windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>();
    assert!(
        (cov / var).abs() < 0.02,
        "lag-1 autocorrelation {}",
        cov / var
    );
}

#[test]
fn load_profile_lengths_follow_step() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        seed: 3,
        ..Default::default()
    };
    let (price, fr) = data::synth_raw_series(&spec, 1_600_000_000).unwrap();
    assert_eq!((price.len(), fr.len()), (288, 43_200));
    let pp = dir.path().join("d_price.csv");
    let fp = dir.path().join("d_fr.csv");
    let vals = |rows: &[(i64, f64)]| rows.iter().map(|r| r.1).collect::<Vec<_>>();
    data::write_series(
        std::fs::File::create(&pp).unwrap(),
        1_600_000_000,
        300,
        &vals(&price),
    )
    .unwrap();
    data::write_series(
        std::fs::File::create(&fp).unwrap(),
        1_600_000_000,
        2,
        &vals(&fr),
    )
    .unwrap();
    assert_eq!(data::load_profile(&pp, &fp, 2).unwrap().len(), 43_200);
    let p10 = data::load_profile(&pp, &fp, 10).unwrap();
    assert_eq!(p10.len(), 8_640);
    assert_eq!(p10.id, "d");

    let empty = dir.path().join("empty_fr.csv");
    std::fs::write(&empty, "unix_epoch_seconds,value\n").unwrap();
    assert!(matches!(
        data::load_profile(&pp, &empty, 10),
        Err(Error::Empty(_))
    ));
    std::fs::write(&empty, "unix_epoch_seconds,value\n0,NaN\n").unwrap();
    assert!(data::load_profile(&pp, &empty, 10).is_err());
}
