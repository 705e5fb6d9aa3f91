use perp_core::ring::{std_dev, EgoControl, IdmParams, RingConfig, RingEnv, EGO};
use proptest::prelude::*;

fn gaps(env: &RingEnv) -> Vec<f64> {
    let n = env.state().positions.len();
    (0..n).map(|i| env.headway(i)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positions_stay_wrapped_and_ordered(seed in 0u64..1000, cmds in prop::collection::vec(0.0f64..12.0, 1..150)) {
        let cfg = RingConfig::default();
        let mut env = RingEnv::reset(&cfg, &IdmParams::default(), seed).unwrap();
        env.warmup(50);
        for c in cmds {
            let out = env.step(c);
            for &p in &env.state().positions {
                prop_assert!((0.0..cfg.circumference).contains(&p));
            }
            for &v in env.speeds() {
                prop_assert!(v >= 0.0 && v.is_finite());
            }
            let g = gaps(&env);
            let total: f64 = g.iter().sum::<f64>() + cfg.n_vehicles as f64 * cfg.vehicle_length;
            prop_assert!((total - cfg.circumference).abs() < 1e-6, "gaps must tile the ring");
            for (i, gi) in g.iter().enumerate() {
                if i != EGO && i + 1 != cfg.n_vehicles {
                    prop_assert!(*gi > 0.0);
                }
            }
            if out.collided {
                break;
            }
        }
    }

    #[test]
    fn ego_speed_is_exactly_the_clamped_command(seed in 0u64..1000, c in -10.0f64..50.0) {
        let cfg = RingConfig::default();
        let mut env = RingEnv::reset(&cfg, &IdmParams::default(), seed).unwrap();
        env.warmup(10);
        env.step_with(EgoControl::Speed(c));
        prop_assert_eq!(env.speeds()[EGO], c.clamp(0.0, cfg.v_max));
    }
}

#[test]
fn waves_form_during_warmup() {
    let cfg = RingConfig::default();
    for seed in 0..5 {
        let mut env = RingEnv::reset(&cfg, &IdmParams::default(), seed).unwrap();
        env.warmup(600);
        let s = std_dev(env.speeds());
        assert!(s > 1.0, "seed {seed}: speed std {s}");
    }
}
