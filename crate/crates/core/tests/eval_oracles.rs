//! Simulation oracles for the evaluation harness.

use perp_core::driver::Driver;
use perp_core::episode::{emissions_proxy, ConstantAdvisor, EmissionsModel, EpisodeRunner, EpisodeSpec};
use perp_core::eval::{
    compare, evaluate, grid_search_best_speed, optimal_uniform_speed, ArtifactLayout, EvalConfig, PolicyBundle,
    PolicyKind,
};
use perp_core::pcp::{PcpPolicy, SpeedActionSpace};
use perp_core::ring::{mean, IdmParams, RingConfig, RingEnv};
use perp_core::rng::rng_from;

fn short_eval(episodes: usize) -> EvalConfig {
    EvalConfig {
        episodes,
        warmup: 600,
        horizon: 1500,
        ..EvalConfig::default()
    }
}

#[test]
fn constant_advice_on_uniform_ring_keeps_its_speed() {
    let ring = RingConfig::default();
    let idm = IdmParams::default().noise_free();
    let env = RingEnv::uniform(&ring, &idm, 8.65, 0).unwrap();
    let runner = EpisodeRunner {
        ring: &ring,
        idm: &idm,
        spec: EpisodeSpec {
            warmup: 0,
            horizon: 6000,
            delta: 20,
        },
        emissions: EmissionsModel::default(),
        record_trace: false,
    };
    let out = runner
        .run_from(env, &mut Driver::Perfect, Some(&mut ConstantAdvisor(8.65)))
        .unwrap();
    assert!(!out.metrics.collided);
    assert!((out.metrics.avg_speed - 8.65).abs() < 0.1, "{}", out.metrics.avg_speed);
}

#[test]
fn all_idm_stays_below_equilibrium() {
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let v_eq = optimal_uniform_speed(&ring, &idm).unwrap();
    let r = evaluate(&PolicyBundle::idm(), &ring, &idm, &short_eval(4), 20, 3).unwrap();
    assert_eq!(r.collisions, 0);
    let avg = r.avg_speed.unwrap();
    assert!(avg < v_eq, "{avg} vs {v_eq}");
}

#[test]
fn no_policy_beats_the_physical_bound() {
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let bound = optimal_uniform_speed(&ring, &idm).unwrap() + 0.5;
    let pcp = PcpPolicy::new(SpeedActionSpace::default(), &mut rng_from(8, &[])).unwrap();
    let v_eq = bound - 0.5;
    for b in [PolicyBundle::idm(), PolicyBundle::osl(v_eq), PolicyBundle::pcp(&pcp)] {
        let r = evaluate(&b, &ring, &idm, &short_eval(3), 20, 5).unwrap();
        if let Some(avg) = r.avg_speed {
            assert!(avg <= bound, "{:?}: {avg}", b.kind);
        }
    }
}

#[test]
fn grid_search_agrees_with_analytic_root() {
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let v_eq = optimal_uniform_speed(&ring, &idm).unwrap();
    let candidates: Vec<f64> = (0..=12).map(|i| 7.0 + 0.25 * i as f64).collect();
    let (best, points) = grid_search_best_speed(&ring, &idm, &candidates, 1500, 1).unwrap();
    assert_eq!(points.len(), candidates.len());
    let best = best.expect("some candidate is collision-free");
    assert!((best - v_eq).abs() <= 0.5, "{best} vs {v_eq}");
}

#[test]
fn smooth_trace_emits_less_than_waves_at_equal_mean_speed() {
    let ring = RingConfig::default();
    let mut env = RingEnv::reset(&ring, &IdmParams::default(), 4).unwrap();
    env.warmup(600);
    let (mut speeds, mut accels) = (Vec::new(), Vec::new());
    for _ in 0..1000 {
        env.step_idm();
        speeds.push(env.speeds().to_vec());
        accels.push(env.accels().to_vec());
    }
    let v_bar = mean(&speeds.concat());
    let n = ring.n_vehicles;
    let flat_speeds = vec![vec![v_bar; n]; speeds.len()];
    let flat_accels = vec![vec![0.0; n]; speeds.len()];
    let m = EmissionsModel::default();
    let wave = emissions_proxy(&speeds, &accels, &m);
    let smooth = emissions_proxy(&flat_speeds, &flat_accels, &m);
    assert!(smooth < wave, "smooth {smooth} wave {wave}");
}

#[test]
fn evaluation_is_reproducible() {
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let pcp = PcpPolicy::new(SpeedActionSpace::default(), &mut rng_from(2, &[])).unwrap();
    let a = evaluate(&PolicyBundle::pcp(&pcp), &ring, &idm, &short_eval(3), 20, 11).unwrap();
    let b = evaluate(&PolicyBundle::pcp(&pcp), &ring, &idm, &short_eval(3), 20, 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn comparison_csv_is_bit_identical_across_runs() {
    let dir = std::env::temp_dir().join(format!("perp-eval-oracles-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let layout = ArtifactLayout::new(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    for seed in [0, 1] {
        PcpPolicy::new(SpeedActionSpace::default(), &mut rng_from(seed, &[]))
            .unwrap()
            .save(&layout.pcp(20, seed))
            .unwrap();
    }
    let ring = RingConfig::default();
    let idm = IdmParams::default();
    let policies = [PolicyKind::Idm, PolicyKind::Osl, PolicyKind::Pcp, PolicyKind::Perp];
    let run = || {
        let r = compare(&layout, &policies, &[20], &[0, 1], &ring, &idm, &short_eval(2)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        (r, buf)
    };
    let (r1, csv1) = run();
    let (_, csv2) = run();
    assert_eq!(csv1, csv2);
    // Three policies have what they need; the residual checkpoints are missing.
    assert_eq!(r1.rows.len(), 3 * 2);
    assert!(!r1.missing.is_empty());
    let text = String::from_utf8(csv1).unwrap();
    assert!(text.starts_with("policy,delta,seed,avg_speed,avg_std,collisions,emissions_proxy"));
    assert!(text.lines().any(|l| l.starts_with("pcp,20,mean,")));
}
