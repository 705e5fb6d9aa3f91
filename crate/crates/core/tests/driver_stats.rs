//! Monte Carlo checks of the driver model and the speed-table sampler.

use perp_core::driver::{apply_offset, sample_trait, DriverProfile, TraitMean};
use perp_core::nn::Categorical;
use perp_core::pcp::SpeedActionSpace;
use perp_core::rng::rng_from;

const N: usize = 100_000;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn offset_moments_per_trait() {
    for t in TraitMean::ALL {
        let mut d = DriverProfile::new(t, rng_from(17, &[t.label() as u64]));
        let ks: Vec<f64> = (0..N).map(|_| d.sample_offset()).collect();
        let (m, s) = moments(&ks);
        assert!((m - t.value()).abs() < 0.02, "trait {}: mean {m}", t.value());
        assert!((s - 1.0).abs() < 0.02, "trait {}: std {s}", t.value());
    }
}

#[test]
fn executed_speed_around_advice() {
    let t = TraitMean::from_value(2.5).unwrap();
    let mut d = DriverProfile::new(t, rng_from(3, &[]));
    let xs: Vec<f64> = (0..N).map(|_| d.act(20.0, 35.0)).collect();
    let (m, s) = moments(&xs);
    assert!((m - 22.5).abs() < 0.02, "{m}");
    assert!((s - 1.0).abs() < 0.02, "{s}");
}

#[test]
fn unclamped_deviation_matches_trait() {
    // Advice far from both clamp edges, so every sample is unclamped.
    for t in TraitMean::ALL {
        let mut d = DriverProfile::new(t, rng_from(5, &[t.label() as u64]));
        let dev: Vec<f64> = (0..N)
            .map(|_| d.act(17.5, 35.0) - 17.5)
            .filter(|x| x.abs() < 17.5)
            .collect();
        assert!(dev.len() > N - 10);
        let (m, s) = moments(&dev);
        assert!((m - t.value()).abs() < 0.02 && (s - 1.0).abs() < 0.02, "{m} {s}");
    }
}

#[test]
fn clamp_edges() {
    assert_eq!(apply_offset(2.0, -5.0, 35.0), 0.0);
    assert_eq!(apply_offset(34.0, 5.0, 35.0), 35.0);
    assert_eq!(apply_offset(10.0, 2.5, 35.0), 12.5);
}

#[test]
fn traits_drawn_uniformly() {
    let mut rng = rng_from(11, &[]);
    let mut counts = [0usize; 5];
    for _ in 0..N {
        counts[sample_trait(&mut rng).label()] += 1;
    }
    for c in counts {
        let f = c as f64 / N as f64;
        assert!((f - 0.2).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn uniform_logits_sample_table_uniformly() {
    let space = SpeedActionSpace::default();
    let dist = Categorical::from_logits(&vec![0.0; space.count]).unwrap();
    let mut rng = rng_from(23, &[]);
    let mut counts = vec![0usize; space.count];
    for _ in 0..N {
        counts[dist.sample(&mut rng)] += 1;
    }
    let expected = N as f64 / space.count as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 17 degrees of freedom, p = 0.001.
    assert!(chi2 < 40.79, "chi2 {chi2}");
}
