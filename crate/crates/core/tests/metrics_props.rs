mod common;

use proptest::prelude::*;

use scengen_core::metrics::{
    abnormal_lat_accel_fraction, aggregate_campaign, collision_indicator, episode_metrics, kl_divergence,
    lateral_accelerations, min_ttc, CollisionConfig, EpisodeMetrics, KinematicSamples, MetricsError, DEFAULT_TTC_CAP,
};
use scengen_core::scene::{normalize_angle, TrajectoryPoint, Vec2};

fn moved(traj: &[TrajectoryPoint], angle: f64, shift: Vec2) -> Vec<TrajectoryPoint> {
    traj.iter()
        .map(|p| {
            let w = p.position().rotate(angle) + shift;
            TrajectoryPoint::new(p.t, w.x, w.y, normalize_angle(p.heading + angle), p.speed)
        })
        .collect()
}

proptest! {
    #[test]
    fn indicator_matches_scan(seed in any::<u64>(), eps in 0.5..6.0f64) {
        let (a, b) = common::random_pair(&mut common::rng(seed));
        let cfg = CollisionConfig::center_distance(eps);
        let scan = a.iter().zip(&b).position(|(p, q)| p.position().distance(q.position()) <= eps);
        prop_assert_eq!(collision_indicator(&a, &b, &cfg).unwrap(), scan);
    }

    #[test]
    fn contact_means_zero_ttc(seed in any::<u64>()) {
        let (a, b) = common::converging_pair(&mut common::rng(seed));
        let cfg = CollisionConfig::center_distance(2.0);
        let m = episode_metrics(&a, &[&b], &cfg, DEFAULT_TTC_CAP).unwrap();
        prop_assert_eq!(m.collided, m.collision_step.is_some());
        if m.collided {
            prop_assert_eq!(m.min_ttc, Some(0.0));
            prop_assert!(m.min_separation <= 2.0);
        }
        if let Some(t) = min_ttc(&a, &b, &cfg, DEFAULT_TTC_CAP).unwrap() {
            prop_assert!((0.0..=DEFAULT_TTC_CAP).contains(&t));
        }
    }

    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(-50.0..50.0f64, 1..200), q in prop::collection::vec(-50.0..50.0f64, 1..200), bins in 2usize..80) {
        prop_assert!(kl_divergence(&p, &q, bins).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p, bins).unwrap().abs() <= 1e-9);
        // the same multiset in another order bins identically
        let mut shuffled = p.clone();
        shuffled.reverse();
        prop_assert!(kl_divergence(&p, &shuffled, bins).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn abnormal_fraction_is_bounded_and_rigid(seed in any::<u64>(), angle in -3.1..3.1f64, dx in -300.0..300.0f64, dy in -300.0..300.0f64, threshold in 0.5..8.0f64) {
        let traj = common::random_walk(&mut common::rng(seed), 40, Vec2::ZERO);
        let f = abnormal_lat_accel_fraction(&traj, threshold).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let other = moved(&traj, angle, Vec2::new(dx, dy));
        let (la, lb) = (lateral_accelerations(&traj).unwrap(), lateral_accelerations(&other).unwrap());
        for (x, y) in la.iter().zip(&lb) {
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()));
        }
        // only values within rounding of the threshold could flip
        if la.iter().all(|a| (a.abs() - threshold).abs() > 1e-6) {
            prop_assert_eq!(f, abnormal_lat_accel_fraction(&other, threshold).unwrap());
        }
    }

    #[test]
    fn campaign_fractions_are_bounded(flags in prop::collection::vec((any::<bool>(), prop::option::of(0.0..10.0f64)), 1..40)) {
        let episodes: Vec<EpisodeMetrics> = flags
            .iter()
            .map(|&(c, t)| EpisodeMetrics { collided: c, collision_step: c.then_some(3), min_ttc: if c { Some(0.0) } else { t }, min_separation: 1.0 })
            .collect();
        let samples = KinematicSamples { speeds: vec![1.0, 2.0, 3.0], accels: vec![0.0, 0.5], lat_accels: vec![0.1, 5.0] };
        let m = aggregate_campaign(&episodes, &samples, &samples).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.collision_rate));
        prop_assert!((0.0..=1.0).contains(&m.abnormal_lat_accel_fraction));
        prop_assert!(m.kl_speed >= 0.0 && m.kl_accel >= 0.0);
        let finite: Vec<f64> = episodes.iter().filter_map(|e| e.min_ttc).collect();
        prop_assert_eq!(m.finite_ttc_count, finite.len());
        match m.mean_min_ttc {
            Some(mean) => prop_assert!((mean - finite.iter().sum::<f64>() / finite.len() as f64).abs() < 1e-12),
            None => prop_assert!(finite.is_empty()),
        }
    }
}

#[test]
fn mismatched_lengths_are_rejected() {
    let (a, b) = common::random_pair(&mut common::rng(5));
    let cfg = CollisionConfig::center_distance(2.0);
    let short = &b[..b.len() - 1];
    assert!(matches!(collision_indicator(&a, short, &cfg), Err(MetricsError::InvalidArgument(_))));
    assert!(matches!(min_ttc(&a, short, &cfg, 10.0), Err(MetricsError::InvalidArgument(_))));
    assert!(min_ttc(&a, &b, &cfg, 0.0).is_err());
    assert!(kl_divergence(&[], &[1.0], 10).is_err());
    assert!(kl_divergence(&[1.0], &[1.0], 1).is_err());
    assert!(aggregate_campaign(&[], &KinematicSamples::default(), &KinematicSamples::default()).is_err());
}

#[test]
fn documented_examples() {
    let cfg = CollisionConfig::center_distance(2.0);
    let east: Vec<_> = (0..30).map(|k| TrajectoryPoint::new(k as f64 * 0.1, k as f64, 0.0, 0.0, 10.0)).collect();
    let north: Vec<_> = (0..30)
        .map(|k| TrajectoryPoint::new(k as f64 * 0.1, 10.0, -10.0 + k as f64, std::f64::consts::FRAC_PI_2, 10.0))
        .collect();
    let offset: Vec<_> = east.iter().map(|p| TrajectoryPoint { y: 10.0, ..*p }).collect();
    assert_eq!(collision_indicator(&east, &east, &cfg).unwrap(), Some(0));
    assert_eq!(collision_indicator(&east, &offset, &cfg).unwrap(), None);
    // separation is sqrt(2) * |10 - k|, first within 2 m at k = 9
    assert_eq!(collision_indicator(&east, &north, &cfg).unwrap(), Some(9));

    let tiny = CollisionConfig::center_distance(1e-9);
    let ego = [TrajectoryPoint::new(0.0, 0.0, 0.0, 0.0, 5.0)];
    let bac = [TrajectoryPoint::new(0.0, 20.0, 0.0, std::f64::consts::PI, 5.0)];
    approx::assert_abs_diff_eq!(min_ttc(&ego, &bac, &tiny, 10.0).unwrap().unwrap(), 2.0, epsilon = 1e-6);
    let away = [TrajectoryPoint::new(0.0, 20.0, 0.0, 0.0, 5.0)];
    assert_eq!(min_ttc(&ego, &away, &cfg, 10.0).unwrap(), None);
}
