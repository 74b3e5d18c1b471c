//! Surrogate safety metrics: the collision predicate, time-to-collision, histogram KL
//! divergence, lateral-acceleration realism and campaign aggregation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{three_point_curvature, TrajectoryPoint, Vec2, DEFAULT_LENGTH, DEFAULT_WIDTH};

pub const DEFAULT_EPSILON: f64 = 2.0;
pub const DEFAULT_TTC_CAP: f64 = 10.0;
pub const DEFAULT_KL_BINS: usize = 50;
pub const KL_SMOOTHING: f64 = 1e-6;
pub const DEFAULT_ABNORMAL_LAT_ACCEL: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    CenterDistance,
    OrientedRectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self { length: DEFAULT_LENGTH, width: DEFAULT_WIDTH }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionConfig {
    /// Centre-distance threshold in metres; also the TTC contact radius.
    pub epsilon: f64,
    pub mode: CollisionMode,
    /// Footprint used by both vehicles in oriented-rectangle mode.
    pub footprint: Footprint,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, mode: CollisionMode::CenterDistance, footprint: Footprint::default() }
    }
}

impl CollisionConfig {
    pub fn center_distance(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(MetricsError::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Contact test for a single pair of states.
    pub fn in_contact(&self, a: &TrajectoryPoint, b: &TrajectoryPoint) -> bool {
        match self.mode {
            CollisionMode::CenterDistance => a.position().distance(b.position()) <= self.epsilon,
            CollisionMode::OrientedRectangle => rectangles_overlap(a, b, self.footprint),
        }
    }
}

fn corners(p: &TrajectoryPoint, fp: Footprint) -> [Vec2; 4] {
    let c = p.position();
    let f = Vec2::from_polar(fp.length / 2.0, p.heading);
    let l = Vec2::from_polar(fp.width / 2.0, p.heading + std::f64::consts::FRAC_PI_2);
    [c + f + l, c + f - l, c - f - l, c - f + l]
}

// separating axis test over the four edge normals
fn rectangles_overlap(a: &TrajectoryPoint, b: &TrajectoryPoint, fp: Footprint) -> bool {
    let ca = corners(a, fp);
    let cb = corners(b, fp);
    let axes = [
        Vec2::from_polar(1.0, a.heading),
        Vec2::from_polar(1.0, a.heading + std::f64::consts::FRAC_PI_2),
        Vec2::from_polar(1.0, b.heading),
        Vec2::from_polar(1.0, b.heading + std::f64::consts::FRAC_PI_2),
    ];
    axes.iter().all(|axis| {
        let span = |cs: &[Vec2; 4]| {
            cs.iter()
                .map(|c| c.dot(*axis))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (a_lo, a_hi) = span(&ca);
        let (b_lo, b_hi) = span(&cb);
        a_hi >= b_lo && b_hi >= a_lo
    })
}

fn check_pair(ego: &[TrajectoryPoint], bac: &[TrajectoryPoint]) -> Result<()> {
    if ego.len() != bac.len() {
        return Err(MetricsError::InvalidArgument(format!(
            "future lengths differ: ego {} vs background {}",
            ego.len(),
            bac.len()
        )));
    }
    Ok(())
}

/// Earliest step at which the two futures are in contact, if any.
pub fn collision_indicator(
    ego_future: &[TrajectoryPoint],
    bac_future: &[TrajectoryPoint],
    config: &CollisionConfig,
) -> Result<Option<usize>> {
    config.check()?;
    check_pair(ego_future, bac_future)?;
    Ok(ego_future.iter().zip(bac_future).position(|(e, b)| config.in_contact(e, b)))
}

/// Smallest `tau >= 0` with `|rel_pos + rel_vel * tau| <= epsilon`, under constant velocity.
pub fn instantaneous_ttc(rel_pos: Vec2, rel_vel: Vec2, epsilon: f64) -> Option<f64> {
    let c = rel_pos.norm_sq() - epsilon * epsilon;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = rel_vel.norm_sq();
    if a < 1e-12 {
        return None;
    }
    let b = 2.0 * rel_pos.dot(rel_vel);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // c > 0 means both roots share a sign; the smaller is the first contact
    let tau = (-b - disc.sqrt()) / (2.0 * a);
    (tau >= 0.0).then_some(tau)
}

/// TTC between two states, using heading x speed as velocity.
pub fn state_ttc(ego: &TrajectoryPoint, bac: &TrajectoryPoint, epsilon: f64) -> Option<f64> {
    instantaneous_ttc(ego.position() - bac.position(), ego.velocity() - bac.velocity(), epsilon)
}

/// Minimum per-step TTC that does not exceed `ttc_cap`.
pub fn min_ttc(
    ego_future: &[TrajectoryPoint],
    bac_future: &[TrajectoryPoint],
    config: &CollisionConfig,
    ttc_cap: f64,
) -> Result<Option<f64>> {
    config.check()?;
    check_pair(ego_future, bac_future)?;
    if ttc_cap.is_nan() || ttc_cap <= 0.0 {
        return Err(MetricsError::InvalidArgument(format!("ttc_cap must be positive, got {ttc_cap}")));
    }
    Ok(ego_future
        .iter()
        .zip(bac_future)
        .filter_map(|(e, b)| state_ttc(e, b, config.epsilon))
        .filter(|&tau| tau <= ttc_cap)
        .min_by(f64::total_cmp))
}

/// Equal-width bin probabilities over `[lo, hi]` (values at `hi` fall into the last bin).
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in samples {
        let idx =
            if width > 0.0 { (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize } else { 0 };
        counts[idx] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

fn pooled_range(p: &[f64], q: &[f64]) -> (f64, f64) {
    p.iter().chain(q).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn smoothed(mut probs: Vec<f64>) -> Vec<f64> {
    let total = 1.0 + KL_SMOOTHING * probs.len() as f64;
    probs.iter_mut().for_each(|p| *p = (*p + KL_SMOOTHING) / total);
    probs
}

/// KL(P || Q) in nats between histograms of the two sample sets on their pooled range.
pub fn kl_divergence(samples_p: &[f64], samples_q: &[f64], bins: usize) -> Result<f64> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(MetricsError::InvalidArgument("KL divergence needs nonempty sample lists".into()));
    }
    if bins < 2 {
        return Err(MetricsError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if samples_p.iter().chain(samples_q).any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidArgument("non-finite sample".into()));
    }
    let (lo, hi) = pooled_range(samples_p, samples_q);
    let p = smoothed(histogram(samples_p, lo, hi, bins));
    let q = smoothed(histogram(samples_q, lo, hi, bins));
    let kl: f64 = p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum();
    Ok(kl.max(0.0))
}

fn check_uniform(traj: &[TrajectoryPoint]) -> Result<f64> {
    if traj.len() < 3 {
        return Err(MetricsError::InvalidArgument(format!("need at least 3 points, got {}", traj.len())));
    }
    let dt = traj[1].t - traj[0].t;
    if !(dt.is_finite() && dt > 0.0) || traj.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9) {
        return Err(MetricsError::InvalidArgument("trajectory timestamps are not uniformly spaced".into()));
    }
    Ok(dt)
}

/// `v^2 * kappa` at each interior sample, curvature from the circumscribed circle.
pub fn lateral_accelerations(traj: &[TrajectoryPoint]) -> Result<Vec<f64>> {
    check_uniform(traj)?;
    Ok(traj
        .windows(3)
        .map(|w| w[1].speed * w[1].speed * three_point_curvature(w[0].position(), w[1].position(), w[2].position()))
        .collect())
}

/// Central-difference speed derivative at each interior sample.
pub fn longitudinal_accelerations(traj: &[TrajectoryPoint]) -> Result<Vec<f64>> {
    let dt = check_uniform(traj)?;
    Ok(traj.windows(3).map(|w| (w[2].speed - w[0].speed) / (2.0 * dt)).collect())
}

pub fn abnormal_lat_accel_fraction(traj: &[TrajectoryPoint], threshold: f64) -> Result<f64> {
    let lat = lateral_accelerations(traj)?;
    Ok(lat.iter().filter(|a| a.abs() > threshold).count() as f64 / lat.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub collided: bool,
    pub collision_step: Option<usize>,
    pub min_ttc: Option<f64>,
    pub min_separation: f64,
}

/// Metrics of the ego against every background future, combined over vehicles.
pub fn episode_metrics(
    ego_future: &[TrajectoryPoint],
    bac_futures: &[&[TrajectoryPoint]],
    config: &CollisionConfig,
    ttc_cap: f64,
) -> Result<EpisodeMetrics> {
    let mut collision_step: Option<usize> = None;
    let mut ttc: Option<f64> = None;
    let mut min_separation = f64::INFINITY;
    for bac in bac_futures {
        if let Some(k) = collision_indicator(ego_future, bac, config)? {
            collision_step = Some(collision_step.map_or(k, |c| c.min(k)));
        }
        if let Some(t) = min_ttc(ego_future, bac, config, ttc_cap)? {
            ttc = Some(ttc.map_or(t, |c: f64| c.min(t)));
        }
        let sep = ego_future
            .iter()
            .zip(bac.iter())
            .map(|(e, b)| e.position().distance(b.position()))
            .fold(f64::INFINITY, f64::min);
        min_separation = min_separation.min(sep);
    }
    Ok(EpisodeMetrics { collided: collision_step.is_some(), collision_step, min_ttc: ttc, min_separation })
}

/// Pooled kinematic samples of a set of trajectories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicSamples {
    pub speeds: Vec<f64>,
    pub accels: Vec<f64>,
    pub lat_accels: Vec<f64>,
}

impl KinematicSamples {
    /// Adds one trajectory; those shorter than three points contribute speeds only.
    pub fn add_trajectory(&mut self, traj: &[TrajectoryPoint]) {
        self.speeds.extend(traj.iter().map(|p| p.speed));
        if let (Ok(lon), Ok(lat)) = (longitudinal_accelerations(traj), lateral_accelerations(traj)) {
            self.accels.extend(lon);
            self.lat_accels.extend(lat);
        }
    }

    pub fn abnormal_fraction(&self, threshold: f64) -> f64 {
        if self.lat_accels.is_empty() {
            return 0.0;
        }
        self.lat_accels.iter().filter(|a| a.abs() > threshold).count() as f64 / self.lat_accels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetrics {
    pub episodes: usize,
    /// Number of episodes contributing to `mean_min_ttc`.
    pub finite_ttc_count: usize,
    pub mean_min_ttc: Option<f64>,
    pub collision_rate: f64,
    pub kl_speed: f64,
    pub kl_accel: f64,
    pub abnormal_lat_accel_fraction: f64,
}

pub fn aggregate_campaign(
    episodes: &[EpisodeMetrics],
    raw_samples: &KinematicSamples,
    gen_samples: &KinematicSamples,
) -> Result<CampaignMetrics> {
    if episodes.is_empty() {
        return Err(MetricsError::InvalidArgument("campaign has no episodes".into()));
    }
    let finite: Vec<f64> = episodes.iter().filter_map(|e| e.min_ttc).collect();
    let mean_min_ttc = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    let collided = episodes.iter().filter(|e| e.collided).count();
    Ok(CampaignMetrics {
        episodes: episodes.len(),
        finite_ttc_count: finite.len(),
        mean_min_ttc,
        collision_rate: collided as f64 / episodes.len() as f64,
        kl_speed: kl_divergence(&gen_samples.speeds, &raw_samples.speeds, DEFAULT_KL_BINS)?,
        kl_accel: kl_divergence(&gen_samples.accels, &raw_samples.accels, DEFAULT_KL_BINS)?,
        abnormal_lat_accel_fraction: gen_samples.abnormal_fraction(DEFAULT_ABNORMAL_LAT_ACCEL),
    })
}
