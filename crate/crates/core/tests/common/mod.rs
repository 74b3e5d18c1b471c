#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scengen_core::behaviors::{BinOp, Expr, Func, Var};
use scengen_core::scene::{
    normalize_angle, synth_scenario, Lane, LaneKind, MapGeometry, Scenario, SceneKind, Track, TrajectoryPoint, Vec2,
    DEFAULT_DT, DEFAULT_HISTORY_LEN, DEFAULT_HORIZON_LEN, DEFAULT_LENGTH, DEFAULT_WIDTH,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The 32-scenario desk campaign: straight seeds 1..=20, intersection seeds 1..=12.
pub fn campaign_suite() -> Vec<(String, Scenario)> {
    (1..=20)
        .map(|s| (format!("straight_{s:04}"), synth_scenario(SceneKind::Straight, s)))
        .chain((1..=12).map(|s| (format!("intersection_{s:04}"), synth_scenario(SceneKind::Intersection, s))))
        .collect()
}

/// A random-walk trajectory with uniform timestamps.
pub fn random_walk(rng: &mut ChaCha8Rng, n: usize, origin: Vec2) -> Vec<TrajectoryPoint> {
    let mut p = origin;
    let mut heading: f64 = rng.random_range(-PI..PI);
    let mut speed: f64 = rng.random_range(0.0..15.0);
    (0..n)
        .map(|k| {
            let point = TrajectoryPoint::new(k as f64 * 0.1, p.x, p.y, normalize_angle(heading), speed);
            heading += rng.random_range(-0.2..0.2);
            speed = (speed + rng.random_range(-0.8..0.8)).clamp(0.0, 20.0);
            p = p + Vec2::from_polar(speed * 0.1, heading);
            point
        })
        .collect()
}

/// Two trajectories starting close enough that contacts and near misses are common.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<TrajectoryPoint>, Vec<TrajectoryPoint>) {
    let n = rng.random_range(3..60);
    let a = random_walk(rng, n, Vec2::ZERO);
    let start = Vec2::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0));
    let b = random_walk(rng, n, start);
    (a, b)
}

/// Pair whose second member starts 10 to 40 m away, roughly heading at the first.
pub fn converging_pair(rng: &mut ChaCha8Rng) -> (Vec<TrajectoryPoint>, Vec<TrajectoryPoint>) {
    let n = rng.random_range(3..60);
    let a = random_walk(rng, n, Vec2::ZERO);
    let bearing: f64 = rng.random_range(-PI..PI);
    let start = Vec2::from_polar(rng.random_range(10.0..40.0), bearing);
    let mut b = random_walk(rng, n, start);
    let turn = normalize_angle(bearing + PI + rng.random_range(-0.4..0.4)) - b[0].heading;
    for p in &mut b {
        let w = (p.position() - start).rotate(turn) + start;
        *p = TrajectoryPoint::new(p.t, w.x, w.y, normalize_angle(p.heading + turn), p.speed);
    }
    (a, b)
}

fn straight_lane(id: &str, y: f64, eastbound: bool) -> Lane {
    let (a, b) = (Vec2::new(-300.0, y), Vec2::new(300.0, y));
    Lane {
        lane_id: id.into(),
        kind: LaneKind::Straight,
        centerline: if eastbound { vec![a, b] } else { vec![b, a] },
        successor_ids: vec![],
    }
}

fn lane(id: &str, kind: LaneKind, pts: &[(f64, f64)]) -> Lane {
    Lane {
        lane_id: id.into(),
        kind,
        centerline: pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
        successor_ids: vec![],
    }
}

/// Constant-velocity history ending at `(x, y)` at the current step.
fn history_track(id: &str, x: f64, y: f64, heading: f64, speed: f64) -> Track {
    let n = DEFAULT_HISTORY_LEN;
    let points = (0..n)
        .map(|k| {
            let back = (n - 1 - k) as f64 * DEFAULT_DT;
            let p = Vec2::new(x, y) - Vec2::from_polar(speed * back, heading);
            TrajectoryPoint::new(k as f64 * DEFAULT_DT, p.x, p.y, normalize_angle(heading), speed)
        })
        .collect();
    Track { vehicle_id: id.into(), length: DEFAULT_LENGTH, width: DEFAULT_WIDTH, points }
}

/// Scene with an ego and one critical vehicle, both given by current `(x, y, heading, speed)`.
pub fn hand_scene(lanes: Vec<Lane>, ego: (f64, f64, f64, f64), bac: (f64, f64, f64, f64)) -> Scenario {
    Scenario {
        map: MapGeometry { lanes },
        ego: history_track("ego", ego.0, ego.1, ego.2, ego.3),
        backgrounds: vec![history_track("bac", bac.0, bac.1, bac.2, bac.3)],
        critical_background_id: "bac".into(),
        dt: DEFAULT_DT,
        history_len: DEFAULT_HISTORY_LEN,
        horizon_len: DEFAULT_HORIZON_LEN,
    }
}

/// Applies the same rotation and translation to every coordinate of a scene.
pub fn rigidly_moved(s: &Scenario, angle: f64, shift: Vec2) -> Scenario {
    let place = |p: Vec2| p.rotate(angle) + shift;
    let track = |t: &Track| Track {
        points: t
            .points
            .iter()
            .map(|p| {
                let w = place(p.position());
                TrajectoryPoint::new(p.t, w.x, w.y, normalize_angle(p.heading + angle), p.speed)
            })
            .collect(),
        ..t.clone()
    };
    Scenario {
        map: MapGeometry {
            lanes: s
                .map
                .lanes
                .iter()
                .map(|l| Lane { centerline: l.centerline.iter().map(|&p| place(p)).collect(), ..l.clone() })
                .collect(),
        },
        ego: track(&s.ego),
        backgrounds: s.backgrounds.iter().map(track).collect(),
        ..s.clone()
    }
}

/// Fourteen scenes (two per builtin behavior) whose expected label follows from the
/// construction: lead or follower in the ego lane, alongside in the adjacent lane,
/// oncoming on a parallel lane, on a left-turn lane or a through lane crossing the ego
/// path, and adjacent but outside the alongside window.
pub fn labeled_cases() -> Vec<(&'static str, Scenario)> {
    let ego = (0.0, 0.0, 0.0, 10.0);
    let two = || vec![straight_lane("lane_0", 0.0, true), straight_lane("lane_1", 3.5, true)];
    let right = || vec![straight_lane("lane_0", 0.0, true), straight_lane("lane_1", -3.5, true)];
    let oncoming = || vec![straight_lane("lane_0", 0.0, true), straight_lane("lane_opp", 3.5, false)];
    let junction = |extra: Lane| vec![straight_lane("east_in", 0.0, true), extra];
    let left_turn = || {
        lane("west_left", LaneKind::LeftTurn, &[(80.0, 3.5), (34.0, 3.5), (30.0, 1.5), (28.0, -2.0), (28.0, -100.0)])
    };
    let north = || lane("north_in", LaneKind::Straight, &[(40.0, -150.0), (40.0, 150.0)]);
    let south = || lane("south_in", LaneKind::Straight, &[(36.5, 150.0), (36.5, -150.0)]);

    let cases = vec![
        ("Emergency Braking", hand_scene(two(), ego, (15.0, 0.0, 0.0, 8.0))),
        ("Emergency Braking", hand_scene(vec![straight_lane("lane_0", 0.0, true)], ego, (26.0, 0.2, 0.05, 11.0))),
        ("Close Car-following", hand_scene(two(), ego, (-10.0, 0.0, 0.0, 11.0))),
        ("Close Car-following", hand_scene(right(), ego, (-22.0, -0.3, 0.0, 12.0))),
        ("Aggressive Cut-in", hand_scene(two(), ego, (5.0, 3.5, 0.0, 10.0))),
        ("Aggressive Cut-in", hand_scene(right(), ego, (-2.0, -3.5, 0.1, 11.0))),
        ("Opposite Direction Intrusion", hand_scene(oncoming(), ego, (40.0, 3.5, PI, 10.0))),
        ("Opposite Direction Intrusion", hand_scene(oncoming(), ego, (75.0, 3.6, PI - 0.05, 13.0))),
        ("Intersection Rush-through Turn Left", hand_scene(junction(left_turn()), ego, (60.0, 3.5, PI, 6.0))),
        ("Intersection Rush-through Turn Left", hand_scene(junction(left_turn()), ego, (45.0, 3.5, PI, 4.0))),
        ("Intersection Rush-through Go-straight", hand_scene(junction(north()), ego, (40.0, -25.0, FRAC_PI_2, 5.0))),
        ("Intersection Rush-through Go-straight", hand_scene(junction(south()), ego, (36.5, 30.0, -FRAC_PI_2, 6.0))),
        ("Straight Lane Shift", hand_scene(two(), ego, (-15.0, 3.5, 0.0, 12.0))),
        ("Straight Lane Shift", hand_scene(right(), ego, (25.0, -3.5, 0.0, 9.0))),
    ];
    // the second case of each pair also moves the whole scene off the world axes
    cases
        .into_iter()
        .enumerate()
        .map(
            |(i, (label, s))| {
                if i % 2 == 1 {
                    (label, rigidly_moved(&s, 0.7 + i as f64, Vec2::new(120.0, -45.0)))
                } else {
                    (label, s)
                }
            },
        )
        .collect()
}

/// Random well-formed expression over the rule language. Literals are unsigned, as the
/// parser produces them; negation is always the unary operator.
pub fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return if rng.random_bool(0.5) {
            let v: f64 = rng.random_range(0.0..50.0);
            Expr::Num((v * 1000.0).round() / 1000.0)
        } else {
            Expr::Var(Var::ALL[rng.random_range(0..Var::ALL.len())])
        };
    }
    match rng.random_range(0..3) {
        0 => Expr::Neg(Box::new(random_expr(rng, depth - 1))),
        1 => {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][rng.random_range(0..5)];
            Expr::Binary(op, Box::new(random_expr(rng, depth - 1)), Box::new(random_expr(rng, depth - 1)))
        }
        _ => {
            let f = Func::ALL[rng.random_range(0..Func::ALL.len())];
            Expr::Call(f, (0..f.arity()).map(|_| random_expr(rng, depth - 1)).collect())
        }
    }
}
