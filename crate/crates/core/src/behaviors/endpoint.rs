use super::dsl::{Env, Var};
use super::library::BehaviorSpec;
use super::BehaviorError;
use crate::scene::{normalize_angle, to_ego_frame, Scenario, TrajectoryPoint, Vec2};

pub const LANE_WIDTH: f64 = 3.5;

const RANGE_SLACK: f64 = 1e-9;

fn route_ahead(scenario: &Scenario, state: &TrajectoryPoint) -> Option<crate::scene::Polyline> {
    let m = scenario.map.locate(state.position(), state.heading)?;
    Some(scenario.map.route_from(m.lane_index).tail_from(m.projection.s))
}

/// First point where the routes ahead of the ego and the critical vehicle cross (world frame).
pub fn path_crossing(scenario: &Scenario) -> Option<Vec2> {
    let k = scenario.current_index();
    let ego = route_ahead(scenario, &scenario.ego.points[k])?;
    let bac = route_ahead(scenario, &scenario.critical().points[k])?;
    ego.first_intersection(&bac).map(|(_, _, p)| p)
}

/// Rule environment in the ego frame at the current time.
pub fn build_env(scenario: &Scenario, y_acc: f64) -> Result<Env, BehaviorError> {
    let k = scenario.current_index();
    let pose = scenario.ego_pose();
    let ego = scenario.ego.points[k].to_frame(&pose)?;
    let bac = scenario.critical().points[k].to_frame(&pose)?;
    let cross_world = path_crossing(scenario).unwrap_or(scenario.ego.points[k].position());
    let cross = to_ego_frame(cross_world, &pose)?;
    Ok(Env::new()
        .with(Var::X, bac.x)
        .with(Var::Y, bac.y)
        .with(Var::H, bac.heading)
        .with(Var::V, bac.speed)
        .with(Var::A, y_acc)
        .with(Var::T, scenario.horizon())
        .with(Var::Time, scenario.current_time())
        .with(Var::Dt, scenario.dt)
        .with(Var::EgoX, ego.x)
        .with(Var::EgoY, ego.y)
        .with(Var::EgoH, ego.heading)
        .with(Var::EgoV, ego.speed)
        .with(Var::LaneW, LANE_WIDTH)
        .with(Var::CrossX, cross.x)
        .with(Var::CrossY, cross.y))
}

/// Endpoint in the frame of `env`, at time `t`.
pub fn endpoint_from_env(spec: &BehaviorSpec, env: &Env, t: f64) -> Result<TrajectoryPoint, BehaviorError> {
    let [x, y, heading, speed] = spec.rule.evaluate(env)?;
    Ok(TrajectoryPoint::new(t, x, y, normalize_angle(heading), speed.max(0.0)))
}

/// Endpoint of the critical vehicle at the end of the horizon, in ego-frame coordinates.
pub fn infer_endpoint_local(
    spec: &BehaviorSpec,
    scenario: &Scenario,
    y_acc: f64,
) -> Result<TrajectoryPoint, BehaviorError> {
    let (lo, hi) = spec.accel_range;
    if !(y_acc.is_finite() && y_acc >= lo - RANGE_SLACK && y_acc <= hi + RANGE_SLACK) {
        return Err(BehaviorError::InvalidArgument(format!(
            "acceleration {y_acc} outside [{lo}, {hi}] for `{}`",
            spec.label
        )));
    }
    let road = scenario.road_kind();
    if !spec.applicability.admits(road) {
        return Err(BehaviorError::NotApplicable { label: spec.label.display().to_string(), road });
    }
    let env = build_env(scenario, y_acc)?;
    endpoint_from_env(spec, &env, scenario.current_time() + scenario.horizon())
}

/// Endpoint of the critical vehicle at the end of the horizon, in world coordinates.
pub fn infer_endpoint(spec: &BehaviorSpec, scenario: &Scenario, y_acc: f64) -> Result<TrajectoryPoint, BehaviorError> {
    let local = infer_endpoint_local(spec, scenario, y_acc)?;
    Ok(local.from_frame(&scenario.ego_pose())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::library::{builtin, RUSH_THROUGH_GO_STRAIGHT};
    use crate::scene::{segment_intersection, synth_scenario, SceneKind};

    #[test]
    fn go_straight_targets_the_path_crossing() {
        let s = synth_scenario(SceneKind::Intersection, 7);
        let spec = builtin(RUSH_THROUGH_GO_STRAIGHT).unwrap();
        let end = infer_endpoint(&spec, &s, 2.5).unwrap();
        // oracle: brute-force segment intersections between the two lane centerlines
        let k = s.current_index();
        let lane_of = |p: &TrajectoryPoint| &s.map.lanes[s.map.locate(p.position(), p.heading).unwrap().lane_index];
        let a = lane_of(&s.ego.points[k]);
        let b = lane_of(&s.critical().points[k]);
        let mut crossings = Vec::new();
        for u in a.centerline.windows(2) {
            for w in b.centerline.windows(2) {
                if let Some((_, _, p)) = segment_intersection(u[0], u[1], w[0], w[1]) {
                    crossings.push(p);
                }
            }
        }
        assert!(!crossings.is_empty());
        let best = crossings.iter().map(|p| p.distance(end.position())).fold(f64::INFINITY, f64::min);
        assert!(best < 1.0, "endpoint {end:?} is {best} m from the crossing");
    }

    #[test]
    fn out_of_range_acceleration_is_rejected() {
        let s = synth_scenario(SceneKind::Intersection, 7);
        let spec = builtin(RUSH_THROUGH_GO_STRAIGHT).unwrap();
        assert!(matches!(infer_endpoint(&spec, &s, -1.0), Err(BehaviorError::InvalidArgument(_))));
        let straight = synth_scenario(SceneKind::Straight, 7);
        assert!(matches!(infer_endpoint(&spec, &straight, 1.0), Err(BehaviorError::NotApplicable { .. })));
    }
}
