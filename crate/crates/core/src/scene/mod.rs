//! Scenario data model: tracks, lane geometry, the ego-centred frame, file I/O and the
//! synthetic scene generator.

mod geometry;
mod io;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{
    from_ego_frame, normalize_angle, segment_intersection, three_point_curvature, to_ego_frame, EgoPose, Polyline,
    Projection, Vec2,
};
pub use io::{load_scenario, parse_scenario, save_scenario, scenario_to_string};
pub use synthetic::{synth_scenario, SceneKind};

/// Default vehicle footprint (length, width) in metres.
pub const DEFAULT_LENGTH: f64 = 4.8;
pub const DEFAULT_WIDTH: f64 = 2.0;
pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HISTORY_LEN: usize = 11;
pub const DEFAULT_HORIZON_LEN: usize = 80;

const DT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schema error at `{path}`: {violation}")]
    Schema { path: String, violation: SchemaViolation },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaViolation {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("nonuniform dt: expected spacing {expected}, found {found}")]
    NonuniformDt { expected: f64, found: f64 },
    #[error("unknown critical background id `{0}`")]
    UnknownCriticalBackground(String),
    #[error("empty track")]
    EmptyTrack,
    #[error("{0}")]
    Invalid(String),
}

impl SceneError {
    pub(crate) fn schema(path: impl Into<String>, violation: SchemaViolation) -> Self {
        SceneError::Schema { path: path.into(), violation }
    }
}

/// One timestamped kinematic state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl TrajectoryPoint {
    pub fn new(t: f64, x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self { t, x, y, heading, speed }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.heading)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [self.t, self.x, self.y, self.heading, self.speed];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite field in {self:?}"));
        }
        if self.speed < 0.0 {
            return Err(format!("negative speed {}", self.speed));
        }
        if !(self.heading > -std::f64::consts::PI && self.heading <= std::f64::consts::PI) {
            return Err(format!("heading {} outside (-pi, pi]", self.heading));
        }
        Ok(())
    }

    /// Same state moved to the ego frame of `pose`.
    pub fn to_frame(&self, pose: &EgoPose) -> Result<TrajectoryPoint, SceneError> {
        let p = to_ego_frame(self.position(), pose)?;
        Ok(TrajectoryPoint { x: p.x, y: p.y, heading: pose.heading_to_local(self.heading), ..*self })
    }

    pub fn from_frame(&self, pose: &EgoPose) -> Result<TrajectoryPoint, SceneError> {
        let p = from_ego_frame(self.position(), pose)?;
        Ok(TrajectoryPoint { x: p.x, y: p.y, heading: pose.heading_from_local(self.heading), ..*self })
    }
}

/// A vehicle track. `points` holds the observed history and, optionally, the logged
/// future that continues it (`history_len + horizon_len` points in total).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub vehicle_id: String,
    pub length: f64,
    pub width: f64,
    pub points: Vec<TrajectoryPoint>,
}

impl Track {
    pub fn history(&self, history_len: usize) -> &[TrajectoryPoint] {
        &self.points[..history_len.min(self.points.len())]
    }

    pub fn logged_future(&self, history_len: usize) -> Option<&[TrajectoryPoint]> {
        (self.points.len() > history_len).then(|| &self.points[history_len..])
    }

    pub fn state_at(&self, index: usize) -> &TrajectoryPoint {
        &self.points[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneKind {
    Straight,
    LeftTurn,
    RightTurn,
}

impl LaneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LaneKind::Straight => "straight",
            LaneKind::LeftTurn => "left_turn",
            LaneKind::RightTurn => "right_turn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub lane_id: String,
    pub kind: LaneKind,
    pub centerline: Vec<Vec2>,
    pub successor_ids: Vec<String>,
}

impl Lane {
    pub fn polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapGeometry {
    pub lanes: Vec<Lane>,
}

/// Where a vehicle sits relative to the lane network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneMatch {
    pub lane_index: usize,
    pub projection: Projection,
}

impl MapGeometry {
    pub fn lane(&self, lane_id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.lane_id == lane_id)
    }

    /// Nearest lane whose local direction agrees with `heading` (within 90 degrees);
    /// falls back to the nearest lane overall.
    pub fn locate(&self, position: Vec2, heading: f64) -> Option<LaneMatch> {
        let mut aligned: Option<LaneMatch> = None;
        let mut any: Option<LaneMatch> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            let projection = lane.polyline().project(position);
            let m = LaneMatch { lane_index: i, projection };
            let closer = |cur: &Option<LaneMatch>| {
                cur.as_ref().is_none_or(|c| projection.distance < c.projection.distance - 1e-9)
            };
            if normalize_angle(projection.heading - heading).abs() < std::f64::consts::FRAC_PI_2 && closer(&aligned) {
                aligned = Some(m);
            }
            if closer(&any) {
                any = Some(m);
            }
        }
        aligned.or(any)
    }

    /// The lane's centerline followed by its first successor chain (cycle-safe).
    pub fn route_from(&self, lane_index: usize) -> Polyline {
        let mut pts = self.lanes[lane_index].centerline.clone();
        let mut visited = vec![lane_index];
        let mut current = lane_index;
        while let Some(next) =
            self.lanes[current].successor_ids.first().and_then(|id| self.lanes.iter().position(|l| &l.lane_id == id))
        {
            if visited.contains(&next) {
                break;
            }
            visited.push(next);
            for p in &self.lanes[next].centerline {
                if pts.last().is_none_or(|q: &Vec2| q.distance(*p) > 1e-9) {
                    pts.push(*p);
                }
            }
            current = next;
        }
        Polyline::new(pts)
    }

    /// True when any two lane centerlines cross or a turning lane exists.
    pub fn has_junction(&self) -> bool {
        if self.lanes.iter().any(|l| l.kind != LaneKind::Straight) {
            return true;
        }
        let lines: Vec<Polyline> = self.lanes.iter().map(Lane::polyline).collect();
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                if lines[i].first_intersection(&lines[j]).is_some() {
                    return true;
                }
            }
        }
        false
    }
}

/// Road layout class used for behaviour applicability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Straight,
    Intersection,
}

/// Map plus ego/background histories at a uniform timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: MapGeometry,
    pub ego: Track,
    pub backgrounds: Vec<Track>,
    pub critical_background_id: String,
    pub dt: f64,
    pub history_len: usize,
    pub horizon_len: usize,
}

impl Scenario {
    pub fn critical(&self) -> &Track {
        self.backgrounds
            .iter()
            .find(|b| b.vehicle_id == self.critical_background_id)
            .expect("validated scenario names an existing critical background")
    }

    pub fn current_index(&self) -> usize {
        self.history_len - 1
    }

    pub fn current_time(&self) -> f64 {
        self.ego.points[self.current_index()].t
    }

    /// Future duration `horizon_len * dt`.
    pub fn horizon(&self) -> f64 {
        self.horizon_len as f64 * self.dt
    }

    /// Ego frame anchored at the ego's current state.
    pub fn ego_pose(&self) -> EgoPose {
        let p = &self.ego.points[self.current_index()];
        EgoPose::new(p.position(), p.heading)
    }

    pub fn road_kind(&self) -> RoadKind {
        if self.map.has_junction() {
            RoadKind::Intersection
        } else {
            RoadKind::Straight
        }
    }

    /// Checks every invariant, naming the offending location on failure.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SceneError::schema(
                "dt",
                SchemaViolation::Invalid(format!("dt must be positive, got {}", self.dt)),
            ));
        }
        if self.history_len == 0 {
            return Err(SceneError::schema(
                "history_len",
                SchemaViolation::Invalid("history_len must be at least 1".into()),
            ));
        }
        if self.horizon_len == 0 {
            return Err(SceneError::schema(
                "horizon_len",
                SchemaViolation::Invalid("horizon_len must be at least 1".into()),
            ));
        }
        for (i, lane) in self.map.lanes.iter().enumerate() {
            let path = format!("map.lanes[{i}]");
            if lane.centerline.len() < 2 {
                return Err(SceneError::schema(
                    format!("{path}.centerline"),
                    SchemaViolation::Invalid("centerline needs at least 2 points".into()),
                ));
            }
            if lane.centerline.iter().any(|p| !p.is_finite()) {
                return Err(SceneError::schema(
                    format!("{path}.centerline"),
                    SchemaViolation::Invalid("non-finite coordinate".into()),
                ));
            }
            if lane.centerline.windows(2).all(|w| w[0].distance(w[1]) < 1e-12) {
                return Err(SceneError::schema(
                    format!("{path}.centerline"),
                    SchemaViolation::Invalid("degenerate centerline".into()),
                ));
            }
            for (j, succ) in lane.successor_ids.iter().enumerate() {
                if self.map.lane(succ).is_none() {
                    return Err(SceneError::schema(
                        format!("{path}.successor_ids[{j}]"),
                        SchemaViolation::Invalid(format!("unknown lane `{succ}`")),
                    ));
                }
            }
            if self.map.lanes[..i].iter().any(|l| l.lane_id == lane.lane_id) {
                return Err(SceneError::schema(
                    format!("{path}.lane_id"),
                    SchemaViolation::Invalid(format!("duplicate lane id `{}`", lane.lane_id)),
                ));
            }
        }
        self.validate_track(&self.ego, "ego")?;
        for (i, b) in self.backgrounds.iter().enumerate() {
            self.validate_track(b, &format!("backgrounds[{i}]"))?;
            if self.backgrounds[..i].iter().any(|o| o.vehicle_id == b.vehicle_id) || b.vehicle_id == self.ego.vehicle_id
            {
                return Err(SceneError::schema(
                    format!("backgrounds[{i}].vehicle_id"),
                    SchemaViolation::Invalid(format!("duplicate vehicle id `{}`", b.vehicle_id)),
                ));
            }
        }
        if !self.backgrounds.iter().any(|b| b.vehicle_id == self.critical_background_id) {
            return Err(SceneError::schema(
                "critical_background_id",
                SchemaViolation::UnknownCriticalBackground(self.critical_background_id.clone()),
            ));
        }
        let t_now = self.ego.points[self.current_index()].t;
        for (i, b) in self.backgrounds.iter().enumerate() {
            let tb = b.points[self.current_index()].t;
            if (tb - t_now).abs() > DT_TOLERANCE {
                return Err(SceneError::schema(
                    format!("backgrounds[{i}].points[{}]", self.current_index()),
                    SchemaViolation::Invalid(format!("track clock {tb} disagrees with ego clock {t_now}")),
                ));
            }
        }
        Ok(())
    }

    fn validate_track(&self, track: &Track, path: &str) -> Result<(), SceneError> {
        if track.points.is_empty() {
            return Err(SceneError::schema(format!("{path}.points"), SchemaViolation::EmptyTrack));
        }
        if !(track.length.is_finite() && track.length > 0.0) {
            return Err(SceneError::schema(
                format!("{path}.length"),
                SchemaViolation::Invalid("length must be positive".into()),
            ));
        }
        if !(track.width.is_finite() && track.width > 0.0) {
            return Err(SceneError::schema(
                format!("{path}.width"),
                SchemaViolation::Invalid("width must be positive".into()),
            ));
        }
        let n = track.points.len();
        if n != self.history_len && n != self.history_len + self.horizon_len {
            return Err(SceneError::schema(
                format!("{path}.points"),
                SchemaViolation::Invalid(format!(
                    "expected {} (history) or {} (history + future) points, found {n}",
                    self.history_len,
                    self.history_len + self.horizon_len
                )),
            ));
        }
        for (k, p) in track.points.iter().enumerate() {
            p.validate().map_err(|m| SceneError::schema(format!("{path}.points[{k}]"), SchemaViolation::Invalid(m)))?;
        }
        for (k, w) in track.points.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - self.dt).abs() > DT_TOLERANCE {
                return Err(SceneError::schema(
                    format!("{path}.points[{}]", k + 1),
                    SchemaViolation::NonuniformDt { expected: self.dt, found: step },
                ));
            }
        }
        Ok(())
    }
}

/// A scenario joined with generated futures for the ego and every background vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub scenario: Scenario,
    pub ego_future: Vec<TrajectoryPoint>,
    /// Keyed by vehicle id, in the scenario's background order.
    pub background_futures: Vec<(String, Vec<TrajectoryPoint>)>,
}

impl Rollout {
    pub fn background_future(&self, vehicle_id: &str) -> Option<&[TrajectoryPoint]> {
        self.background_futures.iter().find(|(id, _)| id == vehicle_id).map(|(_, f)| f.as_slice())
    }

    pub fn critical_future(&self) -> &[TrajectoryPoint] {
        self.background_future(&self.scenario.critical_background_id).expect("critical future present")
    }
}
