//! Scenario documents: strict JSON parsing and a canonical writer (sorted keys, six
//! decimal floats) so that saved files are byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Lane, LaneKind, MapGeometry, Scenario, SceneError, SchemaViolation, Track, TrajectoryPoint, Vec2};

const FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: u32,
    dt: f64,
    history_len: usize,
    horizon_len: usize,
    map: RawMap,
    ego: RawTrack,
    backgrounds: Vec<RawTrack>,
    critical_background_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    lanes: Vec<RawLane>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLane {
    lane_id: String,
    kind: LaneKind,
    centerline: Vec<[f64; 2]>,
    successor_ids: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrack {
    vehicle_id: String,
    length: f64,
    width: f64,
    points: Vec<[f64; 5]>,
}

impl From<RawTrack> for Track {
    fn from(raw: RawTrack) -> Self {
        Track {
            vehicle_id: raw.vehicle_id,
            length: raw.length,
            width: raw.width,
            points: raw
                .points
                .iter()
                .map(|&[t, x, y, heading, speed]| TrajectoryPoint { t, x, y, heading, speed })
                .collect(),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let violation = match message.strip_prefix("missing field `") {
            Some(rest) => SchemaViolation::MissingField(rest.split('`').next().unwrap_or_default().to_string()),
            None => SchemaViolation::Invalid(message),
        };
        SceneError::schema(path, violation)
    })?;
    if raw.version != FORMAT_VERSION {
        return Err(SceneError::schema(
            "version",
            SchemaViolation::Invalid(format!("unsupported version {}, expected {FORMAT_VERSION}", raw.version)),
        ));
    }
    let scenario = Scenario {
        map: MapGeometry {
            lanes: raw
                .map
                .lanes
                .into_iter()
                .map(|l| Lane {
                    lane_id: l.lane_id,
                    kind: l.kind,
                    centerline: l.centerline.iter().map(|&[x, y]| Vec2::new(x, y)).collect(),
                    successor_ids: l.successor_ids,
                })
                .collect(),
        },
        ego: raw.ego.into(),
        backgrounds: raw.backgrounds.into_iter().map(Track::from).collect(),
        critical_background_id: raw.critical_background_id,
        dt: raw.dt,
        history_len: raw.history_len,
        horizon_len: raw.horizon_len,
    };
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    scenario.validate()?;
    fs::write(path, scenario_to_string(scenario)).map_err(|source| SceneError::Io { path: path.to_path_buf(), source })
}

/// Minimal JSON tree whose writer fixes float formatting.
enum Canon {
    Obj(BTreeMap<&'static str, Canon>),
    Arr(Vec<Canon>),
    Float(f64),
    Int(u64),
    Str(String),
}

fn fmt_float(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

impl Canon {
    fn is_scalar(&self) -> bool {
        !matches!(self, Canon::Obj(_) | Canon::Arr(_))
    }

    fn write(&self, out: &mut String, indent: usize) {
        let pad = |n: usize| "  ".repeat(n);
        match self {
            Canon::Float(v) => out.push_str(&fmt_float(*v)),
            Canon::Int(v) => write!(out, "{v}").unwrap(),
            Canon::Str(s) => out.push_str(&serde_json::to_string(s).unwrap()),
            Canon::Arr(items) if items.iter().all(Canon::is_scalar) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.write(out, indent);
                }
                out.push(']');
            }
            Canon::Arr(items) => {
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    out.push_str(&pad(indent + 1));
                    item.write(out, indent + 1);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&pad(indent));
                out.push(']');
            }
            Canon::Obj(map) => {
                out.push_str("{\n");
                for (i, (k, v)) in map.iter().enumerate() {
                    write!(out, "{}\"{k}\": ", pad(indent + 1)).unwrap();
                    v.write(out, indent + 1);
                    if i + 1 < map.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&pad(indent));
                out.push('}');
            }
        }
    }
}

fn canon_track(track: &Track) -> Canon {
    let points = track
        .points
        .iter()
        .map(|p| Canon::Arr([p.t, p.x, p.y, p.heading, p.speed].into_iter().map(Canon::Float).collect()))
        .collect();
    Canon::Obj(BTreeMap::from([
        ("vehicle_id", Canon::Str(track.vehicle_id.clone())),
        ("length", Canon::Float(track.length)),
        ("width", Canon::Float(track.width)),
        ("points", Canon::Arr(points)),
    ]))
}

fn canon_lane(lane: &Lane) -> Canon {
    Canon::Obj(BTreeMap::from([
        ("lane_id", Canon::Str(lane.lane_id.clone())),
        ("kind", Canon::Str(lane.kind.as_str().to_string())),
        (
            "centerline",
            Canon::Arr(
                lane.centerline.iter().map(|p| Canon::Arr(vec![Canon::Float(p.x), Canon::Float(p.y)])).collect(),
            ),
        ),
        ("successor_ids", Canon::Arr(lane.successor_ids.iter().cloned().map(Canon::Str).collect())),
    ]))
}

/// Canonical text form of a scenario.
pub fn scenario_to_string(scenario: &Scenario) -> String {
    let doc = Canon::Obj(BTreeMap::from([
        ("version", Canon::Int(FORMAT_VERSION as u64)),
        ("dt", Canon::Float(scenario.dt)),
        ("history_len", Canon::Int(scenario.history_len as u64)),
        ("horizon_len", Canon::Int(scenario.horizon_len as u64)),
        (
            "map",
            Canon::Obj(BTreeMap::from([("lanes", Canon::Arr(scenario.map.lanes.iter().map(canon_lane).collect()))])),
        ),
        ("ego", canon_track(&scenario.ego)),
        ("backgrounds", Canon::Arr(scenario.backgrounds.iter().map(canon_track).collect())),
        ("critical_background_id", Canon::Str(scenario.critical_background_id.clone())),
    ]));
    let mut out = String::new();
    doc.write(&mut out, 0);
    out.push('\n');
    out
}
