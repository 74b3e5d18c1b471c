use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dsl::{eval_expr, parse_rule, Env, Expr, Var};
use super::label::IntentLabel;
use super::BehaviorError;
use crate::scene::RoadKind;

/// The four endpoint expressions of a behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointRule {
    pub x: Expr,
    pub y: Expr,
    pub heading: Expr,
    pub speed: Expr,
}

pub const RULE_FIELDS: [&str; 4] = ["x", "y", "heading", "speed"];

impl EndpointRule {
    pub fn parse(x: &str, y: &str, heading: &str, speed: &str) -> Result<Self, BehaviorError> {
        let p = |field: &'static str, text: &str| {
            parse_rule(text).map_err(|source| BehaviorError::Parse { field, text: text.to_string(), source })
        };
        Ok(Self { x: p("x", x)?, y: p("y", y)?, heading: p("heading", heading)?, speed: p("speed", speed)? })
    }

    pub fn fields(&self) -> [(&'static str, &Expr); 4] {
        [("x", &self.x), ("y", &self.y), ("heading", &self.heading), ("speed", &self.speed)]
    }

    /// Evaluates all four expressions as `[x, y, heading, speed]`.
    pub fn evaluate(&self, env: &Env) -> Result<[f64; 4], BehaviorError> {
        let mut out = [0.0; 4];
        for (slot, (field, expr)) in out.iter_mut().zip(self.fields()) {
            *slot =
                eval_expr(expr, env).map_err(|source| BehaviorError::Eval { field, text: expr.to_string(), source })?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    Any,
    StraightOnly,
    IntersectionOnly,
}

impl Applicability {
    pub fn admits(self, road: RoadKind) -> bool {
        match self {
            Applicability::Any => true,
            Applicability::StraightOnly => road == RoadKind::Straight,
            Applicability::IntersectionOnly => road == RoadKind::Intersection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecSource {
    Builtin,
    Generated,
    Refined,
}

/// A behaviour: label, endpoint rule and the admissible acceleration interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSpec {
    pub label: IntentLabel,
    pub rule: EndpointRule,
    pub accel_range: (f64, f64),
    pub applicability: Applicability,
    pub source: SpecSource,
    pub provenance: Option<String>,
}

impl BehaviorSpec {
    /// Checks the structural invariants and evaluates the rule on a few canonical
    /// environments spanning the acceleration interval.
    pub fn self_check(&self) -> Result<(), BehaviorError> {
        let (lo, hi) = self.accel_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(BehaviorError::InvalidSpec(format!("accel range [{lo}, {hi}] is not an interval")));
        }
        if self.source != SpecSource::Builtin && self.provenance.as_deref().is_none_or(|p| p.trim().is_empty()) {
            return Err(BehaviorError::InvalidSpec("generated or refined specs need provenance text".into()));
        }
        for (field, expr) in self.rule.fields() {
            let reparsed = parse_rule(&expr.to_string()).map_err(|source| BehaviorError::Parse {
                field,
                text: expr.to_string(),
                source,
            })?;
            if &reparsed != expr {
                return Err(BehaviorError::InvalidSpec(format!("rule `{field}` does not survive printing")));
            }
        }
        for a in [lo, 0.5 * (lo + hi), hi] {
            self.rule.evaluate(&canonical_env(a))?;
        }
        Ok(())
    }

    pub fn clamp_accel(&self, a: f64) -> f64 {
        a.clamp(self.accel_range.0, self.accel_range.1)
    }
}

/// A representative ego-frame environment: background 20 m ahead in the adjacent lane.
pub fn canonical_env(a: f64) -> Env {
    Env::new()
        .with(Var::X, 20.0)
        .with(Var::Y, 3.5)
        .with(Var::H, 0.0)
        .with(Var::V, 10.0)
        .with(Var::A, a)
        .with(Var::T, 8.0)
        .with(Var::Time, 1.0)
        .with(Var::Dt, 0.1)
        .with(Var::EgoX, 0.0)
        .with(Var::EgoY, 0.0)
        .with(Var::EgoH, 0.0)
        .with(Var::EgoV, 10.0)
        .with(Var::LaneW, 3.5)
        .with(Var::CrossX, 30.0)
        .with(Var::CrossY, 0.0)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    x: String,
    y: String,
    heading: String,
    speed: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    label: String,
    display: String,
    rule: RawRule,
    accel_range: [f64; 2],
    applicability: Applicability,
    source: SpecSource,
    provenance: Option<String>,
}

impl Serialize for BehaviorSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawSpec {
            label: self.label.canonical().to_string(),
            display: self.label.display().to_string(),
            rule: RawRule {
                x: self.rule.x.to_string(),
                y: self.rule.y.to_string(),
                heading: self.rule.heading.to_string(),
                speed: self.rule.speed.to_string(),
            },
            accel_range: [self.accel_range.0, self.accel_range.1],
            applicability: self.applicability,
            source: self.source,
            provenance: self.provenance.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BehaviorSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawSpec::deserialize(d)?;
        let label = IntentLabel::new(&raw.display).ok_or_else(|| D::Error::custom("display label has no tokens"))?;
        if label.canonical() != raw.label {
            return Err(D::Error::custom(format!(
                "label `{}` is not the canonical form of display `{}`",
                raw.label, raw.display
            )));
        }
        let rule = EndpointRule::parse(&raw.rule.x, &raw.rule.y, &raw.rule.heading, &raw.rule.speed)
            .map_err(D::Error::custom)?;
        let spec = BehaviorSpec {
            label,
            rule,
            accel_range: (raw.accel_range[0], raw.accel_range[1]),
            applicability: raw.applicability,
            source: raw.source,
            provenance: raw.provenance,
        };
        if spec.accel_range.0 > spec.accel_range.1 {
            return Err(D::Error::custom("accel_range minimum exceeds maximum"));
        }
        Ok(spec)
    }
}

pub const EMERGENCY_BRAKING: &str = "Emergency Braking";
pub const CLOSE_CAR_FOLLOWING: &str = "Close Car-following";
pub const AGGRESSIVE_CUT_IN: &str = "Aggressive Cut-in";
pub const OPPOSITE_DIRECTION_INTRUSION: &str = "Opposite Direction Intrusion";
pub const RUSH_THROUGH_TURN_LEFT: &str = "Intersection Rush-through Turn Left";
pub const RUSH_THROUGH_GO_STRAIGHT: &str = "Intersection Rush-through Go-straight";
pub const STRAIGHT_LANE_SHIFT: &str = "Straight Lane Shift";

pub const BUILTIN_NAMES: [&str; 7] = [
    EMERGENCY_BRAKING,
    CLOSE_CAR_FOLLOWING,
    AGGRESSIVE_CUT_IN,
    OPPOSITE_DIRECTION_INTRUSION,
    RUSH_THROUGH_TURN_LEFT,
    RUSH_THROUGH_GO_STRAIGHT,
    STRAIGHT_LANE_SHIFT,
];

// Longitudinal travel with the requested acceleration applied for at most 3 s.
const TRAVEL: &str = "(v * T + a * min(T, 3) * (T - 0.5 * min(T, 3)))";

struct Builtin {
    name: &'static str,
    rule: [String; 4],
    accel: (f64, f64),
    applicability: Applicability,
}

fn builtin_table() -> Vec<Builtin> {
    let stop = "v ^ 2 / (2 * abs(a))";
    let follow = "(ego_v * T - 2.5 / (1 + abs(a)))";
    let cut = "(ego_v * T + 4 / (1 + abs(a)))";
    // signed distance of the background's travelled point along the ego path line
    let along =
        format!("((x + {TRAVEL} * cos(h) - ego_x) * cos(ego_h) + (y + {TRAVEL} * sin(h) - ego_y) * sin(ego_h))");
    // +1 when the ego is to the left of the background's heading, -1 when to the right
    let side = "sign((ego_y - y) * cos(h) - (ego_x - x) * sin(h))";
    vec![
        Builtin {
            name: EMERGENCY_BRAKING,
            rule: [format!("x + cos(h) * {stop}"), format!("y + sin(h) * {stop}"), "h".into(), "0".into()],
            accel: (-8.0, -2.0),
            applicability: Applicability::Any,
        },
        Builtin {
            name: CLOSE_CAR_FOLLOWING,
            rule: [
                format!("ego_x + cos(ego_h) * {follow}"),
                format!("ego_y + sin(ego_h) * {follow}"),
                "ego_h".into(),
                "ego_v + abs(a)".into(),
            ],
            accel: (-2.0, 3.0),
            applicability: Applicability::Any,
        },
        Builtin {
            name: AGGRESSIVE_CUT_IN,
            rule: [
                format!("ego_x + cos(ego_h) * {cut}"),
                format!("ego_y + sin(ego_h) * {cut}"),
                "ego_h".into(),
                "max(ego_v - abs(a), 0)".into(),
            ],
            accel: (-2.0, 3.0),
            applicability: Applicability::Any,
        },
        Builtin {
            name: OPPOSITE_DIRECTION_INTRUSION,
            rule: [
                format!("ego_x + cos(ego_h) * {along}"),
                format!("ego_y + sin(ego_h) * {along}"),
                "h".into(),
                "max(v + a * min(T, 3), 0)".into(),
            ],
            accel: (-2.0, 3.0),
            applicability: Applicability::Any,
        },
        Builtin {
            name: RUSH_THROUGH_TURN_LEFT,
            rule: ["cross_x".into(), "cross_y".into(), "h + 0.9273".into(), "clamp(v + 1.2 * a, 0, 8)".into()],
            accel: (0.0, 3.0),
            applicability: Applicability::IntersectionOnly,
        },
        Builtin {
            name: RUSH_THROUGH_GO_STRAIGHT,
            rule: ["cross_x".into(), "cross_y".into(), "h".into(), "clamp(v + 2 * a, 0, 15)".into()],
            accel: (0.0, 3.0),
            applicability: Applicability::IntersectionOnly,
        },
        Builtin {
            name: STRAIGHT_LANE_SHIFT,
            rule: [
                format!("x + cos(h) * {TRAVEL} - sin(h) * lane_w * {side}"),
                format!("y + sin(h) * {TRAVEL} + cos(h) * lane_w * {side}"),
                "h".into(),
                "max(v + a * min(T, 3), 0)".into(),
            ],
            accel: (-2.0, 3.0),
            applicability: Applicability::Any,
        },
    ]
}

/// The seven builtin safety-critical behaviours, each self-checked.
pub fn builtin_library() -> Vec<BehaviorSpec> {
    builtin_table()
        .into_iter()
        .map(|b| {
            let [x, y, h, v] = &b.rule;
            let spec = BehaviorSpec {
                label: IntentLabel::new(b.name).expect("builtin names are nonempty"),
                rule: EndpointRule::parse(x, y, h, v).unwrap_or_else(|e| panic!("builtin `{}`: {e}", b.name)),
                accel_range: b.accel,
                applicability: b.applicability,
                source: SpecSource::Builtin,
                provenance: None,
            };
            spec.self_check().unwrap_or_else(|e| panic!("builtin `{}` failed self-check: {e}", b.name));
            spec
        })
        .collect()
}

pub fn builtin(name: &str) -> Option<BehaviorSpec> {
    let canonical = IntentLabel::new(name)?.canonical().to_string();
    builtin_library().into_iter().find(|s| s.label.canonical() == canonical)
}
