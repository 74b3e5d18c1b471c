//! Behavioural-intent analysis: the six-block prompt, verdict parsing, LLM-backed analysis
//! and a deterministic rule-based analyzer.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{
    path_crossing, similarity, IntentLabel, AGGRESSIVE_CUT_IN, BUILTIN_NAMES, CLOSE_CAR_FOLLOWING, EMERGENCY_BRAKING,
    LANE_WIDTH, OPPOSITE_DIRECTION_INTRUSION, RUSH_THROUGH_GO_STRAIGHT, RUSH_THROUGH_TURN_LEFT, STRAIGHT_LANE_SHIFT,
};
use crate::llmio::{ChatClient, ChatMessage, ChatRequest, LlmError};
use crate::scene::{normalize_angle, LaneKind, RoadKind, Scenario, Track, TrajectoryPoint};

/// Retrieval distance threshold: labels closer than this count as known.
pub const DEFAULT_RET_THRESHOLD: f64 = 0.4;

pub const MAX_TABLE_ROWS: usize = 11;

pub const BLOCK_HEADERS: [&str; 6] = [
    "## Role",
    "## Task Description",
    "## Structure of Input Variables",
    "## Analysis Requirements",
    "## Rules for Reference",
    "## Output Requirements",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        })
    }
}

impl FromStr for RiskLevel {
    type Err = VerdictError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(RiskLevel::Low),
            "medium" => Ok(RiskLevel::Medium),
            "high" => Ok(RiskLevel::High),
            _ => Err(VerdictError::BadRisk(s.trim().to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerVerdict {
    pub intent: IntentLabel,
    pub risk_level: RiskLevel,
    pub y_acc: f64,
    pub rationale: String,
    pub novel: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerdictError {
    #[error("reply has no `BEHAVIOR: ... | RISK: ... | ACCEL: ...` line")]
    MissingVerdict,
    #[error("behavior name is empty")]
    EmptyBehavior,
    #[error("risk level `{0}` is not one of low, medium, high")]
    BadRisk(String),
    #[error("acceleration `{0}` is not a finite number")]
    BadAccel(String),
}

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(
        "analyzer reply unparsable after one repair attempt ({reason})\nfirst reply:\n{first}\nsecond reply:\n{second}"
    )]
    Unparsable { reason: VerdictError, first: String, second: String },
}

/// The six prompt blocks and their concatenation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub role: String,
    pub task_description: String,
    pub input_structure: String,
    pub analysis_requirements: String,
    pub rules_for_reference: String,
    pub output_requirements: String,
    pub rendered: String,
}

impl PromptBundle {
    pub fn blocks(&self) -> [&str; 6] {
        [
            &self.role,
            &self.task_description,
            &self.input_structure,
            &self.analysis_requirements,
            &self.rules_for_reference,
            &self.output_requirements,
        ]
    }

    /// Role and task description, sent as the system message.
    pub fn system_text(&self) -> String {
        render_blocks(&self.blocks()[..2], 0)
    }

    /// Remaining four blocks, sent as the user message.
    pub fn user_text(&self) -> String {
        render_blocks(&self.blocks()[2..], 2)
    }
}

fn render_blocks(blocks: &[&str], first_header: usize) -> String {
    blocks
        .iter()
        .enumerate()
        .map(|(i, body)| format!("{}\n{}", BLOCK_HEADERS[first_header + i], body.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn downsample(points: &[TrajectoryPoint], rows: usize) -> Vec<TrajectoryPoint> {
    if points.len() <= rows {
        return points.to_vec();
    }
    // evenly spaced, always keeping the first and the current sample
    (0..rows).map(|i| points[i * (points.len() - 1) / (rows - 1)]).collect()
}

fn f2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn vehicle_table(out: &mut String, scenario: &Scenario, track: &Track, title: &str) {
    let pose = scenario.ego_pose();
    writeln!(out, "### {title} `{}` (length {} m, width {} m)", track.vehicle_id, f2(track.length), f2(track.width))
        .unwrap();
    out.push_str("| t | x | y | heading | speed |\n|---|---|---|---|---|\n");
    for p in downsample(track.history(scenario.history_len), MAX_TABLE_ROWS) {
        let q = p.to_frame(&pose).expect("validated scenario has finite states");
        writeln!(out, "| {} | {} | {} | {} | {} |", f2(q.t), f2(q.x), f2(q.y), f2(q.heading), f2(q.speed)).unwrap();
    }
}

fn lane_summary(out: &mut String, scenario: &Scenario) {
    let pose = scenario.ego_pose();
    out.push_str("### Lanes\n");
    for lane in &scenario.map.lanes {
        let pts = &lane.centerline;
        let keep = 6.min(pts.len());
        let shown: Vec<String> = (0..keep)
            .map(|i| {
                let p = crate::scene::to_ego_frame(pts[i * (pts.len() - 1) / (keep - 1)], &pose).expect("finite lane");
                format!("({}, {})", f2(p.x), f2(p.y))
            })
            .collect();
        writeln!(out, "- `{}` ({}): {}", lane.lane_id, lane.kind.as_str(), shown.join(" -> ")).unwrap();
    }
}

/// Six-block analysis prompt with every state rendered in the current ego frame.
pub fn build_prompt(scenario: &Scenario, library: &[IntentLabel]) -> PromptBundle {
    let role = "You are a safety analyst for autonomous-driving tests. You study short traffic recordings and \
                identify how a nearby vehicle could behave to put the vehicle under test at risk."
        .to_string();

    let task_description = format!(
        "Given the recent motion of the ego vehicle and of the surrounding background vehicles, decide which \
         dangerous behavior the critical background vehicle `{}` could perform in the next {:.1} s, how risky it \
         is, and which acceleration (m/s^2) it should apply to carry it out.",
        scenario.critical_background_id,
        scenario.horizon()
    );

    let mut input_structure = String::new();
    input_structure.push_str(
        "All quantities are in the ego-centred frame of the current step: the ego's current position is the \
         origin, its heading is 0 rad, x points forward and y to the left. Each table row is one sample with \
         columns t (s), x (m), y (m), heading (rad) and speed (m/s); at most 11 rows are shown per vehicle and \
         the last row is the current step.\n\n",
    );
    write!(
        input_structure,
        "Road type: {}.\n\n",
        match scenario.road_kind() {
            RoadKind::Straight => "straight road",
            RoadKind::Intersection => "intersection",
        }
    )
    .unwrap();
    lane_summary(&mut input_structure, scenario);
    input_structure.push('\n');
    vehicle_table(&mut input_structure, scenario, &scenario.ego, "Ego vehicle");
    for bg in &scenario.backgrounds {
        input_structure.push('\n');
        let title = if bg.vehicle_id == scenario.critical_background_id {
            "Critical background vehicle"
        } else {
            "Background vehicle"
        };
        vehicle_table(&mut input_structure, scenario, bg, title);
    }

    let mut analysis_requirements = String::from(
        "Reason in five steps:\n\
         1. Interpret the states: relative positions, headings and speeds of every vehicle.\n\
         2. Contextualize them in the map: which lanes the vehicles occupy and where their paths meet.\n\
         3. Infer the ego vehicle's intent from its motion.\n\
         4. Select the single riskiest behavior the critical background vehicle could perform.\n\
         5. Assign the acceleration that behavior requires.\n\n\
         Known behaviors:\n",
    );
    for label in library {
        writeln!(analysis_requirements, "- {}", label.display()).unwrap();
    }
    analysis_requirements.push_str(
        "\nIf none of them fits, name a new behavior in a few words.\n\n\
         Example 1: a background vehicle 18 m ahead in the ego lane, slightly slower than the ego.\n\
         BEHAVIOR: Emergency Braking | RISK: high | ACCEL: -6\n\n\
         Example 2: a background vehicle 6 m ahead in the adjacent lane at the ego's speed.\n\
         BEHAVIOR: Aggressive Cut-in | RISK: high | ACCEL: 2\n",
    );

    let rules_for_reference = "- Vehicles keep to their lane unless they change lanes or turn.\n\
         - A vehicle entering a junction yields to traffic already crossing it; rushing through is a violation.\n\
         - Left turns yield to oncoming straight traffic.\n\
         - A following vehicle keeps at least a two-second gap; closing it quickly is aggressive.\n\
         - Hard braking is below -4 m/s^2; comfortable acceleration stays below 3 m/s^2."
        .to_string();

    let output_requirements = "Explain your reasoning briefly, then end the reply with exactly one line of the form\n\
         BEHAVIOR: <behavior name> | RISK: <low|medium|high> | ACCEL: <number in m/s^2>\n\
         Nothing may follow that line."
        .to_string();

    let mut bundle = PromptBundle {
        role,
        task_description,
        input_structure,
        analysis_requirements,
        rules_for_reference,
        output_requirements,
        rendered: String::new(),
    };
    bundle.rendered = format!("{}\n\n{}\n", bundle.system_text(), bundle.user_text());
    bundle
}

pub fn render_verdict(verdict: &AnalyzerVerdict) -> String {
    format!("BEHAVIOR: {} | RISK: {} | ACCEL: {}", verdict.intent.display(), verdict.risk_level, verdict.y_acc)
}

/// True when `label` is within `threshold` distance of some library label.
pub fn is_known(label: &IntentLabel, library: &[IntentLabel], threshold: f64) -> bool {
    library.iter().any(|l| 1.0 - similarity(label, l) <= threshold)
}

fn field<'a>(part: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = part.split_once(':')?;
    k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
}

/// Parses the structured verdict on the last nonempty line (code fences ignored).
pub fn parse_verdict(text: &str, library: &[IntentLabel], threshold: f64) -> Result<AnalyzerVerdict, VerdictError> {
    let lines: Vec<&str> = text.lines().collect();
    let idx = lines
        .iter()
        .rposition(|l| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with("```")
        })
        .ok_or(VerdictError::MissingVerdict)?;
    let line = lines[idx].trim().trim_matches(|c| c == '`' || c == '*').trim();
    let parts: Vec<&str> = line.split('|').collect();
    let [b, r, a] = parts.as_slice() else {
        return Err(VerdictError::MissingVerdict);
    };
    let (Some(behavior), Some(risk), Some(accel)) = (field(b, "BEHAVIOR"), field(r, "RISK"), field(a, "ACCEL")) else {
        return Err(VerdictError::MissingVerdict);
    };
    let intent = IntentLabel::new(behavior).ok_or(VerdictError::EmptyBehavior)?;
    let risk_level: RiskLevel = risk.parse()?;
    let number = accel.trim_end_matches("m/s^2").trim_end_matches("m/s²").trim();
    let y_acc: f64 =
        number.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| VerdictError::BadAccel(accel.to_string()))?;
    let novel = !is_known(&intent, library, threshold);
    Ok(AnalyzerVerdict { intent, risk_level, y_acc, rationale: lines[..idx].join("\n").trim().to_string(), novel })
}

pub const REPAIR_INSTRUCTION: &str =
    "Your reply did not end with the required line. Reply again and end with exactly one \
     line of the form BEHAVIOR: <behavior name> | RISK: <low|medium|high> | ACCEL: <number in m/s^2>";

/// The request `llm_analyze` sends first.
pub fn analysis_request(model: &str, scenario: &Scenario, library: &[IntentLabel]) -> ChatRequest {
    let prompt = build_prompt(scenario, library);
    ChatRequest::new(model, vec![ChatMessage::system(prompt.system_text()), ChatMessage::user(prompt.user_text())])
}

/// The follow-up request sent after an unparsable first reply.
pub fn repair_request(first: &ChatRequest, reply: &str) -> ChatRequest {
    let mut req = first.clone();
    req.messages.push(ChatMessage::assistant(reply));
    req.messages.push(ChatMessage::user(REPAIR_INSTRUCTION));
    req
}

pub fn llm_analyze(
    client: &dyn ChatClient,
    scenario: &Scenario,
    library: &[IntentLabel],
) -> Result<AnalyzerVerdict, AnalyzerError> {
    let request = analysis_request(client.model(), scenario, library);
    let first = client.complete(&request)?.content;
    match parse_verdict(&first, library, DEFAULT_RET_THRESHOLD) {
        Ok(v) => Ok(v),
        Err(e) => {
            log::warn!("analyzer reply unparsable ({e}); asking for a repair");
            let second = client.complete(&repair_request(&request, &first))?.content;
            parse_verdict(&second, library, DEFAULT_RET_THRESHOLD).map_err(|reason| AnalyzerError::Unparsable {
                reason,
                first,
                second,
            })
        }
    }
}

/// Relation of the critical vehicle to the ego, in the ego frame at the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Relation {
    same_lane: bool,
    lon: f64,
    lat: f64,
    rel_heading: f64,
    lane_kind: Option<LaneKind>,
    crossing: bool,
}

fn relation(scenario: &Scenario) -> Relation {
    let k = scenario.current_index();
    let ego = &scenario.ego.points[k];
    let bac = &scenario.critical().points[k];
    let local = bac.to_frame(&scenario.ego_pose()).expect("validated scenario has finite states");
    let ego_lane = scenario.map.locate(ego.position(), ego.heading).map(|m| m.lane_index);
    let bac_lane = scenario.map.locate(bac.position(), bac.heading).map(|m| m.lane_index);
    Relation {
        same_lane: ego_lane.is_some() && ego_lane == bac_lane,
        lon: local.x,
        lat: local.y,
        rel_heading: normalize_angle(local.heading),
        lane_kind: bac_lane.map(|i| scenario.map.lanes[i].kind),
        crossing: path_crossing(scenario).is_some(),
    }
}

fn verdict(name: &str, risk: RiskLevel, y_acc: f64, why: String) -> AnalyzerVerdict {
    AnalyzerVerdict {
        intent: IntentLabel::new(name).expect("builtin name"),
        risk_level: risk,
        y_acc,
        rationale: why,
        novel: false,
    }
}

/// Deterministic decision table over ego-frame geometry; always names a builtin.
pub fn rule_based_analyze(scenario: &Scenario) -> AnalyzerVerdict {
    use RiskLevel::*;
    let r = relation(scenario);
    let aligned = r.rel_heading.abs() < std::f64::consts::FRAC_PI_4;
    let opposite = r.rel_heading.abs() > 3.0 * std::f64::consts::FRAC_PI_4;
    let adjacent = r.lat.abs() > 0.5 * LANE_WIDTH && r.lat.abs() <= 1.5 * LANE_WIDTH;
    let at = format!("critical vehicle at ({:.2}, {:.2}) m, relative heading {:.2} rad", r.lon, r.lat, r.rel_heading);
    let road = scenario.road_kind();
    if r.same_lane && r.lon > 0.0 && r.lon < 30.0 {
        verdict(EMERGENCY_BRAKING, High, -6.0, format!("lead vehicle in the ego lane; {at}"))
    } else if r.same_lane && r.lon <= 0.0 {
        verdict(CLOSE_CAR_FOLLOWING, Medium, -1.0, format!("following vehicle in the ego lane; {at}"))
    } else if !r.same_lane && aligned && adjacent && (-5.0..=15.0).contains(&r.lon) {
        verdict(AGGRESSIVE_CUT_IN, High, 2.0, format!("vehicle alongside in the adjacent lane; {at}"))
    } else if opposite && r.lane_kind == Some(LaneKind::Straight) && !r.crossing {
        verdict(OPPOSITE_DIRECTION_INTRUSION, High, 1.0, format!("oncoming vehicle in the opposite lane; {at}"))
    } else if road == RoadKind::Intersection && r.lane_kind == Some(LaneKind::LeftTurn) && r.crossing {
        verdict(RUSH_THROUGH_TURN_LEFT, High, 2.5, format!("left-turning vehicle crossing the ego path; {at}"))
    } else if road == RoadKind::Intersection && r.crossing {
        verdict(RUSH_THROUGH_GO_STRAIGHT, High, 2.5, format!("crossing traffic at the junction; {at}"))
    } else {
        verdict(STRAIGHT_LANE_SHIFT, Medium, 1.5, format!("no closer conflict; lane shift toward the ego; {at}"))
    }
}

/// An intent-inference strategy.
pub trait Analyzer: Sync {
    fn analyze(&self, scenario: &Scenario, library: &[IntentLabel]) -> Result<AnalyzerVerdict, AnalyzerError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedAnalyzer;

impl Analyzer for RuleBasedAnalyzer {
    fn analyze(&self, scenario: &Scenario, library: &[IntentLabel]) -> Result<AnalyzerVerdict, AnalyzerError> {
        let mut v = rule_based_analyze(scenario);
        v.novel = !library.is_empty() && !is_known(&v.intent, library, DEFAULT_RET_THRESHOLD);
        Ok(v)
    }
}

pub struct LlmAnalyzer<'a> {
    pub client: &'a dyn ChatClient,
}

impl Analyzer for LlmAnalyzer<'_> {
    fn analyze(&self, scenario: &Scenario, library: &[IntentLabel]) -> Result<AnalyzerVerdict, AnalyzerError> {
        llm_analyze(self.client, scenario, library)
    }
}

/// Labels of the builtin behaviours, in library order.
pub fn builtin_labels() -> Vec<IntentLabel> {
    BUILTIN_NAMES.iter().map(|n| IntentLabel::new(n).expect("builtin name")).collect()
}
