//! Closed-loop episodes: ego policies, rollout with collision truncation, the refinement
//! loop and campaign execution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{Analyzer, AnalyzerError, AnalyzerVerdict};
use crate::behaviors::{infer_endpoint_local, BehaviorError, BehaviorSpec, SpecSource};
use crate::llmio::{ChatClient, ChatMessage, ChatRequest, LlmError};
use crate::membank::{parse_planner_reply, planner_context, resolve_planner, BankError, MemoryBank, MemoryEvent};
use crate::metrics::{
    aggregate_campaign, episode_metrics, state_ttc, CampaignMetrics, CollisionConfig, EpisodeMetrics, KinematicSamples,
    MetricsError, DEFAULT_TTC_CAP,
};
use crate::scene::{Polyline, Rollout, Scenario, TrajectoryPoint, Vec2};
use crate::synth::{check_feasibility, plan_quintic, BoundaryState, FeasibilityReport, PlannerConfig, SynthError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("analysis failed: {0}")]
    Analyzer(#[from] AnalyzerError),
    #[error("planner resolution failed: {0}")]
    Bank(#[from] BankError),
    #[error("endpoint inference failed at iteration {iteration}: {source}")]
    Endpoint {
        iteration: usize,
        #[source]
        source: BehaviorError,
    },
    #[error("trajectory planning failed at iteration {iteration}: {source}")]
    Planner {
        iteration: usize,
        #[source]
        source: SynthError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("every episode of the campaign failed")]
    AllEpisodesFailed,
}

impl EngineError {
    /// The chat-client failure underneath this error, if any.
    pub fn llm_error(&self) -> Option<&LlmError> {
        match self {
            EngineError::Analyzer(AnalyzerError::Llm(e)) | EngineError::Bank(BankError::Llm(e)) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactiveParams {
    /// `None` keeps the ego's speed at the current step.
    pub cruise_speed: Option<f64>,
    pub brake_decel: f64,
    pub ttc_trigger: f64,
}

impl Default for ReactiveParams {
    fn default() -> Self {
        Self { cruise_speed: None, brake_decel: -6.0, ttc_trigger: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgoPolicy {
    #[default]
    Replay,
    Reactive(ReactiveParams),
}

impl EgoPolicy {
    pub fn reactive() -> Self {
        EgoPolicy::Reactive(ReactiveParams::default())
    }

    fn check(&self) -> Result<(), EngineError> {
        if let EgoPolicy::Reactive(p) = self {
            if !(p.brake_decel < 0.0 && p.ttc_trigger > 0.0 && p.cruise_speed.is_none_or(|v| v >= 0.0)) {
                return Err(EngineError::InvalidArgument(format!("reactive parameters out of range: {p:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub max_iterations: usize,
    pub accel_escalation: f64,
    pub gap_tighten: f64,
    pub criticality_ttc: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { max_iterations: 5, accel_escalation: 1.3, gap_tighten: 0.25, criticality_ttc: 1.0 }
    }
}

impl RefinementConfig {
    fn check(&self) -> Result<(), EngineError> {
        if self.max_iterations < 1
            || !(self.accel_escalation.is_finite() && self.accel_escalation > 1.0)
            || !(self.gap_tighten > 0.0 && self.gap_tighten < 1.0)
            || !(self.criticality_ttc.is_finite() && self.criticality_ttc >= 0.0)
        {
            return Err(EngineError::InvalidArgument(format!("refinement settings out of range: {self:?}")));
        }
        Ok(())
    }

    /// Requested acceleration at 1-based iteration `i`, clamped to the spec's range.
    pub fn accel_at(&self, spec: &BehaviorSpec, y_acc: f64, i: usize) -> f64 {
        spec.clamp_accel(y_acc * self.accel_escalation.powi(i as i32 - 1))
    }

    /// Factor applied to the endpoint's lateral offset from the ego path at iteration `i`.
    pub fn gap_factor(&self, i: usize) -> f64 {
        (1.0 - self.gap_tighten).powi(i as i32 - 1)
    }
}

/// Everything an episode needs besides the scenario and the analysis components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EngineConfig {
    pub policy: EgoPolicy,
    pub refinement: RefinementConfig,
    pub collision: CollisionConfig,
    pub planner: PlannerConfig,
}

impl EngineConfig {
    fn planner_for(&self, scenario: &Scenario) -> PlannerConfig {
        PlannerConfig { dt: scenario.dt, steps: scenario.horizon_len, ..self.planner }
    }
}

fn constant_velocity(from: &TrajectoryPoint, n: usize, dt: f64) -> Vec<TrajectoryPoint> {
    (1..=n)
        .map(|k| {
            let tau = k as f64 * dt;
            let p = from.position() + from.velocity() * tau;
            TrajectoryPoint { t: from.t + tau, x: p.x, y: p.y, ..*from }
        })
        .collect()
}

/// Logged future of a track, or constant-velocity extrapolation when none was recorded.
pub fn logged_or_extrapolated(scenario: &Scenario, track: &crate::scene::Track) -> Vec<TrajectoryPoint> {
    match track.logged_future(scenario.history_len) {
        Some(f) => f.to_vec(),
        None => constant_velocity(&track.points[scenario.current_index()], scenario.horizon_len, scenario.dt),
    }
}

/// Lane-following ego that brakes, and stays braking, once the instantaneous TTC to any
/// vehicle drops below the trigger. `others[i][k]` is background `i` at ego step `k`,
/// with step 0 being the current time.
fn reactive_ego(
    scenario: &Scenario,
    params: &ReactiveParams,
    others: &[Vec<TrajectoryPoint>],
    epsilon: f64,
) -> Vec<TrajectoryPoint> {
    let now = scenario.ego.points[scenario.current_index()];
    let (route, s0, lateral) = match scenario.map.locate(now.position(), now.heading) {
        Some(m) => (scenario.map.route_from(m.lane_index), m.projection.s, m.projection.lateral),
        None => (Polyline::new(vec![now.position(), now.position() + Vec2::from_polar(1.0, now.heading)]), 0.0, 0.0),
    };
    let cruise = params.cruise_speed.unwrap_or(now.speed);
    let mut state = now;
    let mut s = s0;
    let mut v = cruise;
    let mut braking = false;
    let mut out = Vec::with_capacity(scenario.horizon_len);
    for k in 0..scenario.horizon_len {
        braking =
            braking || others.iter().filter_map(|f| state_ttc(&state, &f[k], epsilon)).any(|t| t < params.ttc_trigger);
        v = if braking { (v + params.brake_decel * scenario.dt).max(0.0) } else { cruise };
        s += v * scenario.dt;
        let (p, heading) = route.sample(s);
        let p = p + Vec2::from_polar(lateral, heading + std::f64::consts::FRAC_PI_2);
        state = TrajectoryPoint::new(now.t + (k + 1) as f64 * scenario.dt, p.x, p.y, heading, v);
        out.push(state);
    }
    out
}

/// Freezes every future at the first contact step between the ego and any background.
fn truncate_at_collision(
    ego: &mut [TrajectoryPoint],
    backgrounds: &mut [(String, Vec<TrajectoryPoint>)],
    config: &CollisionConfig,
) -> Option<usize> {
    let hit = (0..ego.len()).find(|&k| backgrounds.iter().any(|(_, f)| config.in_contact(&ego[k], &f[k])))?;
    let freeze = |f: &mut [TrajectoryPoint]| {
        let at = f[hit];
        for p in &mut f[hit + 1..] {
            *p = TrajectoryPoint { t: p.t, ..at };
        }
    };
    freeze(ego);
    for (_, f) in backgrounds.iter_mut() {
        freeze(f);
    }
    Some(hit)
}

/// Joins the critical vehicle's planned future with replayed traffic and the ego policy.
pub fn rollout(
    scenario: &Scenario,
    policy: &EgoPolicy,
    bac_future: &[TrajectoryPoint],
    config: &CollisionConfig,
) -> Result<Rollout, EngineError> {
    policy.check()?;
    if bac_future.len() != scenario.horizon_len {
        return Err(EngineError::InvalidArgument(format!(
            "critical future has {} points, expected {}",
            bac_future.len(),
            scenario.horizon_len
        )));
    }
    let mut background_futures: Vec<(String, Vec<TrajectoryPoint>)> = scenario
        .backgrounds
        .iter()
        .map(|b| {
            let f = if b.vehicle_id == scenario.critical_background_id {
                bac_future.to_vec()
            } else {
                logged_or_extrapolated(scenario, b)
            };
            (b.vehicle_id.clone(), f)
        })
        .collect();
    let mut ego_future = match policy {
        EgoPolicy::Replay => logged_or_extrapolated(scenario, &scenario.ego),
        EgoPolicy::Reactive(params) => {
            let k = scenario.current_index();
            let timelines: Vec<Vec<TrajectoryPoint>> = scenario
                .backgrounds
                .iter()
                .zip(&background_futures)
                .map(|(b, (_, f))| std::iter::once(b.points[k]).chain(f.iter().copied()).collect())
                .collect();
            reactive_ego(scenario, params, &timelines, config.epsilon)
        }
    };
    truncate_at_collision(&mut ego_future, &mut background_futures, config);
    Ok(Rollout { scenario: scenario.clone(), ego_future, background_futures })
}

/// Episode metrics of a rollout against all background vehicles.
pub fn rollout_metrics(rollout: &Rollout, config: &CollisionConfig) -> Result<EpisodeMetrics, MetricsError> {
    let futures: Vec<&[TrajectoryPoint]> = rollout.background_futures.iter().map(|(_, f)| f.as_slice()).collect();
    episode_metrics(&rollout.ego_future, &futures, config, DEFAULT_TTC_CAP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub rollout: Rollout,
    pub metrics: EpisodeMetrics,
    pub verdict: AnalyzerVerdict,
    pub spec: BehaviorSpec,
    /// Acceleration used by the returned iteration.
    pub y_acc: f64,
    pub iterations_used: usize,
    pub memory_event: MemoryEvent,
    pub feasibility: FeasibilityReport,
    pub feasible: bool,
    pub critical: bool,
}

#[derive(Serialize)]
struct ResultDoc<'a> {
    scenario_id: &'a str,
    intent: &'a str,
    verdict: &'a AnalyzerVerdict,
    spec: &'a BehaviorSpec,
    y_acc: f64,
    iterations_used: usize,
    memory_event: MemoryEvent,
    feasible: bool,
    violations: usize,
    critical: bool,
    metrics: &'a EpisodeMetrics,
    ego_future: &'a [TrajectoryPoint],
    background_futures: Vec<BackgroundDoc<'a>>,
}

#[derive(Serialize)]
struct BackgroundDoc<'a> {
    vehicle_id: &'a str,
    critical: bool,
    future: &'a [TrajectoryPoint],
}

impl EpisodeResult {
    /// Result document (everything but the input scenario) as pretty JSON.
    pub fn to_json(&self) -> String {
        let doc = ResultDoc {
            scenario_id: &self.scenario_id,
            intent: self.verdict.intent.display(),
            verdict: &self.verdict,
            spec: &self.spec,
            y_acc: self.y_acc,
            iterations_used: self.iterations_used,
            memory_event: self.memory_event,
            feasible: self.feasible,
            violations: self.feasibility.violations.len(),
            critical: self.critical,
            metrics: &self.metrics,
            ego_future: &self.rollout.ego_future,
            background_futures: self
                .rollout
                .background_futures
                .iter()
                .map(|(id, f)| BackgroundDoc {
                    vehicle_id: id,
                    critical: *id == self.rollout.scenario.critical_background_id,
                    future: f,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("result serializes");
        s.push('\n');
        s
    }
}

fn tangential_accel(scenario: &Scenario) -> f64 {
    let k = scenario.current_index();
    let pts = &scenario.critical().points;
    if k == 0 {
        0.0
    } else {
        (pts[k].speed - pts[k - 1].speed) / scenario.dt
    }
}

/// Plans the critical vehicle's future toward the spec's endpoint for one iteration.
pub fn plan_adversary(
    scenario: &Scenario,
    spec: &BehaviorSpec,
    y_acc: f64,
    gap_factor: f64,
    planner: &PlannerConfig,
    iteration: usize,
) -> Result<Vec<TrajectoryPoint>, EngineError> {
    let mut end =
        infer_endpoint_local(spec, scenario, y_acc).map_err(|source| EngineError::Endpoint { iteration, source })?;
    end.y *= gap_factor;
    let end = end
        .from_frame(&scenario.ego_pose())
        .map_err(|e| EngineError::Endpoint { iteration, source: BehaviorError::Scene(e) })?;
    let now = scenario.critical().points[scenario.current_index()];
    let start = BoundaryState::from_point(&now, tangential_accel(scenario));
    let goal = BoundaryState::new(end.position(), end.velocity(), Vec2::ZERO);
    let mut plan = plan_quintic(&start, &goal, planner).map_err(|source| EngineError::Planner { iteration, source })?;
    for p in &mut plan {
        p.t += now.t;
    }
    Ok(plan)
}

fn better(a: &EpisodeMetrics, b: &EpisodeMetrics) -> bool {
    let ttc = |m: &EpisodeMetrics| m.min_ttc.unwrap_or(f64::INFINITY);
    (a.collided && !b.collided) || (a.collided == b.collided && ttc(a) < ttc(b))
}

pub fn is_critical(metrics: &EpisodeMetrics, rconfig: &RefinementConfig) -> bool {
    metrics.collided || metrics.min_ttc.is_some_and(|t| t <= rconfig.criticality_ttc)
}

/// Request asking a modifier model to rewrite the rule after a non-critical attempt.
pub fn modifier_request(model: &str, spec: &BehaviorSpec, metrics: &EpisodeMetrics, iteration: usize) -> ChatRequest {
    let rule = spec.rule.fields().map(|(k, e)| format!("{}: {e}", k.to_ascii_uppercase())).join("\n");
    let ttc = metrics.min_ttc.map_or("none".to_string(), |t| format!("{t:.2} s"));
    ChatRequest::new(
        model,
        vec![
            ChatMessage::system(
                "You refine endpoint rules for adversarial traffic scenarios. Keep the same identifiers and \
                 functions; reply with X, Y, HEADING and SPEED lines only.",
            ),
            ChatMessage::user(format!(
                "Behavior: {}\nIteration {iteration} did not reach a critical outcome (collided: {}, minimum TTC: {ttc}, \
                 minimum separation: {:.2} m).\nCurrent rule:\n{rule}\nMake the behavior more threatening to the ego vehicle.",
                spec.label.display(),
                metrics.collided,
                metrics.min_separation
            )),
        ],
    )
}

fn consult_modifier(
    client: &dyn ChatClient,
    spec: &BehaviorSpec,
    metrics: &EpisodeMetrics,
    iteration: usize,
) -> Option<BehaviorSpec> {
    let reply = match client.complete(&modifier_request(client.model(), spec, metrics, iteration)) {
        Ok(r) => r.content,
        Err(e) => {
            log::warn!("modifier call failed: {e}");
            return None;
        }
    };
    match parse_planner_reply(&reply, &spec.label, client.model()) {
        Ok(parsed) => {
            let edited = BehaviorSpec {
                rule: parsed.rule,
                source: SpecSource::Refined,
                provenance: Some(format!("rule edited by model `{}` at iteration {iteration}", client.model())),
                ..spec.clone()
            };
            edited.self_check().ok().map(|_| edited)
        }
        Err(problem) => {
            log::info!("modifier edit rejected: {problem}");
            None
        }
    }
}

/// Outcome of the refinement loop before it is joined with analysis bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub rollout: Rollout,
    pub metrics: EpisodeMetrics,
    pub spec: BehaviorSpec,
    pub y_acc: f64,
    pub iterations_used: usize,
    pub feasibility: FeasibilityReport,
    pub critical: bool,
    /// Acceleration requested at each iteration, in order.
    pub accel_history: Vec<f64>,
}

/// Escalates the adversary until the episode is critical or the budget runs out.
pub fn refine(
    scenario: &Scenario,
    verdict: &AnalyzerVerdict,
    spec: &BehaviorSpec,
    config: &EngineConfig,
    modifier: Option<&dyn ChatClient>,
) -> Result<Refinement, EngineError> {
    config.refinement.check()?;
    let rc = &config.refinement;
    let planner = config.planner_for(scenario);
    let mut current = spec.clone();
    let mut best: Option<Refinement> = None;
    let mut accel_history = Vec::new();
    for i in 1..=rc.max_iterations {
        let y_acc = rc.accel_at(&current, verdict.y_acc, i);
        accel_history.push(y_acc);
        let plan = plan_adversary(scenario, &current, y_acc, rc.gap_factor(i), &planner, i)?;
        let feasibility =
            check_feasibility(&plan, &planner).map_err(|source| EngineError::Planner { iteration: i, source })?;
        let ro = rollout(scenario, &config.policy, &plan, &config.collision)?;
        let metrics = rollout_metrics(&ro, &config.collision)?;
        let critical = is_critical(&metrics, rc);
        log::debug!("iteration {i}: y_acc {y_acc:.3}, collided {}, min ttc {:?}", metrics.collided, metrics.min_ttc);
        let candidate = Refinement {
            rollout: ro,
            metrics,
            spec: current.clone(),
            y_acc,
            iterations_used: i,
            feasibility,
            critical,
            accel_history: Vec::new(),
        };
        if best.as_ref().is_none_or(|b| better(&candidate.metrics, &b.metrics)) {
            best = Some(candidate);
        }
        if critical {
            break;
        }
        if let (Some(client), true) = (modifier, i < rc.max_iterations) {
            if let Some(edited) = consult_modifier(client, &current, &metrics, i) {
                current = edited;
            }
        }
    }
    let mut best = best.expect("at least one iteration ran");
    best.iterations_used = accel_history.len();
    best.accel_history = accel_history;
    Ok(best)
}

/// Analysis, planner resolution and refinement for one scenario.
pub fn generate_episode(
    scenario_id: &str,
    scenario: &Scenario,
    analyzer: &dyn Analyzer,
    bank: &mut MemoryBank,
    client: Option<&dyn ChatClient>,
    modifier: Option<&dyn ChatClient>,
    config: &EngineConfig,
) -> Result<EpisodeResult, EngineError> {
    let (verdict, spec, event) = prepare(scenario, analyzer, bank, client)?;
    let refinement = refine(scenario, &verdict, &spec, config, modifier)?;
    let result = assemble(scenario_id, verdict, event, refinement);
    if result.critical {
        mark_verified(bank, &result.spec);
    }
    Ok(result)
}

fn prepare(
    scenario: &Scenario,
    analyzer: &dyn Analyzer,
    bank: &mut MemoryBank,
    client: Option<&dyn ChatClient>,
) -> Result<(AnalyzerVerdict, BehaviorSpec, MemoryEvent), EngineError> {
    let verdict = analyzer.analyze(scenario, &bank.labels())?;
    let context = planner_context(scenario, &verdict);
    let (spec, event) = resolve_planner(bank, &verdict, client, &context)?;
    Ok((verdict, spec, event))
}

fn assemble(scenario_id: &str, verdict: AnalyzerVerdict, event: MemoryEvent, r: Refinement) -> EpisodeResult {
    EpisodeResult {
        scenario_id: scenario_id.to_string(),
        rollout: r.rollout,
        metrics: r.metrics,
        verdict,
        feasible: r.feasibility.ok,
        feasibility: r.feasibility,
        spec: r.spec,
        y_acc: r.y_acc,
        iterations_used: r.iterations_used,
        memory_event: event,
        critical: r.critical,
    }
}

fn mark_verified(bank: &mut MemoryBank, spec: &BehaviorSpec) {
    if bank.mark_verified(&spec.label) && bank.store_path.is_some() {
        if let Err(e) = bank.save() {
            log::warn!("could not persist verified flag: {e}");
        }
    }
}

/// Replay of every logged future with no adversarial substitution.
pub fn raw_rollout(scenario: &Scenario, config: &CollisionConfig) -> Result<Rollout, EngineError> {
    let logged = logged_or_extrapolated(scenario, scenario.critical());
    rollout(scenario, &EgoPolicy::Replay, &logged, config)
}

/// How campaign refinement work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    /// Uses the rayon pool when built with the `parallel` feature, sequential otherwise.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario_id: String,
    pub intent: Option<String>,
    pub collided: bool,
    pub collision_step: Option<usize>,
    pub min_ttc: Option<f64>,
    pub iterations: usize,
    pub memory_event: Option<MemoryEvent>,
    pub critical: bool,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct CampaignReport {
    pub rows: Vec<EpisodeRow>,
    pub results: Vec<Result<EpisodeResult, EngineError>>,
    pub metrics: CampaignMetrics,
    pub raw_metrics: CampaignMetrics,
    pub gen_samples: KinematicSamples,
    pub raw_samples: KinematicSamples,
}

/// Samples of the critical vehicle's future up to and including the collision step.
pub fn generated_samples(result: &EpisodeResult) -> Vec<TrajectoryPoint> {
    let f = result.rollout.critical_future();
    let end = result.metrics.collision_step.map_or(f.len(), |k| k + 1);
    f[..end].to_vec()
}

fn map_refine<F>(jobs: Vec<F>, mode: ExecMode) -> Vec<Result<Refinement, EngineError>>
where
    F: FnOnce() -> Result<Refinement, EngineError> + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            jobs.into_par_iter().map(|job| job()).collect()
        }
        _ => jobs.into_iter().map(|job| job()).collect(),
    }
}

/// Runs every scenario: analysis and planner resolution serially (they write the bank),
/// refinement according to `mode`, then aggregation against the raw replay baseline.
pub fn run_campaign(
    scenarios: &[(String, Scenario)],
    analyzer: &dyn Analyzer,
    bank: &mut MemoryBank,
    client: Option<&dyn ChatClient>,
    modifier: Option<&dyn ChatClient>,
    config: &EngineConfig,
    mode: ExecMode,
) -> Result<CampaignReport, EngineError> {
    if scenarios.is_empty() {
        return Err(EngineError::InvalidArgument("campaign needs at least one scenario".into()));
    }
    let prepared: Vec<Result<(AnalyzerVerdict, BehaviorSpec, MemoryEvent), EngineError>> =
        scenarios.iter().map(|(_, s)| prepare(s, analyzer, bank, client)).collect();

    let jobs: Vec<_> = scenarios
        .iter()
        .zip(&prepared)
        .filter_map(|((_, s), p)| p.as_ref().ok().map(|(v, spec, _)| move || refine(s, v, spec, config, modifier)))
        .collect();
    let mut refined = map_refine(jobs, mode).into_iter();

    let mut results = Vec::with_capacity(scenarios.len());
    for ((id, _), p) in scenarios.iter().zip(prepared) {
        let r = p.and_then(|(verdict, _, event)| {
            let refinement = refined.next().expect("one refinement per prepared scenario")?;
            Ok(assemble(id, verdict, event, refinement))
        });
        if let Ok(res) = &r {
            if res.critical {
                mark_verified(bank, &res.spec);
            }
        }
        results.push(r);
    }

    let mut rows = Vec::with_capacity(results.len());
    let mut episodes = Vec::new();
    let mut gen_samples = KinematicSamples::default();
    let mut raw_samples = KinematicSamples::default();
    let mut raw_episodes = Vec::new();
    for ((id, scenario), r) in scenarios.iter().zip(&results) {
        match r {
            Ok(res) => {
                rows.push(EpisodeRow {
                    scenario_id: id.clone(),
                    intent: Some(res.verdict.intent.display().to_string()),
                    collided: res.metrics.collided,
                    collision_step: res.metrics.collision_step,
                    min_ttc: res.metrics.min_ttc,
                    iterations: res.iterations_used,
                    memory_event: Some(res.memory_event),
                    critical: res.critical,
                    error: None,
                });
                episodes.push(res.metrics);
                gen_samples.add_trajectory(&generated_samples(res));
                let raw = raw_rollout(scenario, &config.collision)?;
                raw_episodes.push(rollout_metrics(&raw, &config.collision)?);
                for b in &scenario.backgrounds {
                    raw_samples.add_trajectory(&logged_or_extrapolated(scenario, b));
                }
            }
            Err(e) => {
                log::error!("episode {id} failed: {e}");
                rows.push(EpisodeRow {
                    scenario_id: id.clone(),
                    intent: None,
                    collided: false,
                    collision_step: None,
                    min_ttc: None,
                    iterations: 0,
                    memory_event: None,
                    critical: false,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if episodes.is_empty() {
        return Err(EngineError::AllEpisodesFailed);
    }
    let metrics = aggregate_campaign(&episodes, &raw_samples, &gen_samples)?;
    let raw_metrics = aggregate_campaign(&raw_episodes, &raw_samples, &raw_samples)?;
    Ok(CampaignReport { rows, results, metrics, raw_metrics, gen_samples, raw_samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub ego_x: f64,
    pub ego_y: f64,
    pub ego_speed: f64,
    pub bac_x: f64,
    pub bac_y: f64,
    pub bac_speed: f64,
    pub separation: f64,
    pub ttc: Option<f64>,
}

/// Per-step ego/critical table of a rollout.
pub fn episode_trace(rollout: &Rollout, epsilon: f64) -> Vec<TraceRow> {
    rollout
        .ego_future
        .iter()
        .zip(rollout.critical_future())
        .enumerate()
        .map(|(k, (e, b))| TraceRow {
            step: k + 1,
            ego_x: e.x,
            ego_y: e.y,
            ego_speed: e.speed,
            bac_x: b.x,
            bac_y: b.y,
            bac_speed: b.speed,
            separation: e.position().distance(b.position()),
            ttc: state_ttc(e, b, epsilon),
        })
        .collect()
}
