//! Memory bank of intent labels and their planners: similarity-gated retrieval,
//! novel-intent insertion, LLM planner generation into the rule language and durable
//! line-delimited persistence.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer::{build_prompt, AnalyzerVerdict, DEFAULT_RET_THRESHOLD};
use crate::behaviors::{
    builtin_library, Applicability, BehaviorError, BehaviorSpec, EndpointRule, Func, IntentLabel, SpecSource, Var,
};
use crate::llmio::{ChatClient, ChatMessage, ChatRequest, LlmError};
use crate::scene::Scenario;

pub use crate::behaviors::similarity;

pub const STORE_VERSION: u32 = 1;

/// Acceleration interval given to generated planners that do not state one.
pub const DEFAULT_GENERATED_RANGE: (f64, f64) = (-2.0, 3.0);

#[derive(Debug, Error)]
pub enum BankError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("label `{label}` duplicates existing entry `{existing}`")]
    Duplicate { label: String, existing: String },
    #[error("invalid retrieval threshold {0}; expected a value in [0, 1]")]
    InvalidThreshold(f64),
    #[error("bank has no store path")]
    NoStorePath,
    #[error("planner generation for `{label}` failed after one repair attempt: {reason}\nfirst reply:\n{first}\nsecond reply:\n{second}")]
    Generation { label: String, reason: String, first: String, second: String },
    #[error("intent `{0}` is not in the bank and no client is available to generate a planner")]
    NoClient(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub spec: BehaviorSpec,
    /// Logical insertion sequence number.
    pub created_at: u64,
    pub use_count: u64,
    pub verified: bool,
}

impl MemoryEntry {
    pub fn label(&self) -> &IntentLabel {
        &self.spec.label
    }

    pub fn to_json(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.spec).expect("spec serializes") {
            Value::Object(m) => m,
            _ => unreachable!("spec serializes to an object"),
        };
        obj.insert("created_at".into(), self.created_at.into());
        obj.insert("use_count".into(), self.use_count.into());
        obj.insert("verified".into(), self.verified.into());
        Value::Object(obj)
    }

    fn from_json(value: Value) -> Result<Self, String> {
        let Value::Object(mut obj) = value else {
            return Err("entry is not a JSON object".into());
        };
        let mut take_u64 = |key: &str| -> Result<u64, String> {
            obj.remove(key).and_then(|v| v.as_u64()).ok_or_else(|| format!("missing or invalid `{key}`"))
        };
        let created_at = take_u64("created_at")?;
        let use_count = take_u64("use_count")?;
        let verified = obj.remove("verified").and_then(|v| v.as_bool()).ok_or("missing or invalid `verified`")?;
        let spec: BehaviorSpec = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
        Ok(Self { spec, created_at, use_count, verified })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEvent {
    Hit,
    Generated,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    ret_threshold: f64,
}

/// Ordered intent to planner store.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub entries: Vec<MemoryEntry>,
    pub ret_threshold: f64,
    pub store_path: Option<PathBuf>,
}

impl MemoryBank {
    pub fn empty(ret_threshold: f64) -> Result<Self, BankError> {
        if !(0.0..=1.0).contains(&ret_threshold) {
            return Err(BankError::InvalidThreshold(ret_threshold));
        }
        Ok(Self { entries: Vec::new(), ret_threshold, store_path: None })
    }

    /// Bank holding the seven builtin behaviours.
    pub fn seeded(ret_threshold: f64) -> Result<Self, BankError> {
        let mut bank = Self::empty(ret_threshold)?;
        for (i, spec) in builtin_library().into_iter().enumerate() {
            bank.entries.push(MemoryEntry { spec, created_at: i as u64, use_count: 0, verified: false });
        }
        Ok(bank)
    }

    pub fn with_store(mut self, path: impl Into<PathBuf>) -> Self {
        self.store_path = Some(path.into());
        self
    }

    /// Loads the bank at `path`, or seeds and saves a new one if the file is absent.
    pub fn open_or_seed(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        if path.exists() {
            Self::load(path)
        } else {
            let bank = Self::seeded(DEFAULT_RET_THRESHOLD)?.with_store(path);
            bank.save()?;
            Ok(bank)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<IntentLabel> {
        self.entries.iter().map(|e| e.label().clone()).collect()
    }

    fn next_created_at(&self) -> u64 {
        self.entries.iter().map(|e| e.created_at + 1).max().unwrap_or(0)
    }

    /// Closest entry and its distance; ties go to the earliest `created_at`.
    pub fn nearest(&self, query: &IntentLabel) -> Option<(usize, f64)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, 1.0 - similarity(query, e.label())))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(self.entries[a.0].created_at.cmp(&self.entries[b.0].created_at)))
    }

    /// Index of the entry within the retrieval threshold, without touching counters.
    pub fn lookup(&self, query: &IntentLabel) -> Option<usize> {
        self.nearest(query).filter(|&(_, d)| d <= self.ret_threshold).map(|(i, _)| i)
    }

    /// Nearest entry within the threshold; increments its `use_count`.
    pub fn retrieve(&mut self, query: &IntentLabel) -> Option<&MemoryEntry> {
        let i = self.lookup(query)?;
        self.entries[i].use_count += 1;
        Some(&self.entries[i])
    }

    /// Appends a spec whose label has no near-duplicate; persists when a store path is set.
    pub fn insert_novel(&mut self, spec: BehaviorSpec) -> Result<&MemoryEntry, BankError> {
        if let Some(i) = self.lookup(&spec.label) {
            return Err(BankError::Duplicate {
                label: spec.label.display().to_string(),
                existing: self.entries[i].label().display().to_string(),
            });
        }
        let created_at = self.next_created_at();
        self.entries.push(MemoryEntry { spec, created_at, use_count: 0, verified: false });
        if self.store_path.is_some() {
            self.save()?;
        }
        Ok(self.entries.last().unwrap())
    }

    /// Flags the entry whose label matches exactly (canonically) as verified.
    pub fn mark_verified(&mut self, label: &IntentLabel) -> bool {
        match self.entries.iter_mut().find(|e| e.label().canonical() == label.canonical()) {
            Some(e) => {
                e.verified = true;
                true
            }
            None => false,
        }
    }

    /// Canonical store text: a header line then one entry per line.
    pub fn to_store_string(&self) -> String {
        let mut out = serde_json::to_string(&Header { version: STORE_VERSION, ret_threshold: self.ret_threshold })
            .expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            writeln!(out, "{}", e.to_json()).unwrap();
        }
        out
    }

    pub fn parse_store(text: &str, path: &Path) -> Result<Self, BankError> {
        let corrupt = |line: usize, message: String| BankError::Corrupt { path: path.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| corrupt(1, "missing header line".into()))?;
        let header: Header = serde_json::from_str(head).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
        if header.version != STORE_VERSION {
            return Err(corrupt(1, format!("unsupported store version {}", header.version)));
        }
        let mut bank = Self::empty(header.ret_threshold).map_err(|e| corrupt(1, e.to_string()))?;
        for (i, line) in lines {
            let value: Value = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
            let entry = MemoryEntry::from_json(value).map_err(|m| corrupt(i + 1, m))?;
            if bank.entries.iter().any(|e| e.label().canonical() == entry.label().canonical()) {
                return Err(corrupt(i + 1, format!("duplicate label `{}`", entry.label())));
            }
            bank.entries.push(entry);
        }
        bank.store_path = Some(path.to_path_buf());
        Ok(bank)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| BankError::Io { path: path.to_path_buf(), source })?;
        Self::parse_store(&text, path)
    }

    /// Writes to the store path through a temporary file and an atomic rename.
    pub fn save(&self) -> Result<(), BankError> {
        let path = self.store_path.as_deref().ok_or(BankError::NoStorePath)?;
        self.save_to(path)
    }

    pub fn save_to(&self, path: &Path) -> Result<(), BankError> {
        let io = |source| BankError::Io { path: path.to_path_buf(), source };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(self.to_store_string().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

fn planner_system_prompt() -> String {
    let mut s = String::from(
        "You write endpoint rules for a traffic-scenario generator. A rule computes where a background \
         vehicle should be at the end of the planning horizon so that it performs a given dangerous behavior. \
         Rules are arithmetic expressions in this grammar:\n\n\
         expr   := term ((\"+\" | \"-\") term)*\n\
         term   := factor ((\"*\" | \"/\") factor)*\n\
         factor := atom (\"^\" atom)?\n\
         atom   := number | identifier | \"-\" atom | function \"(\" expr (\",\" expr)* \")\" | \"(\" expr \")\"\n\n\
         Identifiers (ego-centred frame, x forward, y left):\n",
    );
    for v in Var::ALL {
        writeln!(s, "- {}: {}", v.name(), v.describe()).unwrap();
    }
    s.push_str("\nFunctions: ");
    let funcs: Vec<String> = Func::ALL.iter().map(|f| format!("{}/{}", f.name(), f.arity())).collect();
    s.push_str(&funcs.join(", "));
    s.push_str(
        "\nDivision by zero and square roots of negative values are errors.\n\n\
         Reply with exactly these lines (ACCEL_RANGE is optional, two numbers min, max in m/s^2):\n\
         X: <expr>\nY: <expr>\nHEADING: <expr>\nSPEED: <expr>\nACCEL_RANGE: <min>, <max>",
    );
    s
}

/// Scenario context handed to planner generation.
pub fn planner_context(scenario: &Scenario, verdict: &AnalyzerVerdict) -> String {
    format!(
        "Analyst rationale: {}\n\n{}",
        if verdict.rationale.is_empty() { "(none)" } else { &verdict.rationale },
        build_prompt(scenario, &[]).input_structure
    )
}

/// The request `generate_planner` sends first.
pub fn planner_request(model: &str, label: &IntentLabel, scenario_context: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            ChatMessage::system(planner_system_prompt()),
            ChatMessage::user(format!("Behavior: {}\n\n{}", label.display(), scenario_context)),
        ],
    )
}

pub fn planner_repair_request(first: &ChatRequest, reply: &str, problem: &str) -> ChatRequest {
    let mut req = first.clone();
    req.messages.push(ChatMessage::assistant(reply));
    req.messages.push(ChatMessage::user(format!(
        "That reply could not be used: {problem}. Reply again with only the X, Y, HEADING, SPEED and optional \
         ACCEL_RANGE lines."
    )));
    req
}

fn reply_field<'a>(reply: &'a str, key: &str) -> Option<&'a str> {
    reply.lines().find_map(|line| {
        let line = line.trim().trim_matches('`').trim_start_matches(['-', '*', ' ']);
        let (k, v) = line.split_once(':')?;
        k.trim().trim_matches('*').eq_ignore_ascii_case(key).then(|| v.trim().trim_matches('`').trim())
    })
}

/// Parses a planner reply into a generated spec and self-checks it.
pub fn parse_planner_reply(reply: &str, label: &IntentLabel, model: &str) -> Result<BehaviorSpec, String> {
    let get = |key| reply_field(reply, key).ok_or_else(|| format!("missing `{key}:` line"));
    let rule = EndpointRule::parse(get("X")?, get("Y")?, get("HEADING")?, get("SPEED")?).map_err(|e| e.to_string())?;
    let accel_range = match reply_field(reply, "ACCEL_RANGE") {
        None => DEFAULT_GENERATED_RANGE,
        Some(text) => {
            let nums: Vec<f64> = text
                .trim_matches(['[', ']', '(', ')'])
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("bad ACCEL_RANGE `{text}`: {e}"))?;
            match nums.as_slice() {
                [lo, hi] => (*lo, *hi),
                _ => return Err(format!("ACCEL_RANGE `{text}` needs two numbers")),
            }
        }
    };
    let spec = BehaviorSpec {
        label: label.clone(),
        rule,
        accel_range,
        applicability: Applicability::Any,
        source: SpecSource::Generated,
        provenance: Some(format!("generated by model `{model}` for intent `{}`", label.display())),
    };
    spec.self_check().map_err(|e: BehaviorError| e.to_string())?;
    Ok(spec)
}

/// Asks the client for a planner in the rule language, with one repair round.
pub fn generate_planner(
    client: &dyn ChatClient,
    label: &IntentLabel,
    scenario_context: &str,
) -> Result<BehaviorSpec, BankError> {
    let request = planner_request(client.model(), label, scenario_context);
    let first = client.complete(&request)?.content;
    match parse_planner_reply(&first, label, client.model()) {
        Ok(spec) => Ok(spec),
        Err(problem) => {
            log::warn!("planner reply for `{label}` rejected ({problem}); asking for a repair");
            let second = client.complete(&planner_repair_request(&request, &first, &problem))?.content;
            parse_planner_reply(&second, label, client.model()).map_err(|reason| BankError::Generation {
                label: label.display().to_string(),
                reason,
                first,
                second,
            })
        }
    }
}

/// Retrieval first; on a miss, generate a planner and insert it.
pub fn resolve_planner(
    bank: &mut MemoryBank,
    verdict: &AnalyzerVerdict,
    client: Option<&dyn ChatClient>,
    scenario_context: &str,
) -> Result<(BehaviorSpec, MemoryEvent), BankError> {
    if let Some(entry) = bank.retrieve(&verdict.intent) {
        return Ok((entry.spec.clone(), MemoryEvent::Hit));
    }
    let client = client.ok_or_else(|| BankError::NoClient(verdict.intent.display().to_string()))?;
    let spec = generate_planner(client, &verdict.intent, scenario_context)?;
    bank.insert_novel(spec.clone())?;
    Ok((spec, MemoryEvent::Generated))
}
