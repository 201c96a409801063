//! Reasoning interface of the loop: builds retrieval-grounded, step-by-step
//! prompts, queries a chat provider, and bound-checks what comes back.
//!
//! Replies must carry a fenced block with one candidate per line:
//!
//! ~~~text
//! ```candidates
//! depth=1024 P=1 width=32 action=refine
//! depth=2048 P=2 width=32 action=rank rank=1
//! ```
//! ~~~
//!
//! Out-of-bounds candidates are reported back as rejections, never clamped.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_db::HardwareDataPoint;
use crate::design_space::{enumerate_points, neighbor_points, validate_point, DeviceProfile, Directives, ParameterPoint, WorkloadSpec};
use crate::error::{Error, Result};
use crate::evaluator::Objective;
use crate::retrieval::{trim_to_budget, CorpusDocument, RetrievalIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteChat,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorConfig {
    pub provider: ProviderKind,
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub token_budget: usize,
    pub request_timeout_s: u64,
    pub seed: u64,
    /// Most recent data points rendered into a prompt.
    pub max_data_points: usize,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Heuristic,
            endpoint_url: "http://127.0.0.1:11434/api/chat".into(),
            model_name: "llama3.1:8b".into(),
            temperature: 0.2,
            token_budget: 2048,
            request_timeout_s: 120,
            seed: 0,
            max_data_points: 12,
        }
    }
}

impl AdvisorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(Error::validation("token_budget", "must be > 0"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::validation("temperature", "must be >= 0"));
        }
        Ok(())
    }
}

/// What the advisor sees of the exploration at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationSnapshot {
    pub iteration: u64,
    pub workload: WorkloadSpec,
    pub device: DeviceProfile,
    pub directives: Directives,
    /// Recent data points, oldest first; both positive and negative.
    pub data_points: Vec<HardwareDataPoint>,
    pub evaluated: BTreeSet<ParameterPoint>,
    /// Points vetoed by a human or rejected earlier; never proposed again.
    pub excluded: BTreeSet<ParameterPoint>,
    pub best: Option<(ParameterPoint, Objective)>,
    /// Points selected for the next neighborhood, best first.
    pub frontier: Vec<ParameterPoint>,
    pub candidates_per_iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SectionKind {
    System,
    Context,
    DataPoints,
    Task,
    ReasoningSteps,
}

impl SectionKind {
    pub const ORDER: [SectionKind; 5] = [
        SectionKind::System,
        SectionKind::Context,
        SectionKind::DataPoints,
        SectionKind::Task,
        SectionKind::ReasoningSteps,
    ];

    pub fn header(self) -> &'static str {
        match self {
            SectionKind::System => "## SYSTEM",
            SectionKind::Context => "## CONTEXT",
            SectionKind::DataPoints => "## DATA_POINTS",
            SectionKind::Task => "## TASK",
            SectionKind::ReasoningSteps => "## REASONING_STEPS",
        }
    }
}

/// Markers for the five reasoning steps, in the order they must appear.
pub const REASONING_STEPS: [&str; 5] = [
    "STEP 1 - RESTATE CONSTRAINTS",
    "STEP 2 - ANALYZE PRIOR DATA POINTS",
    "STEP 3 - IDENTIFY BOTTLENECK",
    "STEP 4 - PROPOSE CANDIDATES",
    "STEP 5 - EMIT STRUCTURED OUTPUT",
];

const SYSTEM_PREAMBLE: &str = "You are a hardware architect refining FPGA accelerator designs \
built from load-compute-store templates (main, load, compute and store modules around on-chip buffers). \
Only propose parameter values that appear in the directive sets. Negative data points are designs that \
were rejected, failed or infeasible: learn from them and do not propose them again.";

const REFORMAT_INSTRUCTION: &str = "Your previous reply had no usable candidate block. Reply again with ONLY \
a fenced block opened by ```candidates and one line per candidate in the form \
`depth=<int> P=<int> width=<int> action=<refine|rank|reject>`.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sections: Vec<PromptSection>,
    pub token_estimate: usize,
}

impl PromptBundle {
    pub fn section(&self, kind: SectionKind) -> &str {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .map(|s| s.body.as_str())
            .unwrap_or("")
    }

    pub fn render(&self) -> String {
        render_sections(&self.sections)
    }

    /// Everything after the SYSTEM section, sent as the user turn.
    pub fn render_user(&self) -> String {
        let rest: Vec<_> = self
            .sections
            .iter()
            .filter(|s| s.kind != SectionKind::System)
            .cloned()
            .collect();
        render_sections(&rest)
    }
}

fn render_sections(sections: &[PromptSection]) -> String {
    let mut out = String::new();
    for s in sections {
        let _ = writeln!(out, "{}\n{}\n", s.kind.header(), s.body.trim_end());
    }
    out
}

fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

fn render_data_point(p: &HardwareDataPoint) -> String {
    let m = &p.metrics;
    let u = &m.utilization_pct;
    let mut line = format!(
        "- id={} {} verdict={} feasible={} cycles={} util_bram={}% util_dsp={}% util_ff={}% util_lut={}%",
        p.point_id,
        p.configuration,
        p.verdict,
        m.feasible,
        m.total_cycles,
        u.bram_18k,
        u.dsp,
        u.ff,
        u.lut
    );
    if let Some(r) = &p.rationale {
        let _ = write!(line, " note=\"{}\"", r.replace(['\n', '"'], " "));
    }
    line
}

fn render_context(docs: &[CorpusDocument]) -> String {
    if docs.is_empty() {
        return "(none)".into();
    }
    let mut out = String::new();
    for d in docs {
        let _ = writeln!(out, "### {} ({:?})\n{}", d.doc_id, d.kind, d.text.trim_end());
    }
    out
}

fn render_task(s: &ExplorationSnapshot) -> String {
    let w = &s.workload;
    let dev = &s.device;
    let d = &s.directives;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Workload: {} kernel={} length_L={} data_width={}",
        w.name, w.kernel_kind, w.length_l, w.data_width
    );
    let _ = writeln!(
        out,
        "Device: {} bram_18k={} dsp={} ff={} lut={} clock_target_ns={}",
        dev.name, dev.bram_18k, dev.dsp, dev.ff, dev.lut, dev.clock_target_ns
    );
    let _ = writeln!(
        out,
        "Directives: buffer_depth={:?} parallelism_P={:?} data_width={:?}",
        d.buffer_depth(),
        d.parallelism_p(),
        d.data_width()
    );
    let _ = writeln!(out, "Rules: buffer_depth >= length_L; parallelism_P <= length_L.");
    match &s.best {
        Some((p, obj)) => {
            let _ = writeln!(out, "Best so far: {p} total_cycles={obj}");
        }
        None => {
            let _ = writeln!(out, "Best so far: none");
        }
    }
    if !s.frontier.is_empty() {
        let list: Vec<_> = s.frontier.iter().map(|p| format!("({p})")).collect();
        let _ = writeln!(out, "Frontier: {}", list.join(" "));
    }
    let _ = writeln!(
        out,
        "Action: propose up to {} new candidate points (not yet evaluated) that minimize total cycles within device limits.",
        s.candidates_per_iteration.max(1)
    );
    out
}

fn render_steps() -> String {
    let hints = [
        "List the workload, device limits and directive sets that bound every candidate.",
        "Summarize what the prior data points show, including rejected and infeasible ones.",
        "Name the module or resource that limits latency or feasibility.",
        "Choose candidates that address the bottleneck while keeping the set diverse.",
        "End with a ```candidates block, one line per candidate: depth=<int> P=<int> width=<int> action=<refine|rank|reject> [rank=<int>].",
    ];
    REASONING_STEPS
        .iter()
        .zip(hints)
        .map(|(marker, hint)| format!("{marker}: {hint}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the five-section prompt. Data points are added (newest first)
/// and then context documents (in rank order) while the budget allows.
pub fn build_prompt(state: &ExplorationSnapshot, retrieved: &[CorpusDocument], cfg: &AdvisorConfig) -> Result<PromptBundle> {
    let budget = cfg.token_budget;
    let task = render_task(state);
    let steps = render_steps();
    let assemble = |context: &[CorpusDocument], points: &[&HardwareDataPoint]| {
        let data = if points.is_empty() {
            "(none)".to_string()
        } else {
            points.iter().map(|p| render_data_point(p)).collect::<Vec<_>>().join("\n")
        };
        let sections = vec![
            PromptSection {
                kind: SectionKind::System,
                body: SYSTEM_PREAMBLE.into(),
            },
            PromptSection {
                kind: SectionKind::Context,
                body: render_context(context),
            },
            PromptSection {
                kind: SectionKind::DataPoints,
                body: data,
            },
            PromptSection {
                kind: SectionKind::Task,
                body: task.clone(),
            },
            PromptSection {
                kind: SectionKind::ReasoningSteps,
                body: steps.clone(),
            },
        ];
        let token_estimate = count_tokens(&render_sections(&sections));
        PromptBundle {
            sections,
            token_estimate,
        }
    };

    let minimal = assemble(&[], &[]);
    if minimal.token_estimate > budget {
        return Err(Error::BudgetExceeded {
            needed: minimal.token_estimate,
            budget,
        });
    }

    let recent_start = state.data_points.len().saturating_sub(cfg.max_data_points);
    let recent = &state.data_points[recent_start..];
    let mut points: Vec<&HardwareDataPoint> = Vec::new();
    let mut bundle = minimal;
    for p in recent.iter().rev() {
        let mut trial = points.clone();
        trial.insert(0, p);
        let candidate = assemble(&[], &trial);
        if candidate.token_estimate > budget {
            break;
        }
        points = trial;
        bundle = candidate;
    }
    let mut context: Vec<CorpusDocument> = Vec::new();
    for doc in retrieved {
        context.push(doc.clone());
        let candidate = assemble(&context, &points);
        if candidate.token_estimate > budget {
            context.pop();
            break;
        }
        bundle = candidate;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Refine,
    Rank,
    Reject,
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "refine" => Ok(Action::Refine),
            "rank" => Ok(Action::Rank),
            "reject" => Ok(Action::Reject),
            other => Err(Error::Parse(format!("unknown action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: ParameterPoint,
    pub action: Action,
    pub rank_hint: Option<u32>,
}

/// Non-empty candidate list with distinct rank hints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub candidates: Vec<Candidate>,
    pub rationale: String,
}

impl Proposal {
    pub fn new(candidates: Vec<Candidate>, rationale: impl Into<String>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::validation("candidates", "proposal has no candidates"));
        }
        let mut seen = BTreeSet::new();
        for hint in candidates.iter().filter_map(|c| c.rank_hint) {
            if !seen.insert(hint) {
                return Err(Error::validation("rank_hint", format!("duplicate rank_hint {hint}")));
            }
        }
        Ok(Self {
            candidates,
            rationale: rationale.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub point: ParameterPoint,
    pub action: Action,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    /// `None` when no candidate passed validation.
    pub accepted: Option<Proposal>,
    pub rejected: Vec<RejectedCandidate>,
    /// Lines inside the block that did not match the candidate format.
    pub malformed: Vec<String>,
    pub rationale: String,
}

struct Block<'a> {
    lines: Vec<&'a str>,
    start: usize,
    end: usize,
}

fn fenced_blocks(raw: &str) -> Vec<Block<'_>> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim_start().starts_with("```") {
            let start = i;
            let mut j = i + 1;
            while j < lines.len() && !lines[j].trim_start().starts_with("```") {
                j += 1;
            }
            blocks.push(Block {
                lines: lines[start + 1..j.min(lines.len())].to_vec(),
                start,
                end: j,
            });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    blocks
}

fn parse_candidate_line(line: &str) -> std::result::Result<(ParameterPoint, Action, Option<u32>), String> {
    let (mut depth, mut p, mut width, mut action, mut rank) = (None, None, None, None, None);
    for token in line.split_whitespace() {
        let token = token.trim_matches(|c| c == ',' || c == ';' || c == '-' || c == '*');
        if token.is_empty() {
            continue;
        }
        let Some((key, value)) = token.split_once('=') else {
            return Err(format!("token `{token}` is not key=value"));
        };
        let int = |v: &str| v.parse::<u64>().map_err(|_| format!("`{v}` is not an integer"));
        match key {
            "depth" => depth = Some(int(value)?),
            "P" | "p" => p = Some(int(value)?),
            "width" => width = Some(u32::try_from(int(value)?).map_err(|_| "width too large".to_string())?),
            "action" => action = Some(value.parse::<Action>().map_err(|e| e.to_string())?),
            "rank" => rank = Some(u32::try_from(int(value)?).map_err(|_| "rank too large".to_string())?),
            other => return Err(format!("unknown key `{other}`")),
        }
    }
    match (depth, p, width, action) {
        (Some(d), Some(p), Some(w), Some(a)) => Ok((ParameterPoint::new(d, p, w), a, rank)),
        _ => Err("missing one of depth, P, width, action".into()),
    }
}

/// Extracts and bound-checks the candidate block of a reply.
pub fn parse_proposal(raw: &str, d: &Directives, w: &WorkloadSpec) -> Result<ParseOutcome> {
    let blocks = fenced_blocks(raw);
    let parsed_blocks: Vec<_> = blocks
        .iter()
        .map(|b| {
            let rows: Vec<_> = b
                .lines
                .iter()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .map(|l| (l, parse_candidate_line(l)))
                .collect();
            (b, rows)
        })
        .collect();
    let Some((block, rows)) = parsed_blocks
        .into_iter()
        .find(|(_, rows)| rows.iter().any(|(_, r)| r.is_ok()))
    else {
        return Err(Error::ProposalUnparseable);
    };

    let all_lines: Vec<&str> = raw.lines().collect();
    let rationale = all_lines
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < block.start || *i > block.end)
        .map(|(_, l)| *l)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string();

    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut malformed = Vec::new();
    let mut hints = BTreeSet::new();
    for (line, row) in rows {
        match row {
            Err(why) => malformed.push(format!("{line}: {why}")),
            Ok((point, action, rank_hint)) => {
                let validity = validate_point(&point, w, d);
                let mut reasons: Vec<String> = validity.reasons().into_iter().map(String::from).collect();
                if let Some(h) = rank_hint {
                    if !hints.insert(h) {
                        reasons.push("duplicate rank_hint".into());
                    }
                }
                if reasons.is_empty() {
                    accepted.push(Candidate {
                        point,
                        action,
                        rank_hint,
                    });
                } else {
                    rejected.push(RejectedCandidate { point, action, reasons });
                }
            }
        }
    }
    let accepted = if accepted.is_empty() {
        None
    } else {
        Some(Proposal::new(accepted, rationale.clone())?)
    };
    Ok(ParseOutcome {
        accepted,
        rejected,
        malformed,
        rationale,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

/// A chat-completion backend. Implementations return the assistant text.
pub trait ChatProvider: Send + Sync {
    fn chat(&self, messages: &[ChatMessage], cfg: &AdvisorConfig) -> Result<String>;
}

#[derive(Serialize)]
struct ChatOptions {
    temperature: f64,
    seed: u64,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    stream: bool,
    options: ChatOptions,
}

#[derive(Deserialize)]
struct ChatResponse {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Local-inference chat server (`POST <endpoint_url>`, non-streaming).
#[derive(Debug)]
pub struct RemoteChatProvider {
    client: reqwest::blocking::Client,
}

impl RemoteChatProvider {
    pub fn new(cfg: &AdvisorConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_s.max(1)))
            .build()
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        Ok(Self { client })
    }
}

impl ChatProvider for RemoteChatProvider {
    fn chat(&self, messages: &[ChatMessage], cfg: &AdvisorConfig) -> Result<String> {
        let body = ChatRequest {
            model: &cfg.model_name,
            messages,
            stream: false,
            options: ChatOptions {
                temperature: cfg.temperature,
                seed: cfg.seed,
            },
        };
        let resp = self
            .client
            .post(&cfg.endpoint_url)
            .json(&body)
            .send()
            .map_err(|e| Error::ProviderUnreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::ProviderUnreachable(format!("{} returned {status}", cfg.endpoint_url)));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Error::ProviderUnreachable(format!("bad response body: {e}")))?;
        Ok(parsed.message.content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Advice {
    pub outcome: ParseOutcome,
    /// Present for the remote provider only.
    pub transcript: Option<Transcript>,
}

/// Words used to query the retrieval corpus for the current snapshot.
pub fn retrieval_query(state: &ExplorationSnapshot) -> String {
    let mut q = format!(
        "{} buffer depth parallelism compute load store axi stream width {}",
        state.workload.kernel_kind, state.workload.data_width
    );
    if state.best.is_some() {
        q.push_str(" latency unroll");
    }
    q
}

pub struct Advisor {
    cfg: AdvisorConfig,
    provider: Option<Box<dyn ChatProvider>>,
    index: Option<RetrievalIndex>,
}

impl std::fmt::Debug for Advisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Advisor")
            .field("cfg", &self.cfg)
            .field("has_provider", &self.provider.is_some())
            .field("index_docs", &self.index.as_ref().map(RetrievalIndex::len))
            .finish()
    }
}

impl Advisor {
    /// Builds the provider named by `cfg`.
    pub fn new(cfg: AdvisorConfig) -> Result<Self> {
        cfg.validate()?;
        let provider: Option<Box<dyn ChatProvider>> = match cfg.provider {
            ProviderKind::RemoteChat => Some(Box::new(RemoteChatProvider::new(&cfg)?)),
            ProviderKind::Heuristic => None,
        };
        Ok(Self {
            cfg,
            provider,
            index: None,
        })
    }

    /// Uses `provider` for remote-chat requests.
    pub fn with_provider(cfg: AdvisorConfig, provider: Box<dyn ChatProvider>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: AdvisorConfig {
                provider: ProviderKind::RemoteChat,
                ..cfg
            },
            provider: Some(provider),
            index: None,
        })
    }

    pub fn with_index(mut self, index: RetrievalIndex) -> Self {
        self.index = Some(index);
        self
    }

    pub fn config(&self) -> &AdvisorConfig {
        &self.cfg
    }

    pub fn advise(&self, state: &ExplorationSnapshot) -> Result<Advice> {
        let Some(provider) = &self.provider else {
            let proposal = heuristic_advise(state, self.cfg.seed)?;
            let rationale = proposal.rationale.clone();
            return Ok(Advice {
                outcome: ParseOutcome {
                    accepted: Some(proposal),
                    rejected: Vec::new(),
                    malformed: Vec::new(),
                    rationale,
                },
                transcript: None,
            });
        };

        let context = match &self.index {
            Some(idx) => {
                let hits = idx.retrieve(&retrieval_query(state), 8);
                trim_to_budget(&hits, idx, self.cfg.token_budget / 4)
            }
            None => Vec::new(),
        };
        let prompt = build_prompt(state, &context, &self.cfg)?;
        let mut messages = vec![
            ChatMessage::new("system", prompt.section(SectionKind::System)),
            ChatMessage::new("user", prompt.render_user()),
        ];
        let first = provider.chat(&messages, &self.cfg)?;
        match parse_proposal(&first, &state.directives, &state.workload) {
            Ok(outcome) => Ok(Advice {
                outcome,
                transcript: Some(Transcript {
                    prompt: prompt.render(),
                    reply: first,
                }),
            }),
            Err(Error::ProposalUnparseable) => {
                log::warn!("advisor reply had no candidate block, asking once to reformat");
                messages.push(ChatMessage::new("assistant", first.clone()));
                messages.push(ChatMessage::new("user", REFORMAT_INSTRUCTION));
                let second = provider.chat(&messages, &self.cfg)?;
                let outcome = parse_proposal(&second, &state.directives, &state.workload)?;
                Ok(Advice {
                    outcome,
                    transcript: Some(Transcript {
                        prompt: format!("{}\n## REFORMAT\n{REFORMAT_INSTRUCTION}\n", prompt.render()),
                        reply: format!("{first}\n\n--- retry ---\n\n{second}"),
                    }),
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Offline stand-in for the model: neighbors of the best point plus one
/// seeded random unexplored point. A pure function of `(state, seed)`.
pub fn heuristic_advise(state: &ExplorationSnapshot, seed: u64) -> Result<Proposal> {
    let d = &state.directives;
    let limit = state.candidates_per_iteration.max(1);
    let explored = |p: &ParameterPoint| state.evaluated.contains(p) || state.excluded.contains(p);
    let usable = |p: &ParameterPoint| !explored(p) && validate_point(p, &state.workload, d).is_valid();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ state.iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut chosen: Vec<Candidate> = Vec::new();
    let mut rationale = String::new();

    if let Some((best, _)) = &state.best {
        let reserve = usize::from(limit >= 2);
        for q in neighbor_points(best, d).into_iter().filter(|q| usable(q)).take(limit - reserve) {
            chosen.push(Candidate {
                point: q,
                action: Action::Refine,
                rank_hint: None,
            });
        }
        rationale = format!("refine around best point ({best}) with {} neighbor moves", chosen.len());
    }

    let taken: BTreeSet<ParameterPoint> = chosen.iter().map(|c| c.point).collect();
    let pool: Vec<ParameterPoint> = enumerate_points(d)
        .into_iter()
        .filter(|p| usable(p) && !taken.contains(p))
        .collect();
    let random_count = if state.best.is_some() {
        usize::from(chosen.len() < limit).min(pool.len())
    } else {
        limit.min(pool.len())
    };
    let mut pool = pool;
    for _ in 0..random_count {
        let i = rng.random_range(0..pool.len());
        chosen.push(Candidate {
            point: pool.swap_remove(i),
            action: Action::Rank,
            rank_hint: None,
        });
    }
    if random_count > 0 {
        if !rationale.is_empty() {
            rationale.push_str("; ");
        }
        let _ = write!(rationale, "{random_count} random unexplored point(s) for diversity");
    }

    if chosen.is_empty() {
        return Err(Error::SpaceExhausted);
    }
    Proposal::new(chosen, rationale)
}
