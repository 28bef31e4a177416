//! The virtual-propagation engine: instantiate persona-grounded agents on
//! a social subgraph, run stepwise action-driven diffusion per news item,
//! and emit cascade graphs plus a replayable run file.
//!
//! Determinism contract: a (corpus, persona pool, config, mock backend)
//! tuple fully determines the serialized run. All iteration is in
//! ascending agent-id order, the run RNG is ChaCha8 seeded from the
//! config, and each agent carries its own decision RNG stream derived
//! from (run seed, agent id) so outcomes do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentProfile, LongTermMemory, LtmEntrySnapshot, PolicyMemory, Role, ShortTermMemory, StmKind,
    StmRecord, StmRecordSnapshot,
};
use crate::backend::{
    prompts, DecisionBackend, DecisionRequest, RequestContext, TokenLedger,
};
use crate::corpus::{top_influential, ActionEvent, ActionKind, CascadeEdge, CascadeGraph, Corpus, NewsItem};
use crate::embed::{cosine, fnv1a64, Embedding, EmbeddingProvider};
use crate::persona::PersonaProfile;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("embedding failure: {0}")]
    Embed(#[from] crate::embed::EmbedError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed run file {path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

/// Engine settings. Defaults: one seed agent, depth 4, verifiers are the
/// top 5% by influence, consolidation every 10 steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed_count: usize,
    pub max_depth: u64,
    pub max_steps: u64,
    pub rng_seed: u64,
    pub verifier_fraction: f64,
    #[serde(default)]
    pub explicit_verifiers: Vec<String>,
    pub consolidation_period: u64,
    pub stm_capacity: usize,
    pub ltm_decay: f64,
    pub ltm_forget_threshold: f64,
    /// Warn reaches graph neighbors by default; set to broadcast to the
    /// whole roster instead.
    pub warn_global: bool,
    /// Mock fact-check oracle: news whose text contains any of these
    /// (case-insensitive) is flagged as fake by verifiers.
    #[serde(default)]
    pub fact_check_keywords: Vec<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            seed_count: 1,
            max_depth: 4,
            max_steps: 1024,
            rng_seed: 7,
            verifier_fraction: 0.05,
            explicit_verifiers: vec![],
            consolidation_period: 10,
            stm_capacity: 20,
            ltm_decay: 0.05,
            ltm_forget_threshold: 0.05,
            warn_global: false,
            fact_check_keywords: vec![],
        }
    }
}

/// Mutable per-agent simulation state.
pub struct AgentState {
    pub profile: AgentProfile,
    pub persona_embedding: Embedding,
    pub stm: ShortTermMemory,
    pub ltm: LongTermMemory,
    pub policy: Option<PolicyMemory>,
    rng: ChaCha8Rng,
}

/// Roster, social graph, and the global step clock. Memories persist
/// across cascades in a batch.
pub struct Environment {
    pub agents: BTreeMap<String, AgentState>,
    pub graph: BTreeMap<String, BTreeSet<String>>,
    pub step: u64,
    run_rng: ChaCha8Rng,
    config: SimulationConfig,
}

impl Environment {
    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn verifier_ids(&self) -> BTreeSet<String> {
        self.agents
            .values()
            .filter(|a| a.profile.role == Role::Verifier)
            .map(|a| a.profile.agent_id.clone())
            .collect()
    }

    pub fn roster(&self) -> Vec<AgentProfile> {
        self.agents.values().map(|a| a.profile.clone()).collect()
    }
}

/// Builds the agent roster over the corpus's symmetrized follow graph.
/// Verifiers are the top influence fraction plus any explicitly configured
/// ids; every agent draws a persona from the matching pool with the run
/// RNG (verifiers fall back to the diffuser pool when no verifier persona
/// exists). All memories start empty; verifiers carry empty policy memory.
pub fn init_environment(
    corpus: &Corpus,
    diffuser_personas: &[PersonaProfile],
    verifier_personas: &[PersonaProfile],
    provider: &dyn EmbeddingProvider,
    config: &SimulationConfig,
) -> Result<Environment, SimError> {
    if diffuser_personas.is_empty() {
        return Err(SimError::Config("empty persona pool".into()));
    }
    if corpus.users.is_empty() {
        return Err(SimError::Config("no users to instantiate agents from".into()));
    }
    if config.seed_count < 1 {
        return Err(SimError::Config("seed_count must be at least 1".into()));
    }
    if config.max_depth < 1 {
        return Err(SimError::Config("max_depth must be at least 1".into()));
    }
    let mut run_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let graph = corpus.follow_graph();
    let mut verifier_ids: BTreeSet<String> =
        top_influential(&corpus.users, config.verifier_fraction);
    verifier_ids.extend(config.explicit_verifiers.iter().cloned());

    let mut users: Vec<&crate::corpus::UserRecord> = corpus.users.iter().collect();
    users.sort_by(|a, b| a.id.cmp(&b.id));

    let mut agents = BTreeMap::new();
    for user in users {
        let role = if verifier_ids.contains(&user.id) { Role::Verifier } else { Role::Diffuser };
        let pool = match role {
            Role::Verifier if !verifier_personas.is_empty() => verifier_personas,
            _ => diffuser_personas,
        };
        let persona = pool[run_rng.random_range(0..pool.len() as u64) as usize].clone();
        let persona_embedding = provider.embed(&persona.profile_text)?;
        let profile = AgentProfile {
            agent_id: user.id.clone(),
            role,
            persona,
            follower_count: user.follower_count,
            avg_likes: user.avg_likes,
            repost_count: user.repost_count,
        };
        agents.insert(
            user.id.clone(),
            AgentState {
                profile,
                persona_embedding,
                stm: ShortTermMemory::new(config.stm_capacity),
                ltm: LongTermMemory::new(config.ltm_decay, config.ltm_forget_threshold),
                policy: if role == Role::Verifier { Some(PolicyMemory::default()) } else { None },
                rng: ChaCha8Rng::seed_from_u64(config.rng_seed ^ fnv1a64(user.id.as_bytes(), 0x51ed)),
            },
        );
    }
    Ok(Environment { agents, graph, step: 0, run_rng, config: config.clone() })
}

/// One replay-log entry; the run file carries these in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    CascadeStart { news_id: String, seeds: Vec<String> },
    Exposed { news_id: String, exposers: Vec<String> },
    LtmRetrieval { news_id: String, hits: u64 },
    Decision { news_id: String, action: ActionKind, coerced: bool },
    WarningReceived { from: String },
    Consolidated { live_entries: u64 },
    CascadeEnd { news_id: String, nodes: u64, edges: u64, aborted: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub agent_id: String,
    #[serde(flatten)]
    pub entry: LogEntry,
}

/// Final memory snapshot for replay and debugging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub agent_id: String,
    pub stm: Vec<StmRecordSnapshot>,
    pub ltm: Vec<LtmEntrySnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyMemory>,
}

/// Everything one batch produced: config echo, roster, cascades in news
/// order, the replay log, token ledger, and memory snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub config: SimulationConfig,
    pub backend_name: String,
    pub roster: Vec<AgentProfile>,
    pub cascades: Vec<CascadeGraph>,
    pub log: Vec<LogLine>,
    pub ledger: TokenLedger,
    pub memories: Vec<MemorySnapshot>,
}

fn snippet(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

struct PendingExposure {
    exposers: BTreeSet<String>,
}

/// Runs one cascade. Seeds are drawn uniformly with the run RNG; each
/// wave, the newly exposed agents decide in ascending id order. `forward`
/// exposes the forwarder's graph neighbors at the next wave; any non-view
/// reaction by an exposed agent makes it a cascade node with influence
/// edges from its exposers; verifier `warn` drops a warning record into
/// neighbors' short-term memories. Exposure records land in memories after
/// the decision, so retrieval context reflects prior interactions only.
pub fn run_cascade(
    env: &mut Environment,
    news: &NewsItem,
    backend: &dyn DecisionBackend,
    provider: &dyn EmbeddingProvider,
    ledger: &mut TokenLedger,
    log: &mut Vec<LogLine>,
) -> Result<CascadeGraph, SimError> {
    let news_embedding = provider.embed(&news.text)?;
    let news_lower = news.text.to_lowercase();
    let keyword_hit = env
        .config
        .fact_check_keywords
        .iter()
        .any(|k| news_lower.contains(&k.to_lowercase()));

    let agent_ids: Vec<String> = env.agents.keys().cloned().collect();
    let mut seeds: Vec<String> = Vec::new();
    let mut pool: Vec<usize> = (0..agent_ids.len()).collect();
    let want = env.config.seed_count.min(agent_ids.len());
    for i in 0..want {
        let j = i + env.run_rng.random_range(0..(pool.len() - i) as u64) as usize;
        pool.swap(i, j);
        seeds.push(agent_ids[pool[i]].clone());
    }
    seeds.sort();
    log.push(LogLine {
        step: env.step,
        agent_id: String::new(),
        entry: LogEntry::CascadeStart { news_id: news.id.clone(), seeds: seeds.clone() },
    });

    let mut nodes: BTreeSet<String> = seeds.iter().cloned().collect();
    let mut edges: Vec<CascadeEdge> = Vec::new();
    let mut events: Vec<ActionEvent> = Vec::new();
    let mut decided: BTreeSet<String> = BTreeSet::new();
    let mut aborted = false;

    // Wave 0 is the seed layer; exposures for wave d+1 are produced by
    // forwarders at wave d, up to the configured depth.
    let mut frontier: BTreeMap<String, PendingExposure> = seeds
        .iter()
        .map(|s| (s.clone(), PendingExposure { exposers: BTreeSet::new() }))
        .collect();
    let mut wave = 0u64;
    let mut waves_run = 0u64;

    while !frontier.is_empty() && waves_run < env.config.max_steps {
        env.step += 1;
        waves_run += 1;
        let mut next: BTreeMap<String, PendingExposure> = BTreeMap::new();

        for (agent_id, exposure) in &frontier {
            if aborted {
                break;
            }
            decided.insert(agent_id.clone());
            if !exposure.exposers.is_empty() {
                log.push(LogLine {
                    step: env.step,
                    agent_id: agent_id.clone(),
                    entry: LogEntry::Exposed {
                        news_id: news.id.clone(),
                        exposers: exposure.exposers.iter().cloned().collect(),
                    },
                });
            }

            // Build the decision context from the agent's own memories.
            let state = env.agents.get_mut(agent_id).expect("roster id");
            let persona_news_cos = cosine(&state.persona_embedding, &news_embedding).unwrap_or(0.0);
            let stm_hits = state.stm.retrieve(&news_embedding, 3);
            let stm_top_sims: Vec<f64> = stm_hits.iter().map(|(_, s)| *s).collect();
            let stm_digest = if stm_hits.is_empty() {
                "nothing yet".to_string()
            } else {
                stm_hits.iter().map(|(r, _)| r.text.clone()).collect::<Vec<_>>().join("; ")
            };
            let warning_seen = state.stm.has_warning();
            let ltm_hits = state.ltm.retrieve(
                agent_id,
                &news.text,
                backend,
                provider,
                &mut state.rng,
                ledger,
                env.step,
            );
            let (ltm_digest, ltm_count) = match ltm_hits {
                Ok(hits) => {
                    let digest = if hits.is_empty() {
                        "nothing yet".to_string()
                    } else {
                        hits.iter().map(|(e, _)| e.text.clone()).collect::<Vec<_>>().join("; ")
                    };
                    (digest, hits.len() as u64)
                }
                Err(_) => ("unavailable".to_string(), 0),
            };
            if !state.ltm.entries.is_empty() {
                log.push(LogLine {
                    step: env.step,
                    agent_id: agent_id.clone(),
                    entry: LogEntry::LtmRetrieval { news_id: news.id.clone(), hits: ltm_count },
                });
            }

            let request = match state.profile.role {
                Role::Diffuser => {
                    let req = DecisionRequest::new(
                        agent_id.clone(),
                        prompts::diffuser_action(
                            &state.profile.persona.profile_text,
                            &news.text,
                            &stm_digest,
                            &ltm_digest,
                            &[ActionKind::Comment, ActionKind::Forward, ActionKind::Like, ActionKind::View],
                        ),
                        RequestContext::DiffuserAction {
                            persona_news_cos,
                            stm_top_sims,
                            warning_seen,
                            news_head: snippet(&news.text, 5),
                        },
                    );
                    req
                }
                Role::Verifier => {
                    let policy_hit = state
                        .policy
                        .as_ref()
                        .map(|p| p.flags_entity(&news.text))
                        .unwrap_or(false);
                    let policy_digest = state
                        .policy
                        .as_ref()
                        .map(|p| p.digest())
                        .unwrap_or_else(|| "none".into());
                    DecisionRequest::new(
                        agent_id.clone(),
                        prompts::verifier_action(
                            &state.profile.persona.profile_text,
                            &news.text,
                            &policy_digest,
                            if keyword_hit { "matched a known false-claim marker" } else { "no marker matched" },
                            &[
                                ActionKind::Comment,
                                ActionKind::Forward,
                                ActionKind::Like,
                                ActionKind::View,
                                ActionKind::FactCheck,
                                ActionKind::Warn,
                            ],
                        ),
                        RequestContext::VerifierAction { keyword_hit, policy_hit },
                    )
                }
            };

            let response = match backend.decide(&request, &mut state.rng) {
                Ok(r) => r,
                Err(_) => {
                    aborted = true;
                    break;
                }
            };
            ledger.record_response(request.kind, &response);
            let action = response.action.unwrap_or(ActionKind::View);
            // Role legality is part of the response contract.
            debug_assert!(
                !(action.verifier_only() && state.profile.role == Role::Diffuser),
                "diffuser produced a verifier action"
            );
            log.push(LogLine {
                step: env.step,
                agent_id: agent_id.clone(),
                entry: LogEntry::Decision {
                    news_id: news.id.clone(),
                    action,
                    coerced: response.coerced,
                },
            });
            events.push(ActionEvent {
                agent_id: agent_id.clone(),
                step: wave,
                action,
                payload_text: if action == ActionKind::Comment || action == ActionKind::Warn {
                    Some(response.text.clone())
                } else {
                    None
                },
                stance: response.stance,
            });

            let engaged = action != ActionKind::View;
            if engaged {
                nodes.insert(agent_id.clone());
                for exposer in &exposure.exposers {
                    edges.push(CascadeEdge {
                        source: exposer.clone(),
                        target: agent_id.clone(),
                        step: wave,
                        action,
                    });
                }
            }

            // Remember the exposure itself (after deciding, so the context
            // above reflected prior interactions only).
            let exposure_record = StmRecord {
                text: format!("saw news {}: {}", news.id, snippet(&news.text, 20)),
                embedding: news_embedding.clone(),
                timestamp: env.step,
                source: exposure
                    .exposers
                    .iter()
                    .next()
                    .cloned()
                    .unwrap_or_else(|| "feed".to_string()),
                kind: StmKind::Exposure,
            };
            env.agents.get_mut(agent_id).unwrap().stm.observe(exposure_record);

            match action {
                ActionKind::Forward if wave < env.config.max_depth => {
                    let neighbors = env.graph.get(agent_id).cloned().unwrap_or_default();
                    for neighbor in neighbors {
                        if decided.contains(&neighbor) || frontier.contains_key(&neighbor) {
                            continue;
                        }
                        next.entry(neighbor)
                            .or_insert_with(|| PendingExposure { exposers: BTreeSet::new() })
                            .exposers
                            .insert(agent_id.clone());
                    }
                }
                ActionKind::Warn => {
                    let targets: Vec<String> = if env.config.warn_global {
                        env.agents.keys().filter(|id| *id != agent_id).cloned().collect()
                    } else {
                        env.graph.get(agent_id).cloned().unwrap_or_default().into_iter().collect()
                    };
                    let warning_text = format!("warning about {}: {}", news.id, snippet(&news.text, 8));
                    let warning_embedding = provider.embed(&warning_text)?;
                    for target in targets {
                        log.push(LogLine {
                            step: env.step,
                            agent_id: target.clone(),
                            entry: LogEntry::WarningReceived { from: agent_id.clone() },
                        });
                        env.agents.get_mut(&target).unwrap().stm.observe(StmRecord {
                            text: warning_text.clone(),
                            embedding: warning_embedding.clone(),
                            timestamp: env.step,
                            source: agent_id.clone(),
                            kind: StmKind::Warning,
                        });
                    }
                }
                _ => {}
            }
        }

        // Periodic consolidation sweeps the whole roster in id order; a
        // summarized short-term window starts fresh.
        if env.config.consolidation_period > 0 && env.step % env.config.consolidation_period == 0 {
            for agent_id in &agent_ids {
                let state = env.agents.get_mut(agent_id).unwrap();
                if state.stm.is_empty() {
                    continue;
                }
                let stm = state.stm.clone();
                if state
                    .ltm
                    .consolidate(agent_id, &stm, backend, &mut state.rng, ledger, env.step)
                    .is_ok()
                {
                    state.stm.clear();
                    log.push(LogLine {
                        step: env.step,
                        agent_id: agent_id.clone(),
                        entry: LogEntry::Consolidated { live_entries: state.ltm.entries.len() as u64 },
                    });
                }
            }
        }

        if aborted {
            break;
        }
        frontier = next;
        wave += 1;
    }

    let graph = CascadeGraph {
        news_id: news.id.clone(),
        nodes: nodes.into_iter().collect(),
        edges,
        seeds,
        events,
    };
    log.push(LogLine {
        step: env.step,
        agent_id: String::new(),
        entry: LogEntry::CascadeEnd {
            news_id: news.id.clone(),
            nodes: graph.nodes.len() as u64,
            edges: graph.edges.len() as u64,
            aborted,
        },
    });
    debug_assert!(graph.validate().is_ok(), "engine produced an invalid cascade");
    Ok(graph)
}

/// Runs the batch in news order. Long-term memories, policy state, and
/// the step clock persist across items; the ledger aggregates all calls.
pub fn run_batch(
    env: &mut Environment,
    news: &[NewsItem],
    backend: &dyn DecisionBackend,
    backend_name: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<SimulationRun, SimError> {
    let mut ledger = TokenLedger::new();
    let mut log = Vec::new();
    let mut cascades = Vec::new();
    for item in news {
        cascades.push(run_cascade(env, item, backend, provider, &mut ledger, &mut log)?);
    }
    let memories = env
        .agents
        .values()
        .map(|a| MemorySnapshot {
            agent_id: a.profile.agent_id.clone(),
            stm: a.stm.snapshot(),
            ltm: a.ltm.snapshot(),
            policy: a.policy.clone(),
        })
        .collect();
    Ok(SimulationRun {
        config: env.config.clone(),
        backend_name: backend_name.to_string(),
        roster: env.roster(),
        cascades,
        log,
        ledger,
        memories,
    })
}

// ---------------------------------------------------------------------------
// Run file io
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RunRecord {
    Config { config: SimulationConfig, backend: String },
    Agent { profile: AgentProfile },
    Cascade { graph: CascadeGraph },
    Log { line: LogLine },
    Memory { snapshot: MemorySnapshot },
    Ledger { ledger: TokenLedger },
}

/// Writes a run as record-tagged JSON lines (config, roster, cascades,
/// log, memories, ledger — in that order).
pub fn save_run(path: &Path, run: &SimulationRun) -> Result<(), SimError> {
    let mut buf = String::new();
    let mut push = |record: &RunRecord| {
        buf.push_str(&serde_json::to_string(record).expect("serializable record"));
        buf.push('\n');
    };
    push(&RunRecord::Config { config: run.config.clone(), backend: run.backend_name.clone() });
    for profile in &run.roster {
        push(&RunRecord::Agent { profile: profile.clone() });
    }
    for graph in &run.cascades {
        push(&RunRecord::Cascade { graph: graph.clone() });
    }
    for line in &run.log {
        push(&RunRecord::Log { line: line.clone() });
    }
    for snapshot in &run.memories {
        push(&RunRecord::Memory { snapshot: snapshot.clone() });
    }
    push(&RunRecord::Ledger { ledger: run.ledger.clone() });
    let mut file = std::fs::File::create(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(buf.as_bytes()).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_run(path: &Path) -> Result<SimulationRun, SimError> {
    let data = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut config: Option<(SimulationConfig, String)> = None;
    let mut roster = Vec::new();
    let mut cascades = Vec::new();
    let mut log = Vec::new();
    let mut memories = Vec::new();
    let mut ledger = TokenLedger::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| SimError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match record {
            RunRecord::Config { config: c, backend } => config = Some((c, backend)),
            RunRecord::Agent { profile } => roster.push(profile),
            RunRecord::Cascade { graph } => {
                graph.validate().map_err(|e| SimError::Malformed {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                cascades.push(graph);
            }
            RunRecord::Log { line } => log.push(line),
            RunRecord::Memory { snapshot } => memories.push(snapshot),
            RunRecord::Ledger { ledger: l } => ledger = l,
        }
    }
    let (config, backend_name) = config.ok_or_else(|| SimError::Malformed {
        path: path.display().to_string(),
        line: 0,
        message: "missing config record".into(),
    })?;
    // Verifier-only actions must trace back to verifier agents.
    let verifiers: BTreeSet<&str> = roster
        .iter()
        .filter(|p| p.role == Role::Verifier)
        .map(|p| p.agent_id.as_str())
        .collect();
    for graph in &cascades {
        for event in &graph.events {
            if event.action.verifier_only() && !verifiers.contains(event.agent_id.as_str()) {
                return Err(SimError::Malformed {
                    path: path.display().to_string(),
                    line: 0,
                    message: format!(
                        "{} emitted by non-verifier {}",
                        event.action.as_str(),
                        event.agent_id
                    ),
                });
            }
        }
    }
    Ok(SimulationRun { config, backend_name, roster, cascades, log, ledger, memories })
}
