//! Agent state: profiles, short-term memory, long-term memory with
//! exponential decay, and verifier policy memory with reflective updates.
//!
//! Timestamps are integer simulation steps, not wall-clock, so replays are
//! exact. Each agent's memory is single-writer; different agents' memories
//! are independent.

use std::collections::VecDeque;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::backend::{
    decompose_buckets, prompts, BackendError, DecisionBackend, DecisionRequest, RequestContext,
    TokenLedger,
};
use crate::embed::{cosine, Embedding, EmbeddingProvider};
use crate::persona::PersonaProfile;

/// Role of a simulated agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Diffuser,
    Verifier,
}

/// Static identity of an agent: role, persona, and the social metadata it
/// was instantiated from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: String,
    pub role: Role,
    pub persona: PersonaProfile,
    pub follower_count: u64,
    pub avg_likes: f64,
    pub repost_count: u64,
}

impl AgentProfile {
    /// Text form used to embed the agent as a graph node.
    pub fn profile_text(&self) -> String {
        format!(
            "{} {} followers {} reposts {}",
            match self.role {
                Role::Diffuser => "diffuser",
                Role::Verifier => "verifier",
            },
            self.persona.profile_text,
            self.follower_count,
            self.repost_count
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StmKind {
    Exposure,
    Comment,
    Warning,
}

/// One observed interaction.
#[derive(Debug, Clone)]
pub struct StmRecord {
    pub text: String,
    pub embedding: Embedding,
    pub timestamp: u64,
    pub source: String,
    pub kind: StmKind,
}

/// Snapshot form of a record (embeddings are recomputed on demand).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StmRecordSnapshot {
    pub text: String,
    pub timestamp: u64,
    pub source: String,
    pub kind: StmKind,
}

/// Ring of the latest `capacity` interactions; eviction is strictly
/// oldest-first.
#[derive(Debug, Clone)]
pub struct ShortTermMemory {
    capacity: usize,
    records: VecDeque<StmRecord>,
}

impl ShortTermMemory {
    pub fn new(capacity: usize) -> ShortTermMemory {
        ShortTermMemory { capacity: capacity.max(1), records: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &StmRecord> {
        self.records.iter()
    }

    pub fn observe(&mut self, record: StmRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn has_warning(&self) -> bool {
        self.records.iter().any(|r| r.kind == StmKind::Warning)
    }

    /// Top `k` records by cosine similarity to the query; ties prefer the
    /// more recent record.
    pub fn retrieve(&self, query: &Embedding, k: usize) -> Vec<(&StmRecord, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| cosine(query, &r.embedding).ok().map(|s| (i, s)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| b.0.cmp(&a.0))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (&self.records[i], s))
            .collect()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn snapshot(&self) -> Vec<StmRecordSnapshot> {
        self.records
            .iter()
            .map(|r| StmRecordSnapshot {
                text: r.text.clone(),
                timestamp: r.timestamp,
                source: r.source.clone(),
                kind: r.kind,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LtmEntry {
    pub text: String,
    pub embedding: Embedding,
    pub created_at: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtmEntrySnapshot {
    pub text: String,
    pub created_at: u64,
    pub weight: f64,
}

/// Consolidated knowledge store with exponential time decay. An entry's
/// effective weight at step `now` is `weight * exp(-decay * (now -
/// created_at))`; entries whose effective weight falls below
/// `forget_threshold` are dropped at the next consolidation.
#[derive(Debug, Clone)]
pub struct LongTermMemory {
    pub entries: Vec<LtmEntry>,
    pub decay: f64,
    pub forget_threshold: f64,
}

impl LongTermMemory {
    pub fn new(decay: f64, forget_threshold: f64) -> LongTermMemory {
        LongTermMemory { entries: Vec::new(), decay, forget_threshold }
    }

    pub fn decayed_weight(&self, entry: &LtmEntry, now: u64) -> f64 {
        entry.weight * (-self.decay * (now.saturating_sub(entry.created_at)) as f64).exp()
    }

    /// Summarizes the short-term ring into one new entry via the backend
    /// (the entry embedding is the centroid of the summarized records),
    /// then forgets entries that decayed below the threshold. A backend
    /// failure leaves the store unchanged.
    pub fn consolidate(
        &mut self,
        agent_id: &str,
        stm: &ShortTermMemory,
        backend: &dyn DecisionBackend,
        rng: &mut dyn RngCore,
        ledger: &mut TokenLedger,
        now: u64,
    ) -> Result<(), BackendError> {
        if stm.is_empty() {
            return Ok(());
        }
        let texts: Vec<String> = stm.records().map(|r| r.text.clone()).collect();
        let req = DecisionRequest::new(
            agent_id,
            prompts::consolidate(&texts),
            RequestContext::Consolidate { record_texts: texts },
        );
        let resp = backend.decide(&req, rng)?;
        ledger.record_response(req.kind, &resp);
        let members: Vec<&Embedding> = stm.records().map(|r| &r.embedding).collect();
        let embedding = Embedding::centroid(&members);
        self.entries.push(LtmEntry { text: resp.text, embedding, created_at: now, weight: 1.0 });
        self.forget(now);
        Ok(())
    }

    /// Drops entries whose decayed weight fell below the threshold.
    pub fn forget(&mut self, now: u64) {
        let decay = self.decay;
        let eps = self.forget_threshold;
        self.entries
            .retain(|e| e.weight * (-decay * (now.saturating_sub(e.created_at)) as f64).exp() >= eps);
    }

    /// Decomposes the news into entity/event/topic sub-queries through the
    /// backend, retrieves the top-1 entry per sub-query by cosine, and
    /// returns the deduplicated union ordered by decayed-weight-scaled
    /// similarity (descending), recency breaking ties.
    pub fn retrieve(
        &self,
        agent_id: &str,
        news_text: &str,
        backend: &dyn DecisionBackend,
        provider: &dyn EmbeddingProvider,
        rng: &mut dyn RngCore,
        ledger: &mut TokenLedger,
        now: u64,
    ) -> Result<Vec<(&LtmEntry, f64)>, BackendError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let req = DecisionRequest::new(
            agent_id,
            prompts::decompose(news_text),
            RequestContext::Decompose { news_text: news_text.to_string() },
        );
        let resp = backend.decide(&req, rng)?;
        ledger.record_response(req.kind, &resp);
        let sub_queries = parse_decomposition(&resp.text);

        let mut hits: Vec<(usize, f64)> = Vec::new();
        for query in &sub_queries {
            let Ok(query_emb) = provider.embed(query) else { continue };
            let mut best: Option<(usize, f64)> = None;
            for (i, entry) in self.entries.iter().enumerate() {
                let Ok(sim) = cosine(&query_emb, &entry.embedding) else { continue };
                if best.map_or(true, |(_, s)| sim > s) {
                    best = Some((i, sim));
                }
            }
            if let Some((i, sim)) = best {
                if !hits.iter().any(|(j, _)| *j == i) {
                    hits.push((i, sim));
                }
            }
        }
        let mut weighted: Vec<(usize, f64)> = hits
            .into_iter()
            .map(|(i, sim)| (i, sim * self.decayed_weight(&self.entries[i], now)))
            .collect();
        weighted.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then_with(|| self.entries[b.0].created_at.cmp(&self.entries[a.0].created_at))
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(weighted.into_iter().map(|(i, s)| (&self.entries[i], s)).collect())
    }

    pub fn snapshot(&self) -> Vec<LtmEntrySnapshot> {
        self.entries
            .iter()
            .map(|e| LtmEntrySnapshot { text: e.text.clone(), created_at: e.created_at, weight: e.weight })
            .collect()
    }
}

/// Extracts the entity/event/topic sub-query texts from a decomposition
/// response of the form `entity: ...\nevent: ...\ntopic: ...`. Empty
/// buckets are skipped.
pub fn parse_decomposition(text: &str) -> Vec<String> {
    let mut queries = Vec::new();
    for line in text.lines() {
        for prefix in ["entity:", "event:", "topic:"] {
            if let Some(rest) = line.trim().strip_prefix(prefix) {
                let q = rest.trim();
                if !q.is_empty() {
                    queries.push(q.to_string());
                }
            }
        }
    }
    queries
}

// ---------------------------------------------------------------------------
// Policy memory
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyLevel {
    Entity,
    Event,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub key: String,
    pub guidance: String,
    /// Simulation step the rule was learned at.
    pub step: u64,
}

/// Three disjoint stores of veracity-judgment strategies, keyed by
/// normalized entity/event strings; replacement-by-key bounds growth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyMemory {
    pub entity: Vec<PolicyEntry>,
    pub event: Vec<PolicyEntry>,
    pub meta: Vec<PolicyEntry>,
}

impl PolicyMemory {
    fn level_mut(&mut self, level: PolicyLevel) -> &mut Vec<PolicyEntry> {
        match level {
            PolicyLevel::Entity => &mut self.entity,
            PolicyLevel::Event => &mut self.event,
            PolicyLevel::Meta => &mut self.meta,
        }
    }

    pub fn upsert(&mut self, level: PolicyLevel, key: &str, guidance: String, step: u64) {
        let key = key.to_lowercase();
        let store = self.level_mut(level);
        if let Some(existing) = store.iter_mut().find(|e| e.key == key) {
            existing.guidance = guidance;
            existing.step = step;
        } else {
            store.push(PolicyEntry { key, guidance, step });
        }
    }

    /// True when a learned "misjudged" rule exists for the news's lead
    /// entity (the mock fact-check oracle consults this).
    pub fn flags_entity(&self, news_text: &str) -> bool {
        let Some(key) = lead_entity(news_text) else { return false };
        self.entity
            .iter()
            .any(|e| e.key == key && e.guidance.starts_with("misjudged"))
    }

    pub fn digest(&self) -> String {
        let mut parts = Vec::new();
        for (name, store) in [("entity", &self.entity), ("event", &self.event), ("meta", &self.meta)] {
            for e in store {
                parts.push(format!("{name}|{}|{}", e.key, e.guidance));
            }
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("; ")
        }
    }
}

/// First capitalized token of a text, lowercased for keying.
pub fn lead_entity(text: &str) -> Option<String> {
    let (entities, _, _) = decompose_buckets(text);
    entities.first().map(|e| e.to_lowercase())
}

/// Everything a reflection needs: the judged news, the policy state, the
/// social context digest, the reasoning trace, and the ground-truth label
/// (only available during offline calibration on the train split).
#[derive(Debug, Clone)]
pub struct ReflectionInput<'a> {
    pub news_text: &'a str,
    pub social_context: &'a str,
    pub trace: &'a str,
    pub judged_fake: bool,
    pub truth_fake: bool,
    pub step: u64,
}

/// Applies one reflective policy update. A correct judgment leaves the
/// policy untouched; a wrong one asks the backend for revised rules, which
/// replace or append by key per level. A backend failure also leaves the
/// policy unchanged, with the error returned for logging.
pub fn policy_reflect(
    policy: &mut PolicyMemory,
    input: &ReflectionInput,
    backend: &dyn DecisionBackend,
    rng: &mut dyn RngCore,
    ledger: &mut TokenLedger,
) -> Result<bool, BackendError> {
    if input.judged_fake == input.truth_fake {
        return Ok(false);
    }
    let truth_label = if input.truth_fake { "fake" } else { "real" };
    let entity_key = lead_entity(input.news_text).unwrap_or_else(|| "unknown".to_string());
    let req = DecisionRequest::new(
        "verifier",
        prompts::policy_reflect(
            input.news_text,
            &policy.digest(),
            input.social_context,
            truth_label,
            input.trace,
        ),
        RequestContext::PolicyReflect { entity_key, truth_label: truth_label.to_string() },
    );
    let resp = backend.decide(&req, rng)?;
    ledger.record_response(req.kind, &resp);
    let mut changed = false;
    for line in resp.text.lines() {
        let mut parts = line.trim().splitn(3, '|');
        let (Some(level), Some(key), Some(guidance)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        let level = match level.trim() {
            "entity" => PolicyLevel::Entity,
            "event" => PolicyLevel::Event,
            "meta" => PolicyLevel::Meta,
            _ => continue,
        };
        policy.upsert(level, key.trim(), guidance.trim().to_string(), input.step);
        changed = true;
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::embed::HashEmbedder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(provider: &HashEmbedder, text: &str, ts: u64) -> StmRecord {
        StmRecord {
            text: text.to_string(),
            embedding: provider.embed(text).unwrap(),
            timestamp: ts,
            source: "peer".into(),
            kind: StmKind::Exposure,
        }
    }

    #[test]
    fn stm_evicts_oldest_first() {
        let p = HashEmbedder::new(16);
        let mut stm = ShortTermMemory::new(3);
        for (i, t) in ["first note", "second note", "third note", "fourth note"].iter().enumerate() {
            stm.observe(record(&p, t, i as u64));
        }
        assert_eq!(stm.len(), 3);
        assert!(!stm.records().any(|r| r.text == "first note"));
        let order: Vec<u64> = stm.records().map(|r| r.timestamp).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn stm_exact_match_ranks_first() {
        let p = HashEmbedder::new(32);
        let mut stm = ShortTermMemory::new(5);
        stm.observe(record(&p, "cats chase mice", 0));
        stm.observe(record(&p, "markets fell sharply", 1));
        let hits = stm.retrieve(&p.embed("markets fell sharply").unwrap(), 1);
        assert_eq!(hits[0].0.text, "markets fell sharply");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stm_retrieval_matches_exhaustive_scan() {
        let p = HashEmbedder::new(24);
        let texts = [
            "election results tonight",
            "new vaccine study",
            "celebrity wedding photos",
            "market crash analysis",
            "vaccine side effects report",
            "local parade pictures",
        ];
        let mut stm = ShortTermMemory::new(10);
        for (i, t) in texts.iter().enumerate() {
            stm.observe(record(&p, t, i as u64));
        }
        let query = p.embed("vaccine study report").unwrap();
        let hits = stm.retrieve(&query, 2);

        let mut oracle: Vec<(usize, f64)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i, cosine(&query, &p.embed(t).unwrap()).unwrap()))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.0.cmp(&a.0)));
        assert_eq!(hits[0].0.text, texts[oracle[0].0]);
        assert_eq!(hits[1].0.text, texts[oracle[1].0]);
    }

    #[test]
    fn empty_stm_retrieves_nothing() {
        let p = HashEmbedder::new(16);
        let stm = ShortTermMemory::new(4);
        assert!(stm.retrieve(&p.embed("anything").unwrap(), 3).is_empty());
    }

    #[test]
    fn zero_decay_never_forgets() {
        let p = HashEmbedder::new(16);
        let mut ltm = LongTermMemory::new(0.0, 0.5);
        ltm.entries.push(LtmEntry {
            text: "old fact".into(),
            embedding: p.embed("old fact").unwrap(),
            created_at: 0,
            weight: 1.0,
        });
        ltm.forget(1_000_000);
        assert_eq!(ltm.entries.len(), 1);
    }

    #[test]
    fn decayed_entry_is_forgotten_per_formula() {
        // weight e^{-0.1 * 10} = e^{-1} ~ 0.3679 < 0.4 -> dropped
        let p = HashEmbedder::new(16);
        let mut ltm = LongTermMemory::new(0.1, 0.4);
        ltm.entries.push(LtmEntry {
            text: "stale".into(),
            embedding: p.embed("stale").unwrap(),
            created_at: 0,
            weight: 1.0,
        });
        assert!((ltm.decayed_weight(&ltm.entries[0], 10) - (-1.0f64).exp()).abs() < 1e-12);
        ltm.forget(10);
        assert!(ltm.entries.is_empty());
    }

    #[test]
    fn consolidate_empty_stm_is_a_no_op() {
        let mut ltm = LongTermMemory::new(0.05, 0.05);
        let stm = ShortTermMemory::new(4);
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        ltm.consolidate("a1", &stm, &backend, &mut rng, &mut ledger, 5).unwrap();
        assert!(ltm.entries.is_empty());
        assert_eq!(ledger.grand_total().calls, 0);
    }

    #[test]
    fn consolidate_builds_centroid_entry_and_live_weights_stay_above_eps() {
        let p = HashEmbedder::new(16);
        let mut ltm = LongTermMemory::new(0.05, 0.05);
        let mut stm = ShortTermMemory::new(4);
        stm.observe(record(&p, "astronomers spot comet", 1));
        stm.observe(record(&p, "comet visible tonight", 2));
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        ltm.consolidate("a1", &stm, &backend, &mut rng, &mut ledger, 3).unwrap();
        assert_eq!(ltm.entries.len(), 1);
        assert!(ltm.entries[0].text.starts_with("digest:"));
        let members: Vec<&Embedding> = stm.records().map(|r| &r.embedding).collect();
        assert_eq!(ltm.entries[0].embedding, Embedding::centroid(&members));
        for e in &ltm.entries {
            assert!(ltm.decayed_weight(e, 3) >= ltm.forget_threshold);
        }
    }

    #[test]
    fn ltm_retrieve_finds_identical_entry_first() {
        let p = HashEmbedder::new(32);
        let mut ltm = LongTermMemory::new(0.0, 0.0);
        for (i, t) in ["Senate passed budget votes", "weather stays dry", "Mars probe landed"].iter().enumerate() {
            ltm.entries.push(LtmEntry {
                text: t.to_string(),
                embedding: p.embed(t).unwrap(),
                created_at: i as u64,
                weight: 1.0,
            });
        }
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let hits = ltm
            .retrieve("a1", "Senate passed budget votes", &backend, &p, &mut rng, &mut ledger, 3)
            .unwrap();
        assert!(!hits.is_empty());
        assert_eq!(hits[0].0.text, "Senate passed budget votes");
    }

    #[test]
    fn ltm_retrieve_union_matches_per_subquery_scan() {
        let p = HashEmbedder::new(32);
        let mut ltm = LongTermMemory::new(0.0, 0.0);
        let entries = ["Governor Reyes budget speech", "flooding damaged bridges", "music festival tickets"];
        for (i, t) in entries.iter().enumerate() {
            ltm.entries.push(LtmEntry {
                text: t.to_string(),
                embedding: p.embed(t).unwrap(),
                created_at: i as u64,
                weight: 1.0,
            });
        }
        let news = "Governor Reyes visited flooding sites downtown";
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let hits = ltm
            .retrieve("a1", news, &backend, &p, &mut rng, &mut ledger, 10)
            .unwrap();

        // Oracle: same decomposition buckets, brute-force top-1 each.
        let (entity, event, topic) = decompose_buckets(news);
        let mut expect = Vec::new();
        for bucket in [entity, event, topic] {
            if bucket.is_empty() {
                continue;
            }
            let q = p.embed(&bucket.join(" ")).unwrap();
            let best = entries
                .iter()
                .enumerate()
                .max_by(|a, b| {
                    cosine(&q, &p.embed(a.1).unwrap())
                        .unwrap()
                        .partial_cmp(&cosine(&q, &p.embed(b.1).unwrap()).unwrap())
                        .unwrap()
                        .then(b.0.cmp(&a.0))
                })
                .unwrap()
                .0;
            if !expect.contains(&best) {
                expect.push(best);
            }
        }
        let got: Vec<&str> = hits.iter().map(|(e, _)| e.text.as_str()).collect();
        assert_eq!(got.len(), expect.len());
        for i in expect {
            assert!(got.contains(&entries[i]));
        }
    }

    #[test]
    fn empty_ltm_retrieves_nothing_without_backend_call() {
        let p = HashEmbedder::new(16);
        let ltm = LongTermMemory::new(0.05, 0.05);
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let hits = ltm.retrieve("a1", "anything here", &backend, &p, &mut rng, &mut ledger, 0).unwrap();
        assert!(hits.is_empty());
        assert_eq!(ledger.grand_total().calls, 0);
    }

    fn reflection<'a>(news: &'a str, judged: bool, truth: bool) -> ReflectionInput<'a> {
        ReflectionInput {
            news_text: news,
            social_context: "quiet",
            trace: "assumed headline tone implied fabrication",
            judged_fake: judged,
            truth_fake: truth,
            step: 4,
        }
    }

    #[test]
    fn correct_judgment_leaves_policy_unchanged() {
        let mut policy = PolicyMemory::default();
        policy.upsert(PolicyLevel::Meta, "base", "check sources".into(), 0);
        let before = policy.clone();
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let changed =
            policy_reflect(&mut policy, &reflection("Mayor wins", true, true), &backend, &mut rng, &mut ledger)
                .unwrap();
        assert!(!changed);
        assert_eq!(policy, before);
        assert_eq!(ledger.grand_total().calls, 0);
    }

    #[test]
    fn wrong_judgment_adds_exactly_one_entity_rule() {
        let mut policy = PolicyMemory::default();
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let changed = policy_reflect(
            &mut policy,
            &reflection("Senator Vale diverted funds", false, true),
            &backend,
            &mut rng,
            &mut ledger,
        )
        .unwrap();
        assert!(changed);
        assert_eq!(policy.entity.len(), 1);
        assert_eq!(policy.entity[0].key, "senator");
        assert_eq!(policy.entity[0].guidance, "misjudged: fake");
        assert!(policy.event.is_empty() && policy.meta.is_empty());
    }

    #[test]
    fn second_wrong_judgment_replaces_by_key() {
        let mut policy = PolicyMemory::default();
        let backend = MockBackend::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ledger = TokenLedger::new();
        let news = "Senator Vale diverted funds";
        policy_reflect(&mut policy, &reflection(news, false, true), &backend, &mut rng, &mut ledger).unwrap();
        let first_step = policy.entity[0].step;
        let mut second = reflection(news, true, false);
        second.step = 9;
        policy_reflect(&mut policy, &second, &backend, &mut rng, &mut ledger).unwrap();
        assert_eq!(policy.entity.len(), 1);
        assert_eq!(policy.entity[0].guidance, "misjudged: real");
        assert!(policy.entity[0].step > first_step);
    }

    #[test]
    fn policy_flags_learned_entity() {
        let mut policy = PolicyMemory::default();
        policy.upsert(PolicyLevel::Entity, "senator", "misjudged: fake".into(), 1);
        assert!(policy.flags_entity("Senator Vale claims victory"));
        assert!(!policy.flags_entity("Mayor Chen claims victory"));
    }
}
