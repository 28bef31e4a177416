//! Canonical data model and newline-delimited JSON ingestion for news,
//! comments, users, and cascade graphs.
//!
//! One record per line, UTF-8, field names fixed by the serde derives
//! below; the on-disk schemas are documented in the README. Loading
//! applies referential-integrity checks and rejects offending rows with
//! their line numbers. Saving is canonical, so save -> load -> save is
//! byte-identical.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: invariant violation: {message}")]
    Invariant {
        path: String,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Maximum sentences kept per news item.
pub const DEFAULT_MAX_SENTENCES: usize = 50;
/// Maximum tokens kept per news sentence.
pub const DEFAULT_MAX_TOKENS: usize = 25;

/// Sentence/token caps applied at ingestion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationCaps {
    pub max_sentences: usize,
    pub max_tokens: usize,
}

impl Default for TruncationCaps {
    fn default() -> Self {
        TruncationCaps {
            max_sentences: DEFAULT_MAX_SENTENCES,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub text: String,
    /// 1 = fake, 0 = real. Optional so unlabeled streams can be simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    pub split: Split,
    /// Token lists per sentence, already truncated to the configured caps.
    #[serde(default)]
    pub sentences: Vec<Vec<String>>,
}

impl NewsItem {
    pub fn is_fake(&self) -> Option<bool> {
        self.label.map(|l| l == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Pos,
    Neu,
    Neg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub news_id: String,
    pub user_id: String,
    pub text: String,
    /// Seconds since epoch; nonnegative by type.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<Stance>,
    #[serde(default)]
    pub engagement: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub follower_count: u64,
    pub avg_likes: f64,
    pub repost_count: u64,
    #[serde(default)]
    pub neighbors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Comment,
    Forward,
    Like,
    View,
    FactCheck,
    Warn,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Comment => "comment",
            ActionKind::Forward => "forward",
            ActionKind::Like => "like",
            ActionKind::View => "view",
            ActionKind::FactCheck => "fact_check",
            ActionKind::Warn => "warn",
        }
    }

    /// Actions a verifier may take; diffusers get the first four.
    pub fn verifier_only(&self) -> bool {
        matches!(self, ActionKind::FactCheck | ActionKind::Warn)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionEvent {
    pub agent_id: String,
    pub step: u64,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<Stance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeEdge {
    pub source: String,
    pub target: String,
    pub step: u64,
    pub action: ActionKind,
}

/// Directed propagation graph for one news item: participating agents,
/// influence edges, the seed set, and the ordered action log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeGraph {
    pub news_id: String,
    pub nodes: Vec<String>,
    pub edges: Vec<CascadeEdge>,
    pub seeds: Vec<String>,
    #[serde(default)]
    pub events: Vec<ActionEvent>,
}

impl CascadeGraph {
    /// Checks the structural invariants: edges between known nodes, no
    /// duplicate directed edge, seeds nonempty and known, every non-seed
    /// reachable from a seed, step indices nondecreasing along paths.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let nodes: HashSet<&str> = self.nodes.iter().map(|s| s.as_str()).collect();
        if nodes.len() != self.nodes.len() {
            return Err(CorpusError::Integrity(format!(
                "cascade {}: duplicate node id",
                self.news_id
            )));
        }
        if self.seeds.is_empty() {
            return Err(CorpusError::Integrity(format!(
                "cascade {}: empty seed set",
                self.news_id
            )));
        }
        for seed in &self.seeds {
            if !nodes.contains(seed.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "cascade {}: seed {} not in nodes",
                    self.news_id, seed
                )));
            }
        }
        let mut seen_edges = HashSet::new();
        let mut adjacency: HashMap<&str, Vec<&CascadeEdge>> = HashMap::new();
        let mut max_in: HashMap<&str, u64> = HashMap::new();
        let mut min_out: HashMap<&str, u64> = HashMap::new();
        for edge in &self.edges {
            for endpoint in [&edge.source, &edge.target] {
                if !nodes.contains(endpoint.as_str()) {
                    return Err(CorpusError::Integrity(format!(
                        "cascade {}: edge endpoint {} not in nodes",
                        self.news_id, endpoint
                    )));
                }
            }
            if !seen_edges.insert((edge.source.as_str(), edge.target.as_str())) {
                return Err(CorpusError::Integrity(format!(
                    "cascade {}: duplicate edge {} -> {}",
                    self.news_id, edge.source, edge.target
                )));
            }
            adjacency.entry(edge.source.as_str()).or_default().push(edge);
            let hi = max_in.entry(edge.target.as_str()).or_insert(0);
            *hi = (*hi).max(edge.step);
            let lo = min_out.entry(edge.source.as_str()).or_insert(u64::MAX);
            *lo = (*lo).min(edge.step);
        }
        // Nondecreasing along any path: every incoming step at a node must
        // be <= every outgoing step at that node.
        for (node, &incoming) in &max_in {
            if let Some(&outgoing) = min_out.get(node) {
                if outgoing < incoming {
                    return Err(CorpusError::Integrity(format!(
                        "cascade {}: step order violated at node {node}",
                        self.news_id
                    )));
                }
            }
        }
        // Reachability from the seed set.
        let mut reached: HashSet<&str> = HashSet::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        for seed in &self.seeds {
            if reached.insert(seed.as_str()) {
                queue.push_back(seed.as_str());
            }
        }
        while let Some(node) = queue.pop_front() {
            if let Some(out) = adjacency.get(node) {
                for edge in out {
                    if reached.insert(edge.target.as_str()) {
                        queue.push_back(edge.target.as_str());
                    }
                }
            }
        }
        for node in &self.nodes {
            if !reached.contains(node.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "cascade {}: node {} unreachable from seeds",
                    self.news_id, node
                )));
            }
        }
        Ok(())
    }

    /// Per-node shortest-path distance (BFS layers) from the nearest seed,
    /// following directed edges.
    pub fn seed_distances(&self) -> BTreeMap<&str, u64> {
        let mut adjacency: HashMap<&str, Vec<&str>> = HashMap::new();
        for edge in &self.edges {
            adjacency
                .entry(edge.source.as_str())
                .or_default()
                .push(edge.target.as_str());
        }
        let mut dist: BTreeMap<&str, u64> = BTreeMap::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        for seed in &self.seeds {
            dist.insert(seed.as_str(), 0);
            queue.push_back(seed.as_str());
        }
        while let Some(node) = queue.pop_front() {
            let d = dist[node];
            if let Some(out) = adjacency.get(node) {
                for &target in out {
                    if !dist.contains_key(target) {
                        dist.insert(target, d + 1);
                        queue.push_back(target);
                    }
                }
            }
        }
        dist
    }
}

/// Loaded, integrity-checked corpus. Immutable after loading and safe to
/// share across threads.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub news: Vec<NewsItem>,
    pub comments: Vec<Comment>,
    pub users: Vec<UserRecord>,
    pub cascades: Vec<CascadeGraph>,
}

impl Corpus {
    pub fn news_by_id(&self, id: &str) -> Option<&NewsItem> {
        self.news.iter().find(|n| n.id == id)
    }

    pub fn user_by_id(&self, id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.id == id)
    }

    /// Comments attached to one news item, in file order.
    pub fn comments_for(&self, news_id: &str) -> Vec<&Comment> {
        self.comments.iter().filter(|c| c.news_id == news_id).collect()
    }

    /// Cross-table referential integrity: every foreign id must resolve.
    pub fn check_integrity(&self) -> Result<(), CorpusError> {
        let news_ids: HashSet<&str> = self.news.iter().map(|n| n.id.as_str()).collect();
        let user_ids: HashSet<&str> = self.users.iter().map(|u| u.id.as_str()).collect();
        for c in &self.comments {
            if !news_ids.contains(c.news_id.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "comment {} references unknown news_id {}",
                    c.id, c.news_id
                )));
            }
            if !user_ids.is_empty() && !user_ids.contains(c.user_id.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "comment {} references unknown user_id {}",
                    c.id, c.user_id
                )));
            }
        }
        for u in &self.users {
            for n in &u.neighbors {
                if !user_ids.contains(n.as_str()) {
                    return Err(CorpusError::Integrity(format!(
                        "user {} lists unknown neighbor {}",
                        u.id, n
                    )));
                }
            }
        }
        for g in &self.cascades {
            if !news_ids.is_empty() && !news_ids.contains(g.news_id.as_str()) {
                return Err(CorpusError::Integrity(format!(
                    "cascade references unknown news_id {}",
                    g.news_id
                )));
            }
            g.validate()?;
        }
        Ok(())
    }

    /// Undirected follow graph: an edge exists iff either side lists the
    /// other.
    pub fn follow_graph(&self) -> BTreeMap<String, BTreeSet<String>> {
        let known: HashSet<&str> = self.users.iter().map(|u| u.id.as_str()).collect();
        let mut graph: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for u in &self.users {
            graph.entry(u.id.clone()).or_default();
        }
        for u in &self.users {
            for n in &u.neighbors {
                if known.contains(n.as_str()) && n != &u.id {
                    graph.get_mut(&u.id).unwrap().insert(n.clone());
                    graph.get_mut(n).unwrap().insert(u.id.clone());
                }
            }
        }
        graph
    }
}

/// Splits raw text into token lists per sentence and applies the caps.
/// Sentence boundaries are `.`, `!`, `?`, and newline runs; tokens are
/// Unicode alphanumeric runs with original casing preserved.
pub fn sentences_from_text(text: &str, caps: TruncationCaps) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    for raw in text.split(|c: char| matches!(c, '.' | '!' | '?' | '\n')) {
        let tokens: Vec<String> = raw
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .take(caps.max_tokens)
            .map(|t| t.to_string())
            .collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
            if sentences.len() == caps.max_sentences {
                break;
            }
        }
    }
    sentences
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        lines.push(line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?);
    }
    Ok(lines)
}

fn parse_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut rows = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str::<T>(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

/// Loads news records, derives sentences from `text` when absent, and
/// enforces the truncation caps and id uniqueness.
pub fn load_news(path: &Path, caps: TruncationCaps) -> Result<Vec<NewsItem>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, mut item) in parse_lines::<NewsItem>(path)? {
        if !seen.insert(item.id.clone()) {
            return Err(CorpusError::Invariant {
                path: path.display().to_string(),
                line,
                message: format!("duplicate news id {}", item.id),
            });
        }
        if item.sentences.is_empty() {
            item.sentences = sentences_from_text(&item.text, caps);
        } else {
            item.sentences.truncate(caps.max_sentences);
            for s in item.sentences.iter_mut() {
                s.truncate(caps.max_tokens);
            }
        }
        out.push(item);
    }
    Ok(out)
}

pub fn load_comments(path: &Path) -> Result<Vec<Comment>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, c) in parse_lines::<Comment>(path)? {
        if !seen.insert(c.id.clone()) {
            return Err(CorpusError::Invariant {
                path: path.display().to_string(),
                line,
                message: format!("duplicate comment id {}", c.id),
            });
        }
        out.push(c);
    }
    Ok(out)
}

pub fn load_users(path: &Path) -> Result<Vec<UserRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, u) in parse_lines::<UserRecord>(path)? {
        if !seen.insert(u.id.clone()) {
            return Err(CorpusError::Invariant {
                path: path.display().to_string(),
                line,
                message: format!("duplicate user id {}", u.id),
            });
        }
        out.push(u);
    }
    Ok(out)
}

pub fn load_cascades(path: &Path) -> Result<Vec<CascadeGraph>, CorpusError> {
    let mut out = Vec::new();
    for (line, g) in parse_lines::<CascadeGraph>(path)? {
        g.validate().map_err(|e| CorpusError::Invariant {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        out.push(g);
    }
    Ok(out)
}

/// Loads whichever tables are present and applies cross-table integrity.
pub fn load_corpus(
    news: Option<&Path>,
    comments: Option<&Path>,
    users: Option<&Path>,
    cascades: Option<&Path>,
    caps: TruncationCaps,
) -> Result<Corpus, CorpusError> {
    let corpus = Corpus {
        news: news.map(|p| load_news(p, caps)).transpose()?.unwrap_or_default(),
        comments: comments.map(load_comments).transpose()?.unwrap_or_default(),
        users: users.map(load_users).transpose()?.unwrap_or_default(),
        cascades: cascades.map(load_cascades).transpose()?.unwrap_or_default(),
    };
    corpus.check_integrity()?;
    Ok(corpus)
}

fn save_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CorpusError> {
    let mut buf = String::new();
    for row in rows {
        buf.push_str(&serde_json::to_string(row).expect("serializable record"));
        buf.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(buf.as_bytes()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub fn save_news(path: &Path, rows: &[NewsItem]) -> Result<(), CorpusError> {
    save_jsonl(path, rows)
}

pub fn save_comments(path: &Path, rows: &[Comment]) -> Result<(), CorpusError> {
    save_jsonl(path, rows)
}

pub fn save_users(path: &Path, rows: &[UserRecord]) -> Result<(), CorpusError> {
    save_jsonl(path, rows)
}

/// Saves cascades after re-validating their invariants.
pub fn save_cascades(path: &Path, rows: &[CascadeGraph]) -> Result<(), CorpusError> {
    for g in rows {
        g.validate()?;
    }
    save_jsonl(path, rows)
}

// ---------------------------------------------------------------------------
// Influence scoring
// ---------------------------------------------------------------------------

/// Corpus-wide normalization statistics for the three influence features,
/// in order (repost_count, avg_likes, follower_count). Population standard
/// deviation; a zero-variance feature contributes 0 to every score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

fn influence_features(u: &UserRecord) -> [f64; 3] {
    [u.repost_count as f64, u.avg_likes, u.follower_count as f64]
}

pub fn influence_stats(users: &[UserRecord]) -> InfluenceStats {
    let n = users.len().max(1) as f64;
    let mut mean = [0.0; 3];
    for u in users {
        let f = influence_features(u);
        for i in 0..3 {
            mean[i] += f[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = [0.0; 3];
    for u in users {
        let f = influence_features(u);
        for i in 0..3 {
            var[i] += (f[i] - mean[i]).powi(2);
        }
    }
    let mut std = [0.0; 3];
    for i in 0..3 {
        std[i] = (var[i] / n).sqrt();
    }
    InfluenceStats { mean, std }
}

/// Mean of z-normalized (repost_count, avg_likes, follower_count).
pub fn influence_score(u: &UserRecord, stats: &InfluenceStats) -> f64 {
    let f = influence_features(u);
    let mut total = 0.0;
    for i in 0..3 {
        if stats.std[i] > 0.0 {
            total += (f[i] - stats.mean[i]) / stats.std[i];
        }
    }
    total / 3.0
}

/// Ids of the top influence fraction (default 5%), ranked by descending
/// score with ascending id as the tie-break. The count is
/// `ceil(fraction * n)`, clamped to `n`.
pub fn top_influential(users: &[UserRecord], fraction: f64) -> BTreeSet<String> {
    if users.is_empty() || fraction <= 0.0 {
        return BTreeSet::new();
    }
    let stats = influence_stats(users);
    let mut scored: Vec<(&UserRecord, f64)> =
        users.iter().map(|u| (u, influence_score(u, &stats))).collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    let count = ((fraction * users.len() as f64).ceil() as usize).min(users.len());
    scored.into_iter().take(count).map(|(u, _)| u.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn user(id: &str, reposts: u64, likes: f64, followers: u64) -> UserRecord {
        UserRecord {
            id: id.to_string(),
            follower_count: followers,
            avg_likes: likes,
            repost_count: reposts,
            neighbors: vec![],
        }
    }

    fn write_temp(name: &str, contents: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_three_news_rows() {
        let (dir, path) = write_temp(
            "news.jsonl",
            concat!(
                r#"{"id":"n1","text":"One story. About stuff.","split":"train","label":1}"#,
                "\n",
                r#"{"id":"n2","text":"Two story.","split":"val","label":0}"#,
                "\n",
                r#"{"id":"n3","text":"Three story.","split":"test"}"#,
                "\n"
            ),
        );
        let news = load_news(&path, TruncationCaps::default()).unwrap();
        assert_eq!(news.len(), 3);
        assert_eq!(news[0].sentences.len(), 2);
        drop(dir);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (dir, path) = write_temp(
            "news.jsonl",
            "{\"id\":\"n1\",\"text\":\"ok.\",\"split\":\"train\"}\nnot json\n",
        );
        let err = load_news(&path, TruncationCaps::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number in {msg}");
        drop(dir);
    }

    #[test]
    fn dangling_comment_reference_names_the_id() {
        let corpus = Corpus {
            news: vec![NewsItem {
                id: "n1".into(),
                text: "A.".into(),
                label: None,
                split: Split::Train,
                sentences: vec![],
            }],
            comments: vec![Comment {
                id: "c1".into(),
                news_id: "missing".into(),
                user_id: "u1".into(),
                text: "hm".into(),
                timestamp: 0,
                stance: None,
                engagement: 0,
            }],
            users: vec![user("u1", 0, 0.0, 0)],
            cascades: vec![],
        };
        let err = corpus.check_integrity().unwrap_err();
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn sixty_sentences_truncate_to_fifty() {
        let text = (0..60).map(|i| format!("Sentence number {i}.")).collect::<String>();
        let sentences = sentences_from_text(&text, TruncationCaps::default());
        assert_eq!(sentences.len(), 50);
    }

    #[test]
    fn long_sentences_truncate_to_token_cap() {
        let text = (0..40).map(|i| format!("tok{i} ")).collect::<String>();
        let sentences = sentences_from_text(&text, TruncationCaps::default());
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0].len(), DEFAULT_MAX_TOKENS);
    }

    fn tiny_cascade() -> CascadeGraph {
        CascadeGraph {
            news_id: "n1".into(),
            nodes: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            edges: vec![
                CascadeEdge { source: "a".into(), target: "b".into(), step: 1, action: ActionKind::Forward },
                CascadeEdge { source: "a".into(), target: "c".into(), step: 1, action: ActionKind::Like },
                CascadeEdge { source: "b".into(), target: "d".into(), step: 2, action: ActionKind::Comment },
                CascadeEdge { source: "b".into(), target: "e".into(), step: 2, action: ActionKind::Forward },
            ],
            seeds: vec!["a".into()],
            events: vec![ActionEvent {
                agent_id: "b".into(),
                step: 1,
                action: ActionKind::Forward,
                payload_text: None,
                stance: None,
            }],
        }
    }

    #[test]
    fn cascade_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.jsonl");
        let p2 = dir.path().join("two.jsonl");

        // Single-seed empty-edge cascade and a 5-node/4-edge cascade.
        let simple = CascadeGraph {
            news_id: "n0".into(),
            nodes: vec!["s".into()],
            edges: vec![],
            seeds: vec!["s".into()],
            events: vec![],
        };
        let rows = vec![simple, tiny_cascade()];
        save_cascades(&p1, &rows).unwrap();
        let loaded = load_cascades(&p1).unwrap();
        save_cascades(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn cascade_edge_to_absent_node_fails_load() {
        let mut g = tiny_cascade();
        g.edges.push(CascadeEdge {
            source: "a".into(),
            target: "ghost".into(),
            step: 1,
            action: ActionKind::Forward,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let line = serde_json::to_string(&g).unwrap();
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let err = load_cascades(&path).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn cascade_unreachable_node_rejected() {
        let mut g = tiny_cascade();
        g.nodes.push("island".into());
        assert!(g.validate().is_err());
    }

    #[test]
    fn cascade_step_order_violation_rejected() {
        let mut g = tiny_cascade();
        // b's outgoing edges are at step 2; force an incoming step above it.
        g.edges[0].step = 3;
        assert!(g.validate().is_err());
    }

    #[test]
    fn influence_identical_users_score_zero_with_stable_tie_break() {
        let users: Vec<UserRecord> = (0..4).map(|i| user(&format!("u{i}"), 5, 2.0, 10)).collect();
        let stats = influence_stats(&users);
        for u in &users {
            assert_eq!(influence_score(u, &stats), 0.0);
        }
        let top = top_influential(&users, 0.5);
        assert_eq!(top.into_iter().collect::<Vec<_>>(), vec!["u0", "u1"]);
    }

    #[test]
    fn influence_dominating_user_is_strictly_maximal() {
        let users = vec![
            user("a", 100, 50.0, 1000),
            user("b", 1, 1.0, 10),
            user("c", 2, 0.5, 20),
        ];
        let stats = influence_stats(&users);
        let sa = influence_score(&users[0], &stats);
        assert!(sa > influence_score(&users[1], &stats));
        assert!(sa > influence_score(&users[2], &stats));
    }

    #[test]
    fn influence_ranking_matches_hand_recomputation() {
        // Users (repost, likes, followers): (10,5,100), (0,0,0), (5,2,50).
        let users = vec![user("u1", 10, 5.0, 100), user("u2", 0, 0.0, 0), user("u3", 5, 2.0, 50)];
        let stats = influence_stats(&users);

        // Independent recomputation, spreadsheet style.
        let raw: [[f64; 3]; 3] = [[10.0, 5.0, 100.0], [0.0, 0.0, 0.0], [5.0, 2.0, 50.0]];
        let mean = |j: usize| (raw[0][j] + raw[1][j] + raw[2][j]) / 3.0;
        let std = |j: usize| {
            let m = mean(j);
            (((raw[0][j] - m).powi(2) + (raw[1][j] - m).powi(2) + (raw[2][j] - m).powi(2)) / 3.0)
                .sqrt()
        };
        let expect = |i: usize| {
            (0..3)
                .map(|j| if std(j) > 0.0 { (raw[i][j] - mean(j)) / std(j) } else { 0.0 })
                .sum::<f64>()
                / 3.0
        };
        for (i, u) in users.iter().enumerate() {
            assert!((influence_score(u, &stats) - expect(i)).abs() < 1e-12);
        }
        let order = top_influential(&users, 1.0).into_iter().collect::<Vec<_>>();
        assert_eq!(order.len(), 3);
        // Scores: u1 highest, then u3, then u2.
        assert!(expect(0) > expect(2) && expect(2) > expect(1));
    }

    #[test]
    fn influence_invariant_under_constant_shift() {
        let base = vec![user("a", 10, 5.0, 100), user("b", 0, 0.0, 0), user("c", 5, 2.0, 50)];
        let shifted: Vec<UserRecord> = base
            .iter()
            .map(|u| user(&u.id, u.repost_count + 7, u.avg_likes + 3.0, u.follower_count + 11))
            .collect();
        let s1 = influence_stats(&base);
        let s2 = influence_stats(&shifted);
        for (u, v) in base.iter().zip(shifted.iter()) {
            assert!((influence_score(u, &s1) - influence_score(v, &s2)).abs() < 1e-9);
        }
    }

    #[test]
    fn follow_graph_symmetrizes_one_sided_listings() {
        let mut a = user("a", 0, 0.0, 0);
        a.neighbors = vec!["b".into()];
        let b = user("b", 0, 0.0, 0);
        let corpus = Corpus { news: vec![], comments: vec![], users: vec![a, b], cascades: vec![] };
        let graph = corpus.follow_graph();
        assert!(graph["a"].contains("b"));
        assert!(graph["b"].contains("a"));
    }
}
