//! Persona distillation from training-split comments: topic clustering,
//! viewpoint clustering inside each topic, balanced subset sampling, and
//! reflection-guided profile refinement.
//!
//! The whole pipeline is leakage-free by construction: its inputs are
//! unlabeled news views and comments from the train split; veracity labels
//! are not reachable from this module.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    prompts, BackendError, DecisionBackend, DecisionRequest, RequestContext, TokenLedger,
};
use crate::corpus::{Comment, Corpus, Split};
use crate::embed::{cosine, Embedding, EmbedError, EmbeddingProvider};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("config error: {0}")]
    Config(String),
    #[error("embedding failure: {0}")]
    Embed(#[from] EmbedError),
    #[error("backend failure at refinement round {round}: {source}")]
    Backend {
        round: usize,
        #[source]
        source: BackendError,
    },
}

/// A news item as this module is allowed to see it: id and text only.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledNews<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

/// Seeded Lloyd's k-means with restarts; Euclidean metric, best inertia
/// wins, earlier restart wins ties. Deterministic given the seed.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult, PersonaError> {
    if k < 1 || k > points.len() {
        return Err(PersonaError::Config(format!(
            "cluster count {k} out of range for {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut best: Option<KMeansResult> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9e3779b97f4a7c15));
        // Sample k distinct starting points.
        let mut chosen: Vec<usize> = (0..points.len()).collect();
        for i in 0..k {
            let j = i + (rng.random_range(0..(chosen.len() - i) as u64) as usize);
            chosen.swap(i, j);
        }
        let mut centroids: Vec<Vec<f64>> = chosen[..k].iter().map(|&i| points[i].to_vec()).collect();
        let mut assignments = vec![0usize; points.len()];
        for _ in 0..100 {
            let mut moved = false;
            for (p, a) in points.iter().zip(assignments.iter_mut()) {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = sq_dist(p, centroid);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if *a != best_c {
                    *a = best_c;
                    moved = true;
                }
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(assignments.iter()) {
                counts[a] += 1;
                for (s, &v) in sums[a].iter_mut().zip(p.iter()) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // Re-seed an empty cluster with the point farthest from
                    // its centroid.
                    let far = (0..points.len())
                        .max_by(|&i, &j| {
                            sq_dist(points[i], &centroids[assignments[i]])
                                .partial_cmp(&sq_dist(points[j], &centroids[assignments[j]]))
                                .unwrap()
                        })
                        .unwrap();
                    centroids[c] = points[far].to_vec();
                    assignments[far] = c;
                    moved = true;
                } else {
                    for (j, s) in sums[c].iter().enumerate() {
                        centroids[c][j] = s / counts[c] as f64;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        let inertia: f64 = points
            .iter()
            .zip(assignments.iter())
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(KMeansResult { assignments, centroids, inertia });
        }
    }
    Ok(best.unwrap())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Partitions news embeddings into `m` topic clusters.
pub fn cluster_topics(news_embeddings: &[Embedding], m: usize, seed: u64) -> Result<Vec<usize>, PersonaError> {
    let points: Vec<&[f64]> = news_embeddings.iter().map(|e| e.values()).collect();
    Ok(kmeans(&points, m, seed, 10)?.assignments)
}

/// Clusters comment embeddings within one topic into viewpoint groups.
pub fn cluster_viewpoints(
    comment_embeddings: &[Embedding],
    groups: usize,
    seed: u64,
) -> Result<Vec<usize>, PersonaError> {
    let points: Vec<&[f64]> = comment_embeddings.iter().map(|e| e.values()).collect();
    Ok(kmeans(&points, groups, seed, 10)?.assignments)
}

// ---------------------------------------------------------------------------
// Persona groups and balanced sampling
// ---------------------------------------------------------------------------

/// A viewpoint cluster inside one topic: member comments, their
/// embeddings, and the (unnormalized mean) centroid.
#[derive(Debug, Clone)]
pub struct PersonaGroup {
    pub topic_id: usize,
    pub group_id: usize,
    pub member_ids: Vec<String>,
    pub member_texts: Vec<String>,
    pub member_embeddings: Vec<Embedding>,
    pub centroid: Embedding,
}

impl PersonaGroup {
    pub fn new(
        topic_id: usize,
        group_id: usize,
        member_ids: Vec<String>,
        member_texts: Vec<String>,
        member_embeddings: Vec<Embedding>,
    ) -> PersonaGroup {
        assert!(!member_ids.is_empty(), "persona group must be nonempty");
        let refs: Vec<&Embedding> = member_embeddings.iter().collect();
        let centroid = Embedding::centroid(&refs);
        PersonaGroup { topic_id, group_id, member_ids, member_texts, member_embeddings, centroid }
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// Weights and size for balanced subset selection; `w_d = 1 - w_p`.
#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    pub w_p: f64,
    pub subset_size: usize,
}

impl SamplingConfig {
    pub fn w_d(&self) -> f64 {
        1.0 - self.w_p
    }
}

/// Selection objective: prototypicality (closeness of each pick to the
/// group centroid) plus size-normalized pairwise diversity:
///
/// `J(S) = w_p * sum_i 1/(1 + D(e_i, mu)) + w_d * (2/|S|) * sum_{a<b} D(e_a, e_b)`
///
/// with `D` the Euclidean distance. Exposed so oracle tests can score
/// arbitrary subsets.
pub fn sample_objective(group: &PersonaGroup, subset: &[usize], cfg: &SamplingConfig) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let proto: f64 = subset
        .iter()
        .map(|&i| 1.0 / (1.0 + group.member_embeddings[i].euclidean(&group.centroid)))
        .sum();
    let mut pairwise = 0.0;
    for (a_pos, &a) in subset.iter().enumerate() {
        for &b in subset.iter().skip(a_pos + 1) {
            pairwise += group.member_embeddings[a].euclidean(&group.member_embeddings[b]);
        }
    }
    cfg.w_p * proto + cfg.w_d() * (2.0 / subset.len() as f64) * pairwise
}

/// Greedy maximization of [`sample_objective`]: each step adds the
/// candidate with the largest marginal gain in the exact objective, ties
/// broken by ascending comment id. Returns exactly `subset_size` member
/// indices, in selection order.
pub fn balanced_sample(group: &PersonaGroup, cfg: &SamplingConfig) -> Result<Vec<usize>, PersonaError> {
    let k = cfg.subset_size;
    if k < 1 || k > group.len() {
        return Err(PersonaError::Config(format!(
            "subset size {k} out of range for group of {}",
            group.len()
        )));
    }
    // Candidate order: ascending comment id, so equal gains pick the
    // smaller id.
    let mut candidate_order: Vec<usize> = (0..group.len()).collect();
    candidate_order.sort_by(|&a, &b| group.member_ids[a].cmp(&group.member_ids[b]));

    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut current = 0.0;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for &cand in &candidate_order {
            if selected.contains(&cand) {
                continue;
            }
            selected.push(cand);
            let gain = sample_objective(group, &selected, cfg) - current;
            selected.pop();
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((cand, gain));
            }
        }
        let (pick, gain) = best.expect("nonempty candidate pool");
        selected.push(pick);
        current += gain;
    }
    Ok(selected)
}

// ---------------------------------------------------------------------------
// Profile distillation
// ---------------------------------------------------------------------------

/// Reflection settings for profile distillation.
#[derive(Debug, Clone, Copy)]
pub struct DistillConfig {
    /// Refinement triggers when the generated comment's similarity to the
    /// batch center drops below this (similarity floored at 0, so a zero
    /// threshold disables refinement entirely).
    pub lambda: f64,
    pub batch_size: usize,
    pub max_rounds: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { lambda: 0.7, batch_size: 4, max_rounds: 8 }
    }
}

/// A distilled behavioral profile with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub profile_text: String,
    pub evidence: Vec<String>,
    pub topic_id: usize,
    pub group_id: usize,
    pub refinement_rounds: usize,
    /// Set when the refinement budget ran out before the evidence was
    /// exhausted.
    pub exhausted_rounds: bool,
    /// Provenance marker; persona extraction only ever runs on train.
    pub source_split: String,
}

impl PersonaProfile {
    /// Minimal profile for tests and degenerate setups.
    pub fn synthetic(text: impl Into<String>) -> PersonaProfile {
        PersonaProfile {
            profile_text: text.into(),
            evidence: vec![],
            topic_id: 0,
            group_id: 0,
            refinement_rounds: 0,
            exhausted_rounds: false,
            source_split: "train".into(),
        }
    }
}

/// Iterative reflection loop: per evidence batch, the backend writes a
/// comment in the current profile's voice; when that comment drifts from
/// the batch center (cosine below lambda) the backend revises the profile
/// against the batch's most central comment.
pub fn distill_profile(
    group: &PersonaGroup,
    selected: &[usize],
    backend: &dyn DecisionBackend,
    provider: &dyn EmbeddingProvider,
    rng: &mut dyn RngCore,
    ledger: &mut TokenLedger,
    cfg: &DistillConfig,
) -> Result<PersonaProfile, PersonaError> {
    assert!(!selected.is_empty(), "distillation needs evidence");
    let first = selected[0];
    let mut profile_text = format!(
        "commenter persona: {}",
        crate::backend::normalize_snippet(&group.member_texts[first], 16)
    );
    let mut rounds = 0usize;
    let mut exhausted = false;

    'batches: for batch in selected.chunks(cfg.batch_size.max(1)) {
        let embeddings: Vec<&Embedding> = batch.iter().map(|&i| &group.member_embeddings[i]).collect();
        let center = Embedding::centroid(&embeddings);

        let generate = DecisionRequest::new(
            "distiller",
            prompts::distill_generate(&profile_text),
            RequestContext::DistillGenerate { profile_text: profile_text.clone() },
        );
        let generated = backend
            .decide(&generate, rng)
            .map_err(|source| PersonaError::Backend { round: rounds, source })?;
        ledger.record_response(generate.kind, &generated);

        let sim = provider
            .embed(&generated.text)
            .ok()
            .and_then(|e| cosine(&e, &center).ok())
            .unwrap_or(0.0)
            .max(0.0);
        if sim < cfg.lambda {
            if rounds >= cfg.max_rounds {
                exhausted = true;
                break 'batches;
            }
            // Most central batch comment anchors the revision.
            let nearest = *batch
                .iter()
                .max_by(|&&a, &&b| {
                    let sa = cosine(&group.member_embeddings[a], &center).unwrap_or(-1.0);
                    let sb = cosine(&group.member_embeddings[b], &center).unwrap_or(-1.0);
                    sa.partial_cmp(&sb)
                        .unwrap()
                        .then_with(|| group.member_ids[b].cmp(&group.member_ids[a]))
                })
                .unwrap();
            let refine = DecisionRequest::new(
                "distiller",
                prompts::distill_refine(&profile_text, &generated.text, &group.member_texts[nearest]),
                RequestContext::DistillRefine {
                    profile_text: profile_text.clone(),
                    nearest_comment: group.member_texts[nearest].clone(),
                },
            );
            let revised = backend
                .decide(&refine, rng)
                .map_err(|source| PersonaError::Backend { round: rounds, source })?;
            ledger.record_response(refine.kind, &revised);
            profile_text = revised.text;
            rounds += 1;
        }
    }

    Ok(PersonaProfile {
        profile_text,
        evidence: selected.iter().map(|&i| group.member_ids[i].clone()).collect(),
        topic_id: group.topic_id,
        group_id: group.group_id,
        refinement_rounds: rounds,
        exhausted_rounds: exhausted,
        source_split: "train".into(),
    })
}

// ---------------------------------------------------------------------------
// Extraction pipelines
// ---------------------------------------------------------------------------

/// Pipeline settings; unset topic count defaults to `ceil(sqrt(#news))`,
/// per-topic viewpoint groups cap at 5 and are clamped to the comment
/// count.
#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub topics: Option<usize>,
    pub per_topic: usize,
    pub w_p: f64,
    pub subset_size: usize,
    pub distill: DistillConfig,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            topics: None,
            per_topic: 5,
            w_p: 0.5,
            subset_size: 8,
            distill: DistillConfig::default(),
            seed: 17,
        }
    }
}

/// Comment filter for verifier persona extraction: comments must come
/// from an allow-listed (influential) author when one is set, carry
/// strong engagement (top-quartile by default), and match a
/// citation-keyword list standing in for "well-supported stance"
/// detection.
#[derive(Debug, Clone)]
pub struct VerifierFilter {
    pub keywords: Vec<String>,
    /// Engagement quantile a comment must reach, in [0, 1].
    pub engagement_quantile: f64,
    /// When set, only these users' comments are considered.
    pub allowed_authors: Option<std::collections::BTreeSet<String>>,
}

impl Default for VerifierFilter {
    fn default() -> Self {
        VerifierFilter {
            keywords: ["source", "study", "official", "report", "evidence", "according", "data"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            engagement_quantile: 0.75,
            allowed_authors: None,
        }
    }
}

impl VerifierFilter {
    pub fn engagement_threshold(&self, comments: &[&Comment]) -> u64 {
        if comments.is_empty() {
            return 0;
        }
        let mut engagements: Vec<u64> = comments.iter().map(|c| c.engagement).collect();
        engagements.sort_unstable();
        let rank = ((engagements.len() - 1) as f64 * self.engagement_quantile).floor() as usize;
        engagements[rank]
    }

    pub fn matches(&self, c: &Comment, threshold: u64) -> bool {
        if let Some(allowed) = &self.allowed_authors {
            if !allowed.contains(&c.user_id) {
                return false;
            }
        }
        if c.engagement < threshold {
            return false;
        }
        let lower = c.text.to_lowercase();
        self.keywords.iter().any(|k| lower.contains(k.as_str()))
    }
}

/// The distilled pool plus bookkeeping for reports.
#[derive(Debug, Clone)]
pub struct PersonaPool {
    pub profiles: Vec<PersonaProfile>,
    pub topic_count: usize,
}

fn news_views(corpus: &Corpus) -> Vec<UnlabeledNews<'_>> {
    corpus
        .news
        .iter()
        .filter(|n| n.split == Split::Train)
        .map(|n| UnlabeledNews { id: &n.id, text: &n.text })
        .collect()
}

/// Runs the full persona pipeline over the train split of a corpus.
/// `comment_filter` restricts the comment pool (used for verifier
/// personas); `None` admits every train-split comment.
pub fn extract_personas(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    backend: &dyn DecisionBackend,
    cfg: &ExtractionConfig,
    comment_filter: Option<&VerifierFilter>,
    ledger: &mut TokenLedger,
) -> Result<PersonaPool, PersonaError> {
    let news = news_views(corpus);
    if news.is_empty() {
        return Err(PersonaError::Config("no train-split news".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let news_embeddings: Vec<Embedding> = news
        .iter()
        .map(|n| provider.embed(n.text))
        .collect::<Result<_, _>>()?;
    let m = cfg
        .topics
        .unwrap_or_else(|| (news.len() as f64).sqrt().ceil() as usize)
        .clamp(1, news.len());
    let topics = cluster_topics(&news_embeddings, m, cfg.seed)?;

    // Comments per topic, in file order; the verifier filter applies
    // against the full train-split comment pool.
    let train_news_topic: std::collections::HashMap<&str, usize> = news
        .iter()
        .zip(topics.iter())
        .map(|(n, &t)| (n.id, t))
        .collect();
    let train_comments: Vec<&Comment> = corpus
        .comments
        .iter()
        .filter(|c| train_news_topic.contains_key(c.news_id.as_str()))
        .collect();
    let threshold = comment_filter.map(|f| f.engagement_threshold(&train_comments));
    let admitted: Vec<&Comment> = train_comments
        .into_iter()
        .filter(|c| match (comment_filter, threshold) {
            (Some(f), Some(t)) => f.matches(c, t),
            _ => true,
        })
        .collect();

    let mut profiles = Vec::new();
    for topic in 0..m {
        let topic_comments: Vec<&Comment> = admitted
            .iter()
            .copied()
            .filter(|c| train_news_topic[c.news_id.as_str()] == topic)
            .collect();
        if topic_comments.is_empty() {
            continue;
        }
        let embeddings: Vec<Embedding> = topic_comments
            .iter()
            .map(|c| provider.embed(&c.text))
            .collect::<Result<_, _>>()?;
        let group_count = cfg.per_topic.clamp(1, topic_comments.len());
        let assignments = cluster_viewpoints(&embeddings, group_count, cfg.seed ^ topic as u64)?;
        for group_id in 0..group_count {
            let members: Vec<usize> = (0..topic_comments.len())
                .filter(|&i| assignments[i] == group_id)
                .collect();
            if members.is_empty() {
                continue;
            }
            let group = PersonaGroup::new(
                topic,
                group_id,
                members.iter().map(|&i| topic_comments[i].id.clone()).collect(),
                members.iter().map(|&i| topic_comments[i].text.clone()).collect(),
                members.iter().map(|&i| embeddings[i].clone()).collect(),
            );
            let subset_size = cfg.subset_size.clamp(1, group.len());
            let selected = balanced_sample(&group, &SamplingConfig { w_p: cfg.w_p, subset_size })?;
            let profile =
                distill_profile(&group, &selected, backend, provider, &mut rng, ledger, &cfg.distill)?;
            profiles.push(profile);
        }
    }
    if profiles.is_empty() {
        return Err(PersonaError::Config("no comments available for persona extraction".into()));
    }
    Ok(PersonaPool { profiles, topic_count: m })
}

pub fn save_personas(path: &std::path::Path, pool: &[PersonaProfile]) -> std::io::Result<()> {
    let mut buf = String::new();
    for p in pool {
        buf.push_str(&serde_json::to_string(p).expect("serializable profile"));
        buf.push('\n');
    }
    std::fs::write(path, buf)
}

pub fn load_personas(path: &std::path::Path) -> Result<Vec<PersonaProfile>, PersonaError> {
    let data = std::fs::read_to_string(path)
        .map_err(|e| PersonaError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| PersonaError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
