//! Deterministic synthetic corpora for demos, tests, and the acceptance
//! harness: separable fake/real vocabularies, a small-world user graph,
//! and comments that give persona extraction something to chew on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Comment, Corpus, NewsItem, Split, Stance, TruncationCaps, UserRecord};

const FAKE_VOCAB: [&str; 10] = [
    "shocking", "miracle", "exposed", "secret", "hoax", "conspiracy", "banned", "coverup",
    "outrage", "cure",
];
const REAL_VOCAB: [&str; 10] = [
    "council", "budget", "report", "quarterly", "infrastructure", "committee", "schedule",
    "routine", "approves", "session",
];
const FILLER: [&str; 10] = [
    "the", "community", "city", "news", "update", "local", "today", "meeting", "public", "review",
];

/// Markers the mock fact-check oracle should flag; mirrors the fake
/// vocabulary.
pub fn fake_markers() -> Vec<String> {
    FAKE_VOCAB.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub news_count: usize,
    pub user_count: usize,
    /// Ring-lattice neighbors per side before rewiring.
    pub ring_neighbors: usize,
    pub rewire_prob: f64,
    pub comments_per_news: usize,
    /// Fraction of items written mostly in filler vocabulary, so a
    /// bag-of-words head is unsure about them while the full model still
    /// has signal.
    pub ambiguous_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            news_count: 64,
            user_count: 48,
            ring_neighbors: 2,
            rewire_prob: 0.1,
            comments_per_news: 4,
            ambiguous_fraction: 0.4,
            seed: 2024,
        }
    }
}

/// Watts-Strogatz-style small world: a ring lattice with `k` neighbors per
/// side, each ring edge rewired with probability `p`. Follower counts give
/// a handful of hub users so the influence gate has a real top tier.
pub fn small_world_users(n: usize, k: usize, p: f64, seed: u64) -> Vec<UserRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency: Vec<std::collections::BTreeSet<usize>> =
        vec![std::collections::BTreeSet::new(); n];
    for i in 0..n {
        for offset in 1..=k {
            let j = (i + offset) % n;
            if rng.random_range(0.0..1.0) < p {
                // Rewire to a uniform non-self target, skipping duplicates.
                let mut target = rng.random_range(0..n as u64) as usize;
                let mut guard = 0;
                while (target == i || adjacency[i].contains(&target)) && guard < 8 {
                    target = rng.random_range(0..n as u64) as usize;
                    guard += 1;
                }
                if target != i {
                    adjacency[i].insert(target);
                    adjacency[target].insert(i);
                    continue;
                }
            }
            adjacency[i].insert(j);
            adjacency[j].insert(i);
        }
    }
    (0..n)
        .map(|i| {
            let hub = i % 16 == 0;
            UserRecord {
                id: format!("u{i:03}"),
                follower_count: if hub { 900 + rng.random_range(0..200u64) } else { rng.random_range(5..120u64) },
                avg_likes: if hub { 45.0 } else { rng.random_range(0.0..8.0) },
                repost_count: if hub { 220 + rng.random_range(0..60u64) } else { rng.random_range(0..25u64) },
                neighbors: adjacency[i].iter().map(|&j| format!("u{j:03}")).collect(),
            }
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len() as u64) as usize]
}

fn sentence(rng: &mut ChaCha8Rng, family: &[&str], filler_tokens: usize, family_tokens: usize) -> String {
    let mut words = Vec::new();
    for _ in 0..family_tokens {
        words.push(pick(rng, family));
    }
    for _ in 0..filler_tokens {
        words.push(pick(rng, &FILLER));
    }
    // Deterministic shuffle for word order variety.
    for i in (1..words.len()).rev() {
        let j = rng.random_range(0..(i + 1) as u64) as usize;
        words.swap(i, j);
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s + "."
}

/// Builds a labeled, separable corpus: fake items use one vocabulary,
/// real items another, and an ambiguous slice leans on shared filler so
/// content-only confidence drops. Splits follow a seeded shuffle at
/// 7:1:2.
pub fn synthetic_corpus(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users = small_world_users(cfg.user_count, cfg.ring_neighbors, cfg.rewire_prob, cfg.seed ^ 0xd1ce);

    let mut order: Vec<usize> = (0..cfg.news_count).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..(i + 1) as u64) as usize;
        order.swap(i, j);
    }
    let train_end = (cfg.news_count * 7) / 10;
    let val_end = train_end + cfg.news_count / 10;
    let split_of = |position: usize| {
        if position < train_end {
            Split::Train
        } else if position < val_end {
            Split::Val
        } else {
            Split::Test
        }
    };
    let mut split_by_index = vec![Split::Train; cfg.news_count];
    for (position, &index) in order.iter().enumerate() {
        split_by_index[index] = split_of(position);
    }

    let caps = TruncationCaps::default();
    let mut news = Vec::with_capacity(cfg.news_count);
    let mut comments = Vec::new();
    for i in 0..cfg.news_count {
        let fake = i % 2 == 1;
        let ambiguous = (i as f64 / cfg.news_count as f64) < cfg.ambiguous_fraction;
        let family: &[&str] = if fake { &FAKE_VOCAB } else { &REAL_VOCAB };
        let text = if ambiguous {
            format!(
                "{} {} {}",
                sentence(&mut rng, family, 6, 1),
                sentence(&mut rng, &FILLER, 5, 2),
                sentence(&mut rng, &FILLER, 6, 1)
            )
        } else {
            format!(
                "{} {} {}",
                sentence(&mut rng, family, 2, 4),
                sentence(&mut rng, family, 3, 3),
                sentence(&mut rng, &FILLER, 4, 2)
            )
        };
        let id = format!("n{i:03}");
        news.push(NewsItem {
            id: id.clone(),
            text: text.clone(),
            label: Some(fake as u8),
            split: split_by_index[i],
            sentences: crate::corpus::sentences_from_text(&text, caps),
        });

        for c in 0..cfg.comments_per_news {
            let user = rng.random_range(0..cfg.user_count as u64) as usize;
            let supportive = rng.random_range(0.0..1.0) < if fake { 0.55 } else { 0.8 };
            let cites = c == 0;
            let body = if cites {
                format!(
                    "according to the official report this {} story needs {}",
                    pick(&mut rng, family),
                    if supportive { "attention" } else { "correction" }
                )
            } else if supportive {
                format!("sharing this {} {} now", pick(&mut rng, family), pick(&mut rng, &FILLER))
            } else {
                format!("doubt this {} claim entirely", pick(&mut rng, family))
            };
            comments.push(Comment {
                id: format!("c{i:03}_{c}"),
                news_id: id.clone(),
                user_id: format!("u{user:03}"),
                text: body,
                timestamp: (i * 100 + c) as u64,
                stance: Some(if supportive { Stance::Pos } else { Stance::Neg }),
                engagement: rng.random_range(0..40u64) + if cites { 30 } else { 0 },
            });
        }
    }

    Corpus { news, comments, users, cascades: vec![] }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_integral() {
        let cfg = SynthConfig::default();
        let a = synthetic_corpus(&cfg);
        let b = synthetic_corpus(&cfg);
        assert_eq!(serde_json::to_string(&a.news).unwrap(), serde_json::to_string(&b.news).unwrap());
        assert_eq!(serde_json::to_string(&a.users).unwrap(), serde_json::to_string(&b.users).unwrap());
        a.check_integrity().unwrap();
    }

    #[test]
    fn splits_follow_seven_one_two() {
        let cfg = SynthConfig { news_count: 60, ..SynthConfig::default() };
        let corpus = synthetic_corpus(&cfg);
        let count = |s: Split| corpus.news.iter().filter(|n| n.split == s).count();
        assert_eq!(count(Split::Train), 42);
        assert_eq!(count(Split::Val), 6);
        assert_eq!(count(Split::Test), 12);
    }

    #[test]
    fn small_world_is_connected_and_symmetric() {
        let users = small_world_users(40, 2, 0.1, 9);
        let corpus = Corpus { news: vec![], comments: vec![], users, cascades: vec![] };
        let graph = corpus.follow_graph();
        // Symmetry by construction of follow_graph; connectivity via BFS.
        let mut seen = std::collections::BTreeSet::new();
        let mut queue = std::collections::VecDeque::from(["u000".to_string()]);
        seen.insert("u000".to_string());
        while let Some(u) = queue.pop_front() {
            for v in &graph[&u] {
                if seen.insert(v.clone()) {
                    queue.push_back(v.clone());
                }
            }
        }
        assert_eq!(seen.len(), 40, "small world should be connected");
    }

    #[test]
    fn labels_alternate_and_vocabularies_separate() {
        let corpus = synthetic_corpus(&SynthConfig::default());
        for n in &corpus.news {
            let fake = n.label == Some(1);
            let text = n.text.to_lowercase();
            let has_fake_word = FAKE_VOCAB.iter().any(|w| text.contains(w));
            let has_real_word = REAL_VOCAB.iter().any(|w| text.contains(w));
            if fake {
                assert!(has_fake_word && !has_real_word, "{}", n.text);
            } else {
                assert!(has_real_word && !has_fake_word, "{}", n.text);
            }
        }
    }
}
