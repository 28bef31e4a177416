//! Structural and behavioral cascade statistics, plus real-vs-virtual
//! comparison reports.
//!
//! All functions are pure over immutable graphs. Disconnected graphs are
//! handled by pair-weighted per-component means for structural virality;
//! conventions that the literature leaves open (degree counting, JSD log
//! base) are pinned here and documented on each function.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corpus::{ActionKind, CascadeGraph, Stance};

/// Which per-node degree feeds the degree distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeConvention {
    Total,
    In,
    Out,
}

/// Structural summary of one cascade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeStats {
    pub cascade_depth: f64,
    pub avg_degree: f64,
    pub density: f64,
    pub structural_virality: f64,
    pub clustering: f64,
}

/// Behavioral summary over a cascade set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    /// Mean verifier participants per cascade.
    pub verifier_mean: f64,
    /// Percentages (pos, neu, neg) summing to 100, or `None` when the set
    /// has no stance-labeled comment events.
    pub stance_pct: Option<(f64, f64, f64)>,
    pub comment_events: u64,
}

/// Longest BFS layer index over directed edges from the nearest seed.
pub fn cascade_depth(g: &CascadeGraph) -> u64 {
    g.seed_distances().values().copied().max().unwrap_or(0)
}

fn undirected_adjacency(g: &CascadeGraph) -> Vec<Vec<usize>> {
    let index: HashMap<&str, usize> =
        g.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut adj = vec![Vec::new(); g.nodes.len()];
    let mut seen = std::collections::HashSet::new();
    for e in &g.edges {
        let (a, b) = (index[e.source.as_str()], index[e.target.as_str()]);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    adj
}

/// Mean shortest-path distance over unordered node pairs, with the graph
/// treated as undirected. Disconnected graphs average per-component,
/// weighted by each component's pair count; a graph with no connected pair
/// (including a single node) scores 0.
pub fn structural_virality(g: &CascadeGraph) -> f64 {
    let n = g.nodes.len();
    if n < 2 {
        return 0.0;
    }
    let adj = undirected_adjacency(g);
    let mut total_distance = 0u64;
    let mut total_pairs = 0u64;
    for source in 0..n {
        // BFS from each node; each unordered pair is counted twice, which
        // cancels in the ratio.
        let mut dist = vec![u64::MAX; n];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == u64::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (v, &d) in dist.iter().enumerate() {
            if v != source && d != u64::MAX {
                total_distance += d;
                total_pairs += 1;
            }
        }
    }
    if total_pairs == 0 {
        0.0
    } else {
        total_distance as f64 / total_pairs as f64
    }
}

/// `|E| / (n (n - 1))` on the directed graph; 0 for a single node.
pub fn density(g: &CascadeGraph) -> f64 {
    let n = g.nodes.len();
    if n < 2 {
        return 0.0;
    }
    g.edges.len() as f64 / (n * (n - 1)) as f64
}

/// `|E| / n`, each directed edge counted once.
pub fn avg_degree(g: &CascadeGraph) -> f64 {
    if g.nodes.is_empty() {
        return 0.0;
    }
    g.edges.len() as f64 / g.nodes.len() as f64
}

/// Mean local clustering coefficient on the undirected projection; nodes
/// with fewer than two neighbors contribute 0.
pub fn clustering(g: &CascadeGraph) -> f64 {
    let n = g.nodes.len();
    if n == 0 {
        return 0.0;
    }
    let adj = undirected_adjacency(g);
    let neighbor_sets: Vec<std::collections::HashSet<usize>> =
        adj.iter().map(|ns| ns.iter().copied().collect()).collect();
    let mut total = 0.0;
    for i in 0..n {
        let deg = adj[i].len();
        if deg < 2 {
            continue;
        }
        let mut links = 0usize;
        for (a_pos, &a) in adj[i].iter().enumerate() {
            for &b in adj[i].iter().skip(a_pos + 1) {
                if neighbor_sets[a].contains(&b) {
                    links += 1;
                }
            }
        }
        total += 2.0 * links as f64 / (deg * (deg - 1)) as f64;
    }
    total / n as f64
}

pub fn cascade_stats(g: &CascadeGraph) -> CascadeStats {
    CascadeStats {
        cascade_depth: cascade_depth(g) as f64,
        avg_degree: avg_degree(g),
        density: density(g),
        structural_virality: structural_virality(g),
        clustering: clustering(g),
    }
}

/// Per-metric mean over a cascade set.
pub fn mean_stats(cascades: &[CascadeGraph]) -> Option<CascadeStats> {
    if cascades.is_empty() {
        return None;
    }
    let n = cascades.len() as f64;
    let mut acc = CascadeStats {
        cascade_depth: 0.0,
        avg_degree: 0.0,
        density: 0.0,
        structural_virality: 0.0,
        clustering: 0.0,
    };
    for g in cascades {
        let s = cascade_stats(g);
        acc.cascade_depth += s.cascade_depth;
        acc.avg_degree += s.avg_degree;
        acc.density += s.density;
        acc.structural_virality += s.structural_virality;
        acc.clustering += s.clustering;
    }
    acc.cascade_depth /= n;
    acc.avg_degree /= n;
    acc.density /= n;
    acc.structural_virality /= n;
    acc.clustering /= n;
    Some(acc)
}

fn node_degrees(g: &CascadeGraph, convention: DegreeConvention) -> Vec<u64> {
    let index: HashMap<&str, usize> =
        g.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut in_deg = vec![0u64; g.nodes.len()];
    let mut out_deg = vec![0u64; g.nodes.len()];
    for e in &g.edges {
        out_deg[index[e.source.as_str()]] += 1;
        in_deg[index[e.target.as_str()]] += 1;
    }
    (0..g.nodes.len())
        .map(|i| match convention {
            DegreeConvention::Total => in_deg[i] + out_deg[i],
            DegreeConvention::In => in_deg[i],
            DegreeConvention::Out => out_deg[i],
        })
        .collect()
}

/// Pooled degree histogram over a cascade set, normalized to a
/// distribution over degree values.
pub fn degree_distribution(cascades: &[CascadeGraph], convention: DegreeConvention) -> BTreeMap<u64, f64> {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut total = 0u64;
    for g in cascades {
        for d in node_degrees(g, convention) {
            *counts.entry(d).or_insert(0) += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|(d, c)| (d, c as f64 / total.max(1) as f64))
        .collect()
}

/// Jensen-Shannon divergence between two discrete distributions, base-2
/// logarithm, so the value lies in `[0, 1]`.
pub fn jsd(p: &BTreeMap<u64, f64>, q: &BTreeMap<u64, f64>) -> f64 {
    let support: std::collections::BTreeSet<u64> = p.keys().chain(q.keys()).copied().collect();
    let mut kl_pm = 0.0;
    let mut kl_qm = 0.0;
    for key in support {
        let pi = p.get(&key).copied().unwrap_or(0.0);
        let qi = q.get(&key).copied().unwrap_or(0.0);
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            kl_pm += pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            kl_qm += qi * (qi / mi).log2();
        }
    }
    (0.5 * (kl_pm + kl_qm)).clamp(0.0, 1.0)
}

/// JSD between the pooled degree distributions of two cascade sets.
pub fn degree_jsd(real: &[CascadeGraph], virtual_: &[CascadeGraph], convention: DegreeConvention) -> f64 {
    assert!(!real.is_empty() && !virtual_.is_empty(), "degree_jsd needs nonempty sets");
    jsd(
        &degree_distribution(real, convention),
        &degree_distribution(virtual_, convention),
    )
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Published reference row for a dataset (means over its real cascades
/// plus the real-vs-virtual degree JSD reported alongside).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceColumn {
    pub name: &'static str,
    pub stats: CascadeStats,
    pub jsd: f64,
}

/// Real PolitiFact-P cascades as published.
pub const POLITIFACT_P_REAL: ReferenceColumn = ReferenceColumn {
    name: "politifact-p",
    stats: CascadeStats {
        cascade_depth: 4.203,
        avg_degree: 1.884,
        density: 0.016,
        structural_virality: 2.808,
        clustering: 0.114,
    },
    jsd: 0.078,
};

/// Real GossipCop-P cascades as published.
pub const GOSSIPCOP_P_REAL: ReferenceColumn = ReferenceColumn {
    name: "gossipcop-p",
    stats: CascadeStats {
        cascade_depth: 3.086,
        avg_degree: 2.123,
        density: 0.051,
        structural_virality: 2.302,
        clustering: 0.070,
    },
    jsd: 0.104,
};

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub real: f64,
    pub virtual_: f64,
    pub abs_delta: f64,
    /// Relative to the real value; `None` when the real value is 0.
    pub rel_delta: Option<f64>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub degree_jsd: f64,
    pub reference_jsd: Option<f64>,
    pub reference_name: Option<&'static str>,
}

/// Side-by-side metric table for two cascade sets, with absolute and
/// relative deltas and an optional published reference column.
pub fn compare_report(
    real: &CascadeStats,
    virtual_: &CascadeStats,
    observed_jsd: f64,
    reference: Option<&ReferenceColumn>,
) -> ComparisonReport {
    let row = |metric: &'static str, r: f64, v: f64, reference: Option<f64>| ComparisonRow {
        metric,
        real: r,
        virtual_: v,
        abs_delta: v - r,
        rel_delta: if r != 0.0 { Some((v - r) / r) } else { None },
        reference,
    };
    let rows = vec![
        row("cascade_depth", real.cascade_depth, virtual_.cascade_depth, reference.map(|c| c.stats.cascade_depth)),
        row("avg_degree", real.avg_degree, virtual_.avg_degree, reference.map(|c| c.stats.avg_degree)),
        row("density", real.density, virtual_.density, reference.map(|c| c.stats.density)),
        row(
            "structural_virality",
            real.structural_virality,
            virtual_.structural_virality,
            reference.map(|c| c.stats.structural_virality),
        ),
        row("clustering", real.clustering, virtual_.clustering, reference.map(|c| c.stats.clustering)),
    ];
    ComparisonReport {
        rows,
        degree_jsd: observed_jsd,
        reference_jsd: reference.map(|c| c.jsd),
        reference_name: reference.map(|c| c.name),
    }
}

impl ComparisonReport {
    /// Fixed-width text rendering. Reference values print with three
    /// decimals, matching how they are published.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let has_ref = self.reference_name.is_some();
        if has_ref {
            out.push_str(&format!(
                "{:<20} {:>10} {:>10} {:>10} {:>9} {:>12}\n",
                "metric", "real", "virtual", "delta", "rel", "reference"
            ));
        } else {
            out.push_str(&format!(
                "{:<20} {:>10} {:>10} {:>10} {:>9}\n",
                "metric", "real", "virtual", "delta", "rel"
            ));
        }
        for r in &self.rows {
            let rel = r
                .rel_delta
                .map(|d| format!("{:+.1}%", 100.0 * d))
                .unwrap_or_else(|| "-".into());
            if has_ref {
                out.push_str(&format!(
                    "{:<20} {:>10.3} {:>10.3} {:>+10.3} {:>9} {:>12.3}\n",
                    r.metric,
                    r.real,
                    r.virtual_,
                    r.abs_delta,
                    rel,
                    r.reference.unwrap_or(f64::NAN)
                ));
            } else {
                out.push_str(&format!(
                    "{:<20} {:>10.3} {:>10.3} {:>+10.3} {:>9}\n",
                    r.metric, r.real, r.virtual_, r.abs_delta, rel
                ));
            }
        }
        if has_ref {
            out.push_str(&format!(
                "{:<20} {:>10.3} {:>10} {:>10} {:>9} {:>12.3}\n",
                "degree_jsd",
                self.degree_jsd,
                "-",
                "-",
                "-",
                self.reference_jsd.unwrap_or(f64::NAN)
            ));
        } else {
            out.push_str(&format!(
                "{:<20} {:>10.3} {:>10} {:>10} {:>9}\n",
                "degree_jsd", self.degree_jsd, "-", "-", "-"
            ));
        }
        out
    }
}

/// Verifier participation and stance tallies over stance-labeled comment
/// events. Cascades with no comments still count toward the verifier mean;
/// the stance row is flagged `None` when no labeled comments exist at all.
pub fn behavior_report(
    cascades: &[CascadeGraph],
    verifier_ids: &std::collections::BTreeSet<String>,
) -> BehaviorStats {
    let mut verifier_total = 0u64;
    let mut pos = 0u64;
    let mut neu = 0u64;
    let mut neg = 0u64;
    let mut comment_events = 0u64;
    for g in cascades {
        verifier_total += g.nodes.iter().filter(|n| verifier_ids.contains(*n)).count() as u64;
        for e in &g.events {
            if e.action == ActionKind::Comment {
                comment_events += 1;
                match e.stance {
                    Some(Stance::Pos) => pos += 1,
                    Some(Stance::Neu) => neu += 1,
                    Some(Stance::Neg) => neg += 1,
                    None => {}
                }
            }
        }
    }
    let labeled = pos + neu + neg;
    BehaviorStats {
        verifier_mean: if cascades.is_empty() {
            0.0
        } else {
            verifier_total as f64 / cascades.len() as f64
        },
        stance_pct: if labeled == 0 {
            None
        } else {
            Some((
                100.0 * pos as f64 / labeled as f64,
                100.0 * neu as f64 / labeled as f64,
                100.0 * neg as f64 / labeled as f64,
            ))
        },
        comment_events,
    }
}


/// Published PolitiFact-P real-cascade behavior row.
pub const POLITIFACT_P_BEHAVIOR: BehaviorStats = BehaviorStats {
    verifier_mean: 4.88,
    stance_pct: Some((54.6, 9.3, 36.1)),
    comment_events: 0,
};

/// Published GossipCop-P real-cascade behavior row.
pub const GOSSIPCOP_P_BEHAVIOR: BehaviorStats = BehaviorStats {
    verifier_mean: 2.29,
    stance_pct: Some((75.8, 18.4, 5.8)),
    comment_events: 0,
};
