//! Two-layer graph-attention encoder over a cascade. Attention scores use
//! LeakyReLU(0.2), aggregation uses an ELU nonlinearity, neighborhoods are
//! the undirected cascade projection plus self-loops, and the graph
//! representation is the mean over node outputs.

use std::collections::HashMap;

use crate::corpus::CascadeGraph;
use crate::detector::{DetectorError, ParamTape};
use crate::embed::Embedding;
use crate::tensor::Tensor;

/// Undirected adjacency with self-loops, indices aligned with
/// `cascade.nodes` order. Neighbor lists are sorted for determinism.
pub fn cascade_adjacency(cascade: &CascadeGraph) -> Vec<Vec<usize>> {
    let index: HashMap<&str, usize> =
        cascade.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut adj: Vec<std::collections::BTreeSet<usize>> =
        (0..cascade.nodes.len()).map(|i| std::collections::BTreeSet::from([i])).collect();
    for e in &cascade.edges {
        let (a, b) = (index[e.source.as_str()], index[e.target.as_str()]);
        adj[a].insert(b);
        adj[b].insert(a);
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// One attention layer. Edge score for i <- j is
/// `LeakyReLU(h_i . a_src + h_j . a_dst)` with `h = x U`, softmax over
/// `N(i)`, output `ELU(sum_j alpha_ij h_j)`.
fn gat_layer(
    features: &[Tensor],
    adjacency: &[Vec<usize>],
    weight: &Tensor,
    attn_src: &Tensor,
    attn_dst: &Tensor,
    slope: f64,
) -> (Vec<Tensor>, Vec<Vec<f64>>) {
    let projected: Vec<Tensor> = features.iter().map(|x| x.matmul(weight)).collect();
    let src_scores: Vec<Tensor> = projected.iter().map(|h| h.matmul(attn_src)).collect();
    let dst_scores: Vec<Tensor> = projected.iter().map(|h| h.matmul(attn_dst)).collect();
    let mut outputs = Vec::with_capacity(features.len());
    let mut attention = Vec::with_capacity(features.len());
    for (i, neighbors) in adjacency.iter().enumerate() {
        let scores: Vec<Tensor> = neighbors
            .iter()
            .map(|&j| src_scores[i].add(&dst_scores[j]).leaky_relu(slope))
            .collect();
        let alpha = Tensor::concat_cols(&scores).softmax();
        let stacked = Tensor::concat_rows(&neighbors.iter().map(|&j| projected[j].clone()).collect::<Vec<_>>());
        outputs.push(alpha.matmul(&stacked).elu());
        attention.push(alpha.values().to_vec());
    }
    (outputs, attention)
}

/// Graph encoding plus first-layer attention rows for inspection.
pub struct GraphEncoding {
    /// `1 x graph_hidden` pooled representation.
    pub x_g: Tensor,
    pub attention: Vec<Vec<f64>>,
}

/// Encodes a cascade from per-node profile embeddings (aligned with
/// `adjacency`, which must include self-loops).
pub fn encode_graph(
    node_embeddings: &[Embedding],
    adjacency: &[Vec<usize>],
    tape: &ParamTape,
    slope: f64,
) -> Result<GraphEncoding, DetectorError> {
    if node_embeddings.is_empty() {
        return Err(DetectorError::EmptyGraph);
    }
    let features: Vec<Tensor> = node_embeddings
        .iter()
        .map(|e| Tensor::row(e.values().to_vec()))
        .collect();
    let (hidden, attention) = gat_layer(
        &features,
        adjacency,
        tape.get("graph.l1.weight"),
        tape.get("graph.l1.attn_src"),
        tape.get("graph.l1.attn_dst"),
        slope,
    );
    let (out, _) = gat_layer(
        &hidden,
        adjacency,
        tape.get("graph.l2.weight"),
        tape.get("graph.l2.attn_src"),
        tape.get("graph.l2.attn_dst"),
        slope,
    );
    let stacked = Tensor::concat_rows(&out);
    let n = out.len();
    let pool = Tensor::constant(vec![1.0 / n as f64; n], 1, n);
    Ok(GraphEncoding { x_g: pool.matmul(&stacked), attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::{init_params, DetectorConfig};
    use crate::embed::{EmbeddingProvider, HashEmbedder};

    fn tiny_config() -> DetectorConfig {
        DetectorConfig {
            embed_dim: 8,
            content_hidden: 8,
            graph_hidden: 8,
            latent_dim: 4,
            mlp_hidden: 4,
            seed: 5,
            ..DetectorConfig::default()
        }
    }

    fn node_embeddings(texts: &[&str], dim: usize) -> Vec<Embedding> {
        let p = HashEmbedder::new(dim);
        texts.iter().map(|t| p.embed(t).unwrap()).collect()
    }

    #[test]
    fn single_node_matches_hand_composition() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let nodes = node_embeddings(&["solo verifier profile"], cfg.embed_dim);
        let adjacency = vec![vec![0]];
        let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();
        assert_eq!(enc.attention, vec![vec![1.0]]);

        // Hand composition: with a single self-loop neighbor the attention
        // is 1, so x_g = elu(elu(v U1) U2).
        let v = Tensor::row(nodes[0].values().to_vec());
        let h1 = v.matmul(tape.get("graph.l1.weight")).elu();
        let h2 = h1.matmul(tape.get("graph.l2.weight")).elu();
        for (got, want) in enc.x_g.values().iter().zip(h2.values()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_neighbors_get_uniform_attention() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let nodes =
            node_embeddings(&["same profile text", "same profile text", "same profile text"], cfg.embed_dim);
        let adjacency = vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]];
        let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();
        for row in &enc.attention {
            for w in row {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn four_node_attention_matches_hand_computed_softmax() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let nodes = node_embeddings(
            &["profile one here", "another profile", "third node text", "fourth voice"],
            cfg.embed_dim,
        );
        // Star around node 0, plus self-loops.
        let adjacency = vec![vec![0, 1, 2, 3], vec![0, 1], vec![0, 2], vec![0, 3]];
        let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();

        // Independent evaluation of layer-1 attention for node 0.
        let weight = tape.get("graph.l1.weight");
        let a_src = tape.get("graph.l1.attn_src");
        let a_dst = tape.get("graph.l1.attn_dst");
        let h: Vec<Vec<f64>> = (0..4)
            .map(|i| Tensor::row(nodes[i].values().to_vec()).matmul(weight).values().to_vec())
            .collect();
        let dot = |a: &[f64], b: &Tensor| -> f64 {
            a.iter().zip(b.values().iter()).map(|(x, y)| x * y).sum()
        };
        let leaky = |x: f64| if x >= 0.0 { x } else { 0.2 * x };
        let scores: Vec<f64> = (0..4).map(|j| leaky(dot(&h[0], a_src) + dot(&h[j], a_dst))).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (got, want) in enc.attention[0].iter().zip(exps.iter().map(|e| e / total)) {
            assert!((got - want).abs() < 1e-9, "attention row mismatch");
        }
    }

    #[test]
    fn attention_rows_sum_to_one_on_random_graphs() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let nodes = node_embeddings(&["a b", "c d", "e f", "g h", "i j"], cfg.embed_dim);
        let adjacency = vec![vec![0, 1, 4], vec![0, 1, 2], vec![1, 2, 3], vec![2, 3], vec![0, 4]];
        let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();
        for row in &enc.attention {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg);
        let nodes = node_embeddings(&["p one", "p two", "p three", "p four"], cfg.embed_dim);
        let adjacency = vec![vec![0, 1, 2, 3], vec![0, 1], vec![0, 2], vec![0, 3]];

        let loss_of = |params: &crate::tensor::ParamSet| -> f64 {
            let tape = ParamTape::new(params);
            let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();
            enc.x_g.mul(&enc.x_g).sum().value()
        };

        let tape = ParamTape::new(&params);
        let enc = encode_graph(&nodes, &adjacency, &tape, 0.2).unwrap();
        enc.x_g.mul(&enc.x_g).sum().backward();
        let grads = tape.grads();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let names: Vec<String> = params.keys().filter(|n| n.starts_with("graph.")).cloned().collect();
        for name in names {
            let len = params[&name].values.len();
            let stride = (len / 6).max(1);
            for i in (0..len).step_by(stride) {
                let orig = params.get_mut(&name).unwrap().values[i];
                params.get_mut(&name).unwrap().values[i] = orig + eps;
                let hi = loss_of(&params);
                params.get_mut(&name).unwrap().values[i] = orig - eps;
                let lo = loss_of(&params);
                params.get_mut(&name).unwrap().values[i] = orig;
                let numeric = (hi - lo) / (2.0 * eps);
                let analytic = grads[&name][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }
}
