//! Full detector: parameter initialization, the forward pass tying both
//! encoders through the latent fusion, the combined training objective,
//! the Adam training loop with early stopping, and evaluation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::AgentProfile;
use crate::corpus::{CascadeGraph, NewsItem, Split};
use crate::detector::content::{encode_content, ContentEncoding};
use crate::detector::fusion;
use crate::detector::graph::{cascade_adjacency, encode_graph, GraphEncoding};
use crate::detector::{DetectorError, ParamTape};
use crate::embed::{Embedding, EmbeddingProvider};
use crate::tensor::{load_checkpoint, save_checkpoint, Adam, Param, ParamSet, Tensor};

/// Model and training hyperparameters. Desk defaults keep runs fast;
/// `embed_dim` follows the active embedding provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub embed_dim: usize,
    pub content_hidden: usize,
    pub graph_hidden: usize,
    pub latent_dim: usize,
    pub mlp_hidden: usize,
    pub sigma_x2: f64,
    pub lambda_rec: f64,
    pub lambda_skl: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            embed_dim: 64,
            content_hidden: 64,
            graph_hidden: 128,
            latent_dim: 32,
            mlp_hidden: 32,
            sigma_x2: 1.0,
            lambda_rec: 0.5,
            lambda_skl: 0.4,
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 6,
            leaky_slope: 0.2,
            seed: 13,
        }
    }
}

fn uniform_param(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Param {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Param {
        values: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
        rows,
        cols,
    }
}

/// Seeded parameter set covering both encoders, the fusion stack, and the
/// classifier. Biases start at zero.
pub fn init_params(cfg: &DetectorConfig) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    let (de, dh, gh, d, m) =
        (cfg.embed_dim, cfg.content_hidden, cfg.graph_hidden, cfg.latent_dim, cfg.mlp_hidden);

    let gru = |prefix: &str, input: usize, hidden: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng| {
        for gate in ["r", "z", "n"] {
            params.insert(format!("{prefix}.w{gate}"), uniform_param(rng, input, hidden, input));
            params.insert(format!("{prefix}.u{gate}"), uniform_param(rng, hidden, hidden, hidden));
            params.insert(format!("{prefix}.b{gate}"), Param::zeros(1, hidden));
        }
    };
    gru("content.word", de, dh, &mut params, &mut rng);
    params.insert("content.word.attn".into(), uniform_param(&mut rng, dh, 1, dh));
    gru("content.sent", dh, dh, &mut params, &mut rng);
    params.insert("content.sent.attn".into(), uniform_param(&mut rng, dh, 1, dh));

    params.insert("graph.l1.weight".into(), uniform_param(&mut rng, de, gh, de));
    params.insert("graph.l1.attn_src".into(), uniform_param(&mut rng, gh, 1, gh));
    params.insert("graph.l1.attn_dst".into(), uniform_param(&mut rng, gh, 1, gh));
    params.insert("graph.l2.weight".into(), uniform_param(&mut rng, gh, gh, gh));
    params.insert("graph.l2.attn_src".into(), uniform_param(&mut rng, gh, 1, gh));
    params.insert("graph.l2.attn_dst".into(), uniform_param(&mut rng, gh, 1, gh));

    params.insert("fuse.proj_c.w".into(), uniform_param(&mut rng, dh, d, dh));
    params.insert("fuse.proj_c.b".into(), Param::zeros(1, d));
    params.insert("fuse.proj_g.w".into(), uniform_param(&mut rng, gh, d, gh));
    params.insert("fuse.proj_g.b".into(), Param::zeros(1, d));
    for side in ["post_c", "post_g"] {
        params.insert(format!("fuse.{side}.mu_w"), uniform_param(&mut rng, d, d, d));
        params.insert(format!("fuse.{side}.mu_b"), Param::zeros(1, d));
        params.insert(format!("fuse.{side}.lv_w"), uniform_param(&mut rng, d, d, d));
        params.insert(format!("fuse.{side}.lv_b"), Param::zeros(1, d));
    }
    for side in ["dec_c", "dec_g"] {
        params.insert(format!("fuse.{side}.w"), uniform_param(&mut rng, d, d, d));
        params.insert(format!("fuse.{side}.b"), Param::zeros(1, d));
    }
    params.insert("fuse.gate.w".into(), uniform_param(&mut rng, 2 * d, 1, 2 * d));
    params.insert("fuse.gate.b".into(), Param::zeros(1, 1));

    params.insert("cls.l1.w".into(), uniform_param(&mut rng, d, m, d));
    params.insert("cls.l1.b".into(), Param::zeros(1, m));
    params.insert("cls.l2.w".into(), uniform_param(&mut rng, m, 2, m));
    params.insert("cls.l2.b".into(), Param::zeros(1, 2));
    params
}

/// One training/evaluation instance: tokenized content embeddings plus
/// the cascade's node features and adjacency.
#[derive(Debug, Clone)]
pub struct DetectorExample {
    pub news_id: String,
    pub split: Split,
    pub label: Option<u8>,
    pub sentences: Vec<Vec<Embedding>>,
    pub node_features: Vec<Embedding>,
    pub adjacency: Vec<Vec<usize>>,
}

/// Builds an example by embedding sentence tokens and the cascade's agent
/// profiles. The roster supplies node features; unknown agents fall back
/// to embedding their id.
pub fn build_example(
    news: &NewsItem,
    cascade: &CascadeGraph,
    roster: &BTreeMap<String, AgentProfile>,
    provider: &dyn EmbeddingProvider,
) -> Result<DetectorExample, DetectorError> {
    if news.sentences.is_empty() {
        return Err(DetectorError::EmptyDocument);
    }
    let mut sentences = Vec::with_capacity(news.sentences.len());
    for tokens in &news.sentences {
        if tokens.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(tokens.len());
        for t in tokens {
            row.push(provider.embed(t)?);
        }
        sentences.push(row);
    }
    if sentences.is_empty() {
        return Err(DetectorError::EmptyDocument);
    }
    let mut node_features = Vec::with_capacity(cascade.nodes.len());
    for node in &cascade.nodes {
        let text = roster
            .get(node)
            .map(|p| p.profile_text())
            .unwrap_or_else(|| node.clone());
        node_features.push(provider.embed(&text)?);
    }
    Ok(DetectorExample {
        news_id: news.id.clone(),
        split: news.split,
        label: news.label,
        sentences,
        node_features,
        adjacency: cascade_adjacency(cascade),
    })
}

/// All tape outputs of one example's forward pass.
pub struct ForwardPass {
    pub content: ContentEncoding,
    pub graph: GraphEncoding,
    pub mu_c: Tensor,
    pub lv_c: Tensor,
    pub mu_g: Tensor,
    pub lv_g: Tensor,
    pub rec_c: Tensor,
    pub rec_g: Tensor,
    pub skl: Tensor,
    pub gate: Tensor,
    /// `(p_fake, p_real)` softmax output.
    pub y_hat: Tensor,
}

/// Per-example latent noise; zeros mean evaluation mode (posterior means).
#[derive(Debug, Clone)]
pub struct LatentNoise {
    pub content: Vec<f64>,
    pub graph: Vec<f64>,
}

impl LatentNoise {
    pub fn zeros(dim: usize) -> LatentNoise {
        LatentNoise { content: vec![0.0; dim], graph: vec![0.0; dim] }
    }

    /// Standard-normal draws from the caller's stream (Box-Muller).
    pub fn sample(dim: usize, rng: &mut dyn RngCore) -> LatentNoise {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                    let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        };
        LatentNoise { content: draw(dim), graph: draw(dim) }
    }
}

/// The trained artifact: config plus parameters.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamSet,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig) -> DetectorModel {
        let params = init_params(&config);
        DetectorModel { config, params }
    }

    pub fn forward(
        &self,
        tape: &ParamTape,
        example: &DetectorExample,
        noise: &LatentNoise,
    ) -> Result<ForwardPass, DetectorError> {
        let content = encode_content(&example.sentences, tape, self.config.content_hidden)?;
        let graph = encode_graph(
            &example.node_features,
            &example.adjacency,
            tape,
            self.config.leaky_slope,
        )?;
        let x_c = fusion::project(&content.x_c, tape, "fuse.proj_c");
        let x_g = fusion::project(&graph.x_g, tape, "fuse.proj_g");
        let (mu_c, lv_c) = fusion::posterior(&x_c, tape, "fuse.post_c");
        let (mu_g, lv_g) = fusion::posterior(&x_g, tape, "fuse.post_g");
        let z_c = fusion::reparameterize(&mu_c, &lv_c, &noise.content);
        let z_g = fusion::reparameterize(&mu_g, &lv_g, &noise.graph);
        let rec_c = fusion::rec_loss(&x_c, &z_c, tape, "fuse.dec_c", self.config.sigma_x2);
        let rec_g = fusion::rec_loss(&x_g, &z_g, tape, "fuse.dec_g", self.config.sigma_x2);
        let skl = fusion::skl_loss(&mu_c, &lv_c, &mu_g, &lv_g);
        let (gate, fused) = fusion::fuse(&mu_c, &mu_g, tape);
        let y_hat = fusion::classify(&fused, tape);
        Ok(ForwardPass { content, graph, mu_c, lv_c, mu_g, lv_g, rec_c, rec_g, skl, gate, y_hat })
    }

    /// Batch objective: summed binary cross-entropy on the fake
    /// probability plus weighted reconstruction and alignment terms.
    pub fn batch_loss(
        &self,
        tape: &ParamTape,
        examples: &[&DetectorExample],
        noise: &[LatentNoise],
    ) -> Result<Tensor, DetectorError> {
        assert_eq!(examples.len(), noise.len());
        let mut terms: Vec<Tensor> = Vec::new();
        for (example, eta) in examples.iter().zip(noise) {
            let label = example
                .label
                .ok_or_else(|| DetectorError::Config(format!("unlabeled example {}", example.news_id)))?;
            let pass = self.forward(tape, example, eta)?;
            let cls = cross_entropy(&pass.y_hat, label);
            let reg = pass
                .rec_c
                .add(&pass.rec_g)
                .scale(self.config.lambda_rec)
                .add(&pass.skl.scale(self.config.lambda_skl));
            terms.push(cls.add(&reg));
        }
        let mut total = terms[0].clone();
        for t in &terms[1..] {
            total = total.add(t);
        }
        Ok(total)
    }

    /// Evaluation-mode fake probability (posterior means, no sampling).
    pub fn p_fake(&self, example: &DetectorExample) -> Result<f64, DetectorError> {
        let tape = ParamTape::new(&self.params);
        let pass = self.forward(&tape, example, &LatentNoise::zeros(self.config.latent_dim))?;
        Ok(pass.y_hat.values()[0])
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        save_checkpoint(path, &self.params)?;
        let meta = serde_json::to_string_pretty(&self.config).expect("serializable config");
        std::fs::write(meta_path(path), meta).map_err(crate::tensor::TensorError::Io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DetectorModel, DetectorError> {
        let params = load_checkpoint(path)?;
        let meta = std::fs::read_to_string(meta_path(path)).map_err(crate::tensor::TensorError::Io)?;
        let config: DetectorConfig = serde_json::from_str(&meta)
            .map_err(|e| DetectorError::Config(format!("bad checkpoint meta: {e}")))?;
        Ok(DetectorModel { config, params })
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// `-(y ln p_fake + (1 - y) ln(1 - p_fake))` on the two-way softmax output.
fn cross_entropy(y_hat: &Tensor, label: u8) -> Tensor {
    // Numerical floor keeps the log finite when softmax saturates.
    let p = y_hat.add_scalar(1e-12);
    let log_p = p.log();
    let picked = if label == 1 {
        Tensor::row(vec![1.0, 0.0])
    } else {
        Tensor::row(vec![0.0, 1.0])
    };
    log_p.mul(&picked).sum().neg()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Adam training with early stopping on validation loss. Deterministic for
/// a fixed config seed: shuffles, noise draws, and parameter updates all
/// derive from one ChaCha stream.
pub fn train(
    config: &DetectorConfig,
    examples: &[DetectorExample],
) -> Result<TrainOutcome, DetectorError> {
    let train_idx: Vec<usize> =
        (0..examples.len()).filter(|&i| examples[i].split == Split::Train).collect();
    let val_idx: Vec<usize> =
        (0..examples.len()).filter(|&i| examples[i].split == Split::Val).collect();
    if train_idx.is_empty() {
        return Err(DetectorError::Config("empty train split".into()));
    }
    let mut model = DetectorModel::new(config.clone());
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xdead_beef);
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 0..config.max_epochs {
        let mut order = train_idx.clone();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..(i + 1) as u64) as usize;
            order.swap(i, j);
        }
        let mut train_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&DetectorExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let noise: Vec<LatentNoise> = batch
                .iter()
                .map(|_| LatentNoise::sample(config.latent_dim, &mut rng))
                .collect();
            let tape = ParamTape::new(&model.params);
            let loss = model.batch_loss(&tape, &batch, &noise)?;
            loss.backward();
            train_loss += loss.value();
            adam.step(&mut model.params, &tape.grads());
        }
        if !train_loss.is_finite() {
            return Err(DetectorError::Config(format!("non-finite loss at epoch {epoch}")));
        }

        // Validation in evaluation mode; falls back to train loss when the
        // val split is empty.
        let val_loss = if val_idx.is_empty() {
            train_loss
        } else {
            let batch: Vec<&DetectorExample> = val_idx.iter().map(|&i| &examples[i]).collect();
            let noise: Vec<LatentNoise> =
                batch.iter().map(|_| LatentNoise::zeros(config.latent_dim)).collect();
            let tape = ParamTape::new(&model.params);
            model.batch_loss(&tape, &batch, &noise)?.value()
        };
        history.push(EpochStats { epoch, train_loss, val_loss });

        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, model.params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_params, best_epoch) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainOutcome { model, history, best_epoch })
}

/// Accuracy, precision, recall, F1 with fake (label 1) as the positive
/// class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
}

/// Computes metrics over labeled predictions `(p_fake, label)`.
pub fn metrics_from_predictions(predictions: &[(f64, u8)]) -> EvalMetrics {
    let n = predictions.len();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    let mut correct = 0usize;
    for &(p, label) in predictions {
        let predicted_fake = p >= 0.5;
        let is_fake = label == 1;
        if predicted_fake == is_fake {
            correct += 1;
        }
        match (predicted_fake, is_fake) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    EvalMetrics {
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        precision,
        recall,
        f1,
        n,
    }
}

/// Evaluates the model over every labeled example in the given split.
pub fn evaluate(
    model: &DetectorModel,
    examples: &[DetectorExample],
    split: Split,
) -> Result<EvalMetrics, DetectorError> {
    let mut predictions = Vec::new();
    for e in examples.iter().filter(|e| e.split == split) {
        let Some(label) = e.label else { continue };
        predictions.push((model.p_fake(e)?, label));
    }
    Ok(metrics_from_predictions(&predictions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ActionKind;
    use crate::embed::HashEmbedder;

    fn tiny_config() -> DetectorConfig {
        DetectorConfig {
            embed_dim: 8,
            content_hidden: 8,
            graph_hidden: 8,
            latent_dim: 4,
            mlp_hidden: 4,
            learning_rate: 0.02,
            batch_size: 8,
            max_epochs: 60,
            patience: 12,
            seed: 23,
            ..DetectorConfig::default()
        }
    }

    fn example_from_texts(
        id: &str,
        sentences: &[&str],
        node_texts: &[&str],
        edges: &[(usize, usize)],
        label: u8,
        split: Split,
        dim: usize,
    ) -> DetectorExample {
        let p = HashEmbedder::new(dim);
        let cascade = CascadeGraph {
            news_id: id.into(),
            nodes: (0..node_texts.len()).map(|i| format!("a{i}")).collect(),
            edges: edges
                .iter()
                .map(|&(s, t)| crate::corpus::CascadeEdge {
                    source: format!("a{s}"),
                    target: format!("a{t}"),
                    step: 1,
                    action: ActionKind::Forward,
                })
                .collect(),
            seeds: vec!["a0".into()],
            events: vec![],
        };
        DetectorExample {
            news_id: id.into(),
            split,
            label: Some(label),
            sentences: sentences
                .iter()
                .map(|s| s.split_whitespace().map(|t| p.embed(t).unwrap()).collect())
                .collect(),
            node_features: node_texts.iter().map(|t| p.embed(t).unwrap()).collect(),
            adjacency: cascade_adjacency(&cascade),
        }
    }

    #[test]
    fn lambda_zero_reduces_total_to_classification() {
        let mut cfg = tiny_config();
        cfg.lambda_rec = 0.0;
        cfg.lambda_skl = 0.0;
        let model = DetectorModel::new(cfg.clone());
        let e = example_from_texts(
            "n1",
            &["alpha beta gamma", "delta epsilon"],
            &["profile one", "profile two"],
            &[(0, 1)],
            1,
            Split::Train,
            cfg.embed_dim,
        );
        let tape = ParamTape::new(&model.params);
        let noise = vec![LatentNoise::zeros(cfg.latent_dim)];
        let total = model.batch_loss(&tape, &[&e], &noise).unwrap().value();

        let tape2 = ParamTape::new(&model.params);
        let pass = model.forward(&tape2, &e, &noise[0]).unwrap();
        let cls = cross_entropy(&pass.y_hat, 1).value();
        assert!((total - cls).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_drives_cls_to_zero() {
        let probs = Tensor::row(vec![1.0 - 1e-12, 1e-12]);
        assert!(cross_entropy(&probs, 1).value() < 1e-9);
        let probs = Tensor::row(vec![1e-12, 1.0 - 1e-12]);
        assert!(cross_entropy(&probs, 0).value() < 1e-9);
    }

    #[test]
    fn total_loss_matches_independent_three_term_sum() {
        let cfg = tiny_config();
        let model = DetectorModel::new(cfg.clone());
        let e = example_from_texts(
            "n1",
            &["one two three", "four five"],
            &["p a", "p b", "p c"],
            &[(0, 1), (0, 2)],
            0,
            Split::Train,
            cfg.embed_dim,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = vec![LatentNoise::sample(cfg.latent_dim, &mut rng)];
        let tape = ParamTape::new(&model.params);
        let total = model.batch_loss(&tape, &[&e], &noise).unwrap().value();

        let tape2 = ParamTape::new(&model.params);
        let pass = model.forward(&tape2, &e, &noise[0]).unwrap();
        let want = cross_entropy(&pass.y_hat, 0).value()
            + cfg.lambda_rec * (pass.rec_c.value() + pass.rec_g.value())
            + cfg.lambda_skl * pass.skl.value();
        assert!((total - want).abs() < 1e-10);
    }

    fn separable_examples(n: usize, dim: usize) -> Vec<DetectorExample> {
        (0..n)
            .map(|i| {
                let fake = i % 2 == 1;
                let (text, nodes): (&str, Vec<&str>) = if fake {
                    ("shocking miracle cure exposed tonight", vec!["credulous sharer", "eager spreader"])
                } else {
                    ("council approves routine budget report", vec!["calm reader", "quiet citizen", "steady voice"])
                };
                let split = if i % 8 == 6 {
                    Split::Val
                } else if i % 8 == 7 {
                    Split::Test
                } else {
                    Split::Train
                };
                example_from_texts(
                    &format!("n{i}"),
                    &[text, "second sentence filler"],
                    &nodes,
                    &[(0, 1)],
                    fake as u8,
                    split,
                    dim,
                )
            })
            .collect()
    }

    #[test]
    fn training_separates_a_toy_set() {
        let cfg = tiny_config();
        let examples = separable_examples(32, cfg.embed_dim);
        let outcome = train(&cfg, &examples).unwrap();
        for h in &outcome.history {
            assert!(h.train_loss.is_finite() && h.val_loss.is_finite());
        }
        let metrics = evaluate(&outcome.model, &examples, Split::Train).unwrap();
        assert!(metrics.accuracy >= 0.95, "train accuracy {}", metrics.accuracy);
    }

    #[test]
    fn first_epoch_decreases_loss_for_most_seeds() {
        // Evaluation-mode training loss before vs after one epoch of
        // updates; descent must hold on at least 90% of seeds.
        let examples = separable_examples(16, 8);
        let train_refs: Vec<&DetectorExample> =
            examples.iter().filter(|e| e.split == Split::Train).collect();
        let eval_loss = |model: &DetectorModel| -> f64 {
            let noise: Vec<LatentNoise> =
                train_refs.iter().map(|_| LatentNoise::zeros(model.config.latent_dim)).collect();
            let tape = ParamTape::new(&model.params);
            model.batch_loss(&tape, &train_refs, &noise).unwrap().value()
        };
        let mut descended = 0;
        for seed in 0..10 {
            let mut cfg = tiny_config();
            cfg.seed = seed;
            cfg.max_epochs = 1;
            cfg.learning_rate = 1e-3;
            let before = eval_loss(&DetectorModel::new(cfg.clone()));
            let outcome = train(&cfg, &examples).unwrap();
            let after = eval_loss(&outcome.model);
            if after < before {
                descended += 1;
            }
        }
        assert!(descended >= 9, "descent on only {descended}/10 seeds");
    }

    #[test]
    fn same_seed_produces_identical_checkpoints() {
        let cfg = tiny_config();
        let examples = separable_examples(16, cfg.embed_dim);
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..2 {
            let outcome = train(&cfg, &examples).unwrap();
            let path = dir.path().join(format!("m{i}.ckpt"));
            outcome.model.save(&path).unwrap();
            paths.push(path);
        }
        assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
        let reloaded = DetectorModel::load(&paths[0]).unwrap();
        assert_eq!(reloaded.params, load_checkpoint(&paths[1]).unwrap());
    }

    #[test]
    fn empty_train_split_is_config_error() {
        let cfg = tiny_config();
        let mut examples = separable_examples(8, cfg.embed_dim);
        for e in examples.iter_mut() {
            e.split = Split::Test;
        }
        assert!(matches!(train(&cfg, &examples), Err(DetectorError::Config(_))));
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        // The tiny configuration: d_e = 8, d_h = 8, d = 4, a 3-sentence
        // document, and a 4-node cascade. Every parameter is checked at a
        // stride of its length/3.
        let cfg = tiny_config();
        let model = DetectorModel::new(cfg.clone());
        let e = example_from_texts(
            "n1",
            &["first sentence words here", "second short one", "third closing line"],
            &["profile alpha", "profile beta", "profile gamma", "profile delta"],
            &[(0, 1), (0, 2), (2, 3)],
            1,
            Split::Train,
            cfg.embed_dim,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = vec![LatentNoise::sample(cfg.latent_dim, &mut rng)];

        let mut params = model.params.clone();
        let loss_of = |params: &ParamSet| -> f64 {
            let m = DetectorModel { config: cfg.clone(), params: params.clone() };
            let tape = ParamTape::new(params);
            m.batch_loss(&tape, &[&e], &noise).unwrap().value()
        };

        let tape = ParamTape::new(&params);
        let loss = model.batch_loss(&tape, &[&e], &noise).unwrap();
        loss.backward();
        let grads = tape.grads();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut worst_name = String::new();
        let names: Vec<String> = params.keys().cloned().collect();
        for name in names {
            let len = params[&name].values.len();
            let stride = (len / 3).max(1);
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
                let err = (analytic - numeric).abs() / denom;
                if err > worst {
                    worst = err;
                    worst_name = format!("{name}[{i}]");
                }
            }
        }
        assert!(worst < 1e-4, "max rel err {worst} at {worst_name}");
    }

    #[test]
    fn metrics_formulae() {
        // 2 tp, 1 fp, 1 fn, 1 tn over 5 predictions.
        let preds = [(0.9, 1), (0.8, 1), (0.7, 0), (0.2, 1), (0.1, 0)];
        let m = metrics_from_predictions(&preds);
        assert!((m.accuracy - 0.6).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
