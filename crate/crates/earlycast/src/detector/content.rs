//! Hierarchical content encoder: a gated recurrent unit runs over each
//! sentence's token embeddings, word-level attention pools hidden states
//! into sentence vectors, a second recurrent pass runs over sentences, and
//! sentence-level attention pools the document vector.

use crate::detector::{DetectorError, ParamTape};
use crate::embed::Embedding;
use crate::tensor::Tensor;

struct GruCell<'a> {
    wr: &'a Tensor,
    ur: &'a Tensor,
    br: &'a Tensor,
    wz: &'a Tensor,
    uz: &'a Tensor,
    bz: &'a Tensor,
    wn: &'a Tensor,
    un: &'a Tensor,
    bn: &'a Tensor,
}

impl<'a> GruCell<'a> {
    fn from_tape(tape: &'a ParamTape, prefix: &str) -> GruCell<'a> {
        GruCell {
            wr: tape.get(&format!("{prefix}.wr")),
            ur: tape.get(&format!("{prefix}.ur")),
            br: tape.get(&format!("{prefix}.br")),
            wz: tape.get(&format!("{prefix}.wz")),
            uz: tape.get(&format!("{prefix}.uz")),
            bz: tape.get(&format!("{prefix}.bz")),
            wn: tape.get(&format!("{prefix}.wn")),
            un: tape.get(&format!("{prefix}.un")),
            bn: tape.get(&format!("{prefix}.bn")),
        }
    }

    /// One step: `x` is `1 x in`, `h` is `1 x hidden`.
    fn step(&self, x: &Tensor, h: &Tensor) -> Tensor {
        let r = x.matmul(self.wr).add(&h.matmul(self.ur)).add(self.br).sigmoid();
        let z = x.matmul(self.wz).add(&h.matmul(self.uz)).add(self.bz).sigmoid();
        let n = x.matmul(self.wn).add(&r.mul(&h.matmul(self.un))).add(self.bn).tanh();
        let keep = z.neg().add_scalar(1.0);
        keep.mul(&n).add(&z.mul(h))
    }
}

/// Runs a recurrent pass over row tensors and returns every hidden state.
fn gru_sequence(cell: &GruCell, inputs: &[Tensor], hidden: usize) -> Vec<Tensor> {
    let mut h = Tensor::constant(vec![0.0; hidden], 1, hidden);
    let mut states = Vec::with_capacity(inputs.len());
    for x in inputs {
        h = cell.step(x, &h);
        states.push(h.clone());
    }
    states
}

/// Attention-pools a sequence of hidden rows against a learned vector:
/// scores are `h_t . u`, softmax-normalized, and the pooled row is the
/// weighted sum. Returns the pooled row and the weights.
fn attention_pool(states: &[Tensor], attn: &Tensor) -> (Tensor, Tensor) {
    let scores: Vec<Tensor> = states.iter().map(|h| h.matmul(attn)).collect();
    let weights = Tensor::concat_cols(&scores).softmax();
    let stacked = Tensor::concat_rows(states);
    (weights.matmul(&stacked), weights)
}

/// Document encoding plus the attention weights used to build it.
pub struct ContentEncoding {
    /// `1 x d_h` document representation.
    pub x_c: Tensor,
    /// Per-sentence word attention rows (each sums to 1).
    pub word_attention: Vec<Vec<f64>>,
    /// Sentence attention row (sums to 1).
    pub sentence_attention: Vec<f64>,
}

/// Encodes a document given per-sentence token embeddings. Errors when the
/// document has no sentences or a sentence has no tokens.
pub fn encode_content(
    sentences: &[Vec<Embedding>],
    tape: &ParamTape,
    hidden: usize,
) -> Result<ContentEncoding, DetectorError> {
    if sentences.is_empty() || sentences.iter().any(|s| s.is_empty()) {
        return Err(DetectorError::EmptyDocument);
    }
    let word_cell = GruCell::from_tape(tape, "content.word");
    let word_attn = tape.get("content.word.attn");
    let mut sentence_vectors = Vec::with_capacity(sentences.len());
    let mut word_attention = Vec::with_capacity(sentences.len());
    for tokens in sentences {
        let rows: Vec<Tensor> = tokens
            .iter()
            .map(|e| Tensor::row(e.values().to_vec()))
            .collect();
        let states = gru_sequence(&word_cell, &rows, hidden);
        let (pooled, weights) = attention_pool(&states, word_attn);
        sentence_vectors.push(pooled);
        word_attention.push(weights.values().to_vec());
    }
    let sent_cell = GruCell::from_tape(tape, "content.sent");
    let sent_attn = tape.get("content.sent.attn");
    let states = gru_sequence(&sent_cell, &sentence_vectors, hidden);
    let (x_c, weights) = attention_pool(&states, sent_attn);
    Ok(ContentEncoding {
        x_c,
        word_attention,
        sentence_attention: weights.values().to_vec(),
    })
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
            seed: 3,
            ..DetectorConfig::default()
        }
    }

    fn embed_sentences(texts: &[&str], dim: usize) -> Vec<Vec<Embedding>> {
        let p = HashEmbedder::new(dim);
        texts
            .iter()
            .map(|s| s.split_whitespace().map(|t| p.embed(t).unwrap()).collect())
            .collect()
    }

    #[test]
    fn single_sentence_gets_unit_sentence_attention() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let sentences = embed_sentences(&["one short sentence"], cfg.embed_dim);
        let enc = encode_content(&sentences, &tape, cfg.content_hidden).unwrap();
        assert_eq!(enc.sentence_attention, vec![1.0]);
        assert_eq!(enc.x_c.shape().cols, cfg.content_hidden);
    }

    #[test]
    fn identical_sentences_share_word_attention_and_converge_toward_uniform_pooling() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let sentences =
            embed_sentences(&["same words here", "same words here", "same words here"], cfg.embed_dim);
        let enc = encode_content(&sentences, &tape, cfg.content_hidden).unwrap();
        // Symmetry that the recurrence preserves exactly: identical
        // sentences produce identical word-attention rows.
        for row in &enc.word_attention[1..] {
            assert_eq!(row, &enc.word_attention[0]);
        }
        // The sentence recurrence contracts toward a fixed point on
        // repeated identical input, so later sentence weights approach one
        // another even though transient states keep them from being
        // exactly uniform.
        let long = embed_sentences(&["same words here"; 12], cfg.embed_dim);
        let enc = encode_content(&long, &tape, cfg.content_hidden).unwrap();
        let tail = &enc.sentence_attention[8..];
        let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - tail.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 1e-3, "late-sentence attention spread {spread}");
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        let sentences = embed_sentences(
            &["first sentence about a topic", "second one differs", "third mentions numbers 42"],
            cfg.embed_dim,
        );
        let enc = encode_content(&sentences, &tape, cfg.content_hidden).unwrap();
        for row in &enc.word_attention {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let sum: f64 = enc.sentence_attention.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_document_is_rejected() {
        let cfg = tiny_config();
        let params = init_params(&cfg);
        let tape = ParamTape::new(&params);
        assert!(matches!(
            encode_content(&[], &tape, cfg.content_hidden),
            Err(DetectorError::EmptyDocument)
        ));
        assert!(matches!(
            encode_content(&[vec![]], &tape, cfg.content_hidden),
            Err(DetectorError::EmptyDocument)
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = init_params(&cfg);
        let sentences = embed_sentences(&["alpha beta gamma", "delta epsilon"], cfg.embed_dim);

        let loss_of = |params: &crate::tensor::ParamSet| -> f64 {
            let tape = ParamTape::new(params);
            let enc = encode_content(&sentences, &tape, cfg.content_hidden).unwrap();
            enc.x_c.mul(&enc.x_c).sum().value()
        };

        let tape = ParamTape::new(&params);
        let enc = encode_content(&sentences, &tape, cfg.content_hidden).unwrap();
        enc.x_c.mul(&enc.x_c).sum().backward();
        let grads = tape.grads();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let names: Vec<String> =
            params.keys().filter(|n| n.starts_with("content.")).cloned().collect();
        for name in names {
            let len = params[&name].values.len();
            let stride = (len / 4).max(1);
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
