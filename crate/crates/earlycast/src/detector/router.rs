//! Confidence-guided selective routing: a lightweight logistic head over
//! provider embeddings scores every item; only low-confidence ("hard")
//! items are routed to the expensive simulate-and-fuse path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorError;
use crate::embed::Embedding;
use crate::tensor::{sigmoid, Adam, Param, ParamSet};

/// Router settings; `tau` must sit strictly between 0.5 and 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouterConfig {
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig { tau: 0.8, epochs: 300, learning_rate: 0.05, seed: 29 }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.tau > 0.5 && self.tau < 1.0) {
            return Err(DetectorError::Config(format!(
                "confidence threshold tau must lie in (0.5, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Linear head over provider embeddings: `p_fake = sigmoid(w . e + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BaseClassifier {
    pub fn p_fake(&self, embedding: &Embedding) -> f64 {
        let dot: f64 = self
            .weights
            .iter()
            .zip(embedding.values())
            .map(|(w, x)| w * x)
            .sum();
        sigmoid(dot + self.bias)
    }

    /// Full-batch Adam on the logistic loss; deterministic given the
    /// config seed (initialization is zeros, so the seed only matters if
    /// callers extend this).
    pub fn train(
        embeddings: &[Embedding],
        labels: &[u8],
        cfg: &RouterConfig,
    ) -> Result<BaseClassifier, DetectorError> {
        if embeddings.is_empty() || embeddings.len() != labels.len() {
            return Err(DetectorError::Config("base classifier needs labeled embeddings".into()));
        }
        let dim = embeddings[0].dim();
        let mut params = ParamSet::new();
        params.insert("w".into(), Param::zeros(1, dim));
        params.insert("b".into(), Param::zeros(1, 1));
        let mut adam = Adam::new(cfg.learning_rate);
        for _ in 0..cfg.epochs {
            let w = &params["w"].values;
            let b = params["b"].values[0];
            let mut grad_w = vec![0.0; dim];
            let mut grad_b = 0.0;
            for (e, &y) in embeddings.iter().zip(labels) {
                let dot: f64 = w.iter().zip(e.values()).map(|(wi, xi)| wi * xi).sum();
                let p = sigmoid(dot + b);
                let err = p - y as f64;
                for (g, x) in grad_w.iter_mut().zip(e.values()) {
                    *g += err * x;
                }
                grad_b += err;
            }
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), grad_w);
            grads.insert("b".to_string(), vec![grad_b]);
            adam.step(&mut params, &grads);
        }
        Ok(BaseClassifier { weights: params["w"].values.clone(), bias: params["b"].values[0] })
    }
}

/// Routing verdict for one item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "lowercase")]
pub enum Route {
    /// Confident enough to answer from the base head alone.
    Easy { predicted_fake: bool, confidence: f64 },
    /// Needs simulated propagation and the full model.
    Hard { confidence: f64 },
}

impl Route {
    pub fn confidence(&self) -> f64 {
        match self {
            Route::Easy { confidence, .. } | Route::Hard { confidence } => *confidence,
        }
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, Route::Hard { .. })
    }
}

/// `conf = max(p, 1 - p)`; at or above tau the base prediction stands,
/// below it the item is hard.
pub fn route(p_fake: f64, tau: f64) -> Route {
    let confidence = p_fake.max(1.0 - p_fake);
    if confidence >= tau {
        Route::Easy { predicted_fake: p_fake >= 0.5, confidence }
    } else {
        Route::Hard { confidence }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbeddingProvider, HashEmbedder};

    #[test]
    fn minimum_confidence_is_always_hard() {
        for tau in [0.51, 0.7, 0.9, 0.999] {
            assert!(route(0.5, tau).is_hard());
        }
    }

    #[test]
    fn confident_item_routes_easy_with_argmax_prediction() {
        match route(0.97, 0.8) {
            Route::Easy { predicted_fake, confidence } => {
                assert!(predicted_fake);
                assert!((confidence - 0.97).abs() < 1e-12);
            }
            other => panic!("expected easy, got {other:?}"),
        }
        match route(0.03, 0.8) {
            Route::Easy { predicted_fake, .. } => assert!(!predicted_fake),
            other => panic!("expected easy, got {other:?}"),
        }
    }

    #[test]
    fn hard_items_are_exactly_those_below_tau() {
        let tau = 0.8;
        let probs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let hard: Vec<f64> = probs.iter().copied().filter(|&p| route(p, tau).is_hard()).collect();
        let easy: Vec<f64> = probs.iter().copied().filter(|&p| !route(p, tau).is_hard()).collect();
        assert_eq!(hard.len() + easy.len(), probs.len());
        for p in hard {
            assert!(p.max(1.0 - p) < tau);
        }
        for p in easy {
            assert!(p.max(1.0 - p) >= tau);
        }
    }

    #[test]
    fn tau_near_half_marks_everything_easy_and_near_one_everything_hard() {
        let probs = [0.02, 0.31, 0.5001, 0.77, 0.98];
        for p in probs {
            assert!(!route(p, 0.500001).is_hard(), "p={p} should be easy near tau -> 0.5");
        }
        for p in probs {
            assert!(route(p, 0.9999999).is_hard(), "p={p} should be hard near tau -> 1");
        }
    }

    #[test]
    fn tau_outside_open_interval_is_rejected() {
        for tau in [0.5, 1.0, 0.2, 1.5] {
            let cfg = RouterConfig { tau, ..RouterConfig::default() };
            assert!(cfg.validate().is_err(), "tau={tau} should fail validation");
        }
        assert!(RouterConfig::default().validate().is_ok());
    }

    #[test]
    fn base_head_separates_disjoint_vocabulary() {
        let p = HashEmbedder::new(48);
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for i in 0..24 {
            let fake = i % 2 == 1;
            let text = if fake {
                format!("hoax miracle shocking exposed secret {i}")
            } else {
                format!("council budget routine session report {i}")
            };
            embeddings.push(p.embed(&text).unwrap());
            labels.push(fake as u8);
        }
        let head = BaseClassifier::train(&embeddings, &labels, &RouterConfig::default()).unwrap();
        let mut correct = 0;
        for (e, &y) in embeddings.iter().zip(&labels) {
            if (head.p_fake(e) >= 0.5) == (y == 1) {
                correct += 1;
            }
        }
        assert!(correct >= 22, "only {correct}/24 correct");
    }

    #[test]
    fn routed_hard_fraction_equals_empirical_low_confidence_count() {
        let p = HashEmbedder::new(32);
        let head = BaseClassifier {
            weights: p.embed("hoax shocking").unwrap().values().to_vec(),
            bias: 0.0,
        };
        let texts: Vec<String> = (0..40).map(|i| format!("item number {i} hoax maybe")).collect();
        let tau = 0.8;
        let mut hard = 0;
        let mut low_conf = 0;
        for t in &texts {
            let prob = head.p_fake(&p.embed(t).unwrap());
            if route(prob, tau).is_hard() {
                hard += 1;
            }
            if prob.max(1.0 - prob) < tau {
                low_conf += 1;
            }
        }
        assert_eq!(hard, low_conf);
    }
}
