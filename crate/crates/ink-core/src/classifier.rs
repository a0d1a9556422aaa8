//! Stacked bidirectional recurrent character recognizer.
//!
//! Three bidirectional LSTM layers feed a rectified-linear projection and a
//! softmax over the alphabet, one distribution per input step. A matched
//! unidirectional variant (same depth and widths, forward cells only) exists
//! as a baseline; it sees no future context, so glyphs whose templates share
//! prefixes stay ambiguous for it until late in the character.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Categorical, CATEGORICAL_CLAMP};
use crate::error::{Error, Result};
use crate::graph::{GradientMap, Graph, NodeId};
use crate::lstm::{birnn_forward, unroll, LstmNodes, LstmParams, LstmStateNodes};
use crate::nets::{ff_forward, FfHead, FfNodes};
use crate::prep::EncodedSequence;
use crate::tensor::{Array, Real};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input: usize,
    /// Per-direction LSTM width.
    pub hidden: usize,
    /// Projection width.
    pub proj: usize,
    pub layers: usize,
    pub alphabet_size: usize,
    pub bidirectional: bool,
}

impl ClassifierConfig {
    /// Desk-scale defaults.
    pub fn desk(alphabet_size: usize) -> Self {
        ClassifierConfig {
            input: 3,
            hidden: 32,
            proj: 16,
            layers: 3,
            alphabet_size,
            bidirectional: true,
        }
    }

    /// Full-scale dimensions.
    pub fn full_scale(alphabet_size: usize) -> Self {
        ClassifierConfig {
            input: 3,
            hidden: 512,
            proj: 256,
            layers: 3,
            alphabet_size,
            bidirectional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("proj", self.proj),
            ("layers", self.layers),
            ("alphabet_size", self.alphabet_size),
        ] {
            if v < 1 {
                return Err(Error::contract(format!("classifier config {name} must be >= 1")));
            }
        }
        Ok(())
    }

    fn features_per_layer(&self) -> usize {
        if self.bidirectional { 2 * self.hidden } else { self.hidden }
    }
}

/// One recurrent layer: forward cell, plus a backward cell when
/// bidirectional.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLayer {
    pub fwd: LstmParams,
    pub bwd: Option<LstmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub layers: Vec<BiLayer>,
    pub head: FfHead,
}

impl ClassifierParams {
    pub fn init(cfg: &ClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut input = cfg.input;
        for _ in 0..cfg.layers {
            let fwd = LstmParams::init(input, cfg.hidden, &mut rng);
            let bwd = cfg
                .bidirectional
                .then(|| LstmParams::init(input, cfg.hidden, &mut rng));
            layers.push(BiLayer { fwd, bwd });
            input = cfg.features_per_layer();
        }
        let head = FfHead::init(input, cfg.proj, cfg.alphabet_size, &mut rng);
        ClassifierParams { layers, head }
    }

    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &'a Array)) {
        for (i, layer) in self.layers.iter().enumerate() {
            for (tag, p) in [("fwd", Some(&layer.fwd)), ("bwd", layer.bwd.as_ref())] {
                if let Some(p) = p {
                    f(&format!("layer{i}.{tag}.w_input"), &p.w_input);
                    f(&format!("layer{i}.{tag}.w_hidden"), &p.w_hidden);
                    f(&format!("layer{i}.{tag}.bias"), &p.bias);
                }
            }
        }
        f("head.w1", &self.head.w1);
        f("head.b1", &self.head.b1);
        f("head.w2", &self.head.w2);
        f("head.b2", &self.head.b2);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{i}.fwd.w_input"), &mut layer.fwd.w_input);
            f(&format!("layer{i}.fwd.w_hidden"), &mut layer.fwd.w_hidden);
            f(&format!("layer{i}.fwd.bias"), &mut layer.fwd.bias);
            if let Some(bwd) = layer.bwd.as_mut() {
                f(&format!("layer{i}.bwd.w_input"), &mut bwd.w_input);
                f(&format!("layer{i}.bwd.w_hidden"), &mut bwd.w_hidden);
                f(&format!("layer{i}.bwd.bias"), &mut bwd.bias);
            }
        }
        f("head.w1", &mut self.head.w1);
        f("head.b1", &mut self.head.b1);
        f("head.w2", &mut self.head.w2);
        f("head.b2", &mut self.head.b2);
    }

    pub fn bind(&self, g: &mut Graph) -> ClassifierNodes {
        ClassifierNodes {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, layer)| BoundLayer {
                    fwd: layer.fwd.bind(g, &format!("layer{i}.fwd")),
                    bwd: layer.bwd.as_ref().map(|p| p.bind(g, &format!("layer{i}.bwd"))),
                })
                .collect(),
            head: self.head.bind(g, "head"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub fwd: LstmNodes,
    pub bwd: Option<LstmNodes>,
}

#[derive(Debug, Clone)]
pub struct ClassifierNodes {
    pub layers: Vec<BoundLayer>,
    pub head: FfNodes,
}

/// Per-step class probability nodes for one sequence.
pub fn classify_nodes(g: &mut Graph, nodes: &ClassifierNodes, inputs: &[NodeId]) -> Vec<NodeId> {
    let mut features: Vec<NodeId> = inputs.to_vec();
    for layer in &nodes.layers {
        features = match &layer.bwd {
            Some(bwd) => birnn_forward(g, &layer.fwd, bwd, &features),
            None => {
                let zero = LstmStateNodes::zeros(g, layer.fwd.hidden);
                unroll(g, &layer.fwd, &features, &zero)
                    .into_iter()
                    .map(|s| s.h)
                    .collect()
            }
        };
    }
    features
        .into_iter()
        .map(|f| {
            let logits = ff_forward(g, &nodes.head, f);
            g.softmax(logits)
        })
        .collect()
}

/// Mean per-step cross-entropy against the labels.
pub fn classifier_loss_nodes(
    g: &mut Graph,
    probs: &[NodeId],
    labels: &[usize],
) -> Result<NodeId> {
    if probs.len() != labels.len() {
        return Err(Error::data(format!(
            "length mismatch: {} predictions vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels.iter()) {
        let p_y = g.slice(p, y, 1);
        let p_c = g.clamp(p_y, CATEGORICAL_CLAMP, 1.0);
        let lp = g.log(p_c);
        terms.push(g.neg(lp));
    }
    let stacked = g.concat(&terms);
    Ok(g.reduce_mean(stacked))
}

/// The recognizer: config, parameters, and data-space context.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub cfg: ClassifierConfig,
    pub params: ClassifierParams,
    pub alphabet: crate::data::Alphabet,
    pub stats: crate::prep::NormStats,
}

impl ClassifierModel {
    pub fn new(
        cfg: ClassifierConfig,
        alphabet: crate::data::Alphabet,
        stats: crate::prep::NormStats,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.alphabet_size != alphabet.len() {
            return Err(Error::contract(format!(
                "config alphabet_size {} != alphabet length {}",
                cfg.alphabet_size,
                alphabet.len()
            )));
        }
        Ok(ClassifierModel {
            params: ClassifierParams::init(&cfg, seed),
            cfg,
            alphabet,
            stats,
        })
    }

    /// One distribution per step. Needs the whole sequence up front.
    pub fn classify(&self, seq: &EncodedSequence) -> Result<Vec<Categorical>> {
        if seq.is_empty() {
            return Err(Error::data("classify on an empty sequence"));
        }
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let inputs = bind_inputs(&mut g, seq);
        let probs = classify_nodes(&mut g, &nodes, &inputs);
        Ok(probs
            .into_iter()
            .map(|p| Categorical { probs: g.value(p).data().to_vec() })
            .collect())
    }

    /// Argmax labels per step.
    pub fn predict_labels(&self, seq: &EncodedSequence) -> Result<Vec<usize>> {
        Ok(self.classify(seq)?.iter().map(Categorical::argmax).collect())
    }

    pub fn loss(&self, seq: &EncodedSequence, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let inputs = bind_inputs(&mut g, seq);
        let probs = classify_nodes(&mut g, &nodes, &inputs);
        let loss = classifier_loss_nodes(&mut g, &probs, labels)?;
        Ok(g.value(loss).item() as f64)
    }
}

fn bind_inputs(g: &mut Graph, seq: &EncodedSequence) -> Vec<NodeId> {
    seq.deltas
        .iter()
        .map(|d| g.constant(Array::vector(vec![d[0] as Real, d[1] as Real, d[2] as Real])))
        .collect()
}

/// Batch cross-entropy and gradients, mean over steps within each sequence
/// and over sequences. Deterministic; items evaluated in parallel but
/// reduced in batch order.
pub fn classifier_training_step(
    params: &ClassifierParams,
    batch: &[&EncodedSequence],
) -> Result<(f64, GradientMap)> {
    if batch.is_empty() {
        return Err(Error::contract("classifier_training_step on an empty batch"));
    }
    use rayon::prelude::*;
    let results: Vec<Result<(f64, GradientMap)>> = batch
        .par_iter()
        .map(|seq| {
            let mut g = Graph::new();
            let nodes = params.bind(&mut g);
            let inputs = bind_inputs(&mut g, seq);
            let probs = classify_nodes(&mut g, &nodes, &inputs);
            let loss = classifier_loss_nodes(&mut g, &probs, &seq.y)?;
            g.check_finite(&[("classification", loss)])?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).item() as f64, grads))
        })
        .collect();

    let inv_b = 1.0 / batch.len() as f64;
    let mut loss_sum = 0.0;
    let mut grad_acc: Option<GradientMap> = None;
    for r in results {
        let (l, g) = r?;
        loss_sum += l;
        match &mut grad_acc {
            None => grad_acc = Some(g),
            Some(acc) => {
                for (name, grad) in g {
                    acc[&name].add_in_place(&grad);
                }
            }
        }
    }
    let mut grads = grad_acc.unwrap();
    for (_, g) in grads.iter_mut() {
        g.scale_in_place(inv_b as Real);
    }
    Ok((loss_sum * inv_b, grads))
}

/// Fraction of steps whose argmax prediction matches the label.
pub fn stroke_accuracy(model: &ClassifierModel, sequences: &[EncodedSequence]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for seq in sequences {
        let pred = model.predict_labels(seq)?;
        correct += pred.iter().zip(seq.y.iter()).filter(|(p, y)| p == y).count();
        total += seq.len();
    }
    if total == 0 {
        return Err(Error::data("accuracy over zero steps"));
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Alphabet;
    use crate::prep::NormStats;

    fn toy_seq(t: usize) -> EncodedSequence {
        EncodedSequence {
            deltas: (0..t).map(|i| [0.2 * i as f64, -0.1 * i as f64, 0.0]).collect(),
            y: (0..t).map(|i| i % 4).collect(),
            eoc: vec![0; t],
            bow: vec![0; t],
            author: "t".into(),
            text: "t".into(),
        }
    }

    fn toy_model(bidirectional: bool, seed: u64) -> ClassifierModel {
        let cfg = ClassifierConfig {
            input: 3,
            hidden: 5,
            proj: 4,
            layers: 3,
            alphabet_size: 4,
            bidirectional,
        };
        ClassifierModel::new(cfg, Alphabet::new("abcd").unwrap(), NormStats::unit(), seed).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_every_step() {
        let mut model = toy_model(true, 0);
        model.params.visit_mut(|_, a| *a = Array::zeros(a.shape().to_vec()));
        let probs = model.classify(&toy_seq(5)).unwrap();
        assert_eq!(probs.len(), 5);
        for p in &probs {
            for &v in &p.probs {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn output_length_matches_input_length() {
        let model = toy_model(true, 1);
        for t in [1, 2, 9] {
            assert_eq!(model.classify(&toy_seq(t)).unwrap().len(), t);
        }
        assert!(model.classify(&toy_seq(0)).is_err());
    }

    #[test]
    fn uniform_predictions_give_log_k() {
        let mut model = toy_model(true, 0);
        model.params.visit_mut(|_, a| *a = Array::zeros(a.shape().to_vec()));
        let seq = toy_seq(6);
        let loss = model.loss(&seq, &seq.y).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_order_invariant() {
        let model = toy_model(true, 3);
        let a = toy_seq(4);
        let b = toy_seq(7);
        let (l1, _) = classifier_training_step(&model.params, &[&a, &b]).unwrap();
        let (l2, _) = classifier_training_step(&model.params, &[&b, &a]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_pass_grad_check() {
        use crate::gradcheck::{grad_check, GradCheckOptions};
        let cfg = ClassifierConfig {
            input: 3,
            hidden: 4,
            proj: 3,
            layers: 2,
            alphabet_size: 3,
            bidirectional: true,
        };
        let params = ClassifierParams::init(&cfg, 5);
        let seq = EncodedSequence {
            deltas: (0..4).map(|i| [0.3 * i as f64, 0.1, 0.0]).collect(),
            y: vec![0, 1, 2, 1],
            eoc: vec![0; 4],
            bow: vec![0; 4],
            author: "t".into(),
            text: "t".into(),
        };
        let mut g = Graph::new();
        let nodes = params.bind(&mut g);
        let inputs = bind_inputs(&mut g, &seq);
        let probs = classify_nodes(&mut g, &nodes, &inputs);
        let loss = classifier_loss_nodes(&mut g, &probs, &seq.y).unwrap();
        let opts = GradCheckOptions {
            max_entries_per_param: Some(6),
            ..Default::default()
        };
        let report = grad_check(&mut g, loss, &opts).unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }

    #[test]
    fn reversal_equivariance_with_swapped_roles() {
        // Swapping forward/backward roles everywhere (and the corresponding
        // feature-half column blocks of the consumers) mirrors the classifier:
        // probabilities on the reversed input are the reverse of the original.
        let model = toy_model(true, 11);
        let h = model.cfg.hidden;

        let mut mirrored = model.clone();
        for layer in mirrored.params.layers.iter_mut() {
            let bwd = layer.bwd.take().unwrap();
            let old_fwd = std::mem::replace(&mut layer.fwd, bwd);
            layer.bwd = Some(old_fwd);
        }
        let swap_cols = |a: &Array| {
            let (rows, cols) = (a.rows(), a.cols());
            let mut out = Array::zeros(vec![rows, cols]);
            for r in 0..rows {
                for c in 0..cols {
                    let src = if c < h { c + h } else { c - h };
                    out.data_mut()[r * cols + c] = a.data()[r * cols + src];
                }
            }
            out
        };
        for layer in mirrored.params.layers.iter_mut().skip(1) {
            layer.fwd.w_input = swap_cols(&layer.fwd.w_input);
            if let Some(bwd) = layer.bwd.as_mut() {
                bwd.w_input = swap_cols(&bwd.w_input);
            }
        }
        mirrored.params.head.w1 = swap_cols(&mirrored.params.head.w1);

        let seq = toy_seq(6);
        let mut rev = seq.clone();
        rev.deltas.reverse();
        rev.y.reverse();

        let original = model.classify(&seq).unwrap();
        let mirrored_out = mirrored.classify(&rev).unwrap();
        for t in 0..6 {
            for k in 0..4 {
                assert!(
                    (original[t].probs[k] - mirrored_out[5 - t].probs[k]).abs() < 1e-12,
                    "t={t} k={k}"
                );
            }
        }
    }

    #[test]
    fn overfitting_one_sample_decreases_loss() {
        // 20 small optimizer steps on one sequence, loss strictly decreasing.
        let model = toy_model(true, 13);
        let mut params = model.params.clone();
        let seq = toy_seq(5);
        let mut losses = Vec::new();
        let lr = 5e-3;
        for _ in 0..20 {
            let (loss, grads) = classifier_training_step(&params, &[&seq]).unwrap();
            losses.push(loss);
            params.visit_mut(|name, a| {
                let g = &grads[name];
                for (v, gv) in a.data_mut().iter_mut().zip(g.data().iter()) {
                    *v -= lr * gv;
                }
            });
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss did not decrease: {losses:?}");
        }
    }
}
