//! Conditional variational recurrent network for stroke sequences.
//!
//! Two latent variables factor each step: a continuous style code `z` with
//! per-step Gaussian prior/posterior, and a categorical content code whose
//! continuous embedding `phi` is drawn from a per-character Gaussian mixture
//! component. The decoder sees only `(z, phi, bow)` and never the recurrent
//! state, so everything the output needs must pass through the latents.
//!
//! Two LSTM cells carry temporal context: an input cell driven by the raw
//! strokes and a latent cell driven by `(h_inp, z, phi)`. Posteriors condition
//! on `(h_inp_t, h_latent_{t-1})`; priors on `h_latent_{t-1}` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{
    bernoulli_nll_nodes, bivariate_nll_nodes, bivariate_sample, categorical_kl_nodes,
    gaussian_kl_nodes, gaussian_sample_nodes, gmm_sample_nodes, rho_from_raw, sigma_from_raw,
    BernoulliParam, BivariateGaussianParams, BivariateNodes, Categorical, CategoricalNodes,
    DiagonalGaussian, GaussianNodes, GmmLatentSpace, GmmNodes, CATEGORICAL_CLAMP,
};
use crate::error::{Error, Result};
use crate::graph::{GradientMap, Graph, NodeId};
use crate::lstm::{lstm_step, LstmNodes, LstmParams, LstmState, LstmStateNodes};
use crate::nets::{ff_forward, FfHead, FfNodes};
use crate::prep::EncodedSequence;
use crate::tensor::{Array, Real};

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvrnnConfig {
    /// Stroke input width (du, dv, pen).
    pub input: usize,
    /// LSTM width of both cells.
    pub hidden: usize,
    /// Style latent dimension.
    pub latent: usize,
    /// Content embedding dimension.
    pub gmm_dim: usize,
    /// Alphabet size (mixture component count).
    pub alphabet_size: usize,
    /// Feed-forward hidden width.
    pub ff_width: usize,
}

impl CvrnnConfig {
    /// Desk-scale defaults, trainable in minutes.
    pub fn desk(alphabet_size: usize) -> Self {
        CvrnnConfig {
            input: 3,
            hidden: 32,
            latent: 8,
            gmm_dim: 8,
            alphabet_size,
            ff_width: 32,
        }
    }

    /// Full-scale dimensions.
    pub fn full_scale(alphabet_size: usize) -> Self {
        CvrnnConfig {
            input: 3,
            hidden: 512,
            latent: 32,
            gmm_dim: 32,
            alphabet_size,
            ff_width: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input", self.input),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("gmm_dim", self.gmm_dim),
            ("alphabet_size", self.alphabet_size),
            ("ff_width", self.ff_width),
        ] {
            if v < 1 {
                return Err(Error::contract(format!("config {name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CvrnnParams {
    pub tau_inp: LstmParams,
    pub tau_latent: LstmParams,
    pub g_qz: FfHead,
    pub g_pz: FfHead,
    pub g_qpi: FfHead,
    pub g_ppi: FfHead,
    pub g_out: FfHead,
    pub gmm: GmmLatentSpace,
}

/// Width of the decoder output vector: coordinate mean (2), raw sigma (2),
/// raw correlation (1), pen logit (1), eoc logit (1).
const DECODER_OUT: usize = 7;

impl CvrnnParams {
    pub fn init(cfg: &CvrnnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = cfg.hidden;
        let tau_inp = LstmParams::init(cfg.input, h, &mut rng);
        let tau_latent = LstmParams::init(h + cfg.latent + cfg.gmm_dim, h, &mut rng);
        let g_qz = FfHead::init(2 * h, cfg.ff_width, 2 * cfg.latent, &mut rng);
        let g_pz = FfHead::init(h, cfg.ff_width, 2 * cfg.latent, &mut rng);
        let g_qpi = FfHead::init(2 * h, cfg.ff_width, cfg.alphabet_size, &mut rng);
        let g_ppi = FfHead::init(h, cfg.ff_width, cfg.alphabet_size, &mut rng);
        let g_out = FfHead::init(cfg.latent + cfg.gmm_dim + 1, cfg.ff_width, DECODER_OUT, &mut rng);
        // Component means start uniform in [-1, 1); sigmas start at 1.
        let k = cfg.alphabet_size;
        let d = cfg.gmm_dim;
        let gmm_mu = Array::new(
            vec![k, d],
            (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let gmm = GmmLatentSpace::new(gmm_mu, Array::zeros(vec![k, d])).unwrap();
        CvrnnParams {
            tau_inp,
            tau_latent,
            g_qz,
            g_pz,
            g_qpi,
            g_ppi,
            g_out,
            gmm,
        }
    }

    /// Visit every parameter array in canonical (checkpoint) order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &'a Array)) {
        let lstm = |f: &mut dyn FnMut(&str, &'a Array), prefix: &str, p: &'a LstmParams| {
            f(&format!("{prefix}.w_input"), &p.w_input);
            f(&format!("{prefix}.w_hidden"), &p.w_hidden);
            f(&format!("{prefix}.bias"), &p.bias);
        };
        let ff = |f: &mut dyn FnMut(&str, &'a Array), prefix: &str, p: &'a FfHead| {
            f(&format!("{prefix}.w1"), &p.w1);
            f(&format!("{prefix}.b1"), &p.b1);
            f(&format!("{prefix}.w2"), &p.w2);
            f(&format!("{prefix}.b2"), &p.b2);
        };
        lstm(&mut f, "tau_inp", &self.tau_inp);
        lstm(&mut f, "tau_latent", &self.tau_latent);
        ff(&mut f, "g_qz", &self.g_qz);
        ff(&mut f, "g_pz", &self.g_pz);
        ff(&mut f, "g_qpi", &self.g_qpi);
        ff(&mut f, "g_ppi", &self.g_ppi);
        ff(&mut f, "g_out", &self.g_out);
        f("gmm.mu", &self.gmm.mu);
        f("gmm.log_sigma", &self.gmm.log_sigma);
    }

    /// Mutable counterpart of [`CvrnnParams::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array)) {
        let lstm = |f: &mut dyn FnMut(&str, &mut Array), prefix: &str, p: &mut LstmParams| {
            f(&format!("{prefix}.w_input"), &mut p.w_input);
            f(&format!("{prefix}.w_hidden"), &mut p.w_hidden);
            f(&format!("{prefix}.bias"), &mut p.bias);
        };
        let ff = |f: &mut dyn FnMut(&str, &mut Array), prefix: &str, p: &mut FfHead| {
            f(&format!("{prefix}.w1"), &mut p.w1);
            f(&format!("{prefix}.b1"), &mut p.b1);
            f(&format!("{prefix}.w2"), &mut p.w2);
            f(&format!("{prefix}.b2"), &mut p.b2);
        };
        lstm(&mut f, "tau_inp", &mut self.tau_inp);
        lstm(&mut f, "tau_latent", &mut self.tau_latent);
        ff(&mut f, "g_qz", &mut self.g_qz);
        ff(&mut f, "g_pz", &mut self.g_pz);
        ff(&mut f, "g_qpi", &mut self.g_qpi);
        ff(&mut f, "g_ppi", &mut self.g_ppi);
        ff(&mut f, "g_out", &mut self.g_out);
        f("gmm.mu", &mut self.gmm.mu);
        f("gmm.log_sigma", &mut self.gmm.log_sigma);
    }

    pub fn bind(&self, g: &mut Graph) -> CvrnnNodes {
        CvrnnNodes {
            tau_inp: self.tau_inp.bind(g, "tau_inp"),
            tau_latent: self.tau_latent.bind(g, "tau_latent"),
            g_qz: self.g_qz.bind(g, "g_qz"),
            g_pz: self.g_pz.bind(g, "g_pz"),
            g_qpi: self.g_qpi.bind(g, "g_qpi"),
            g_ppi: self.g_ppi.bind(g, "g_ppi"),
            g_out: self.g_out.bind(g, "g_out"),
            gmm: GmmNodes {
                mu: g.param("gmm.mu", self.gmm.mu.clone()),
                log_sigma: g.param("gmm.log_sigma", self.gmm.log_sigma.clone()),
            },
            latent_dim: self.g_qz.output_size() / 2,
            gmm_dim: self.gmm.dim(),
        }
    }
}

/// Parameters bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct CvrnnNodes {
    pub tau_inp: LstmNodes,
    pub tau_latent: LstmNodes,
    pub g_qz: FfNodes,
    pub g_pz: FfNodes,
    pub g_qpi: FfNodes,
    pub g_ppi: FfNodes,
    pub g_out: FfNodes,
    pub gmm: GmmNodes,
    latent_dim: usize,
    gmm_dim: usize,
}

/// Recurrent state of both cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CvrnnState {
    pub inp: LstmState,
    pub latent: LstmState,
}

impl CvrnnState {
    pub fn zeros(cfg: &CvrnnConfig) -> Self {
        CvrnnState {
            inp: LstmState::zeros(cfg.hidden),
            latent: LstmState::zeros(cfg.hidden),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CvrnnStateNodes {
    pub inp: LstmStateNodes,
    pub latent: LstmStateNodes,
}

impl CvrnnStateNodes {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        CvrnnStateNodes {
            inp: LstmStateNodes::zeros(g, hidden),
            latent: LstmStateNodes::zeros(g, hidden),
        }
    }

    pub fn from_state(g: &mut Graph, state: &CvrnnState) -> Self {
        CvrnnStateNodes {
            inp: LstmStateNodes::from_state(g, &state.inp),
            latent: LstmStateNodes::from_state(g, &state.latent),
        }
    }

    pub fn to_state(&self, g: &Graph) -> CvrnnState {
        CvrnnState {
            inp: self.inp.to_state(g),
            latent: self.latent.to_state(g),
        }
    }
}

/// Decoder output distributions for one step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub coords: BivariateGaussianParams,
    pub pen: BernoulliParam,
    pub eoc: BernoulliParam,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutputNodes {
    pub coords: BivariateNodes,
    /// Pen-up probability (sigmoid output, unclamped).
    pub pen: NodeId,
    /// End-of-character probability (sigmoid output, unclamped).
    pub eoc: NodeId,
}

impl StepOutputNodes {
    pub fn to_value(&self, g: &Graph) -> StepOutput {
        StepOutput {
            coords: self.coords.to_value(g),
            pen: BernoulliParam::new(g.value(self.pen).item()),
            eoc: BernoulliParam::new(g.value(self.eoc).item()),
        }
    }
}

// ── Node-level step functions ───────────────────────────────────────────

fn gaussian_head(g: &mut Graph, net: &FfNodes, input: NodeId, dim: usize) -> GaussianNodes {
    let out = ff_forward(g, net, input);
    let mu = g.slice(out, 0, dim);
    let raw = g.slice(out, dim, dim);
    let sigma = sigma_from_raw(g, raw);
    GaussianNodes { mu, sigma }
}

fn categorical_head(g: &mut Graph, net: &FfNodes, input: NodeId) -> CategoricalNodes {
    let logits = ff_forward(g, net, input);
    CategoricalNodes { probs: g.softmax(logits) }
}

/// Advance the input cell with `x_t` and produce the approximate posteriors
/// `q(z_t | x_t)` and `q(pi_t | x_t)` from `(h_inp_t, h_latent_{t-1})`.
pub fn posterior_step_nodes(
    g: &mut Graph,
    nodes: &CvrnnNodes,
    x_t: NodeId,
    state: &CvrnnStateNodes,
) -> (LstmStateNodes, GaussianNodes, CategoricalNodes) {
    let inp = lstm_step(g, &nodes.tau_inp, x_t, &state.inp);
    let joint = g.concat(&[inp.h, state.latent.h]);
    let z_q = gaussian_head(g, &nodes.g_qz, joint, nodes.latent_dim);
    let pi_q = categorical_head(g, &nodes.g_qpi, joint);
    (inp, z_q, pi_q)
}

/// Priors `p(z_t)` and `p(pi_t)` from `h_latent_{t-1}` alone.
pub fn prior_step_nodes(
    g: &mut Graph,
    nodes: &CvrnnNodes,
    state: &CvrnnStateNodes,
) -> (GaussianNodes, CategoricalNodes) {
    let z_p = gaussian_head(g, &nodes.g_pz, state.latent.h, nodes.latent_dim);
    let pi_p = categorical_head(g, &nodes.g_ppi, state.latent.h);
    (z_p, pi_p)
}

/// Decode `(z, phi, bow)` into output distributions. Takes no recurrent
/// state by construction.
pub fn decode_step_nodes(
    g: &mut Graph,
    nodes: &CvrnnNodes,
    z: NodeId,
    phi: NodeId,
    bow: u8,
) -> StepOutputNodes {
    let bow_node = g.constant(Array::vector(vec![bow as Real]));
    let input = g.concat(&[z, phi, bow_node]);
    let out = ff_forward(g, &nodes.g_out, input);
    let mu = g.slice(out, 0, 2);
    let sigma_raw = g.slice(out, 2, 2);
    let sigma = sigma_from_raw(g, sigma_raw);
    let rho_raw = g.slice(out, 4, 1);
    let rho = rho_from_raw(g, rho_raw);
    let pen_logit = g.slice(out, 5, 1);
    let pen = g.sigmoid(pen_logit);
    let eoc_logit = g.slice(out, 6, 1);
    let eoc = g.sigmoid(eoc_logit);
    StepOutputNodes {
        coords: BivariateNodes { mu, sigma, rho },
        pen,
        eoc,
    }
}

/// Advance the latent cell with `(h_inp_t, z_t, phi_t)`.
pub fn latent_update_nodes(
    g: &mut Graph,
    nodes: &CvrnnNodes,
    h_inp: &LstmStateNodes,
    z: NodeId,
    phi: NodeId,
    state: &CvrnnStateNodes,
) -> CvrnnStateNodes {
    let input = g.concat(&[h_inp.h, z, phi]);
    let latent = lstm_step(g, &nodes.tau_latent, input, &state.latent);
    CvrnnStateNodes { inp: *h_inp, latent }
}

// ── Value-level step API ────────────────────────────────────────────────

/// The model: config, parameters, and the data-space context (alphabet and
/// normalization statistics) needed to use it end to end.
#[derive(Debug, Clone)]
pub struct CvrnnModel {
    pub cfg: CvrnnConfig,
    pub params: CvrnnParams,
    pub alphabet: crate::data::Alphabet,
    pub stats: crate::prep::NormStats,
}

impl CvrnnModel {
    pub fn new(
        cfg: CvrnnConfig,
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
        Ok(CvrnnModel {
            params: CvrnnParams::init(&cfg, seed),
            cfg,
            alphabet,
            stats,
        })
    }

    pub fn posterior_step(
        &self,
        x_t: [Real; 3],
        state: &CvrnnState,
    ) -> (LstmState, DiagonalGaussian, Categorical) {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let x = g.constant(Array::vector(x_t.to_vec()));
        let sn = CvrnnStateNodes::from_state(&mut g, state);
        let (inp, z_q, pi_q) = posterior_step_nodes(&mut g, &nodes, x, &sn);
        (inp.to_state(&g), z_q.to_value(&g), pi_q.to_value(&g))
    }

    pub fn prior_step(&self, state: &CvrnnState) -> (DiagonalGaussian, Categorical) {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let sn = CvrnnStateNodes::from_state(&mut g, state);
        let (z_p, pi_p) = prior_step_nodes(&mut g, &nodes, &sn);
        (z_p.to_value(&g), pi_p.to_value(&g))
    }

    /// Pure function of `(z, phi, bow)`: the recurrent state is not an input.
    pub fn decode_step(&self, z: &[Real], phi: &[Real], bow: u8) -> StepOutput {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let zn = g.constant(Array::vector(z.to_vec()));
        let pn = g.constant(Array::vector(phi.to_vec()));
        let out = decode_step_nodes(&mut g, &nodes, zn, pn, bow);
        out.to_value(&g)
    }

    pub fn latent_update(
        &self,
        h_inp: &LstmState,
        z: &[Real],
        phi: &[Real],
        state: &CvrnnState,
    ) -> CvrnnState {
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let sn = CvrnnStateNodes::from_state(&mut g, state);
        let hn = LstmStateNodes::from_state(&mut g, h_inp);
        let zn = g.constant(Array::vector(z.to_vec()));
        let pn = g.constant(Array::vector(phi.to_vec()));
        let new = latent_update_nodes(&mut g, &nodes, &hn, zn, pn, &sn);
        new.to_state(&g)
    }
}

// ── Training loss ───────────────────────────────────────────────────────

/// Loss terms of one optimizer step. `total` is the exact chained sum of the
/// five fields; the KL fields already include the KL weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub recon_nll: f64,
    pub kl_z: f64,
    pub kl_pi: f64,
    pub classification: f64,
    pub eoc_nll: f64,
    pub total: f64,
}

/// Nodes of the per-sequence loss, exposed for introspection and tests.
pub struct LossNodes {
    pub recon_nll: NodeId,
    pub kl_z: NodeId,
    pub kl_pi: NodeId,
    pub classification: NodeId,
    pub eoc_nll: NodeId,
    pub total: NodeId,
    /// Weighted per-step totals, for causality checks.
    pub per_step: Vec<NodeId>,
}

/// Per-step reparameterization noise for one sequence.
pub struct SequenceNoise {
    pub eps_z: Vec<Vec<Real>>,
    pub eps_phi: Vec<Vec<Real>>,
}

impl SequenceNoise {
    pub fn draw(cfg: &CvrnnConfig, len: usize, rng: &mut impl Rng) -> Self {
        let mut draw_vec = |d: usize| -> Vec<Real> {
            (0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect()
        };
        let mut eps_z = Vec::with_capacity(len);
        let mut eps_phi = Vec::with_capacity(len);
        for _ in 0..len {
            eps_z.push(draw_vec(cfg.latent));
            eps_phi.push(draw_vec(cfg.gmm_dim));
        }
        SequenceNoise { eps_z, eps_phi }
    }

    pub fn zeros(cfg: &CvrnnConfig, len: usize) -> Self {
        SequenceNoise {
            eps_z: vec![vec![0.0; cfg.latent]; len],
            eps_phi: vec![vec![0.0; cfg.gmm_dim]; len],
        }
    }
}

/// Build the teacher-forced loss graph for one sequence.
///
/// Per step: posterior from the current stroke, priors from the previous
/// latent state, content embedding from the ground-truth label's mixture
/// component, reconstruction of the same step's stroke, then the latent cell
/// update. Losses are summed over time.
pub fn sequence_loss(
    g: &mut Graph,
    nodes: &CvrnnNodes,
    seq: &EncodedSequence,
    noise: &SequenceNoise,
    kl_weight: Real,
) -> Result<LossNodes> {
    if seq.is_empty() {
        return Err(Error::contract("sequence_loss on an empty sequence"));
    }
    let k = g.value(nodes.gmm.mu).rows();
    let mut state = CvrnnStateNodes::zeros(g, nodes.tau_inp.hidden);

    let mut recon_sum: Option<NodeId> = None;
    let mut klz_sum: Option<NodeId> = None;
    let mut klpi_sum: Option<NodeId> = None;
    let mut clf_sum: Option<NodeId> = None;
    let mut eoc_sum: Option<NodeId> = None;
    let mut per_step = Vec::with_capacity(seq.len());
    let mut add_to = |g: &mut Graph, slot: &mut Option<NodeId>, term: NodeId| {
        *slot = Some(match slot {
            Some(acc) => g.add(*acc, term),
            None => term,
        });
    };

    for t in 0..seq.len() {
        let y_t = seq.y[t];
        if y_t >= k {
            return Err(Error::data(format!(
                "label y[{t}] = {y_t} out of range for {k} components"
            )));
        }
        let d = seq.deltas[t];
        let x_t = g.constant(Array::vector(vec![d[0] as Real, d[1] as Real, d[2] as Real]));

        let (inp, z_q, pi_q) = posterior_step_nodes(g, nodes, x_t, &state);
        let (z_p, pi_p) = prior_step_nodes(g, nodes, &state);

        let phi = gmm_sample_nodes(g, &nodes.gmm, y_t, &noise.eps_phi[t]);
        let z = gaussian_sample_nodes(g, &z_q, &noise.eps_z[t]);

        let out = decode_step_nodes(g, nodes, z, phi, seq.bow[t]);
        let coord_nll = bivariate_nll_nodes(g, &out.coords, [d[0] as Real, d[1] as Real]);
        let pen_nll = bernoulli_nll_nodes(g, out.pen, if d[2] >= 0.5 { 1 } else { 0 });
        let recon_t = g.add(coord_nll, pen_nll);
        let eoc_t = bernoulli_nll_nodes(g, out.eoc, seq.eoc[t]);

        // Cross-entropy of the content posterior against the true label.
        let p_y = g.slice(pi_q.probs, y_t, 1);
        let p_y_c = g.clamp(p_y, CATEGORICAL_CLAMP, 1.0);
        let lp = g.log(p_y_c);
        let neg = g.neg(lp);
        let clf_t = g.reduce_sum(neg);

        let klz_t = gaussian_kl_nodes(g, &z_q, &z_p);
        let klpi_t = categorical_kl_nodes(g, &pi_q, &pi_p);

        add_to(g, &mut recon_sum, recon_t);
        add_to(g, &mut klz_sum, klz_t);
        add_to(g, &mut klpi_sum, klpi_t);
        add_to(g, &mut clf_sum, clf_t);
        add_to(g, &mut eoc_sum, eoc_t);

        let klz_w = g.scale(klz_t, kl_weight);
        let klpi_w = g.scale(klpi_t, kl_weight);
        let s1 = g.add(recon_t, klz_w);
        let s2 = g.add(s1, klpi_w);
        let s3 = g.add(s2, clf_t);
        per_step.push(g.add(s3, eoc_t));

        state = latent_update_nodes(g, nodes, &inp, z, phi, &state);
    }

    let recon_nll = recon_sum.unwrap();
    let kl_z = g.scale(klz_sum.unwrap(), kl_weight);
    let kl_pi = g.scale(klpi_sum.unwrap(), kl_weight);
    let classification = clf_sum.unwrap();
    let eoc_nll = eoc_sum.unwrap();
    let s1 = g.add(recon_nll, kl_z);
    let s2 = g.add(s1, kl_pi);
    let s3 = g.add(s2, classification);
    let total = g.add(s3, eoc_nll);

    Ok(LossNodes {
        recon_nll,
        kl_z,
        kl_pi,
        classification,
        eoc_nll,
        total,
        per_step,
    })
}

/// Deterministic noise source: one independent stream per (step, batch item).
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext {
    pub seed: u64,
    pub step: u64,
}

impl NoiseContext {
    pub fn rng_for_item(&self, item: usize) -> ChaCha8Rng {
        let mut x = self.seed ^ 0x6b69_6e6b_2d69_6e6b;
        for v in [self.step, item as u64] {
            x ^= splitmix64(x.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15));
        }
        ChaCha8Rng::seed_from_u64(x)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn breakdown_from_nodes(g: &Graph, nodes: &LossNodes) -> LossBreakdown {
    LossBreakdown {
        recon_nll: g.value(nodes.recon_nll).item() as f64,
        kl_z: g.value(nodes.kl_z).item() as f64,
        kl_pi: g.value(nodes.kl_pi).item() as f64,
        classification: g.value(nodes.classification).item() as f64,
        eoc_nll: g.value(nodes.eoc_nll).item() as f64,
        total: g.value(nodes.total).item() as f64,
    }
}

fn check_loss_finite(g: &Graph, nodes: &LossNodes) -> Result<()> {
    g.check_finite(&[
        ("recon_nll", nodes.recon_nll),
        ("kl_z", nodes.kl_z),
        ("kl_pi", nodes.kl_pi),
        ("classification", nodes.classification),
        ("eoc_nll", nodes.eoc_nll),
        ("total", nodes.total),
    ])
}

/// One training step over a batch: per-item loss graphs evaluated in
/// parallel, gradients summed in batch order and divided by the batch size,
/// loss terms batch-averaged. Deterministic in `(noise.seed, noise.step)`.
pub fn training_step(
    params: &CvrnnParams,
    cfg: &CvrnnConfig,
    batch: &[&EncodedSequence],
    kl_weight: Real,
    noise: &NoiseContext,
) -> Result<(LossBreakdown, GradientMap)> {
    if batch.is_empty() {
        return Err(Error::contract("training_step on an empty batch"));
    }
    use rayon::prelude::*;
    let results: Vec<Result<(LossBreakdown, GradientMap)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let mut rng = noise.rng_for_item(i);
            let item_noise = SequenceNoise::draw(cfg, seq.len(), &mut rng);
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let loss = sequence_loss(&mut g, &bound, seq, &item_noise, kl_weight)?;
            check_loss_finite(&g, &loss)?;
            let grads = g.backward(loss.total)?;
            Ok((breakdown_from_nodes(&g, &loss), grads))
        })
        .collect();

    let inv_b = 1.0 / batch.len() as f64;
    let mut sums = [0.0f64; 5];
    let mut grad_acc: Option<GradientMap> = None;
    for r in results {
        let (b, g) = r?;
        sums[0] += b.recon_nll;
        sums[1] += b.kl_z;
        sums[2] += b.kl_pi;
        sums[3] += b.classification;
        sums[4] += b.eoc_nll;
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
    let fields = [
        sums[0] * inv_b,
        sums[1] * inv_b,
        sums[2] * inv_b,
        sums[3] * inv_b,
        sums[4] * inv_b,
    ];
    let breakdown = LossBreakdown {
        recon_nll: fields[0],
        kl_z: fields[1],
        kl_pi: fields[2],
        classification: fields[3],
        eoc_nll: fields[4],
        total: fields[0] + fields[1] + fields[2] + fields[3] + fields[4],
    };
    Ok((breakdown, grads))
}

// ── Sampling, style inference, reconstruction ───────────────────────────

/// Controls for conditional synthesis.
#[derive(Debug, Clone)]
pub struct SamplingConfig {
    /// Advance to the next character once the predicted end-of-character
    /// probability exceeds this.
    pub eoc_threshold: f64,
    /// Per-character stroke budget before a forced advance.
    pub max_strokes_per_char: usize,
    /// Use distribution means instead of draws.
    pub greedy: bool,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            eoc_threshold: 0.5,
            max_strokes_per_char: 50,
            greedy: false,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eoc_threshold > 0.0 && self.eoc_threshold < 1.0) {
            return Err(Error::contract("eoc_threshold must be in (0, 1)"));
        }
        if self.max_strokes_per_char < 1 {
            return Err(Error::contract("max_strokes_per_char must be >= 1"));
        }
        Ok(())
    }
}

/// Output of [`CvrnnModel::sample_text`]: a model-space sequence plus the
/// end-of-character probability trace.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub encoded: EncodedSequence,
    pub eoc_probs: Vec<f64>,
    /// True when some character exhausted its stroke budget.
    pub partial: bool,
}

impl CvrnnModel {
    /// Synthesize strokes for `text`, one character at a time. The style
    /// prior drives `z`; the content embedding comes from each character's
    /// mixture component. The generated stroke is fed back through the input
    /// cell before the latent cell updates.
    pub fn sample_text(
        &self,
        text: &str,
        initial_latent: Option<&LstmState>,
        cfg: &SamplingConfig,
    ) -> Result<GeneratedSample> {
        cfg.validate()?;
        let mut chars = Vec::new();
        for word in text.split(' ').filter(|w| !w.is_empty()) {
            for (i, ch) in word.chars().enumerate() {
                let k = self.alphabet.index_of(ch).ok_or_else(|| {
                    Error::data(format!("character {ch:?} not in the model alphabet"))
                })?;
                chars.push((k, i == 0));
            }
        }

        let mut encoded = EncodedSequence {
            deltas: Vec::new(),
            y: Vec::new(),
            eoc: Vec::new(),
            bow: Vec::new(),
            author: "sampled".to_string(),
            text: text.to_string(),
        };
        let mut eoc_probs = Vec::new();
        let mut partial = false;
        if chars.is_empty() {
            return Ok(GeneratedSample { encoded, eoc_probs, partial });
        }

        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut inp_state = LstmStateNodes::zeros(&mut g, self.cfg.hidden);
        let mut latent_state = match initial_latent {
            Some(s) => LstmStateNodes::from_state(&mut g, s),
            None => LstmStateNodes::zeros(&mut g, self.cfg.hidden),
        };

        let mut n = 0usize;
        let mut strokes_this_char = 0usize;
        while n < chars.len() {
            let (char_idx, word_start) = chars[n];
            let bow_t: u8 = (word_start && strokes_this_char == 0) as u8;

            let state = CvrnnStateNodes { inp: inp_state, latent: latent_state };
            let (z_p, _pi_p) = prior_step_nodes(&mut g, &nodes, &state);
            let z = if cfg.greedy {
                z_p.mu
            } else {
                let eps: Vec<Real> =
                    (0..self.cfg.latent).map(|_| rng.sample::<Real, _>(StandardNormal)).collect();
                gaussian_sample_nodes(&mut g, &z_p, &eps)
            };
            let phi = if cfg.greedy {
                g.row(nodes.gmm.mu, char_idx)
            } else {
                let eps: Vec<Real> =
                    (0..self.cfg.gmm_dim).map(|_| rng.sample::<Real, _>(StandardNormal)).collect();
                gmm_sample_nodes(&mut g, &nodes.gmm, char_idx, &eps)
            };

            let out = decode_step_nodes(&mut g, &nodes, z, phi, bow_t);
            let step = out.to_value(&g);
            let coord_eps: [Real; 2] = [
                rng.sample::<Real, _>(StandardNormal),
                rng.sample::<Real, _>(StandardNormal),
            ];
            let stroke = bivariate_sample(&step.coords, coord_eps, cfg.greedy);
            let pen_bit: u8 = if cfg.greedy {
                (step.pen.p() >= 0.5) as u8
            } else {
                (rng.gen_range(0.0..1.0) < step.pen.p()) as u8
            };
            let eoc_prob = step.eoc.p() as f64;

            let advance = eoc_prob > cfg.eoc_threshold;
            let cap_hit = !advance && strokes_this_char + 1 >= cfg.max_strokes_per_char;
            if cap_hit {
                partial = true;
            }

            encoded.deltas.push([stroke[0] as f64, stroke[1] as f64, pen_bit as f64]);
            encoded.y.push(char_idx);
            encoded.eoc.push((advance || cap_hit) as u8);
            encoded.bow.push(bow_t);
            eoc_probs.push(eoc_prob);

            // Feed the synthesized stroke back through the input cell, then
            // advance the latent cell with the latents just used.
            let x_hat = g.constant(Array::vector(vec![stroke[0], stroke[1], pen_bit as Real]));
            inp_state = lstm_step(&mut g, &nodes.tau_inp, x_hat, &inp_state);
            let new_state =
                latent_update_nodes(&mut g, &nodes, &inp_state, z, phi, &state);
            latent_state = new_state.latent;

            if advance || cap_hit {
                n += 1;
                strokes_this_char = 0;
            } else {
                strokes_this_char += 1;
            }
        }

        Ok(GeneratedSample { encoded, eoc_probs, partial })
    }

    /// Run a full teacher-forced pass and return the final recurrent state.
    /// The latent half carries the reference sample's style.
    pub fn infer_style(&self, seq: &EncodedSequence, seed: u64) -> Result<CvrnnState> {
        if seq.is_empty() {
            return Ok(CvrnnState::zeros(&self.cfg));
        }
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = SequenceNoise::draw(&self.cfg, seq.len(), &mut rng);
        let mut state = CvrnnStateNodes::zeros(&mut g, self.cfg.hidden);
        for t in 0..seq.len() {
            let y_t = seq.y[t];
            if y_t >= self.cfg.alphabet_size {
                return Err(Error::data(format!("label y[{t}] = {y_t} out of range")));
            }
            let d = seq.deltas[t];
            let x_t = g.constant(Array::vector(vec![d[0] as Real, d[1] as Real, d[2] as Real]));
            let (inp, z_q, _pi_q) = posterior_step_nodes(&mut g, &nodes, x_t, &state);
            let z = gaussian_sample_nodes(&mut g, &z_q, &noise.eps_z[t]);
            let phi = gmm_sample_nodes(&mut g, &nodes.gmm, y_t, &noise.eps_phi[t]);
            state = latent_update_nodes(&mut g, &nodes, &inp, z, phi, &state);
        }
        Ok(state.to_state(&g))
    }

    /// Teacher-forced resynthesis: encode each step through the posterior and
    /// decode it back. With `greedy` the posterior mean and component mean
    /// are used and the output is deterministic.
    pub fn reconstruct(
        &self,
        seq: &EncodedSequence,
        labels: &[usize],
        greedy: bool,
        seed: u64,
    ) -> Result<EncodedSequence> {
        if labels.len() != seq.len() {
            return Err(Error::data(format!(
                "label/length mismatch: {} labels for {} steps",
                labels.len(),
                seq.len()
            )));
        }
        let mut g = Graph::new();
        let nodes = self.params.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = SequenceNoise::draw(&self.cfg, seq.len(), &mut rng);
        let mut state = CvrnnStateNodes::zeros(&mut g, self.cfg.hidden);
        let mut out_seq = EncodedSequence {
            deltas: Vec::with_capacity(seq.len()),
            y: labels.to_vec(),
            eoc: seq.eoc.clone(),
            bow: seq.bow.clone(),
            author: seq.author.clone(),
            text: seq.text.clone(),
        };
        for t in 0..seq.len() {
            let y_t = labels[t];
            if y_t >= self.cfg.alphabet_size {
                return Err(Error::data(format!("label y[{t}] = {y_t} out of range")));
            }
            let d = seq.deltas[t];
            let x_t = g.constant(Array::vector(vec![d[0] as Real, d[1] as Real, d[2] as Real]));
            let (inp, z_q, _pi_q) = posterior_step_nodes(&mut g, &nodes, x_t, &state);
            let z = if greedy {
                z_q.mu
            } else {
                gaussian_sample_nodes(&mut g, &z_q, &noise.eps_z[t])
            };
            let phi = if greedy {
                g.row(nodes.gmm.mu, y_t)
            } else {
                gmm_sample_nodes(&mut g, &nodes.gmm, y_t, &noise.eps_phi[t])
            };
            let out = decode_step_nodes(&mut g, &nodes, z, phi, seq.bow[t]);
            let step = out.to_value(&g);
            let coord_eps: [Real; 2] = [
                rng.sample::<Real, _>(StandardNormal),
                rng.sample::<Real, _>(StandardNormal),
            ];
            let stroke = bivariate_sample(&step.coords, coord_eps, greedy);
            let pen_bit: u8 = if greedy {
                (step.pen.p() >= 0.5) as u8
            } else {
                (rng.gen_range(0.0..1.0) < step.pen.p()) as u8
            };
            out_seq.deltas.push([stroke[0] as f64, stroke[1] as f64, pen_bit as f64]);
            state = latent_update_nodes(&mut g, &nodes, &inp, z, phi, &state);
        }
        Ok(out_seq)
    }
}
