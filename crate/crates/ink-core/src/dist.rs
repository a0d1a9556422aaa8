//! Statistical building blocks: diagonal Gaussians, categoricals, the
//! per-character Gaussian-mixture embedding, and the stroke output
//! likelihoods (correlated bivariate Gaussian + Bernoulli).
//!
//! Each quantity exists twice: as a plain value type with closed-form ops
//! (used at sampling boundaries and by oracle-style tests) and as a graph
//! construction (used wherever gradients must flow). Graph constructions are
//! suffixed `_nodes`.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Array, Real, PI};

/// Scale floor added to every softplus-parameterized sigma.
pub const SIGMA_FLOOR: Real = 1e-4;
/// Bernoulli probabilities are clamped into `[BERNOULLI_CLAMP, 1 - BERNOULLI_CLAMP]`.
pub const BERNOULLI_CLAMP: Real = 1e-6;
/// Categorical probabilities are clamped at this floor inside logs.
pub const CATEGORICAL_CLAMP: Real = 1e-10;
/// Correlation is squashed to `(1 - RHO_MARGIN) * tanh(raw)`.
pub const RHO_MARGIN: Real = 1e-5;

// ── Plain value types ───────────────────────────────────────────────────

/// Gaussian with a diagonal covariance, parameterized by standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mu: Vec<Real>,
    pub sigma: Vec<Real>,
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<Real>, sigma: Vec<Real>) -> Result<Self> {
        if mu.is_empty() || mu.len() != sigma.len() {
            return Err(Error::contract(format!(
                "gaussian dims: mu has {} entries, sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract("gaussian sigma must be strictly positive"));
        }
        Ok(DiagonalGaussian { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }
}

/// Finite discrete distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub probs: Vec<Real>,
}

impl Categorical {
    pub fn new(probs: Vec<Real>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("categorical needs at least one class"));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::contract("categorical probabilities must be >= 0"));
        }
        let sum: Real = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "categorical probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Categorical { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Categorical {
            probs: vec![1.0 / k as Real; k],
        }
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

/// One isotropic Gaussian per alphabet symbol; the continuous content code
/// is drawn from the symbol's component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmLatentSpace {
    /// `[K, D]` component means.
    pub mu: Array,
    /// `[K, D]` log standard deviations.
    pub log_sigma: Array,
}

impl GmmLatentSpace {
    pub fn new(mu: Array, log_sigma: Array) -> Result<Self> {
        if !mu.is_matrix() || mu.shape() != log_sigma.shape() {
            return Err(Error::shape(
                "GmmLatentSpace::new",
                format!("mu {:?} vs log_sigma {:?}", mu.shape(), log_sigma.shape()),
            ));
        }
        if log_sigma.data().iter().any(|&v| !v.exp().is_finite()) {
            return Err(Error::numeric("GmmLatentSpace::new", "exp(log_sigma) overflows"));
        }
        Ok(GmmLatentSpace { mu, log_sigma })
    }

    pub fn components(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn component_mu(&self, k: usize) -> &[Real] {
        let d = self.dim();
        &self.mu.data()[k * d..(k + 1) * d]
    }

    pub fn component_sigma(&self, k: usize) -> Vec<Real> {
        let d = self.dim();
        self.log_sigma.data()[k * d..(k + 1) * d]
            .iter()
            .map(|&v| v.exp())
            .collect()
    }
}

/// Correlated 2D Gaussian over stroke offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateGaussianParams {
    pub mu: [Real; 2],
    pub sigma: [Real; 2],
    pub rho: Real,
}

impl BivariateGaussianParams {
    pub fn new(mu: [Real; 2], sigma: [Real; 2], rho: Real) -> Result<Self> {
        if sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::contract("bivariate sigma must be strictly positive"));
        }
        if rho.abs() > 1.0 - RHO_MARGIN {
            return Err(Error::contract(format!(
                "|rho| = {} exceeds {}",
                rho.abs(),
                1.0 - RHO_MARGIN
            )));
        }
        Ok(BivariateGaussianParams { mu, sigma, rho })
    }
}

/// Bernoulli success probability, clamped away from 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliParam {
    p: Real,
}

impl BernoulliParam {
    /// Clamps into the valid open interval rather than rejecting.
    pub fn new(p: Real) -> Self {
        BernoulliParam {
            p: p.clamp(BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP),
        }
    }

    pub fn p(&self) -> Real {
        self.p
    }
}

// ── Closed-form operations on plain values ──────────────────────────────

/// `KL(q ‖ p)` between diagonal Gaussians.
pub fn gaussian_kl(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<Real> {
    if q.dim() != p.dim() {
        return Err(Error::shape(
            "gaussian_kl",
            format!("q dim {} vs p dim {}", q.dim(), p.dim()),
        ));
    }
    let mut acc = 0.0;
    for i in 0..q.dim() {
        let (mq, sq) = (q.mu[i], q.sigma[i]);
        let (mp, sp) = (p.mu[i], p.sigma[i]);
        acc += (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
    }
    Ok(acc)
}

/// `KL(q ‖ p)` between categoricals, with `0 log 0 = 0` and `p` clamped.
pub fn categorical_kl(q: &Categorical, p: &Categorical) -> Result<Real> {
    if q.probs.len() != p.probs.len() {
        return Err(Error::shape(
            "categorical_kl",
            format!("q has {} classes, p has {}", q.probs.len(), p.probs.len()),
        ));
    }
    let mut acc = 0.0;
    for (&qi, &pi) in q.probs.iter().zip(p.probs.iter()) {
        if qi > 0.0 {
            acc += qi * (qi.ln() - pi.max(CATEGORICAL_CLAMP).ln());
        }
    }
    Ok(acc)
}

/// Reparameterized draw: `mu + sigma ⊙ eps`.
pub fn gaussian_sample(g: &DiagonalGaussian, eps: &[Real]) -> Vec<Real> {
    debug_assert_eq!(eps.len(), g.dim());
    g.mu
        .iter()
        .zip(g.sigma.iter())
        .zip(eps.iter())
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}

/// Reparameterized draw from mixture component `k`: `mu_k + sigma_k ⊙ eps`.
pub fn gmm_sample(gmm: &GmmLatentSpace, k: usize, eps: &[Real]) -> Result<Vec<Real>> {
    if k >= gmm.components() {
        return Err(Error::contract(format!(
            "component {k} out of range for {} components",
            gmm.components()
        )));
    }
    let mu = gmm.component_mu(k);
    let sigma = gmm.component_sigma(k);
    Ok(mu
        .iter()
        .zip(sigma.iter())
        .zip(eps.iter())
        .map(|((&m, s), &e)| m + s * e)
        .collect())
}

/// Negative log density of the correlated bivariate Gaussian at `target`.
pub fn bivariate_nll(params: &BivariateGaussianParams, target: [Real; 2]) -> Real {
    let z1 = (target[0] - params.mu[0]) / params.sigma[0];
    let z2 = (target[1] - params.mu[1]) / params.sigma[1];
    let rho = params.rho;
    let om = 1.0 - rho * rho;
    let q = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2;
    (2.0 * PI).ln() + params.sigma[0].ln() + params.sigma[1].ln() + 0.5 * om.ln() + q / (2.0 * om)
}

/// Bernoulli negative log likelihood of a binary target.
pub fn bernoulli_nll(b: &BernoulliParam, target: u8) -> Real {
    debug_assert!(target <= 1);
    if target == 1 {
        -b.p().ln()
    } else {
        -(1.0 - b.p()).ln()
    }
}

/// Draw from the bivariate Gaussian; `greedy` short-circuits to the mean.
/// The stochastic branch applies the Cholesky factor of the covariance to
/// the standard-normal pair `eps`.
pub fn bivariate_sample(params: &BivariateGaussianParams, eps: [Real; 2], greedy: bool) -> [Real; 2] {
    if greedy {
        return params.mu;
    }
    let [s1, s2] = params.sigma;
    let rho = params.rho;
    let x = params.mu[0] + s1 * eps[0];
    let y = params.mu[1] + s2 * (rho * eps[0] + (1.0 - rho * rho).sqrt() * eps[1]);
    [x, y]
}

// ── Graph constructions ─────────────────────────────────────────────────

/// Gaussian as graph nodes (`sigma` already strictly positive).
#[derive(Debug, Clone, Copy)]
pub struct GaussianNodes {
    pub mu: NodeId,
    pub sigma: NodeId,
}

impl GaussianNodes {
    pub fn to_value(&self, g: &Graph) -> DiagonalGaussian {
        DiagonalGaussian {
            mu: g.value(self.mu).data().to_vec(),
            sigma: g.value(self.sigma).data().to_vec(),
        }
    }
}

/// Categorical as a graph node holding the probability vector.
#[derive(Debug, Clone, Copy)]
pub struct CategoricalNodes {
    pub probs: NodeId,
}

impl CategoricalNodes {
    pub fn to_value(&self, g: &Graph) -> Categorical {
        Categorical {
            probs: g.value(self.probs).data().to_vec(),
        }
    }
}

/// `sigma = softplus(raw) + SIGMA_FLOOR`, the scale head used everywhere a
/// network emits a standard deviation.
pub fn sigma_from_raw(g: &mut Graph, raw: NodeId) -> NodeId {
    let sp = g.softplus(raw);
    g.add_scalar(sp, SIGMA_FLOOR)
}

/// `rho = (1 - RHO_MARGIN) * tanh(raw)`.
pub fn rho_from_raw(g: &mut Graph, raw: NodeId) -> NodeId {
    let t = g.tanh(raw);
    g.scale(t, 1.0 - RHO_MARGIN)
}

/// Differentiable `KL(q ‖ p)` between diagonal Gaussian nodes.
pub fn gaussian_kl_nodes(g: &mut Graph, q: &GaussianNodes, p: &GaussianNodes) -> NodeId {
    let dim = g.value(q.mu).numel();
    debug_assert_eq!(dim, g.value(p.mu).numel(), "gaussian_kl dims differ");
    let log_q = g.log(q.sigma);
    let log_p = g.log(p.sigma);
    let log_ratio = g.sub(log_p, log_q);
    let var_q = g.mul(q.sigma, q.sigma);
    let dmu = g.sub(q.mu, p.mu);
    let dmu2 = g.mul(dmu, dmu);
    let num = g.add(var_q, dmu2);
    let var_p = g.mul(p.sigma, p.sigma);
    let den = g.scale(var_p, 2.0);
    let frac = g.div(num, den);
    let per_dim = g.add(log_ratio, frac);
    let sum = g.reduce_sum(per_dim);
    g.add_scalar(sum, -0.5 * dim as Real)
}

/// Differentiable `KL(q ‖ p)` between categorical probability nodes.
pub fn categorical_kl_nodes(g: &mut Graph, q: &CategoricalNodes, p: &CategoricalNodes) -> NodeId {
    let qc = g.clamp(q.probs, CATEGORICAL_CLAMP, 1.0);
    let log_q = g.log(qc);
    let pc = g.clamp(p.probs, CATEGORICAL_CLAMP, 1.0);
    let log_p = g.log(pc);
    let log_ratio = g.sub(log_q, log_p);
    let weighted = g.mul(q.probs, log_ratio);
    g.reduce_sum(weighted)
}

/// Reparameterized Gaussian draw with gradients into `mu` and `sigma`.
pub fn gaussian_sample_nodes(g: &mut Graph, gauss: &GaussianNodes, eps: &[Real]) -> NodeId {
    let e = g.constant(Array::vector(eps.to_vec()));
    let scaled = g.mul(gauss.sigma, e);
    g.add(gauss.mu, scaled)
}

/// GMM nodes: `[K, D]` mean and log-sigma parameter leaves.
#[derive(Debug, Clone, Copy)]
pub struct GmmNodes {
    pub mu: NodeId,
    pub log_sigma: NodeId,
}

/// Reparameterized draw from component `k` with gradients into the selected
/// rows only.
pub fn gmm_sample_nodes(g: &mut Graph, gmm: &GmmNodes, k: usize, eps: &[Real]) -> NodeId {
    let mu_k = g.row(gmm.mu, k);
    let log_sigma_k = g.row(gmm.log_sigma, k);
    let sigma_k = g.exp(log_sigma_k);
    let e = g.constant(Array::vector(eps.to_vec()));
    let scaled = g.mul(sigma_k, e);
    g.add(mu_k, scaled)
}

/// Bivariate head as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct BivariateNodes {
    /// 2-vector mean.
    pub mu: NodeId,
    /// 2-vector sigma (already positive).
    pub sigma: NodeId,
    /// 1-vector correlation (already squashed).
    pub rho: NodeId,
}

impl BivariateNodes {
    pub fn to_value(&self, g: &Graph) -> BivariateGaussianParams {
        let mu = g.value(self.mu).data();
        let sigma = g.value(self.sigma).data();
        BivariateGaussianParams {
            mu: [mu[0], mu[1]],
            sigma: [sigma[0], sigma[1]],
            rho: g.value(self.rho).item(),
        }
    }
}

/// Differentiable negative log density of the bivariate Gaussian at a fixed
/// target.
pub fn bivariate_nll_nodes(g: &mut Graph, params: &BivariateNodes, target: [Real; 2]) -> NodeId {
    let t = g.constant(Array::vector(target.to_vec()));
    let diff = g.sub(t, params.mu);
    let z = g.div(diff, params.sigma);
    let z1 = g.slice(z, 0, 1);
    let z2 = g.slice(z, 1, 1);
    let z1sq = g.mul(z1, z1);
    let z2sq = g.mul(z2, z2);
    let cross = g.mul(z1, z2);
    let rho_cross = g.mul(params.rho, cross);
    let rho_cross2 = g.scale(rho_cross, -2.0);
    let qsum = g.add(z1sq, z2sq);
    let q = g.add(qsum, rho_cross2);
    let rho_sq = g.mul(params.rho, params.rho);
    let neg_rho_sq = g.scale(rho_sq, -1.0);
    let om = g.add_scalar(neg_rho_sq, 1.0);
    let log_om = g.log(om);
    let half_log_om = g.scale(log_om, 0.5);
    let log_sigma = g.log(params.sigma);
    let log_sigma_sum = g.reduce_sum(log_sigma);
    let den = g.scale(om, 2.0);
    let mahal = g.div(q, den);
    let a = g.add(log_sigma_sum, half_log_om);
    let b = g.add(a, mahal);
    g.add_scalar(b, (2.0 * PI).ln())
}

/// Differentiable Bernoulli NLL of a binary target; `p` is clamped inside.
pub fn bernoulli_nll_nodes(g: &mut Graph, p: NodeId, target: u8) -> NodeId {
    let pc = g.clamp(p, BERNOULLI_CLAMP, 1.0 - BERNOULLI_CLAMP);
    let chosen = if target == 1 {
        pc
    } else {
        let neg = g.scale(pc, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let lp = g.log(chosen);
    let nll = g.neg(lp);
    g.reduce_sum(nll)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: Real = std::f64::consts::LN_2 as Real;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let q = DiagonalGaussian::standard(3);
        assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_kl_frozen_values() {
        // Verified against the Monte-Carlo oracle in the integration tests.
        let q = DiagonalGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let p = DiagonalGaussian::standard(1);
        assert!((gaussian_kl(&q, &p).unwrap() - 0.5).abs() < 1e-12);

        let q = DiagonalGaussian::new(vec![0.0], vec![2.0]).unwrap();
        let expected = 2.0 - 0.5 - LN_2;
        assert!((gaussian_kl(&q, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn categorical_kl_frozen_values() {
        let u = Categorical::uniform(4);
        assert_eq!(categorical_kl(&u, &u).unwrap(), 0.0);

        let q = Categorical::new(vec![1.0, 0.0]).unwrap();
        let p = Categorical::new(vec![0.5, 0.5]).unwrap();
        assert!((categorical_kl(&q, &p).unwrap() - LN_2).abs() < 1e-12);

        let q = Categorical::new(vec![0.5, 0.5]).unwrap();
        let p = Categorical::new(vec![0.9, 0.1]).unwrap();
        let expected = 0.5 * (0.5_f64 / 0.9).ln() as Real + 0.5 * (0.5_f64 / 0.1).ln() as Real;
        assert!((categorical_kl(&q, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let q = DiagonalGaussian::standard(2);
        let p = DiagonalGaussian::standard(3);
        assert!(gaussian_kl(&q, &p).is_err());
        let cq = Categorical::uniform(2);
        let cp = Categorical::uniform(3);
        assert!(categorical_kl(&cq, &cp).is_err());
    }

    #[test]
    fn gaussian_sample_zero_noise_is_mean() {
        let g = DiagonalGaussian::new(vec![1.5, -2.0], vec![0.3, 4.0]).unwrap();
        assert_eq!(gaussian_sample(&g, &[0.0, 0.0]), vec![1.5, -2.0]);
        let std = DiagonalGaussian::standard(2);
        assert_eq!(gaussian_sample(&std, &[0.7, -0.2]), vec![0.7, -0.2]);
    }

    #[test]
    fn gmm_sample_zero_noise_and_unit_sigma() {
        let mu = Array::matrix(2, 3, vec![0.1, 0.2, 0.3, -1.0, -2.0, -3.0]).unwrap();
        let gmm = GmmLatentSpace::new(mu, Array::zeros(vec![2, 3])).unwrap();
        assert_eq!(gmm_sample(&gmm, 1, &[0.0; 3]).unwrap(), vec![-1.0, -2.0, -3.0]);
        // sigma = exp(0) = 1, so phi = mu_k + eps
        let phi = gmm_sample(&gmm, 0, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(phi, vec![0.6, 0.7, 0.8]);
        assert!(gmm_sample(&gmm, 2, &[0.0; 3]).is_err());
    }

    #[test]
    fn gmm_shared_eps_component_difference() {
        let mu = Array::matrix(2, 2, vec![0.3, -0.4, 1.1, 0.9]).unwrap();
        let ls = Array::matrix(2, 2, vec![0.2, -0.1, -0.3, 0.4]).unwrap();
        let gmm = GmmLatentSpace::new(mu, ls).unwrap();
        let eps = [0.7, -1.2];
        let a = gmm_sample(&gmm, 0, &eps).unwrap();
        let b = gmm_sample(&gmm, 1, &eps).unwrap();
        for i in 0..2 {
            let expected = (gmm.component_mu(0)[i] - gmm.component_mu(1)[i])
                + (gmm.component_sigma(0)[i] - gmm.component_sigma(1)[i]) * eps[i];
            assert!((a[i] - b[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bivariate_nll_frozen_values() {
        let std = BivariateGaussianParams::new([0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        assert!((bivariate_nll(&std, [0.0, 0.0]) - (2.0 * PI).ln()).abs() < 1e-12);

        // target = mu, rho = 0 -> log(2 pi s1 s2)
        let p = BivariateGaussianParams::new([0.4, -0.2], [0.5, 2.0], 0.0).unwrap();
        let expected = (2.0 * PI * 0.5 * 2.0).ln();
        assert!((bivariate_nll(&p, [0.4, -0.2]) - expected).abs() < 1e-12);
    }

    #[test]
    fn bivariate_nll_factorizes_when_uncorrelated() {
        let p = BivariateGaussianParams::new([0.3, -0.7], [0.8, 1.7], 0.0).unwrap();
        let target = [1.1, 0.2];
        let uni = |mu: Real, s: Real, x: Real| {
            0.5 * (2.0 * PI).ln() + s.ln() + (x - mu) * (x - mu) / (2.0 * s * s)
        };
        let expected = uni(0.3, 0.8, target[0]) + uni(-0.7, 1.7, target[1]);
        assert!((bivariate_nll(&p, target) - expected).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_nll_frozen_values() {
        let near_one = BernoulliParam::new(1.0);
        assert!(bernoulli_nll(&near_one, 1) < 2e-6);
        let fair = BernoulliParam::new(0.5);
        assert!((bernoulli_nll(&fair, 0) - LN_2).abs() < 1e-12);
        let p9 = BernoulliParam::new(0.9);
        assert!((bernoulli_nll(&p9, 0) + (0.1_f64).ln() as Real).abs() < 1e-9);
    }

    #[test]
    fn bivariate_sample_modes() {
        let p = BivariateGaussianParams::new([1.0, 2.0], [0.5, 0.25], 0.6).unwrap();
        assert_eq!(bivariate_sample(&p, [3.0, -4.0], true), [1.0, 2.0]);
        let p0 = BivariateGaussianParams::new([1.0, 2.0], [0.5, 0.25], 0.0).unwrap();
        let s = bivariate_sample(&p0, [1.0, -1.0], false);
        assert!((s[0] - 1.5).abs() < 1e-12 && (s[1] - 1.75).abs() < 1e-12);
    }

    #[test]
    fn node_forms_match_plain_forms() {
        let q = DiagonalGaussian::new(vec![0.4, -0.6, 1.2], vec![0.7, 1.3, 0.5]).unwrap();
        let p = DiagonalGaussian::new(vec![-0.1, 0.2, 0.9], vec![1.1, 0.6, 2.0]).unwrap();
        let mut g = Graph::new();
        let qn = GaussianNodes {
            mu: g.constant(Array::vector(q.mu.clone())),
            sigma: g.constant(Array::vector(q.sigma.clone())),
        };
        let pn = GaussianNodes {
            mu: g.constant(Array::vector(p.mu.clone())),
            sigma: g.constant(Array::vector(p.sigma.clone())),
        };
        let kl = gaussian_kl_nodes(&mut g, &qn, &pn);
        assert!((g.value(kl).item() - gaussian_kl(&q, &p).unwrap()).abs() < 1e-12);

        let cq = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        let cp = Categorical::new(vec![0.6, 0.1, 0.3]).unwrap();
        let cqn = CategoricalNodes { probs: g.constant(Array::vector(cq.probs.clone())) };
        let cpn = CategoricalNodes { probs: g.constant(Array::vector(cp.probs.clone())) };
        let ckl = categorical_kl_nodes(&mut g, &cqn, &cpn);
        assert!((g.value(ckl).item() - categorical_kl(&cq, &cp).unwrap()).abs() < 1e-12);

        let bp = BivariateGaussianParams::new([0.2, -0.4], [0.9, 1.4], -0.35).unwrap();
        let bn = BivariateNodes {
            mu: g.constant(Array::vector(bp.mu.to_vec())),
            sigma: g.constant(Array::vector(bp.sigma.to_vec())),
            rho: g.constant(Array::scalar(bp.rho)),
        };
        let nll = bivariate_nll_nodes(&mut g, &bn, [0.5, 0.1]);
        assert!((g.value(nll).item() - bivariate_nll(&bp, [0.5, 0.1])).abs() < 1e-12);

        let pn = g.constant(Array::scalar(0.73));
        let bnll = bernoulli_nll_nodes(&mut g, pn, 0);
        assert!(
            (g.value(bnll).item() - bernoulli_nll(&BernoulliParam::new(0.73), 0)).abs() < 1e-12
        );
    }

    #[test]
    fn nll_and_kl_gradients_pass_grad_check() {
        use crate::gradcheck::{grad_check, GradCheckOptions};
        let mut g = Graph::new();
        let q_mu = g.param("q_mu", Array::vector(vec![0.4, -0.6]));
        let q_raw = g.param("q_raw", Array::vector(vec![0.3, -0.2]));
        let q_sigma = sigma_from_raw(&mut g, q_raw);
        let p_mu = g.param("p_mu", Array::vector(vec![-0.1, 0.2]));
        let p_raw = g.param("p_raw", Array::vector(vec![0.1, 0.5]));
        let p_sigma = sigma_from_raw(&mut g, p_raw);
        let kl = gaussian_kl_nodes(
            &mut g,
            &GaussianNodes { mu: q_mu, sigma: q_sigma },
            &GaussianNodes { mu: p_mu, sigma: p_sigma },
        );

        let q_logits = g.param("q_logits", Array::vector(vec![0.5, -0.3, 0.1]));
        let p_logits = g.param("p_logits", Array::vector(vec![-0.4, 0.6, 0.2]));
        let qs = g.softmax(q_logits);
        let ps = g.softmax(p_logits);
        let ckl = categorical_kl_nodes(
            &mut g,
            &CategoricalNodes { probs: qs },
            &CategoricalNodes { probs: ps },
        );

        let b_mu = g.param("b_mu", Array::vector(vec![0.25, -0.15]));
        let b_raw = g.param("b_raw", Array::vector(vec![-0.3, 0.4]));
        let b_sigma = sigma_from_raw(&mut g, b_raw);
        let r_raw = g.param("r_raw", Array::scalar(0.35));
        let rho = rho_from_raw(&mut g, r_raw);
        let nll = bivariate_nll_nodes(
            &mut g,
            &BivariateNodes { mu: b_mu, sigma: b_sigma, rho },
            [0.6, -0.9],
        );

        let pen_raw = g.param("pen_raw", Array::scalar(0.2));
        let pen = g.sigmoid(pen_raw);
        let bn = bernoulli_nll_nodes(&mut g, pen, 1);

        let a = g.add(kl, ckl);
        let b = g.add(a, nll);
        let loss = g.add(b, bn);
        let report = grad_check(&mut g, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }

    #[test]
    fn reparameterized_draws_differentiate() {
        use crate::gradcheck::{grad_check, GradCheckOptions};
        let mut g = Graph::new();
        let mu = g.param("mu", Array::vector(vec![0.2, -0.8]));
        let raw = g.param("raw", Array::vector(vec![0.4, 0.1]));
        let sigma = sigma_from_raw(&mut g, raw);
        let z = gaussian_sample_nodes(&mut g, &GaussianNodes { mu, sigma }, &[0.9, -1.4]);
        let gm = g.param("gmm_mu", Array::matrix(3, 2, vec![0.1; 6]).unwrap());
        let gs = g.param("gmm_ls", Array::zeros(vec![3, 2]));
        let phi = gmm_sample_nodes(&mut g, &GmmNodes { mu: gm, log_sigma: gs }, 1, &[0.3, 0.7]);
        let both = g.add(z, phi);
        let sq = g.mul(both, both);
        let loss = g.reduce_sum(sq);
        let report = grad_check(&mut g, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
        // Unselected GMM rows get exactly zero gradient.
        let grads = g.backward(loss).unwrap();
        assert_eq!(&grads["gmm_mu"].data()[0..2], &[0.0, 0.0]);
        assert_eq!(&grads["gmm_mu"].data()[4..6], &[0.0, 0.0]);
        assert!(grads["gmm_mu"].data()[2..4].iter().all(|&v| v != 0.0));
    }
}
