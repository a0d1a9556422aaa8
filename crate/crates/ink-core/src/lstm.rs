//! LSTM cells, multi-step unrolling, and the bidirectional variant.
//!
//! Gate pre-activations are stacked in a single `[4H, I]` input matrix and
//! `[4H, H]` recurrent matrix, rows ordered (i, f, g, o). The forget-gate
//! bias starts at 1.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::tensor::{Array, Real};

/// Stacked gate parameters of one LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H, I]`
    pub w_input: Array,
    /// `[4H, H]`
    pub w_hidden: Array,
    /// `[4H]`
    pub bias: Array,
}

impl LstmParams {
    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases except the forget
    /// gate at +1.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as Real).sqrt();
        let mut draw = |n: usize| -> Vec<Real> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w_input = Array::new(vec![4 * hidden, input], draw(4 * hidden * input)).unwrap();
        let w_hidden = Array::new(vec![4 * hidden, hidden], draw(4 * hidden * hidden)).unwrap();
        let mut bias = Array::zeros(vec![4 * hidden]);
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = 1.0;
        }
        LstmParams { w_input, w_hidden, bias }
    }
}

/// Hidden and cell state vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Real>,
    pub c: Vec<Real>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Cell parameters bound into a graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w_input: NodeId,
    pub w_hidden: NodeId,
    pub bias: NodeId,
    pub hidden: usize,
}

impl LstmParams {
    /// Register this cell's parameters as named leaves.
    pub fn bind(&self, g: &mut Graph, prefix: &str) -> LstmNodes {
        LstmNodes {
            w_input: g.param(&format!("{prefix}.w_input"), self.w_input.clone()),
            w_hidden: g.param(&format!("{prefix}.w_hidden"), self.w_hidden.clone()),
            bias: g.param(&format!("{prefix}.bias"), self.bias.clone()),
            hidden: self.hidden_size(),
        }
    }
}

/// State node pair.
#[derive(Debug, Clone, Copy)]
pub struct LstmStateNodes {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmStateNodes {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmStateNodes {
            h: g.constant(Array::zeros(vec![hidden])),
            c: g.constant(Array::zeros(vec![hidden])),
        }
    }

    pub fn from_state(g: &mut Graph, state: &LstmState) -> Self {
        LstmStateNodes {
            h: g.constant(Array::vector(state.h.clone())),
            c: g.constant(Array::vector(state.c.clone())),
        }
    }

    pub fn to_state(&self, g: &Graph) -> LstmState {
        LstmState {
            h: g.value(self.h).data().to_vec(),
            c: g.value(self.c).data().to_vec(),
        }
    }
}

/// One LSTM step:
/// `i,f,o = sigmoid(...)`, `g = tanh(...)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(g: &mut Graph, params: &LstmNodes, x: NodeId, state: &LstmStateNodes) -> LstmStateNodes {
    let h = params.hidden;
    let from_x = g.matmul(params.w_input, x);
    let from_h = g.matmul(params.w_hidden, state.h);
    let pre0 = g.add(from_x, from_h);
    let pre = g.add(pre0, params.bias);

    let i_pre = g.slice(pre, 0, h);
    let f_pre = g.slice(pre, h, h);
    let g_pre = g.slice(pre, 2 * h, h);
    let o_pre = g.slice(pre, 3 * h, h);

    let i_gate = g.sigmoid(i_pre);
    let f_gate = g.sigmoid(f_pre);
    let g_gate = g.tanh(g_pre);
    let o_gate = g.sigmoid(o_pre);

    let carried = g.mul(f_gate, state.c);
    let written = g.mul(i_gate, g_gate);
    let c_new = g.add(carried, written);
    let c_act = g.tanh(c_new);
    let h_new = g.mul(o_gate, c_act);
    LstmStateNodes { h: h_new, c: c_new }
}

/// Fold [`lstm_step`] over a sequence of input nodes; returns every state in
/// order.
pub fn unroll(
    g: &mut Graph,
    params: &LstmNodes,
    inputs: &[NodeId],
    initial: &LstmStateNodes,
) -> Vec<LstmStateNodes> {
    assert!(!inputs.is_empty(), "unroll needs at least one input");
    let mut states = Vec::with_capacity(inputs.len());
    let mut state = *initial;
    for &x in inputs {
        state = lstm_step(g, params, x, &state);
        states.push(state);
    }
    states
}

/// Bidirectional pass: per-step `concat(h_forward_t, h_backward_t)`, where
/// the backward cell runs over the reversed sequence. Requires the whole
/// sequence up front.
pub fn birnn_forward(
    g: &mut Graph,
    forward: &LstmNodes,
    backward: &LstmNodes,
    inputs: &[NodeId],
) -> Vec<NodeId> {
    let zero_f = LstmStateNodes::zeros(g, forward.hidden);
    let fwd = unroll(g, forward, inputs, &zero_f);
    let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
    let zero_b = LstmStateNodes::zeros(g, backward.hidden);
    let bwd = unroll(g, backward, &reversed, &zero_b);
    (0..inputs.len())
        .map(|t| g.concat(&[fwd[t].h, bwd[inputs.len() - 1 - t].h]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckOptions};
    use crate::tensor::{sigmoid, Real};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-derivation of the gate equations, kept independent
    /// of the graph path it checks.
    fn oracle_step(p: &LstmParams, x: &[Real], state: &LstmState) -> LstmState {
        let hs = p.hidden_size();
        let is = p.input_size();
        let mut pre = vec![0.0; 4 * hs];
        for r in 0..4 * hs {
            let mut acc = p.bias.data()[r];
            for c in 0..is {
                acc += p.w_input.data()[r * is + c] * x[c];
            }
            for c in 0..hs {
                acc += p.w_hidden.data()[r * hs + c] * state.h[c];
            }
            pre[r] = acc;
        }
        let mut out = LstmState::zeros(hs);
        for j in 0..hs {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hs + j]);
            let gg = pre[2 * hs + j].tanh();
            let o = sigmoid(pre[3 * hs + j]);
            out.c[j] = f * state.c[j] + i * gg;
            out.h[j] = o * out.c[j].tanh();
        }
        out
    }

    fn random_params(input: usize, hidden: usize, seed: u64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmParams::init(input, hidden, &mut rng)
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = LstmParams {
            w_input: Array::zeros(vec![8, 3]),
            w_hidden: Array::zeros(vec![8, 2]),
            bias: Array::zeros(vec![8]),
        };
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let x = g.constant(Array::zeros(vec![3]));
        let state = LstmStateNodes::zeros(&mut g, 2);
        let out = lstm_step(&mut g, &nodes, x, &state);
        assert!(g.value(out.h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_carry_memory() {
        // f-gate pinned open, i-gate pinned shut: c' = c.
        let h = 2;
        let mut bias = Array::zeros(vec![4 * h]);
        for j in 0..h {
            bias.data_mut()[j] = -40.0; // i -> 0
            bias.data_mut()[h + j] = 40.0; // f -> 1
        }
        let p = LstmParams {
            w_input: Array::zeros(vec![4 * h, 1]),
            w_hidden: Array::zeros(vec![4 * h, h]),
            bias,
        };
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let x = g.constant(Array::vector(vec![0.7]));
        let state = LstmStateNodes {
            h: g.constant(Array::vector(vec![0.2, -0.4])),
            c: g.constant(Array::vector(vec![1.3, -0.9])),
        };
        let out = lstm_step(&mut g, &nodes, x, &state);
        let c = g.value(out.c).data();
        assert!((c[0] - 1.3).abs() < 1e-12 && (c[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn matches_gate_equation_oracle() {
        let p = random_params(3, 5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Real> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let state = LstmState {
            h: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let expected = oracle_step(&p, &x, &state);

        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let xn = g.constant(Array::vector(x));
        let sn = LstmStateNodes::from_state(&mut g, &state);
        let out = lstm_step(&mut g, &nodes, xn, &sn);
        let got = out.to_state(&g);
        for j in 0..5 {
            assert!((got.h[j] - expected.h[j]).abs() < 1e-12);
            assert!((got.c[j] - expected.c[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let p = random_params(3, 4, 21);
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let x = g.constant(Array::vector(vec![0.4, -0.8, 1.1]));
        let state = LstmStateNodes::zeros(&mut g, 4);
        let out = lstm_step(&mut g, &nodes, x, &state);
        let sq = g.mul(out.h, out.h);
        let part = g.reduce_sum(sq);
        let cs = g.reduce_sum(out.c);
        let loss = g.add(part, cs);
        let report = grad_check(&mut g, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }

    #[test]
    fn unroll_is_iterated_step_and_differentiable() {
        let p = random_params(2, 3, 5);
        let xs: Vec<Vec<Real>> = vec![
            vec![0.3, -0.5],
            vec![1.0, 0.2],
            vec![-0.7, 0.9],
            vec![0.1, 0.0],
            vec![-0.2, -0.3],
        ];

        // Length-1 unroll is exactly one step.
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let x0 = g.constant(Array::vector(xs[0].clone()));
        let zero = LstmStateNodes::zeros(&mut g, 3);
        let single = lstm_step(&mut g, &nodes, x0, &zero);
        let rolled = unroll(&mut g, &nodes, &[x0], &zero);
        assert_eq!(g.value(single.h), g.value(rolled[0].h));

        // 5-step unroll equals manual iteration and passes grad check.
        let mut g = Graph::new();
        let nodes = p.bind(&mut g, "cell");
        let inputs: Vec<_> = xs.iter().map(|x| g.constant(Array::vector(x.clone()))).collect();
        let zero = LstmStateNodes::zeros(&mut g, 3);
        let states = unroll(&mut g, &nodes, &inputs, &zero);

        let mut manual = zero;
        for &x in &inputs {
            manual = lstm_step(&mut g, &nodes, x, &manual);
        }
        assert_eq!(g.value(states[4].h), g.value(manual.h));

        let last = states.last().unwrap();
        let sq = g.mul(last.h, last.h);
        let loss = g.reduce_sum(sq);
        let report = grad_check(&mut g, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }

    #[test]
    fn unroll_states_have_prefix_property() {
        let p = random_params(2, 3, 9);
        let xs = [vec![0.3, -0.5], vec![1.0, 0.2], vec![-0.7, 0.9]];
        let run = |upto: usize, tail: Real| {
            let mut g = Graph::new();
            let nodes = p.bind(&mut g, "cell");
            let inputs: Vec<_> = xs
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let mut v = x.clone();
                    if t >= upto {
                        v[0] += tail;
                    }
                    g.constant(Array::vector(v))
                })
                .collect();
            let zero = LstmStateNodes::zeros(&mut g, 3);
            let states = unroll(&mut g, &nodes, &inputs, &zero);
            g.value(states[upto - 1].h).data().to_vec()
        };
        // State at t depends only on inputs <= t.
        assert_eq!(run(2, 0.0), run(2, 100.0));
    }

    #[test]
    fn birnn_output_length_and_degenerate_case() {
        let pf = random_params(2, 3, 1);
        let pb = random_params(2, 3, 2);
        let mut g = Graph::new();
        let nf = pf.bind(&mut g, "fwd");
        let nb = pb.bind(&mut g, "bwd");
        let inputs: Vec<_> = (0..4)
            .map(|i| g.constant(Array::vector(vec![i as Real * 0.1, -0.2])))
            .collect();
        let feats = birnn_forward(&mut g, &nf, &nb, &inputs);
        assert_eq!(feats.len(), 4);
        assert_eq!(g.value(feats[0]).numel(), 6);

        // Length 1: concat of two single steps from zero states.
        let one = &inputs[0..1];
        let feats1 = birnn_forward(&mut g, &nf, &nb, one);
        let zero = LstmStateNodes::zeros(&mut g, 3);
        let f = lstm_step(&mut g, &nf, inputs[0], &zero);
        let b = lstm_step(&mut g, &nb, inputs[0], &zero);
        let expected = g.concat(&[f.h, b.h]);
        assert_eq!(g.value(feats1[0]), g.value(expected));
    }

    #[test]
    fn palindrome_with_tied_params_is_mirror_symmetric() {
        let p = random_params(2, 3, 33);
        let mut g = Graph::new();
        let nf = p.bind(&mut g, "fwd");
        let nb = p.bind(&mut g, "bwd");
        let vals = [vec![0.3, -0.5], vec![1.0, 0.2], vec![0.3, -0.5]];
        let inputs: Vec<_> = vals.iter().map(|x| g.constant(Array::vector(x.clone()))).collect();
        let feats = birnn_forward(&mut g, &nf, &nb, &inputs);
        // Feature sequence equals its own reverse with halves swapped.
        for t in 0..3 {
            let a = g.value(feats[t]).data().to_vec();
            let b = g.value(feats[2 - t]).data().to_vec();
            assert_eq!(&a[..3], &b[3..]);
            assert_eq!(&a[3..], &b[..3]);
        }
    }
}
