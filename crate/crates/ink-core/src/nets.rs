//! One-hidden-layer feed-forward heads shared by the synthesis model and
//! the classifier. Hidden activation is rectified linear; output is linear.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::tensor::{Array, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct FfHead {
    /// `[F, in]`
    pub w1: Array,
    /// `[F]`
    pub b1: Array,
    /// `[out, F]`
    pub w2: Array,
    /// `[out]`
    pub b2: Array,
}

impl FfHead {
    pub fn init(input: usize, width: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as Real).sqrt();
            Array::new(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
            .unwrap()
        };
        // The hidden bias is drawn like the weights: with an all-zero first
        // input and zero initial states, a zero bias would park every hidden
        // unit exactly on the relu kink.
        let w1 = uniform(width, input);
        let b1 = uniform(width, 1);
        FfHead {
            w1,
            b1: Array::vector(b1.into_data()),
            w2: uniform(output, width),
            b2: Array::zeros(vec![output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w2.rows()
    }

    pub fn bind(&self, g: &mut Graph, prefix: &str) -> FfNodes {
        FfNodes {
            w1: g.param(&format!("{prefix}.w1"), self.w1.clone()),
            b1: g.param(&format!("{prefix}.b1"), self.b1.clone()),
            w2: g.param(&format!("{prefix}.w2"), self.w2.clone()),
            b2: g.param(&format!("{prefix}.b2"), self.b2.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FfNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub fn ff_forward(g: &mut Graph, net: &FfNodes, x: NodeId) -> NodeId {
    let pre = g.matmul(net.w1, x);
    let pre_b = g.add(pre, net.b1);
    let hidden = g.relu(pre_b);
    let out = g.matmul(net.w2, hidden);
    g.add(out, net.b2)
}
