//! Fully-connected network with ReLU hidden layers and a linear head, with a
//! hand-written backward pass.

use rand::Rng;

/// Dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform weights in `±scale * sqrt(6 / inputs)`, zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let limit = scale * (6.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate().take(self.outputs) {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *yo = acc;
        }
    }
}

/// Hidden widths and output width of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpScratch {
    /// `acts[0]` is the input; `acts[i + 1]` the post-activation output of
    /// layer `i` (the last one is the linear head output).
    acts: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(pair[0].outputs, pair[1].inputs, "layer widths must chain");
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn scratch(&self) -> MlpScratch {
        let mut acts = vec![vec![0.0; self.input_dim()]];
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.outputs]));
        let widest = acts.iter().map(Vec::len).max().unwrap_or(0);
        MlpScratch {
            acts,
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
        }
    }

    /// Runs the network; the head output is returned from the scratch.
    pub fn forward<'s>(&self, x: &[f64], s: &'s mut MlpScratch) -> &'s [f64] {
        s.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = s.acts.split_at_mut(i + 1);
            let out = &mut tail[0];
            layer.forward(&head[i], out);
            if i < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        &s.acts[last + 1]
    }

    /// Backpropagates `d_out` through the activations left in `s` by the last
    /// [`Mlp::forward`]. Parameter gradients are accumulated into `grads`
    /// (same layout as `self.layers`); the input gradient is written to
    /// `d_in`.
    pub fn backward(
        &self,
        s: &mut MlpScratch,
        d_out: &[f64],
        grads: &mut [Linear],
        d_in: &mut [f64],
    ) {
        let last = self.layers.len() - 1;
        let MlpScratch {
            acts,
            grad_a,
            grad_b,
        } = s;
        grad_a[..d_out.len()].copy_from_slice(d_out);
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let g = &mut grads[i];
            let input = &acts[i];
            let dy = &grad_a[..layer.outputs];
            let dx = &mut grad_b[..layer.inputs];
            dx.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..layer.outputs {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.inputs;
                let wrow = &layer.weight[row..row + layer.inputs];
                let grow = &mut g.weight[row..row + layer.inputs];
                for k in 0..layer.inputs {
                    grow[k] += d * input[k];
                    dx[k] += d * wrow[k];
                }
            }
            if i > 0 {
                // ReLU derivative of the previous layer's output.
                for (v, a) in dx.iter_mut().zip(&acts[i]) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(grad_a, grad_b);
        }
        d_in.copy_from_slice(&grad_a[..self.input_dim()]);
    }
}
