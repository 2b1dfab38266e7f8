//! Parameters, optimizer, and the small neural building blocks shared by
//! every stage: linear layers, normalized feed-forward blocks, and a
//! pre-norm transformer layer.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{NodeId, Tape};

/// Handle to one named parameter matrix in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Array2<f64>,
    grad: Array2<f64>,
    /// Adam first/second moment buffers.
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Flat registry of every learnable matrix in a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        let dim = value.dim();
        self.params.push(Param {
            name: name.to_string(),
            grad: Array2::zeros(dim),
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &Array2<f64>) {
        self.params[id.0].grad += g;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                p.grad *= scale;
            }
        }
        norm
    }

    pub fn any_non_finite(&self) -> bool {
        self.params
            .iter()
            .any(|p| p.value.iter().any(|v| !v.is_finite()))
    }

    /// Snapshot of all values, in registration order, for archiving.
    pub fn export_values(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    vec![p.value.nrows(), p.value.ncols()],
                    p.value.iter().copied().collect(),
                )
            })
            .collect()
    }

    /// Overwrite values from an archive snapshot. Names and shapes must match
    /// the registration order exactly.
    pub fn import_values(
        &mut self,
        values: &[(String, Vec<usize>, Vec<f64>)],
    ) -> crate::Result<()> {
        if values.len() != self.params.len() {
            return Err(crate::Error::Validation(format!(
                "archive holds {} parameters, model defines {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, (name, shape, data)) in self.params.iter_mut().zip(values) {
            if &p.name != name {
                return Err(crate::Error::Validation(format!(
                    "parameter order mismatch: archive has '{name}', model expects '{}'",
                    p.name
                )));
            }
            if shape != &[p.value.nrows(), p.value.ncols()] {
                return Err(crate::Error::Validation(format!(
                    "parameter '{name}' shape mismatch: archive {shape:?}, model {:?}",
                    p.value.dim()
                )));
            }
            p.value = Array2::from_shape_vec(p.value.dim(), data.clone())
                .map_err(|e| crate::Error::Validation(format!("parameter '{name}': {e}")))?;
        }
        Ok(())
    }

    /// Deep copy of the raw values only (used for best-epoch snapshots).
    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<f64>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value = s.clone();
        }
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Kaiming-style init for layers followed by ReLU.
pub fn he_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let std = (2.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| sample_normal(rng) * std)
}

/// Xavier/Glorot init for linear and attention layers.
pub fn xavier_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| sample_normal(rng) * std)
}

/// Standard normal via Box-Muller, driven by the model RNG.
fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with the standard bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in &mut store.params {
            azip_update(p, self.beta1, self.beta2, self.lr, self.eps, bc1, bc2);
        }
    }
}

fn azip_update(p: &mut Param, b1: f64, b2: f64, lr: f64, eps: f64, bc1: f64, bc2: f64) {
    for ((m, v), (g, w)) in p
        .m
        .iter_mut()
        .zip(p.v.iter_mut())
        .zip(p.grad.iter().zip(p.value.iter_mut()))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Forward context (train vs. eval)
// ---------------------------------------------------------------------------

/// Carries the train/eval switch and the dropout RNG through a forward pass.
pub enum FwdCtx<'a> {
    /// Training mode: dropout active with the given rate.
    Train { rng: &'a mut ChaCha8Rng, dropout: f64 },
    /// Evaluation mode: dropout is the identity.
    Eval,
}

impl FwdCtx<'_> {
    /// Apply inverted dropout to `x` when training; identity in eval mode.
    pub fn apply_dropout(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            FwdCtx::Eval => x,
            FwdCtx::Train { rng, dropout } => {
                let rate = *dropout;
                if rate <= 0.0 {
                    return x;
                }
                let keep = 1.0 - rate;
                let dim = tape.value(x).dim();
                let mask = Array2::from_shape_fn(dim, |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                tape.dropout(x, mask)
            }
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, FwdCtx::Train { .. })
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// `y = x W + b` over row-major activations `[n, d_in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Linear {
        Linear {
            w: store.add(&format!("{name}.w"), xavier_init(rng, d_in, d_out)),
            b: store.add(&format!("{name}.b"), Array2::zeros((1, d_out))),
        }
    }

    /// Same layer with weights scaled down, for heads whose raw outputs feed
    /// thresholds or similarities and must start near zero.
    pub fn new_small(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        scale: f64,
    ) -> Linear {
        Linear {
            w: store.add(&format!("{name}.w"), xavier_init(rng, d_in, d_out) * scale),
            b: store.add(&format!("{name}.b"), Array2::zeros((1, d_out))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Feed-forward block: LayerNorm -> Linear -> ReLU -> Dropout.
#[derive(Debug, Clone)]
pub struct FfnBlock {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub linear: Linear,
}

impl FfnBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> FfnBlock {
        FfnBlock {
            gamma: store.add(&format!("{name}.ln.gamma"), Array2::ones((1, d_in))),
            beta: store.add(&format!("{name}.ln.beta"), Array2::zeros((1, d_in))),
            linear: Linear {
                w: store.add(&format!("{name}.w"), he_init(rng, d_in, d_out)),
                b: store.add(&format!("{name}.b"), Array2::zeros((1, d_out))),
            },
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut FwdCtx,
        x: NodeId,
    ) -> NodeId {
        let normed = layer_norm(tape, store, x, self.gamma, self.beta);
        let lin = self.linear.forward(tape, store, normed);
        let act = tape.relu(lin);
        ctx.apply_dropout(tape, act)
    }
}

/// LayerNorm with learned scale and shift.
pub fn layer_norm(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    gamma: ParamId,
    beta: ParamId,
) -> NodeId {
    let g = tape.param(store, gamma);
    let b = tape.param(store, beta);
    let normed = tape.layer_norm_rows(x);
    let scaled = tape.mul_row(normed, g);
    tape.add_row(scaled, b)
}

/// One pre-norm transformer layer: multi-head self-attention plus a
/// position-wise feed-forward network, both with residual connections.
///
/// `positional` is a property of the *inputs*, not of this layer: attention
/// itself is permutation-equivariant, which the pair stage relies on.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub d_model: usize,
    pub n_heads: usize,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
    ) -> TransformerLayer {
        assert!(
            d_model % n_heads == 0,
            "d_model {d_model} not divisible by n_heads {n_heads}"
        );
        TransformerLayer {
            d_model,
            n_heads,
            ln1_gamma: store.add(&format!("{name}.ln1.gamma"), Array2::ones((1, d_model))),
            ln1_beta: store.add(&format!("{name}.ln1.beta"), Array2::zeros((1, d_model))),
            wq: Linear::new(store, rng, &format!("{name}.wq"), d_model, d_model),
            wk: Linear::new(store, rng, &format!("{name}.wk"), d_model, d_model),
            wv: Linear::new(store, rng, &format!("{name}.wv"), d_model, d_model),
            wo: Linear::new(store, rng, &format!("{name}.wo"), d_model, d_model),
            ln2_gamma: store.add(&format!("{name}.ln2.gamma"), Array2::ones((1, d_model))),
            ln2_beta: store.add(&format!("{name}.ln2.beta"), Array2::zeros((1, d_model))),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d_model, d_ff),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), d_ff, d_model),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &mut FwdCtx,
        x: NodeId,
    ) -> NodeId {
        // attention sub-layer (pre-norm)
        let normed = layer_norm(tape, store, x, self.ln1_gamma, self.ln1_beta);
        let q = self.wq.forward(tape, store, normed);
        let k = self.wk.forward(tape, store, normed);
        let v = self.wv.forward(tape, store, normed);

        let d_head = self.d_model / self.n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let c0 = h * d_head;
            let c1 = c0 + d_head;
            let qh = tape.slice_cols(q, c0, c1);
            let kh = tape.slice_cols(k, c0, c1);
            let vh = tape.slice_cols(v, c0, c1);
            let kt = tape.transpose(kh);
            let logits = tape.matmul(qh, kt);
            let scaled = tape.scale(logits, scale);
            let attn = tape.softmax_rows(scaled);
            heads.push(tape.matmul(attn, vh));
        }
        let concat = tape.concat_cols(&heads);
        let projected = self.wo.forward(tape, store, concat);
        let dropped = ctx.apply_dropout(tape, projected);
        let x = tape.add(x, dropped);

        // feed-forward sub-layer (pre-norm)
        let normed = layer_norm(tape, store, x, self.ln2_gamma, self.ln2_beta);
        let h = self.ff1.forward(tape, store, normed);
        let h = tape.relu(h);
        let h = self.ff2.forward(tape, store, h);
        let h = ctx.apply_dropout(tape, h);
        tape.add(x, h)
    }
}
