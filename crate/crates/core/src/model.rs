//! Forward passes: the GLU MLP, the plain ReLU MLP, and the full GLU
//! transformer with activation capture.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng;
use crate::scalar::{sigmoid, silu, Scalar};
use crate::tensor_store::{DType, Family, ModelBundle, Tensor};

pub const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Identity,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => silu(x),
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// `f(x) = D (σ(G x) ⊙ (U x))`, broadcast over the rows of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GluMlpParams<T> {
    /// `[h, d]`
    pub gate: Matrix<T>,
    /// `[h, d]`
    pub up: Matrix<T>,
    /// `[d, h]`
    pub down: Matrix<T>,
    pub activation: Activation,
}

impl<T: Scalar> GluMlpParams<T> {
    pub fn new(gate: Matrix<T>, up: Matrix<T>, down: Matrix<T>, activation: Activation) -> Result<Self> {
        if gate.shape() != up.shape() || down.shape() != (gate.cols(), gate.rows()) {
            return Err(Error::Dimension(format!(
                "GLU shapes gate {:?}, up {:?}, down {:?} are inconsistent",
                gate.shape(),
                up.shape(),
                down.shape()
            )));
        }
        Ok(Self {
            gate,
            up,
            down,
            activation,
        })
    }

    pub fn hidden(&self) -> usize {
        self.gate.rows()
    }

    pub fn dim(&self) -> usize {
        self.gate.cols()
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "GLU MLP expects {} input columns, got {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Pre-activation gate and up projections, each `[n, h]`.
    pub fn projections(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check_input(x)?;
        Ok((x.matmul_t(&self.gate)?, x.matmul_t(&self.up)?))
    }

    /// Hidden activations `σ(x Gᵀ) ⊙ (x Uᵀ)`, `[n, h]`.
    pub fn hidden_activations(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let (g, u) = self.projections(x)?;
        let act = self.activation;
        g.map(|v| act.apply(v)).hadamard(&u)
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.hidden_activations(x)?.matmul_t(&self.down)
    }

    pub fn cast<U: Scalar>(&self) -> GluMlpParams<U> {
        GluMlpParams {
            gate: self.gate.cast(),
            up: self.up.cast(),
            down: self.down.cast(),
            activation: self.activation,
        }
    }

    /// Applies a hidden-unit permutation: `G → πG`, `U → πU`, `D → Dπᵀ`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Self {
        Self {
            gate: self.gate.gather_rows(perm),
            up: self.up.gather_rows(perm),
            down: self.down.gather_cols(perm),
            activation: self.activation,
        }
    }
}

pub fn glu_mlp_forward<T: Scalar>(params: &GluMlpParams<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    params.forward(x)
}

/// `f(x) = D relu(U x)`: a two-layer MLP without gating.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainMlpParams<T> {
    /// `[h, d]`
    pub up: Matrix<T>,
    /// `[d, h]`
    pub down: Matrix<T>,
}

impl<T: Scalar> PlainMlpParams<T> {
    pub fn new(up: Matrix<T>, down: Matrix<T>) -> Result<Self> {
        if down.shape() != (up.cols(), up.rows()) {
            return Err(Error::Dimension(format!(
                "plain MLP shapes up {:?}, down {:?} are inconsistent",
                up.shape(),
                down.shape()
            )));
        }
        Ok(Self { up, down })
    }

    pub fn hidden(&self) -> usize {
        self.up.rows()
    }

    pub fn dim(&self) -> usize {
        self.up.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "MLP expects {} input columns, got {}",
                self.dim(),
                x.cols()
            )));
        }
        x.matmul_t(&self.up)?.map(|v| v.max(T::zero())).matmul_t(&self.down)
    }
}

/// A per-block map `R^d → R^d`, the unit the generalized test distills.
#[derive(Clone, Debug, PartialEq)]
pub enum MlpBlock<T> {
    Glu(GluMlpParams<T>),
    Plain(PlainMlpParams<T>),
}

impl<T: Scalar> MlpBlock<T> {
    pub fn dim(&self) -> usize {
        match self {
            MlpBlock::Glu(p) => p.dim(),
            MlpBlock::Plain(p) => p.dim(),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            MlpBlock::Glu(p) => p.hidden(),
            MlpBlock::Plain(p) => p.hidden(),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            MlpBlock::Glu(p) => p.forward(x),
            MlpBlock::Plain(p) => p.forward(x),
        }
    }
}

/// MLP blocks of any family, read as f64.
pub fn mlp_blocks(bundle: &ModelBundle) -> Result<Vec<MlpBlock<f64>>> {
    let m = bundle.manifest();
    (0..m.n_blocks)
        .map(|i| {
            let up = bundle.matrix(&format!("up_proj.{i}"))?;
            let down = bundle.matrix(&format!("down_proj.{i}"))?;
            Ok(match m.family {
                Family::PlainMlp => MlpBlock::Plain(PlainMlpParams::new(up, down)?),
                _ => MlpBlock::Glu(GluMlpParams::new(
                    bundle.matrix(&format!("gate_proj.{i}"))?,
                    up,
                    down,
                    Activation::Silu,
                )?),
            })
        })
        .collect()
}

/// GLU MLP of every block; fails for families without gating.
pub fn glu_blocks(bundle: &ModelBundle) -> Result<Vec<GluMlpParams<f64>>> {
    mlp_blocks(bundle)?
        .into_iter()
        .map(|b| match b {
            MlpBlock::Glu(p) => Ok(p),
            MlpBlock::Plain(_) => Err(Error::Incompatible(
                "statistic needs gate projections but the model is a plain MLP".into(),
            )),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock<T> {
    pub input_norm: Vec<T>,
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub post_norm: Vec<T>,
    pub mlp: GluMlpParams<T>,
}

/// Decoder-only GLU transformer. `output` is `[d_emb, V]` and logits are `x · output`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer<T> {
    pub embedding: Matrix<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub final_norm: Vec<T>,
    pub output: Matrix<T>,
    pub n_heads: usize,
}

fn rms_norm(x: &Matrix<f64>, gamma: &[f64]) -> Matrix<f64> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        for (v, g) in row.iter_mut().zip(gamma) {
            *v *= inv * g;
        }
    }
    out
}

/// Per-block activations captured during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace {
    /// Input to the MLP, `[n, d]`.
    pub mlp_input: Matrix<f64>,
    /// Pre-activation gate projection `G a`, `[h, n]`.
    pub gate_out: Matrix<f64>,
    /// Up projection `U a`, `[h, n]`.
    pub up_out: Matrix<f64>,
}

impl BlockTrace {
    /// Hidden activations `σ(G a) ⊙ (U a)`, one row per hidden unit.
    pub fn hidden(&self, activation: Activation) -> Matrix<f64> {
        self.gate_out
            .map(|v| activation.apply(v))
            .hadamard(&self.up_out)
            .expect("gate and up traces share a shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub blocks: Vec<BlockTrace>,
}

impl<T: Scalar> Transformer<T> {
    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let m = bundle.manifest();
        if m.family != Family::GluTransformer {
            return Err(Error::Incompatible(format!(
                "expected a glu-transformer, got {}",
                m.family.as_str()
            )));
        }
        let vec = |role: &str| -> Result<Vec<T>> {
            Ok(bundle.tensor(role)?.to_f64_vec().into_iter().map(T::of).collect())
        };
        let blocks = (0..m.n_blocks)
            .map(|i| {
                Ok(TransformerBlock {
                    input_norm: vec(&format!("input_layernorm.{i}"))?,
                    w_q: bundle.matrix(&format!("W_Q.{i}"))?,
                    w_k: bundle.matrix(&format!("W_K.{i}"))?,
                    w_v: bundle.matrix(&format!("W_V.{i}"))?,
                    w_o: bundle.matrix(&format!("W_O.{i}"))?,
                    post_norm: vec(&format!("post_attn_layernorm.{i}"))?,
                    mlp: GluMlpParams::new(
                        bundle.matrix(&format!("gate_proj.{i}"))?,
                        bundle.matrix(&format!("up_proj.{i}"))?,
                        bundle.matrix(&format!("down_proj.{i}"))?,
                        Activation::Silu,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedding: bundle.matrix("embedding")?,
            blocks,
            final_norm: vec("final_layernorm")?,
            output: bundle.matrix("output")?,
            n_heads: m.n_heads,
        })
    }

    /// Writes the parameters back under `template`'s tensor names, keeping
    /// any tensors the roles do not cover.
    pub fn to_bundle(&self, template: &ModelBundle, dtype: DType) -> Result<ModelBundle> {
        let manifest = template.manifest().clone();
        let mut tensors = template.tensors().clone();
        let mut put = |role: String, m: &Matrix<T>, shape: Vec<usize>| -> Result<()> {
            let name = manifest
                .role_map
                .get(&role)
                .ok_or_else(|| Error::MissingRole(role.clone()))?;
            tensors.insert(name.clone(), Tensor::from_matrix(m, shape, dtype)?);
            Ok(())
        };
        let row = |v: &[T]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector");
        let shape = |m: &Matrix<T>| vec![m.rows(), m.cols()];
        put("embedding".into(), &self.embedding, shape(&self.embedding))?;
        for (i, b) in self.blocks.iter().enumerate() {
            put(format!("input_layernorm.{i}"), &row(&b.input_norm), vec![b.input_norm.len()])?;
            put(format!("W_Q.{i}"), &b.w_q, shape(&b.w_q))?;
            put(format!("W_K.{i}"), &b.w_k, shape(&b.w_k))?;
            put(format!("W_V.{i}"), &b.w_v, shape(&b.w_v))?;
            put(format!("W_O.{i}"), &b.w_o, shape(&b.w_o))?;
            put(format!("post_attn_layernorm.{i}"), &row(&b.post_norm), vec![b.post_norm.len()])?;
            put(format!("gate_proj.{i}"), &b.mlp.gate, shape(&b.mlp.gate))?;
            put(format!("up_proj.{i}"), &b.mlp.up, shape(&b.mlp.up))?;
            put(format!("down_proj.{i}"), &b.mlp.down, shape(&b.mlp.down))?;
        }
        put("final_layernorm".into(), &row(&self.final_norm), vec![self.final_norm.len()])?;
        put("output".into(), &self.output, shape(&self.output))?;
        ModelBundle::new(manifest, tensors)
    }

    pub fn cast<U: Scalar>(&self) -> Transformer<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::of(a.to_f64_lossy())).collect();
        Transformer {
            embedding: self.embedding.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| TransformerBlock {
                    input_norm: v(&b.input_norm),
                    w_q: b.w_q.cast(),
                    w_k: b.w_k.cast(),
                    w_v: b.w_v.cast(),
                    w_o: b.w_o.cast(),
                    post_norm: v(&b.post_norm),
                    mlp: b.mlp.cast(),
                })
                .collect(),
            final_norm: v(&self.final_norm),
            output: self.output.cast(),
            n_heads: self.n_heads,
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    pub fn d_emb(&self) -> usize {
        self.embedding.cols()
    }
}

impl Transformer<f64> {
    fn attention(&self, b: &TransformerBlock<f64>, z: &Matrix<f64>) -> Result<Matrix<f64>> {
        let (s, d) = z.shape();
        let q = z.matmul_t(&b.w_q)?;
        let k = z.matmul_t(&b.w_k)?;
        let v = z.matmul_t(&b.w_v)?;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Matrix::zeros(s, d);
        let mut weights = vec![0.0; s];
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..s {
                let qi = &q.row(i)[cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    weights[j] = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    max = max.max(weights[j]);
                }
                let mut total = 0.0;
                for w in &mut weights[..=i] {
                    *w = (*w - max).exp();
                    total += *w;
                }
                let out = &mut heads.row_mut(i)[cols.clone()];
                for j in 0..=i {
                    let p = weights[j] / total;
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += p * vv;
                    }
                }
            }
        }
        heads.matmul_t(&b.w_o)
    }

    /// Logits `[s, V]` for one sequence and its per-block trace.
    pub fn forward_sequence(&self, tokens: &[u32]) -> Result<(Matrix<f64>, Vec<BlockTrace>)> {
        let vocab = self.vocab();
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::Dimension(format!("token id {bad} outside vocabulary of {vocab}")));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let mut y = self.embedding.gather_rows(&ids);
        let mut trace = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let z = rms_norm(&y, &b.input_norm);
            let v = y.add(&self.attention(b, &z)?)?;
            let u = rms_norm(&v, &b.post_norm);
            let (g, up) = b.mlp.projections(&u)?;
            let act = b.mlp.activation;
            let t = g.map(|x| act.apply(x)).hadamard(&up)?.matmul_t(&b.mlp.down)?;
            trace.push(BlockTrace {
                mlp_input: u,
                gate_out: g.transpose(),
                up_out: up.transpose(),
            });
            y = v.add(&t)?;
        }
        let logits = rms_norm(&y, &self.final_norm).matmul(&self.output)?;
        Ok((logits, trace))
    }

    /// Logits per sequence plus the trace, with rows ordered sequence-major.
    pub fn forward(&self, batch: &TokenBatch) -> Result<(Vec<Matrix<f64>>, ActivationTrace)> {
        if batch.vocab > self.vocab() {
            return Err(Error::Dimension(format!(
                "batch drawn from vocabulary of {} but model has {}",
                batch.vocab,
                self.vocab()
            )));
        }
        let per_seq: Vec<(Matrix<f64>, Vec<BlockTrace>)> = batch
            .sequences
            .par_iter()
            .map(|s| self.forward_sequence(s))
            .collect::<Result<_>>()?;
        let mut logits = Vec::with_capacity(per_seq.len());
        let mut traces: Vec<Vec<BlockTrace>> = vec![Vec::new(); self.blocks.len()];
        for (l, t) in per_seq {
            logits.push(l);
            for (slot, bt) in traces.iter_mut().zip(t) {
                slot.push(bt);
            }
        }
        let blocks = traces
            .into_iter()
            .map(|parts| concat_block_traces(&parts))
            .collect::<Result<_>>()?;
        Ok((logits, ActivationTrace { blocks }))
    }
}

fn vstack(parts: &[&Matrix<f64>]) -> Result<Matrix<f64>> {
    let cols = parts.first().map_or(0, |m| m.cols());
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::Dimension("cannot stack matrices of different widths".into()));
        }
        data.extend_from_slice(p.as_slice());
        rows += p.rows();
    }
    Matrix::from_vec(rows, cols, data)
}

fn concat_block_traces(parts: &[BlockTrace]) -> Result<BlockTrace> {
    let inputs: Vec<_> = parts.iter().map(|p| &p.mlp_input).collect();
    let gate_t: Vec<_> = parts.iter().map(|p| p.gate_out.transpose()).collect();
    let up_t: Vec<_> = parts.iter().map(|p| p.up_out.transpose()).collect();
    Ok(BlockTrace {
        mlp_input: vstack(&inputs)?,
        gate_out: vstack(&gate_t.iter().collect::<Vec<_>>())?.transpose(),
        up_out: vstack(&up_t.iter().collect::<Vec<_>>())?.transpose(),
    })
}

/// `N` sequences of `s` token ids below `vocab`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub vocab: usize,
    pub sequences: Vec<Vec<u32>>,
}

impl TokenBatch {
    pub fn new(vocab: usize, sequences: Vec<Vec<u32>>) -> Result<Self> {
        if sequences.iter().flatten().any(|&t| t as usize >= vocab) {
            return Err(Error::Validation(format!("token id outside vocabulary of {vocab}")));
        }
        Ok(Self { vocab, sequences })
    }

    pub fn n_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

/// Token ids drawn uniformly from `[0, vocab)`.
pub fn random_token_batch(vocab: usize, n: usize, s: usize, seed: u64) -> TokenBatch {
    assert!(vocab >= 1, "vocabulary must be non-empty");
    let mut r = rng::stream(seed, "tokens", 0);
    let sequences = (0..n)
        .map(|_| (0..s).map(|_| r.gen_range(0..vocab) as u32).collect())
        .collect();
    TokenBatch { vocab, sequences }
}

/// `n × d` standard normal probe inputs for MLP-only families.
pub fn gaussian_inputs(n: usize, d: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng::stream(seed, "gaussian-inputs", 0);
    Matrix::from_fn(n, d, |_, _| r.sample(StandardNormal))
}

/// Logits `[N][s, V]` and the activation trace.
pub fn transformer_forward(model: &ModelBundle, batch: &TokenBatch) -> Result<(Vec<Matrix<f64>>, ActivationTrace)> {
    Transformer::<f64>::from_bundle(model)?.forward(batch)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix<f64>) -> Matrix<f64> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub fn next_token_distribution(model: &ModelBundle, batch: &TokenBatch) -> Result<Vec<Matrix<f64>>> {
    Ok(transformer_forward(model, batch)?.0.iter().map(softmax_rows).collect())
}

/// How activations are elicited from a model.
#[derive(Clone, Debug, PartialEq)]
pub enum Probe {
    /// Token sequences fed through a transformer.
    Tokens(TokenBatch),
    /// The same input rows fed to every standalone MLP block.
    Inputs(Matrix<f64>),
}

/// Per-block MLP activations. Transformers need a token probe; MLP-only
/// families take input rows directly.
pub fn activation_trace(model: &ModelBundle, probe: &Probe) -> Result<ActivationTrace> {
    match (model.manifest().family, probe) {
        (Family::GluTransformer, Probe::Tokens(batch)) => Ok(transformer_forward(model, batch)?.1),
        (Family::GluTransformer, Probe::Inputs(_)) => Err(Error::Incompatible(
            "transformers are probed with token batches".into(),
        )),
        (_, Probe::Tokens(_)) => Err(Error::Incompatible(
            "MLP-only models are probed with input vectors".into(),
        )),
        (Family::GluMlp, Probe::Inputs(x)) => {
            let blocks = glu_blocks(model)?
                .iter()
                .map(|p| {
                    let (g, u) = p.projections(x)?;
                    Ok(BlockTrace {
                        mlp_input: x.clone(),
                        gate_out: g.transpose(),
                        up_out: u.transpose(),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ActivationTrace { blocks })
        }
        (Family::PlainMlp, Probe::Inputs(_)) => Err(Error::Incompatible(
            "plain MLPs have no gate activations".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_glu() {
        let m = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
        let p = GluMlpParams::new(m(1.0), m(2.0), m(3.0), Activation::Silu).unwrap();
        let out = p.forward(&m(1.0)).unwrap();
        let expected = 6.0 / (1.0 + (-1.0f64).exp());
        assert!((out[(0, 0)] - expected).abs() < 1e-15);
        assert!((out[(0, 0)] - 4.386352).abs() < 1e-6);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = GluMlpParams::new(
            Matrix::from_fn(4, 3, |i, j| (i + j) as f64 - 2.0),
            Matrix::from_fn(4, 3, |i, j| (i * j) as f64 + 0.5),
            Matrix::from_fn(3, 4, |i, j| i as f64 - j as f64),
            Activation::Silu,
        )
        .unwrap();
        assert_eq!(p.forward(&Matrix::zeros(5, 3)).unwrap(), Matrix::zeros(5, 3));
        assert!(p.forward(&Matrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn token_batches_are_deterministic() {
        assert_eq!(random_token_batch(32, 3, 7, 11), random_token_batch(32, 3, 7, 11));
        assert_ne!(random_token_batch(32, 3, 7, 11), random_token_batch(32, 3, 7, 12));
        assert!(random_token_batch(1, 2, 5, 0).sequences.iter().flatten().all(|&t| t == 0));
        assert!(TokenBatch::new(4, vec![vec![4]]).is_err());
    }

    #[test]
    fn equal_logits_give_uniform_distribution() {
        let p = softmax_rows(&Matrix::from_vec(2, 4, vec![3.0; 8]).unwrap());
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-16));
    }
}
