//! Small deterministic training loops: analytic MLP gradients, SGD and Adam,
//! distillation fits, and generators of independent / dependent model pairs.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{gaussian_inputs, Activation, GluMlpParams, MlpBlock, PlainMlpParams};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::tensor_store::{ArchManifest, DType, Family, ModelBundle, Tensor, TensorMap};
use crate::transforms::{Permutation, TransformKind, TransformSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Mean-squared-error training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Seed of the input stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 512,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::Parameter(format!(
                "need steps >= 1, batch_size >= 1 and learning_rate >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A model with a flat list of weight matrices and an MSE gradient.
pub trait Trainable<T: Scalar> {
    fn weights(&self) -> Vec<&Matrix<T>>;
    fn weights_mut(&mut self) -> Vec<&mut Matrix<T>>;
    /// Gradients of `⟨f(x), upstream⟩` with respect to [`Trainable::weights`].
    fn grad(&self, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Vec<Matrix<T>>>;
    fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>>;
}

/// Gradients of a GLU MLP, ordered `(gate, up, down)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GluGrads<T> {
    pub gate: Matrix<T>,
    pub up: Matrix<T>,
    pub down: Matrix<T>,
}

/// Exact gradients of `⟨f(x; θ), upstream⟩` for the GLU MLP.
pub fn glu_mlp_grad<T: Scalar>(params: &GluMlpParams<T>, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<GluGrads<T>> {
    let (a, b) = params.projections(x)?;
    if upstream.shape() != (x.rows(), params.dim()) {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            (x.rows(), params.dim())
        )));
    }
    let act = params.activation;
    let s = a.map(|v| act.apply(v));
    let hidden = s.hadamard(&b)?;
    let d_hidden = upstream.matmul(&params.down)?;
    let d_a = d_hidden.hadamard(&b)?.hadamard(&a.map(|v| act.derivative(v)))?;
    let d_b = d_hidden.hadamard(&s)?;
    Ok(GluGrads {
        gate: d_a.t_matmul(x)?,
        up: d_b.t_matmul(x)?,
        down: upstream.t_matmul(&hidden)?,
    })
}

impl<T: Scalar> Trainable<T> for GluMlpParams<T> {
    fn weights(&self) -> Vec<&Matrix<T>> {
        vec![&self.gate, &self.up, &self.down]
    }

    fn weights_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![&mut self.gate, &mut self.up, &mut self.down]
    }

    fn grad(&self, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let g = glu_mlp_grad(self, x, upstream)?;
        Ok(vec![g.gate, g.up, g.down])
    }

    fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward(x)
    }
}

impl<T: Scalar> Trainable<T> for PlainMlpParams<T> {
    fn weights(&self) -> Vec<&Matrix<T>> {
        vec![&self.up, &self.down]
    }

    fn weights_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![&mut self.up, &mut self.down]
    }

    fn grad(&self, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let a = x.matmul_t(&self.up)?;
        let hidden = a.map(|v| v.max(T::zero()));
        let d_hidden = upstream.matmul(&self.down)?;
        let d_a = d_hidden.hadamard(&a.map(|v| Activation::Relu.derivative(v)))?;
        Ok(vec![d_a.t_matmul(x)?, upstream.t_matmul(&hidden)?])
    }

    fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward(x)
    }
}

/// Mean over all entries of `(pred - target)²` and its gradient w.r.t. `pred`.
pub fn mse<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
    let diff = pred.sub(target)?;
    let n = (diff.rows() * diff.cols()).max(1) as f64;
    let loss = diff.as_slice().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / n;
    Ok((loss, diff.scale(T::of(2.0 / n))))
}

struct AdamState<T> {
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

/// Trains `model` on batches from `data(step)`; returns the loss before each step.
pub fn train<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    mut data: impl FnMut(usize) -> Result<(Matrix<T>, Matrix<T>)>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let lr = T::of(cfg.learning_rate);
    let (b1, b2, eps) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPS));
    let mut adam = AdamState {
        m: model.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
        v: model.weights().iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (x, y) = data(step)?;
        let (loss, upstream) = mse(&model.predict(&x)?, &y)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        losses.push(loss);
        let grads = model.grad(&x, &upstream)?;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, g) in model.weights_mut().into_iter().zip(&grads) {
                    for (wv, &gv) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *wv -= lr * gv;
                    }
                }
            }
            Optimizer::Adam => {
                let t = (step + 1) as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (k, w) in model.weights_mut().into_iter().enumerate() {
                    let (m, v, g) = (&mut adam.m[k], &mut adam.v[k], &grads[k]);
                    let slots = w
                        .as_mut_slice()
                        .iter_mut()
                        .zip(m.as_mut_slice())
                        .zip(v.as_mut_slice())
                        .zip(g.as_slice());
                    for (((wv, mv), vv), &gv) in slots {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let m_hat = *mv / c1;
                        let v_hat = *vv / c2;
                        *wv -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
    Ok(losses)
}

/// Trains a copy of `init`; deterministic given `(init, data, cfg)`.
pub fn train_glu_mlp<T: Scalar>(
    init: &GluMlpParams<T>,
    data: impl FnMut(usize) -> Result<(Matrix<T>, Matrix<T>)>,
    cfg: &TrainConfig,
) -> Result<(GluMlpParams<T>, Vec<f64>)> {
    let mut p = init.clone();
    let losses = train(&mut p, data, cfg)?;
    Ok((p, losses))
}

/// Batches of standard normal inputs labeled by `target`, seeded per step.
pub fn regression_data<'a>(
    target: &'a MlpBlock<f64>,
    batch: usize,
    seed: u64,
) -> impl FnMut(usize) -> Result<(Matrix<f64>, Matrix<f64>)> + 'a {
    move |step| {
        let x = gaussian_inputs(batch, target.dim(), rng::derive_seed(seed, "batch", step as u64));
        let y = target.forward(&x)?;
        Ok((x, y))
    }
}

fn uniform_matrix(r: &mut Rng, rows: usize, cols: usize, bound: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-bound..=bound))
}

/// Weights uniform in `±scale/√fan_in`.
pub fn init_glu(d: usize, h: usize, seed: u64, scale: f64) -> GluMlpParams<f64> {
    let mut r = rng::stream(seed, "init-glu", 0);
    let (bd, bh) = (scale / (d as f64).sqrt(), scale / (h as f64).sqrt());
    let gate = uniform_matrix(&mut r, h, d, bd);
    let up = uniform_matrix(&mut r, h, d, bd);
    let down = uniform_matrix(&mut r, d, h, bh);
    GluMlpParams::new(gate, up, down, Activation::Silu).expect("consistent shapes")
}

pub fn init_plain(d: usize, h: usize, seed: u64, scale: f64) -> PlainMlpParams<f64> {
    let mut r = rng::stream(seed, "init-plain", 0);
    let up = uniform_matrix(&mut r, h, d, scale / (d as f64).sqrt());
    let down = uniform_matrix(&mut r, d, h, scale / (h as f64).sqrt());
    PlainMlpParams::new(up, down).expect("consistent shapes")
}

/// Fresh model of the given architecture: uniform `±1/√fan_in` weights and
/// unit layernorms, stored as F64.
pub fn init_model(arch: &ArchManifest, seed: u64) -> Result<ModelBundle> {
    arch.validate()?;
    let mut r = rng::stream(seed, "init-model", 0);
    let mut tensors = TensorMap::new();
    for (role, shape) in arch.required_roles() {
        let kind = role.split('.').next().unwrap_or("");
        let data: Vec<f64> = if kind.ends_with("layernorm") {
            vec![1.0; shape.iter().product()]
        } else {
            let fan_in = match kind {
                "embedding" => 1,
                "output" => shape[0],
                _ => shape[1],
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..shape.iter().product::<usize>())
                .map(|_| r.gen_range(-bound..=bound))
                .collect()
        };
        tensors.insert(arch.role_map[&role].clone(), Tensor::f64(shape, data)?);
    }
    ModelBundle::new(arch.clone(), tensors)
}

fn block_target(arch: &ArchManifest, seed: u64, block: usize) -> MlpBlock<f64> {
    let s = rng::derive_seed(seed, "teacher", block as u64);
    match arch.family {
        Family::PlainMlp => MlpBlock::Plain(init_plain(arch.d_emb, arch.d_mlp, s, 1.0)),
        _ => MlpBlock::Glu(init_glu(arch.d_emb, arch.d_mlp, s, 1.0)),
    }
}

fn read_block(bundle: &ModelBundle, i: usize) -> Result<MlpBlock<f64>> {
    Ok(crate::model::mlp_blocks(bundle)?.swap_remove(i))
}

fn write_block(bundle: &ModelBundle, i: usize, block: &MlpBlock<f64>) -> Result<ModelBundle> {
    let manifest = bundle.manifest().clone();
    let mut tensors = bundle.tensors().clone();
    let mut put = |role: String, m: &Matrix<f64>| -> Result<()> {
        let name = manifest.role_map.get(&role).ok_or_else(|| Error::MissingRole(role.clone()))?;
        tensors.insert(name.clone(), Tensor::from_matrix(m, vec![m.rows(), m.cols()], DType::F64)?);
        Ok(())
    };
    match block {
        MlpBlock::Glu(p) => {
            put(format!("gate_proj.{i}"), &p.gate)?;
            put(format!("up_proj.{i}"), &p.up)?;
            put(format!("down_proj.{i}"), &p.down)?;
        }
        MlpBlock::Plain(p) => {
            put(format!("up_proj.{i}"), &p.up)?;
            put(format!("down_proj.{i}"), &p.down)?;
        }
    }
    ModelBundle::new(manifest, tensors)
}

/// Regresses every MLP block of `model` onto a random teacher block drawn from
/// `data_seed`. Attention, embeddings and layernorms are left untouched.
pub fn train_blocks(model: &ModelBundle, data_seed: u64, cfg: &TrainConfig) -> Result<ModelBundle> {
    let arch = model.manifest().clone();
    let mut out = model.clone();
    for i in 0..arch.n_blocks {
        let teacher = block_target(&arch, data_seed, i);
        let block_cfg = TrainConfig {
            seed: rng::derive_seed(cfg.seed ^ data_seed, "block-data", i as u64),
            ..cfg.clone()
        };
        let data = regression_data(&teacher, cfg.batch_size, block_cfg.seed);
        let trained = match read_block(&out, i)? {
            MlpBlock::Glu(mut p) => {
                train(&mut p, data, &block_cfg)?;
                MlpBlock::Glu(p)
            }
            MlpBlock::Plain(mut p) => {
                train(&mut p, data, &block_cfg)?;
                MlpBlock::Plain(p)
            }
        };
        out = write_block(&out, i, &trained)?;
    }
    Ok(out)
}

/// Two models from independent initializations, trained by the same
/// deterministic procedure on the same synthetic data stream.
pub fn make_null_pair(
    arch: &ArchManifest,
    data_seed: u64,
    init_seeds: (u64, u64),
    cfg: &TrainConfig,
) -> Result<(ModelBundle, ModelBundle)> {
    let a = train_blocks(&init_model(arch, init_seeds.0)?, data_seed, cfg)?;
    let b = train_blocks(&init_model(arch, init_seeds.1)?, data_seed, cfg)?;
    Ok((a, b))
}

/// Post-training modifications applied to a fine-tuned copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    /// Blocks whose MLP is re-initialized and distilled back to the
    /// fine-tuned block's outputs on Gaussian inputs (same width).
    #[serde(default)]
    pub retrain_blocks: Vec<usize>,
    #[serde(default)]
    pub retrain: Option<TrainConfig>,
    /// Output-preserving camouflage applied last.
    #[serde(default)]
    pub camouflage: Option<(TransformKind, u64)>,
}

/// Fine-tunes `base` by continuing MLP training on a new task (`finetune_seed`
/// picks the teacher), then applies the optional adversary.
pub fn make_dependent_pair(
    base: &ModelBundle,
    finetune_seed: u64,
    finetune_cfg: &TrainConfig,
    adversary: Option<&Adversary>,
) -> Result<ModelBundle> {
    let mut out = train_blocks(base, finetune_seed, finetune_cfg)?;
    if let Some(adv) = adversary {
        let cfg = adv.retrain.clone().unwrap_or_default();
        for &i in &adv.retrain_blocks {
            let source = read_block(&out, i)?;
            let m = out.manifest();
            let (fit, _) = distill_glu(&source, m.d_mlp, &cfg, rng::derive_seed(cfg.seed, "retrain-init", i as u64), 1.0)?;
            out = write_block(&out, i, &MlpBlock::Glu(fit))?;
        }
        if let Some((kind, seed)) = adv.camouflage {
            out = TransformSpec::for_model(&out, kind, seed).apply(&out)?;
        }
    }
    Ok(out)
}

/// Copy of `model` whose MLP weights carry Gaussian noise of `rel` times
/// each matrix's RMS.
pub fn perturb_model(model: &ModelBundle, rel: f64, seed: u64) -> Result<ModelBundle> {
    let mut out = model.clone();
    for i in 0..model.manifest().n_blocks {
        let s = rng::derive_seed(seed, "perturb-block", i as u64);
        let block = match read_block(&out, i)? {
            MlpBlock::Glu(mut p) => {
                perturb(&mut p, rel, s);
                MlpBlock::Glu(p)
            }
            MlpBlock::Plain(mut p) => {
                perturb(&mut p, rel, s);
                MlpBlock::Plain(p)
            }
        };
        out = write_block(&out, i, &block)?;
    }
    Ok(out)
}

/// Keeps the listed blocks in the given order (depth pruning).
pub fn prune_depth(model: &ModelBundle, keep: &[usize]) -> Result<ModelBundle> {
    let src = model.manifest();
    if keep.is_empty() || keep.iter().any(|&b| b >= src.n_blocks) {
        return Err(Error::Parameter(format!("invalid block list {keep:?} for {} blocks", src.n_blocks)));
    }
    let arch = ArchManifest::with_default_roles(src.family, keep.len(), src.d_emb, src.d_mlp, src.vocab, src.n_heads);
    let mut tensors = TensorMap::new();
    for (role, _) in arch.required_roles() {
        let source_role = match role.rsplit_once('.') {
            Some((kind, i)) => format!("{kind}.{}", keep[i.parse::<usize>().unwrap_or(0)]),
            None => role.clone(),
        };
        tensors.insert(role, model.tensor(&source_role)?.clone());
    }
    ModelBundle::new(arch, tensors)
}

/// Keeps the listed hidden units of every block, in the given order
/// (width pruning). Every block must keep the same number of units.
pub fn prune_width(model: &ModelBundle, keep: &[Vec<usize>]) -> Result<ModelBundle> {
    let src = model.manifest();
    let h = keep.first().map_or(0, Vec::len);
    if keep.len() != src.n_blocks || h == 0 || keep.iter().any(|k| k.len() != h || k.iter().any(|&u| u >= src.d_mlp)) {
        return Err(Error::Parameter("width pruning needs one equally long unit list per block".into()));
    }
    let arch = ArchManifest::with_default_roles(src.family, src.n_blocks, src.d_emb, h, src.vocab, src.n_heads);
    let mut tensors = TensorMap::new();
    for (role, shape) in arch.required_roles() {
        let (kind, block) = match role.rsplit_once('.') {
            Some((kind, i)) => (kind, i.parse::<usize>().ok()),
            None => (role.as_str(), None),
        };
        let tensor = match (kind, block) {
            ("gate_proj" | "up_proj", Some(i)) => {
                Tensor::from_matrix(&model.matrix::<f64>(&role)?.gather_rows(&keep[i]), shape, DType::F64)?
            }
            ("down_proj", Some(i)) => {
                Tensor::from_matrix(&model.matrix::<f64>(&role)?.gather_cols(&keep[i]), shape, DType::F64)?
            }
            _ => model.tensor(&role)?.clone(),
        };
        tensors.insert(role, tensor);
    }
    ModelBundle::new(arch, tensors)
}

/// Fits a width-`h` GLU MLP to `source` on standard normal inputs.
/// Returns the fit and its mean-squared error on 1024 fresh inputs.
pub fn distill_glu(
    source: &MlpBlock<f64>,
    h: usize,
    cfg: &TrainConfig,
    init_seed: u64,
    init_scale: f64,
) -> Result<(GluMlpParams<f64>, f64)> {
    let mut student = init_glu(source.dim(), h, init_seed, init_scale);
    train(&mut student, regression_data(source, cfg.batch_size, cfg.seed), cfg)?;
    let x = gaussian_inputs(1024, source.dim(), rng::derive_seed(cfg.seed, "holdout", 0));
    let (loss, _) = mse(&student.forward(&x)?, &source.forward(&x)?)?;
    Ok((student, loss))
}

/// Adds Gaussian noise with standard deviation `rel` times each matrix's RMS.
pub fn perturb<T: Scalar, M: Trainable<T>>(model: &mut M, rel: f64, seed: u64) {
    let mut r = rng::stream(seed, "perturb", 0);
    for w in model.weights_mut() {
        let n = w.as_slice().len().max(1) as f64;
        let rms = (w.as_slice().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / n).sqrt();
        for v in w.as_mut_slice() {
            *v += T::of(rel * rms * r.sample::<f64, _>(StandardNormal));
        }
    }
}

/// Applies one hidden-unit permutation per trainable matrix group.
pub fn permute_glu<T: Scalar>(p: &GluMlpParams<T>, perm: &Permutation) -> GluMlpParams<T> {
    p.permute_hidden(perm.as_slice())
}
