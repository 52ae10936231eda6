//! Output-preserving weight transformations: hidden-unit permutations,
//! residual-stream permutations and the rotation/layernorm/scale camouflage.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{gaussian_inputs, mlp_blocks, softmax_rows, transformer_forward, Transformer, TokenBatch};
use crate::rng::{self, Rng};
use crate::tensor_store::{DType, Family, ModelBundle, Tensor};

/// A bijection on `0..n`, read as the permutation matrix `P` with
/// `P[i][map[i]] = 1`, so `P · A` lists the rows of `A` in the order `map`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &v in &map {
            if v >= map.len() || std::mem::replace(&mut seen[v], true) {
                return Err(Error::Validation(format!(
                    "{map:?} is not a permutation of 0..{}",
                    map.len()
                )));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// `(self ∘ other)[i] = self[other[i]]`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            map: other.map.iter().map(|&i| self.map[i]).collect(),
        }
    }

    /// `P · A`
    pub fn left_mul(&self, a: &Matrix<f64>) -> Matrix<f64> {
        a.gather_rows(&self.map)
    }

    /// `Pᵀ · A`
    pub fn left_mul_t(&self, a: &Matrix<f64>) -> Matrix<f64> {
        a.gather_rows(&self.inverse().map)
    }

    /// `A · P`
    pub fn right_mul(&self, a: &Matrix<f64>) -> Matrix<f64> {
        a.gather_cols(&self.inverse().map)
    }

    /// `A · Pᵀ`
    pub fn right_mul_t(&self, a: &Matrix<f64>) -> Matrix<f64> {
        a.gather_cols(&self.map)
    }
}

/// Rewrites selected roles, reading them as f64 matrices (vectors become
/// `1 × n` rows). Each output keeps its input dtype unless `dtype` is given.
fn map_roles(
    bundle: &ModelBundle,
    dtype: Option<DType>,
    mut f: impl FnMut(&str, Matrix<f64>) -> Result<Option<Matrix<f64>>>,
) -> Result<ModelBundle> {
    let manifest = bundle.manifest().clone();
    let mut tensors = bundle.tensors().clone();
    for (role, shape) in manifest.required_roles() {
        let src = bundle.tensor(&role)?;
        if let Some(m) = f(&role, src.to_matrix()?)? {
            let out = Tensor::from_matrix(&m, shape, dtype.unwrap_or(src.dtype()))?;
            tensors.insert(manifest.role_map[&role].clone(), out);
        }
    }
    ModelBundle::new(manifest, tensors)
}

/// Splits `"gate_proj.3"` into `("gate_proj", Some(3))`.
fn split_role(role: &str) -> (&str, Option<usize>) {
    match role.rsplit_once('.') {
        Some((kind, idx)) => (kind, idx.parse().ok()),
        None => (role, None),
    }
}

/// Permutes the hidden units of every MLP block: `G → πG`, `U → πU`, `D → Dπᵀ`.
pub fn apply_pi_mlp(model: &ModelBundle, perms: &[Permutation]) -> Result<ModelBundle> {
    let m = model.manifest();
    if perms.len() != m.n_blocks {
        return Err(Error::Dimension(format!(
            "{} permutations for {} blocks",
            perms.len(),
            m.n_blocks
        )));
    }
    if let Some(p) = perms.iter().find(|p| p.len() != m.d_mlp) {
        return Err(Error::Dimension(format!(
            "hidden permutation of size {} for d_mlp = {}",
            p.len(),
            m.d_mlp
        )));
    }
    map_roles(model, None, |role, w| {
        Ok(match split_role(role) {
            ("gate_proj" | "up_proj", Some(i)) => Some(perms[i].left_mul(&w)),
            ("down_proj", Some(i)) => Some(perms[i].right_mul_t(&w)),
            _ => None,
        })
    })
}

/// Permutes the residual-stream coordinates consistently across all tensors.
pub fn apply_pi_emb(model: &ModelBundle, perm: &Permutation) -> Result<ModelBundle> {
    let d = model.manifest().d_emb;
    if perm.len() != d {
        return Err(Error::Dimension(format!(
            "embedding permutation of size {} for d_emb = {d}",
            perm.len()
        )));
    }
    map_roles(model, None, |role, w| {
        Ok(Some(match split_role(role).0 {
            "embedding" | "input_layernorm" | "post_attn_layernorm" | "final_layernorm" | "W_Q" | "W_K"
            | "W_V" | "gate_proj" | "up_proj" => perm.right_mul(&w),
            "W_O" | "down_proj" | "output" => perm.left_mul_t(&w),
            _ => return Ok(None),
        }))
    })
}

/// Haar-distributed orthogonal matrix: Householder QR of a Gaussian matrix
/// with the signs of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng::stream(seed, "orthogonal", n as u64);
    orthogonal_from(&mut r, n)
}

fn orthogonal_from(r: &mut Rng, n: usize) -> Matrix<f64> {
    let mut a = Matrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut q = Matrix::<f64>::identity(n);
    let mut diag_sign = vec![1.0; n];
    for k in 0..n {
        let x: Vec<f64> = (k..n).map(|i| a[(i, k)]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        diag_sign[k] = if alpha >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x;
        v[0] -= alpha;
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vn == 0.0 {
            // Column already reduced; R_kk = x[0].
            diag_sign[k] = if a[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
            continue;
        }
        v.iter_mut().for_each(|t| *t /= vn);
        for c in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * a[(i, c)]).sum();
            for i in k..n {
                a[(i, c)] -= 2.0 * s * v[i - k];
            }
        }
        for row in 0..n {
            let s: f64 = (k..n).map(|j| q[(row, j)] * v[j - k]).sum();
            for j in k..n {
                q[(row, j)] -= 2.0 * s * v[j - k];
            }
        }
    }
    q.scale_cols(&diag_sign).expect("n signs for n columns")
}

/// Block-diagonal orthogonal matrix with one independent block per head.
fn head_block_orthogonal(r: &mut Rng, d: usize, n_heads: usize) -> Matrix<f64> {
    let dh = d / n_heads;
    let mut m = Matrix::zeros(d, d);
    for h in 0..n_heads {
        let block = orthogonal_from(r, dh);
        for i in 0..dh {
            for j in 0..dh {
                m[(h * dh + i, h * dh + j)] = block[(i, j)];
            }
        }
    }
    m
}

pub fn orthogonality_error(m: &Matrix<f64>) -> f64 {
    let n = m.rows();
    m.t_matmul(m)
        .and_then(|g| g.max_abs_diff(&Matrix::identity(n)))
        .unwrap_or(f64::INFINITY)
}

/// Parameters of the rotation camouflage.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationParams {
    pub r_emb: Matrix<f64>,
    /// Query/key rotation per block.
    pub r_blocks: Vec<Matrix<f64>>,
    pub input_norms: Vec<Vec<f64>>,
    pub post_norms: Vec<Vec<f64>>,
    pub final_norm: Vec<f64>,
    /// Up/down rescaling per block.
    pub scales: Vec<f64>,
}

impl RotationParams {
    /// Everything identity except the replacement layernorms, which are `gammas`.
    pub fn identity_for(model: &Transformer<f64>) -> Self {
        let d = model.d_emb();
        Self {
            r_emb: Matrix::identity(d),
            r_blocks: vec![Matrix::identity(d); model.blocks.len()],
            input_norms: model.blocks.iter().map(|b| b.input_norm.clone()).collect(),
            post_norms: model.blocks.iter().map(|b| b.post_norm.clone()).collect(),
            final_norm: model.final_norm.clone(),
            scales: vec![1.0; model.blocks.len()],
        }
    }

    /// Random rotation: Haar `R_emb`, head-block-diagonal `R_i`, replacement
    /// layernorm entries with magnitude in `[0.5, 2]` (random sign when
    /// `signed_norms`), and scales `c_i` in `[0.5, 2]`.
    pub fn random(d_emb: usize, n_blocks: usize, n_heads: usize, seed: u64, signed_norms: bool) -> Self {
        let mut r = rng::stream(seed, "rotation", 0);
        let norm = |r: &mut Rng| -> Vec<f64> {
            (0..d_emb)
                .map(|_| {
                    let mag = r.gen_range(0.5..=2.0);
                    if signed_norms && r.gen_bool(0.5) {
                        -mag
                    } else {
                        mag
                    }
                })
                .collect()
        };
        let r_emb = orthogonal_from(&mut r, d_emb);
        let r_blocks = (0..n_blocks)
            .map(|_| head_block_orthogonal(&mut r, d_emb, n_heads))
            .collect();
        let input_norms = (0..n_blocks).map(|_| norm(&mut r)).collect();
        let post_norms = (0..n_blocks).map(|_| norm(&mut r)).collect();
        let final_norm = norm(&mut r);
        let scales = (0..n_blocks).map(|_| r.gen_range(0.5..=2.0)).collect();
        Self {
            r_emb,
            r_blocks,
            input_norms,
            post_norms,
            final_norm,
            scales,
        }
    }

    pub fn validate(&self, d_emb: usize, n_blocks: usize) -> Result<()> {
        let square = |m: &Matrix<f64>| m.shape() == (d_emb, d_emb);
        if !square(&self.r_emb)
            || self.r_blocks.len() != n_blocks
            || !self.r_blocks.iter().all(square)
            || self.input_norms.len() != n_blocks
            || self.post_norms.len() != n_blocks
            || self.scales.len() != n_blocks
            || self.final_norm.len() != d_emb
            || self.input_norms.iter().chain(&self.post_norms).any(|g| g.len() != d_emb)
        {
            return Err(Error::Dimension("rotation parameters do not match the model".into()));
        }
        for m in std::iter::once(&self.r_emb).chain(&self.r_blocks) {
            let err = orthogonality_error(m);
            if err > 1e-10 {
                return Err(Error::Parameter(format!("rotation is not orthogonal (error {err:.3e})")));
            }
        }
        let norms = self.input_norms.iter().chain(&self.post_norms).flatten().chain(&self.final_norm);
        if norms.clone().any(|&g| g == 0.0 || !g.is_finite()) {
            return Err(Error::Parameter("replacement layernorm has a zero entry".into()));
        }
        if self.scales.iter().any(|&c| c == 0.0 || !c.is_finite()) {
            return Err(Error::Parameter("MLP scale must be non-zero".into()));
        }
        Ok(())
    }
}

/// `W diag(γ) R diag(1/γ')`
fn fold_norm(w: &Matrix<f64>, gamma: &[f64], r: &Matrix<f64>, gamma_new: &[f64]) -> Result<Matrix<f64>> {
    let inv: Vec<f64> = gamma_new.iter().map(|g| 1.0 / g).collect();
    w.scale_cols(gamma)?.matmul(r)?.scale_cols(&inv)
}

/// Applies the rotation camouflage to a transformer. The output is stored as
/// F64 since rotated weights are not representable in the source precision.
pub fn apply_rotation(model: &ModelBundle, rot: &RotationParams) -> Result<ModelBundle> {
    let t = Transformer::<f64>::from_bundle(model)?;
    rot.validate(t.d_emb(), t.blocks.len())?;
    let r = &rot.r_emb;
    let rt = r.transpose();
    let mut out = t.clone();
    out.embedding = t.embedding.matmul(r)?;
    for (i, (b, nb)) in t.blocks.iter().zip(out.blocks.iter_mut()).enumerate() {
        let (gi, gi_new) = (&b.input_norm, &rot.input_norms[i]);
        let (gp, gp_new) = (&b.post_norm, &rot.post_norms[i]);
        let c = rot.scales[i];
        nb.w_q = rot.r_blocks[i].matmul(&fold_norm(&b.w_q, gi, r, gi_new)?)?;
        nb.w_k = rot.r_blocks[i].matmul(&fold_norm(&b.w_k, gi, r, gi_new)?)?;
        nb.w_v = fold_norm(&b.w_v, gi, r, gi_new)?;
        nb.w_o = rt.matmul(&b.w_o)?;
        nb.mlp.gate = fold_norm(&b.mlp.gate, gp, r, gp_new)?;
        nb.mlp.up = fold_norm(&b.mlp.up, gp, r, gp_new)?.scale(c);
        nb.mlp.down = rt.matmul(&b.mlp.down)?.scale(1.0 / c);
        nb.input_norm = gi_new.clone();
        nb.post_norm = gp_new.clone();
    }
    // The output matrix is [d_emb, V] with logits x·O, so the fold is transposed:
    // O' = diag(1/γ') Rᵀ diag(γ) O.
    let inv_final: Vec<f64> = rot.final_norm.iter().map(|g| 1.0 / g).collect();
    let scaled = Matrix::diag(&t.final_norm).matmul(&t.output)?;
    out.output = Matrix::diag(&inv_final).matmul(&rt.matmul(&scaled)?)?;
    out.final_norm = rot.final_norm.clone();
    out.to_bundle(model, DType::F64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Permute,
    Rotate,
    Both,
}

/// Reproducible description of a camouflage transform (the JSON sidecar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub seed: u64,
    #[serde(default = "default_signed")]
    pub signed_norms: bool,
    pub family: Family,
    #[serde(rename = "L")]
    pub n_blocks: usize,
    pub d_emb: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
}

fn default_signed() -> bool {
    true
}

impl TransformSpec {
    pub fn for_model(model: &ModelBundle, kind: TransformKind, seed: u64) -> Self {
        let m = model.manifest();
        Self {
            kind,
            seed,
            signed_norms: true,
            family: m.family,
            n_blocks: m.n_blocks,
            d_emb: m.d_emb,
            d_mlp: m.d_mlp,
            n_heads: m.n_heads,
        }
    }

    pub fn permutations(&self) -> (Permutation, Vec<Permutation>) {
        let mut r = rng::stream(self.seed, "camouflage-permutation", 0);
        let emb = Permutation::random(self.d_emb, &mut r);
        let mlp = (0..self.n_blocks).map(|_| Permutation::random(self.d_mlp, &mut r)).collect();
        (emb, mlp)
    }

    pub fn rotation(&self) -> RotationParams {
        RotationParams::random(self.d_emb, self.n_blocks, self.n_heads, self.seed, self.signed_norms)
    }

    /// Rotation first (it needs the original layernorms), then permutations.
    pub fn apply(&self, model: &ModelBundle) -> Result<ModelBundle> {
        let m = model.manifest();
        if (m.family, m.n_blocks, m.d_emb, m.d_mlp) != (self.family, self.n_blocks, self.d_emb, self.d_mlp) {
            return Err(Error::Incompatible("transform spec was made for a different architecture".into()));
        }
        let mut out = model.clone();
        if matches!(self.kind, TransformKind::Rotate | TransformKind::Both) {
            if m.family != Family::GluTransformer {
                return Err(Error::Incompatible("rotation needs a glu-transformer".into()));
            }
            out = apply_rotation(&out, &self.rotation())?;
        }
        if matches!(self.kind, TransformKind::Permute | TransformKind::Both) {
            let (emb, mlp) = self.permutations();
            out = apply_pi_mlp(&out, &mlp)?;
            // Standalone MLP blocks expose their input and output coordinates,
            // so only transformers can absorb a residual-stream permutation.
            if m.family == Family::GluTransformer {
                out = apply_pi_emb(&out, &emb)?;
            }
        }
        Ok(out)
    }
}

/// Largest absolute difference between the outputs of two models that should
/// compute the same function: logits for transformers, per-block outputs on
/// Gaussian inputs for MLP families.
pub fn max_output_diff(a: &ModelBundle, b: &ModelBundle, batch: &TokenBatch, seed: u64) -> Result<f64> {
    if a.manifest().family == Family::GluTransformer {
        let (la, _) = transformer_forward(a, batch)?;
        let (lb, _) = transformer_forward(b, batch)?;
        la.iter().zip(&lb).try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.max_abs_diff(y)?)))
    } else {
        let x = gaussian_inputs(64, a.manifest().d_emb, seed);
        let (ba, bb) = (mlp_blocks(a)?, mlp_blocks(b)?);
        let mut worst = 0.0f64;
        for (p, q) in ba.iter().zip(&bb) {
            worst = worst.max(p.forward(&x)?.max_abs_diff(&q.forward(&x)?)?);
        }
        Ok(worst)
    }
}

/// Same as [`max_output_diff`] but on next-token probabilities.
pub fn max_probability_diff(a: &ModelBundle, b: &ModelBundle, batch: &TokenBatch) -> Result<f64> {
    let (la, _) = transformer_forward(a, batch)?;
    let (lb, _) = transformer_forward(b, batch)?;
    la.iter()
        .zip(&lb)
        .try_fold(0.0f64, |m, (x, y)| Ok(m.max(softmax_rows(x).max_abs_diff(&softmax_rows(y))?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_algebra() {
        let mut r = rng::stream(1, "t", 0);
        let p = Permutation::random(9, &mut r);
        assert_eq!(p.compose(&p.inverse()), Permutation::identity(9));
        assert_eq!(p.inverse().compose(&p), Permutation::identity(9));
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Permutation>(&json).unwrap(), p);
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    #[test]
    fn matrix_products_match_dense_permutation() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let pm = Matrix::from_fn(4, 4, |i, j| if p.as_slice()[i] == j { 1.0 } else { 0.0 });
        let a = Matrix::from_fn(4, 4, |i, j| (4 * i + j) as f64);
        assert_eq!(p.left_mul(&a), pm.matmul(&a).unwrap());
        assert_eq!(p.left_mul_t(&a), pm.transpose().matmul(&a).unwrap());
        assert_eq!(p.right_mul(&a), a.matmul(&pm).unwrap());
        assert_eq!(p.right_mul_t(&a), a.matmul(&pm.transpose()).unwrap());
    }

    #[test]
    fn orthogonal_matrices() {
        for n in [1usize, 2, 5, 17, 64] {
            let q = random_orthogonal(n, 3);
            assert!(orthogonality_error(&q) <= 1e-12, "n = {n}");
        }
        let one = random_orthogonal(1, 9);
        assert_eq!(one[(0, 0)].abs(), 1.0);
        assert_eq!(random_orthogonal(6, 4), random_orthogonal(6, 4));
        assert_ne!(random_orthogonal(6, 4), random_orthogonal(6, 5));
    }

    #[test]
    fn head_blocks_are_block_diagonal() {
        let mut r = rng::stream(0, "t", 0);
        let m = head_block_orthogonal(&mut r, 8, 2);
        assert!(orthogonality_error(&m) < 1e-12);
        for i in 0..4 {
            for j in 4..8 {
                assert_eq!(m[(i, j)], 0.0);
                assert_eq!(m[(j, i)], 0.0);
            }
        }
    }
}
