//! Independence tests between two models: the permutation test, the
//! matching-based rank statistics, localized block matching, the distilled
//! generalized test, and the output- and invariant-based baselines.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::matching::{match_rows, Matching};
use crate::model::{
    activation_trace, gaussian_inputs, mlp_blocks, next_token_distribution, ActivationTrace, Activation, BlockTrace,
    MlpBlock, Probe, TokenBatch, Transformer,
};
use crate::rng;
use crate::stats::{fisher_aggregate, ranks, spearman_pvalue, LogPValue};
use crate::tensor_store::{Family, ModelBundle};
use crate::trainer::{distill_glu, TrainConfig};
use crate::transforms::{apply_pi_emb, apply_pi_mlp, Permutation};

fn require_same_architecture(a: &ModelBundle, b: &ModelBundle) -> Result<()> {
    let (ma, mb) = (a.manifest(), b.manifest());
    let key = |m: &crate::tensor_store::ArchManifest| (m.family, m.n_blocks, m.d_emb, m.d_mlp, m.vocab, m.n_heads);
    if key(ma) != key(mb) {
        return Err(Error::Incompatible(format!(
            "architectures differ: {} L={} d_emb={} d_mlp={} V={} heads={} vs {} L={} d_emb={} d_mlp={} V={} heads={}",
            ma.family.as_str(),
            ma.n_blocks,
            ma.d_emb,
            ma.d_mlp,
            ma.vocab,
            ma.n_heads,
            mb.family.as_str(),
            mb.n_blocks,
            mb.d_emb,
            mb.d_mlp,
            mb.vocab,
            mb.n_heads
        )));
    }
    Ok(())
}

/// Which weight symmetries the permutation test draws from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformClass {
    /// Residual-stream permutations composed with per-block hidden-unit
    /// permutations (the former only for transformers).
    #[default]
    Full,
    /// Hidden-unit permutations only.
    MlpOnly,
}

/// Draws a random element of the class and applies it.
pub fn random_symmetry(model: &ModelBundle, class: TransformClass, r: &mut rng::Rng) -> Result<ModelBundle> {
    let m = model.manifest();
    let perms: Vec<Permutation> = (0..m.n_blocks).map(|_| Permutation::random(m.d_mlp, r)).collect();
    let out = apply_pi_mlp(model, &perms)?;
    if class == TransformClass::Full && m.family == Family::GluTransformer {
        apply_pi_emb(&out, &Permutation::random(m.d_emb, r))
    } else {
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermTestOutcome {
    pub p: LogPValue,
    pub statistic: f64,
    pub n_greater: usize,
    pub n_ties: usize,
    pub tie_draw: usize,
    pub trials: usize,
}

/// Permutation test: compares `phi(θ1, θ2)` with `phi(π_t(θ1), θ2)` for `T`
/// random symmetries `π_t`, giving
/// `p = (1 + ξ + #{φ_t > φ}) / (T + 1)` with `ξ` uniform over the tie count.
pub fn permtest<F>(
    theta1: &ModelBundle,
    theta2: &ModelBundle,
    phi: F,
    trials: usize,
    seed: u64,
    class: TransformClass,
) -> Result<PermTestOutcome>
where
    F: Fn(&ModelBundle, &ModelBundle) -> Result<f64> + Sync,
{
    require_same_architecture(theta1, theta2)?;
    if trials == 0 {
        return Err(Error::Parameter("permutation test needs T >= 1".into()));
    }
    let observed = phi(theta1, theta2)?;
    let null: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, "permtest", t as u64);
            phi(&random_symmetry(theta1, class, &mut r)?, theta2)
        })
        .collect::<Result<_>>()?;
    let n_greater = null.iter().filter(|&&v| v > observed).count();
    let n_ties = null.iter().filter(|&&v| v == observed).count();
    let tie_draw = rng::stream(seed, "permtest-ties", 0).gen_range(0..=n_ties);
    let p = (1 + tie_draw + n_greater) as f64 / (trials + 1) as f64;
    Ok(PermTestOutcome {
        p: LogPValue::from_p(p),
        statistic: observed,
        n_greater,
        n_ties,
        tie_draw,
        trials,
    })
}

/// Negative sum over all role tensors of the Euclidean distance.
pub fn phi_l2(theta1: &ModelBundle, theta2: &ModelBundle) -> Result<f64> {
    require_same_architecture(theta1, theta2)?;
    let mut total = 0.0;
    for (role, _) in theta1.manifest().required_roles() {
        let a = theta1.tensor(&role)?.to_f64_vec();
        let b = theta2.tensor(&role)?.to_f64_vec();
        total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    Ok(-total)
}

/// Rank test of a square matching against the identity.
fn identity_rank_test(m: &Matching) -> Result<LogPValue> {
    let id: Vec<usize> = (0..m.map.len()).collect();
    spearman_pvalue(&m.map, &id)
}

/// Matches up-projection rows and tests the matching against the identity.
pub fn phi_u_block(theta1: &ModelBundle, theta2: &ModelBundle, block: usize) -> Result<LogPValue> {
    let role = format!("up_proj.{block}");
    let u1 = theta1.matrix::<f64>(&role)?;
    let u2 = theta2.matrix::<f64>(&role)?;
    if u1.shape() != u2.shape() {
        return Err(Error::Incompatible(format!(
            "`{role}` shapes differ: {:?} vs {:?}",
            u1.shape(),
            u2.shape()
        )));
    }
    identity_rank_test(&match_rows(&u1, &u2)?)
}

pub fn phi_u(theta1: &ModelBundle, theta2: &ModelBundle) -> Result<Vec<LogPValue>> {
    let l = block_count(theta1, theta2)?;
    (0..l).map(|i| phi_u_block(theta1, theta2, i)).collect()
}

fn block_count(a: &ModelBundle, b: &ModelBundle) -> Result<usize> {
    let (la, lb) = (a.manifest().n_blocks, b.manifest().n_blocks);
    if la != lb {
        return Err(Error::Incompatible(format!("block counts differ: {la} vs {lb}")));
    }
    Ok(la)
}

fn traces(theta1: &ModelBundle, theta2: &ModelBundle, probe: &Probe) -> Result<(ActivationTrace, ActivationTrace)> {
    let (a, b) = rayon::join(|| activation_trace(theta1, probe), || activation_trace(theta2, probe));
    Ok((a?, b?))
}

/// Matches hidden-activation rows of one block and tests against the identity.
pub fn phi_h_from_traces(t1: &BlockTrace, t2: &BlockTrace) -> Result<LogPValue> {
    let (h1, h2) = (t1.hidden(Activation::Silu), t2.hidden(Activation::Silu));
    if h1.rows() != h2.rows() {
        return Err(Error::Incompatible(format!(
            "hidden widths differ: {} vs {}",
            h1.rows(),
            h2.rows()
        )));
    }
    identity_rank_test(&match_rows(&h1, &h2)?)
}

pub fn phi_h_block(theta1: &ModelBundle, theta2: &ModelBundle, probe: &Probe, block: usize) -> Result<LogPValue> {
    let (a, b) = traces(theta1, theta2, probe)?;
    let (ta, tb) = (trace_block(&a, block)?, trace_block(&b, block)?);
    phi_h_from_traces(ta, tb)
}

pub fn phi_h(theta1: &ModelBundle, theta2: &ModelBundle, probe: &Probe) -> Result<Vec<LogPValue>> {
    let l = block_count(theta1, theta2)?;
    let (a, b) = traces(theta1, theta2, probe)?;
    (0..l).map(|i| phi_h_from_traces(&a.blocks[i], &b.blocks[i])).collect()
}

fn trace_block(t: &ActivationTrace, i: usize) -> Result<&BlockTrace> {
    t.blocks
        .get(i)
        .ok_or_else(|| Error::Dimension(format!("block {i} out of range ({} blocks)", t.blocks.len())))
}

/// Fisher combination of per-block p-values.
pub fn aggregate_blocks(per_block: &[LogPValue]) -> Result<LogPValue> {
    fisher_aggregate(per_block)
}

/// Result of correlating the gate and up matchings of one block pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub p: LogPValue,
    pub gate: Matching,
    pub up: Matching,
}

/// Rank test of two matchings of equal orientation. With unequal widths the
/// matched indices on the larger side are rank-transformed over the smaller side.
pub fn matching_agreement(gate: &Matching, up: &Matching) -> Result<LogPValue> {
    if gate.map.len() != up.map.len() || gate.rows != up.rows || gate.cols != up.cols {
        return Err(Error::Dimension("gate and up matchings have different shapes".into()));
    }
    if gate.rows == gate.cols {
        spearman_pvalue(&gate.map, &up.map)
    } else {
        spearman_pvalue(&ranks(&gate.map), &ranks(&up.map))
    }
}

/// Matches gate pre-activations and up pre-activations separately, then tests
/// whether the two matchings agree.
pub fn phi_match_from_traces(t1: &BlockTrace, t2: &BlockTrace) -> Result<MatchOutcome> {
    if t1.gate_out.cols() != t2.gate_out.cols() {
        return Err(Error::Incompatible("traces were taken on different inputs".into()));
    }
    let gate = match_rows(&t1.gate_out, &t2.gate_out)?;
    let up = match_rows(&t1.up_out, &t2.up_out)?;
    Ok(MatchOutcome {
        p: matching_agreement(&gate, &up)?,
        gate,
        up,
    })
}

pub fn phi_match_block(
    theta1: &ModelBundle,
    theta2: &ModelBundle,
    probe: &Probe,
    block_pair: (usize, usize),
) -> Result<MatchOutcome> {
    let (a, b) = traces(theta1, theta2, probe)?;
    phi_match_from_traces(trace_block(&a, block_pair.0)?, trace_block(&b, block_pair.1)?)
}

/// `phi_match_block` on every aligned block pair `(i, i)`.
pub fn phi_match(theta1: &ModelBundle, theta2: &ModelBundle, probe: &Probe) -> Result<Vec<MatchOutcome>> {
    let l = block_count(theta1, theta2)?;
    let (a, b) = traces(theta1, theta2, probe)?;
    (0..l)
        .into_par_iter()
        .map(|i| phi_match_from_traces(&a.blocks[i], &b.blocks[i]))
        .collect()
}

/// The same statistic on two GLU MLPs given input rows `x`.
pub fn phi_match_params(p1: &crate::model::GluMlpParams<f64>, p2: &crate::model::GluMlpParams<f64>, x: &Matrix<f64>) -> Result<MatchOutcome> {
    let trace = |p: &crate::model::GluMlpParams<f64>| -> Result<BlockTrace> {
        let (g, u) = p.projections(x)?;
        Ok(BlockTrace {
            mlp_input: x.clone(),
            gate_out: g.transpose(),
            up_out: u.transpose(),
        })
    };
    phi_match_from_traces(&trace(p1)?, &trace(p2)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    pub i: usize,
    pub j: usize,
    pub p: LogPValue,
    /// `(unit of θ1, unit of θ2)` pairs from the gate matching.
    pub unit_map: Vec<(usize, usize)>,
}

/// Evaluates every block pair `(i, j)` and keeps those with `p <= threshold`.
pub fn localize_blocks(
    theta1: &ModelBundle,
    theta2: &ModelBundle,
    probe: &Probe,
    threshold: f64,
) -> Result<Vec<BlockMatch>> {
    let (a, b) = traces(theta1, theta2, probe)?;
    let pairs: Vec<(usize, usize)> = (0..a.blocks.len())
        .flat_map(|i| (0..b.blocks.len()).map(move |j| (i, j)))
        .collect();
    let all: Vec<BlockMatch> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let m = phi_match_from_traces(&a.blocks[i], &b.blocks[j])?;
            Ok(BlockMatch {
                i,
                j,
                p: m.p,
                unit_map: m.gate.pairs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(all.into_iter().filter(|m| m.p.at_most(threshold)).collect())
}

/// Settings for the distilled (architecture-independent) test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedConfig {
    /// Width of the fitted GLU MLPs; defaults to twice the source width.
    pub hidden: Option<usize>,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Start both fits from the same initialization. Otherwise each fit gets
    /// its own initialization and only the input stream is shared.
    pub shared_init: bool,
    /// Near-zero initialization keeps the fits from remembering their start.
    pub init_scale: f64,
    pub eval_inputs: usize,
    pub eval_seed: u64,
    /// Fits with held-out MSE above this relative level raise a warning.
    pub max_relative_loss: f64,
}

impl Default for GeneralizedConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            train: TrainConfig {
                learning_rate: 3e-3,
                steps: 2000,
                batch_size: 64,
                ..TrainConfig::default()
            },
            init_seed: 0x9e37,
            shared_init: true,
            init_scale: 1e-3,
            eval_inputs: 256,
            eval_seed: 9,
            max_relative_loss: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedOutcome {
    pub per_block: Vec<LogPValue>,
    pub aggregate: LogPValue,
    /// Held-out MSE of each fit, `(θ1, θ2)` per block.
    pub fit_losses: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

fn output_power(block: &MlpBlock<f64>, x: &Matrix<f64>) -> Result<f64> {
    let y = block.forward(x)?;
    Ok(y.as_slice().iter().map(|v| v * v).sum::<f64>() / y.as_slice().len().max(1) as f64)
}

/// Fits a GLU MLP to each block of both models on Gaussian inputs and applies
/// the gate/up matching statistic to the fits.
pub fn generalized_test(theta1: &ModelBundle, theta2: &ModelBundle, cfg: &GeneralizedConfig) -> Result<GeneralizedOutcome> {
    let (b1, b2) = (mlp_blocks(theta1)?, mlp_blocks(theta2)?);
    if b1.len() != b2.len() {
        return Err(Error::Incompatible(format!("block counts differ: {} vs {}", b1.len(), b2.len())));
    }
    let results: Vec<(LogPValue, (f64, f64), Vec<String>)> = b1
        .par_iter()
        .zip(b2.par_iter())
        .enumerate()
        .map(|(i, (s1, s2))| {
            if s1.dim() != s2.dim() {
                return Err(Error::Incompatible(format!(
                    "block {i}: input widths differ ({} vs {})",
                    s1.dim(),
                    s2.dim()
                )));
            }
            let h = cfg.hidden.unwrap_or(2 * s1.hidden());
            let init = rng::derive_seed(cfg.init_seed, "generalized-init", i as u64);
            let train = TrainConfig {
                seed: rng::derive_seed(cfg.train.seed, "generalized-data", i as u64),
                ..cfg.train.clone()
            };
            let (f1, l1) = distill_glu(s1, h, &train, init, cfg.init_scale)?;
            let init2 = if cfg.shared_init {
                init
            } else {
                rng::derive_seed(init, "second-fit", 0)
            };
            let (f2, l2) = distill_glu(s2, h, &train, init2, cfg.init_scale)?;
            let x = gaussian_inputs(cfg.eval_inputs, s1.dim(), rng::derive_seed(cfg.eval_seed, "generalized-eval", i as u64));
            let mut warnings = Vec::new();
            for (k, (src, loss)) in [(s1, l1), (s2, l2)].into_iter().enumerate() {
                let power = output_power(src, &x)?;
                if loss > cfg.max_relative_loss * power.max(f64::MIN_POSITIVE) {
                    warnings.push(format!(
                        "block {i}: fit to model {} has MSE {loss:.3e} against output power {power:.3e}",
                        k + 1
                    ));
                }
            }
            Ok((phi_match_params(&f1, &f2, &x)?.p, (l1, l2), warnings))
        })
        .collect::<Result<_>>()?;
    let per_block: Vec<LogPValue> = results.iter().map(|r| r.0).collect();
    Ok(GeneralizedOutcome {
        aggregate: fisher_aggregate(&per_block)?,
        per_block,
        fit_losses: results.iter().map(|r| r.1).collect(),
        warnings: results.into_iter().flat_map(|r| r.2).collect(),
    })
}

/// Jensen-Shannon divergence (natural log) of two distributions.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

/// Mean Jensen-Shannon divergence of next-token distributions over all positions.
pub fn jsd_baseline(theta1: &ModelBundle, theta2: &ModelBundle, batch: &TokenBatch) -> Result<f64> {
    let (v1, v2) = (theta1.manifest().vocab, theta2.manifest().vocab);
    if v1 != v2 {
        return Err(Error::Incompatible(format!("vocabularies differ: {v1} vs {v2}")));
    }
    let (p, q) = (next_token_distribution(theta1, batch)?, next_token_distribution(theta2, batch)?);
    let mut total = 0.0;
    let mut n = 0usize;
    for (a, b) in p.iter().zip(&q) {
        for r in 0..a.rows() {
            total += jsd(a.row(r), b.row(r));
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

fn cosine_flat(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    let n = a.frobenius_norm() * b.frobenius_norm();
    if n == 0.0 {
        0.0
    } else {
        dot / n
    }
}

/// Similarities of the weight-product invariants `E W_Qᵀ W_K Eᵀ`,
/// `E W_Vᵀ W_Oᵀ Eᵀ` and `E Gᵀ Dᵀ Eᵀ` of one block, on up to `max_rows`
/// embedding rows shared by both models.
pub fn huref_invariants(
    theta1: &ModelBundle,
    theta2: &ModelBundle,
    block: usize,
    max_rows: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let (t1, t2) = (Transformer::<f64>::from_bundle(theta1)?, Transformer::<f64>::from_bundle(theta2)?);
    if t1.vocab() != t2.vocab() || block >= t1.blocks.len() || block >= t2.blocks.len() {
        return Err(Error::Incompatible("models differ in vocabulary or block count".into()));
    }
    let v = t1.vocab();
    let rows: Vec<usize> = if v <= max_rows {
        (0..v).collect()
    } else {
        let mut idx = sample(&mut rng::stream(seed, "huref-rows", 0), v, max_rows).into_vec();
        idx.sort_unstable();
        idx
    };
    let inv = |t: &Transformer<f64>| -> Result<[Matrix<f64>; 3]> {
        let e = t.embedding.gather_rows(&rows);
        let b = &t.blocks[block];
        Ok([
            e.matmul_t(&b.w_q)?.matmul(&b.w_k)?.matmul_t(&e)?,
            e.matmul_t(&b.w_v)?.matmul_t(&b.w_o)?.matmul_t(&e)?,
            e.matmul_t(&b.mlp.gate)?.matmul_t(&b.mlp.down)?.matmul_t(&e)?,
        ])
    };
    let (a, b) = (inv(&t1)?, inv(&t2)?);
    Ok((cosine_flat(&a[0], &b[0]), cosine_flat(&a[1], &b[1]), cosine_flat(&a[2], &b[2])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        // ½ ln(4/3) + ¼ ln(2/3) + ¼ ln 2
        let expected = 0.5 * (4.0f64 / 3.0).ln() + 0.25 * (2.0f64 / 3.0).ln() + 0.25 * 2f64.ln();
        let got = jsd(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.21576).abs() < 1e-5);
    }

    #[test]
    fn unequal_width_agreement_uses_ranks() {
        let gate = Matching {
            rows: 3,
            cols: 6,
            map: vec![5, 1, 3],
            value: 0.0,
        };
        let same = matching_agreement(&gate, &gate.clone()).unwrap();
        assert!(same.is_exact_max());
        let other = Matching {
            map: vec![0, 4, 2],
            ..gate.clone()
        };
        assert!(matching_agreement(&gate, &other).unwrap().ln_p() > -1.0);
    }
}
