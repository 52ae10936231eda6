//! Monte Carlo suites on toy models: null calibration, power against
//! fine-tuned copies, and robustness to output-preserving camouflage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::independence::{
    aggregate_blocks, huref_invariants, permtest, phi_h, phi_l2, phi_match, phi_u, TransformClass,
};
use crate::model::{random_token_batch, Probe};
use crate::rng::derive_seed;
use crate::stats::{chi_square_uniform, ks_critical_value, ks_uniform, median, pearson, LogPValue};
use crate::tensor_store::{ArchManifest, Family, ModelBundle};
use crate::trainer::{init_model, make_dependent_pair, make_null_pair, train_blocks, Adversary, TrainConfig};
use crate::transforms::TransformKind;

/// Toy settings shared by the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub arch: ArchManifest,
    /// Base training of every toy model (per-block regression).
    pub base: TrainConfig,
    /// Fine-tunes run for `k` times the base budget, `k` cycling through this list.
    pub finetune_multipliers: Vec<usize>,
    /// Fine-tuning learning rate relative to the base learning rate.
    pub finetune_lr_scale: f64,
    /// Token probe: `(sequences, length)`.
    pub tokens: (usize, usize),
    /// Permutations per permutation test in the null suite.
    pub permutations: usize,
    pub alpha: f64,
    pub power_threshold: f64,
    pub power_rate: f64,
    pub median_floor: f64,
    pub huref_arch: ArchManifest,
    pub huref_ceiling: f64,
    /// Informational: same-width retraining of block 0 before camouflage.
    pub retrain: Option<TrainConfig>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            arch: ArchManifest::with_default_roles(Family::GluTransformer, 2, 16, 32, 64, 2),
            base: TrainConfig {
                steps: 200,
                batch_size: 64,
                ..TrainConfig::default()
            },
            finetune_multipliers: (1..=10).collect(),
            finetune_lr_scale: 0.1,
            tokens: (4, 16),
            permutations: 19,
            alpha: 0.01,
            power_threshold: 1e-6,
            power_rate: 0.95,
            median_floor: 0.2,
            huref_arch: ArchManifest::with_default_roles(Family::GluTransformer, 2, 64, 128, 256, 4),
            huref_ceiling: 0.3,
            retrain: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    NullUniformity,
    Power,
    Robustness,
}

/// KS comparison of p-values against Uniform(0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityCheck {
    pub p_values: Vec<f64>,
    pub ks: f64,
    pub critical: f64,
    pub passed: bool,
}

impl UniformityCheck {
    pub fn new(p_values: Vec<f64>, alpha: f64) -> Self {
        let ks = ks_uniform(&p_values);
        let critical = ks_critical_value(p_values.len(), alpha);
        Self {
            passed: ks <= critical,
            p_values,
            ks,
            critical,
        }
    }
}

/// Chi-square comparison of permutation-test p-values against the uniform
/// distribution on `{1/(T+1), ..., 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteUniformityCheck {
    pub permutations: usize,
    pub p_values: Vec<f64>,
    pub counts: Vec<usize>,
    pub chi_square: f64,
    pub chi_square_p: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub permtest: DiscreteUniformityCheck,
    pub phi_u: UniformityCheck,
    pub phi_u_aggregate: UniformityCheck,
    pub phi_h: UniformityCheck,
    pub phi_h_aggregate: UniformityCheck,
    /// Pearson correlation of block-0 and block-1 φ_U p-values.
    pub cross_block_correlation: Option<f64>,
}

/// Fraction of trials whose p-value is at most the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub log10_p: Vec<f64>,
    pub threshold: f64,
    pub rate: f64,
    pub required: f64,
    pub passed: bool,
}

impl RateCheck {
    pub fn new(ps: &[LogPValue], threshold: f64, required: f64) -> Self {
        let hits = ps.iter().filter(|p| p.at_most(threshold)).count();
        let rate = hits as f64 / ps.len().max(1) as f64;
        Self {
            log10_p: ps.iter().map(|p| p.log10_p()).collect(),
            threshold,
            rate,
            required,
            passed: !ps.is_empty() && rate >= required,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub multipliers: Vec<usize>,
    pub phi_u: RateCheck,
    pub phi_h: RateCheck,
    pub phi_match: RateCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub phi_match: RateCheck,
    pub phi_u_p: Vec<f64>,
    pub phi_u_median: f64,
    pub phi_u_passed: bool,
    /// Per trial, the mean over blocks of `|cos|` for `M_a`, `M_b`, `M_f`.
    pub huref: Vec<[f64; 3]>,
    pub huref_median: [f64; 3],
    pub huref_max: [f64; 3],
    pub huref_passed: bool,
    /// Informational only: φ_MATCH on a retrained block after camouflage.
    pub retrained_block_match: Option<RateCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "suite", rename_all = "kebab-case")]
pub enum SuiteSummary {
    NullUniformity(NullSummary),
    Power(PowerSummary),
    Robustness(RobustnessSummary),
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        match self {
            Self::NullUniformity(s) => {
                s.permtest.passed
                    && s.phi_u.passed
                    && s.phi_u_aggregate.passed
                    && s.phi_h.passed
                    && s.phi_h_aggregate.passed
            }
            Self::Power(s) => s.phi_u.passed && s.phi_h.passed && s.phi_match.passed,
            Self::Robustness(s) => s.phi_match.passed && s.phi_u_passed && s.huref_passed,
        }
    }
}

pub fn run_suite(suite: Suite, cfg: &SuiteConfig, trials: usize, seed: u64) -> Result<SuiteSummary> {
    Ok(match suite {
        Suite::NullUniformity => SuiteSummary::NullUniformity(null_uniformity(cfg, trials, seed)?),
        Suite::Power => SuiteSummary::Power(power(cfg, trials, seed)?),
        Suite::Robustness => SuiteSummary::Robustness(robustness(cfg, trials, seed)?),
    })
}

fn token_probe(cfg: &SuiteConfig, seed: u64) -> Probe {
    Probe::Tokens(random_token_batch(cfg.arch.vocab, cfg.tokens.0, cfg.tokens.1, seed))
}

/// Permutation tests of `φ_ℓ2` between independently initialized models.
pub fn null_permtest(cfg: &SuiteConfig, trials: usize, seed: u64) -> Result<DiscreteUniformityCheck> {
    let t = cfg.permutations;
    let p_values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, "null-permtest", k as u64);
            let a = init_model(&cfg.arch, derive_seed(s, "init", 0))?;
            let b = init_model(&cfg.arch, derive_seed(s, "init", 1))?;
            Ok(permtest(&a, &b, phi_l2, t, derive_seed(s, "perm", 0), TransformClass::Full)?.p.p())
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; t + 1];
    for p in &p_values {
        let i = (p * (t + 1) as f64).round() as usize;
        counts[i.clamp(1, t + 1) - 1] += 1;
    }
    let (chi_square, chi_square_p) = chi_square_uniform(&counts);
    Ok(DiscreteUniformityCheck {
        permutations: t,
        passed: chi_square_p >= cfg.alpha,
        p_values,
        counts,
        chi_square,
        chi_square_p,
    })
}

fn null_pair(cfg: &SuiteConfig, s: u64) -> Result<(ModelBundle, ModelBundle)> {
    make_null_pair(
        &cfg.arch,
        derive_seed(s, "data", 0),
        (derive_seed(s, "init", 0), derive_seed(s, "init", 1)),
        &TrainConfig {
            seed: derive_seed(s, "stream", 0),
            ..cfg.base.clone()
        },
    )
}

pub fn null_uniformity(cfg: &SuiteConfig, trials: usize, seed: u64) -> Result<NullSummary> {
    let permtest = null_permtest(cfg, trials, seed)?;
    let rows: Vec<(Vec<f64>, f64, Vec<f64>, f64)> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, "null-pair", k as u64);
            let (a, b) = null_pair(cfg, s)?;
            let u = phi_u(&a, &b)?;
            let h = phi_h(&a, &b, &token_probe(cfg, derive_seed(s, "tokens", 0)))?;
            Ok((
                u.iter().map(|p| p.p()).collect(),
                aggregate_blocks(&u)?.p(),
                h.iter().map(|p| p.p()).collect(),
                aggregate_blocks(&h)?.p(),
            ))
        })
        .collect::<Result<_>>()?;
    let flat = |f: fn(&(Vec<f64>, f64, Vec<f64>, f64)) -> &Vec<f64>| -> Vec<f64> {
        rows.iter().flat_map(|r| f(r).iter().copied()).collect()
    };
    let cross = (cfg.arch.n_blocks >= 2 && trials >= 3).then(|| {
        let b0: Vec<f64> = rows.iter().map(|r| r.0[0]).collect();
        let b1: Vec<f64> = rows.iter().map(|r| r.0[1]).collect();
        pearson(&b0, &b1)
    });
    Ok(NullSummary {
        permtest,
        phi_u: UniformityCheck::new(flat(|r| &r.0), cfg.alpha),
        phi_u_aggregate: UniformityCheck::new(rows.iter().map(|r| r.1).collect(), cfg.alpha),
        phi_h: UniformityCheck::new(flat(|r| &r.2), cfg.alpha),
        phi_h_aggregate: UniformityCheck::new(rows.iter().map(|r| r.3).collect(), cfg.alpha),
        cross_block_correlation: cross,
    })
}

/// A trained base model and a fine-tuned descendant, optionally camouflaged.
pub fn dependent_pair(
    cfg: &SuiteConfig,
    trial: usize,
    seed: u64,
    adversary: Option<&Adversary>,
) -> Result<(ModelBundle, ModelBundle, usize)> {
    let s = derive_seed(seed, "dependent", trial as u64);
    let base_cfg = TrainConfig {
        seed: derive_seed(s, "stream", 0),
        ..cfg.base.clone()
    };
    let base = train_blocks(&init_model(&cfg.arch, derive_seed(s, "init", 0))?, derive_seed(s, "data", 0), &base_cfg)?;
    let k = cfg.finetune_multipliers[trial % cfg.finetune_multipliers.len().max(1)];
    let ft_cfg = TrainConfig {
        steps: cfg.base.steps * k,
        learning_rate: cfg.base.learning_rate * cfg.finetune_lr_scale,
        seed: derive_seed(s, "stream", 1),
        ..cfg.base.clone()
    };
    let child = make_dependent_pair(&base, derive_seed(s, "data", 1), &ft_cfg, adversary)?;
    Ok((base, child, k))
}

pub fn power(cfg: &SuiteConfig, trials: usize, seed: u64) -> Result<PowerSummary> {
    let rows: Vec<(usize, [LogPValue; 3])> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (a, b, k) = dependent_pair(cfg, t, seed, None)?;
            let probe = token_probe(cfg, derive_seed(seed, "power-tokens", t as u64));
            let m: Vec<LogPValue> = phi_match(&a, &b, &probe)?.into_iter().map(|o| o.p).collect();
            Ok((
                k,
                [
                    aggregate_blocks(&phi_u(&a, &b)?)?,
                    aggregate_blocks(&phi_h(&a, &b, &probe)?)?,
                    aggregate_blocks(&m)?,
                ],
            ))
        })
        .collect::<Result<_>>()?;
    let col = |i: usize| -> Vec<LogPValue> { rows.iter().map(|r| r.1[i]).collect() };
    Ok(PowerSummary {
        multipliers: rows.iter().map(|r| r.0).collect(),
        phi_u: RateCheck::new(&col(0), cfg.power_threshold, cfg.power_rate),
        phi_h: RateCheck::new(&col(1), cfg.power_threshold, cfg.power_rate),
        phi_match: RateCheck::new(&col(2), cfg.power_threshold, cfg.power_rate),
    })
}

pub fn robustness(cfg: &SuiteConfig, trials: usize, seed: u64) -> Result<RobustnessSummary> {
    let rows: Vec<(LogPValue, LogPValue, [f64; 3], Option<LogPValue>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let camo = Adversary {
                retrain_blocks: Vec::new(),
                retrain: None,
                camouflage: Some((TransformKind::Both, derive_seed(seed, "camouflage", t as u64))),
            };
            let (a, b, _) = dependent_pair(cfg, t, seed, Some(&camo))?;
            let probe = token_probe(cfg, derive_seed(seed, "robust-tokens", t as u64));
            let m: Vec<LogPValue> = phi_match(&a, &b, &probe)?.into_iter().map(|o| o.p).collect();

            let huref = huref_trial(cfg, t, seed)?;

            let retrained = match &cfg.retrain {
                Some(rc) => {
                    let adv = Adversary {
                        retrain_blocks: vec![0],
                        retrain: Some(rc.clone()),
                        ..camo.clone()
                    };
                    let (a, b, _) = dependent_pair(cfg, t, seed, Some(&adv))?;
                    Some(phi_match(&a, &b, &probe)?[0].p)
                }
                None => None,
            };
            Ok((aggregate_blocks(&m)?, aggregate_blocks(&phi_u(&a, &b)?)?, huref, retrained))
        })
        .collect::<Result<_>>()?;
    let phi_u_p: Vec<f64> = rows.iter().map(|r| r.1.p()).collect();
    let huref: Vec<[f64; 3]> = rows.iter().map(|r| r.2).collect();
    let mut huref_max = [0.0f64; 3];
    let mut huref_median = [0.0f64; 3];
    for k in 0..3 {
        let col: Vec<f64> = huref.iter().map(|h| h[k]).collect();
        huref_max[k] = col.iter().copied().fold(0.0, f64::max);
        huref_median[k] = median(&col);
    }
    let phi_u_median = median(&phi_u_p);
    let retrained: Vec<LogPValue> = rows.iter().filter_map(|r| r.3).collect();
    Ok(RobustnessSummary {
        phi_match: RateCheck::new(&rows.iter().map(|r| r.0).collect::<Vec<_>>(), cfg.power_threshold, cfg.power_rate),
        phi_u_passed: phi_u_median >= cfg.median_floor,
        phi_u_p,
        phi_u_median,
        huref_passed: !huref.is_empty() && huref_median.iter().all(|&v| v < cfg.huref_ceiling),
        huref,
        huref_median,
        huref_max,
        retrained_block_match: (!retrained.is_empty())
            .then(|| RateCheck::new(&retrained, cfg.power_threshold, cfg.power_rate)),
    })
}

/// HuREF similarities between a model on the larger toy architecture and its
/// camouflaged copy, averaged over blocks.
fn huref_trial(cfg: &SuiteConfig, t: usize, seed: u64) -> Result<[f64; 3]> {
    let s = derive_seed(seed, "huref", t as u64);
    let base = init_model(&cfg.huref_arch, derive_seed(s, "init", 0))?;
    let camo = crate::transforms::TransformSpec::for_model(&base, TransformKind::Both, derive_seed(s, "camouflage", 0))
        .apply(&base)?;
    let mut mean = [0.0f64; 3];
    let l = cfg.huref_arch.n_blocks as f64;
    for i in 0..cfg.huref_arch.n_blocks {
        let (a, b, f) = huref_invariants(&base, &camo, i, 512, derive_seed(s, "rows", 0))?;
        for (m, v) in mean.iter_mut().zip([a, b, f]) {
            *m += v.abs() / l;
        }
    }
    Ok(mean)
}
