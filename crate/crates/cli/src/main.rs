use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use weightprov::independence::{
    aggregate_blocks, generalized_test, huref_invariants, jsd_baseline, localize_blocks, permtest, phi_h, phi_l2,
    phi_match, phi_u, GeneralizedConfig, TransformClass,
};
use weightprov::model::{gaussian_inputs, random_token_batch, Probe, TokenBatch};
use weightprov::report::{ReportDocument, TestResult, TransformReport};
use weightprov::rng::derive_seed;
use weightprov::simulate::{run_suite, Suite, SuiteConfig};
use weightprov::tensor_store::{load_model, write_container};
use weightprov::transforms::{max_output_diff, TransformKind, TransformSpec};
use weightprov::{Error, Family, ModelBundle};

const EXIT_INPUT: u8 = 2;
const EXIT_INCOMPATIBLE: u8 = 3;
const EXIT_SELF_CHECK: u8 = 4;
const SELF_CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "weightprov", version, about = "Test whether two models share a common initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one independence test on a pair of models.
    Test {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, value_enum)]
        stat: Stat,
        /// Permutations for the permutation test.
        #[arg(long = "T", default_value_t = 99)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Token probe as `sequences,length`.
        #[arg(long, default_value = "4,64", value_parser = parse_tokens)]
        tokens: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find matching block pairs and their hidden-unit maps.
    Localize {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "4,64", value_parser = parse_tokens)]
        tokens: (usize, usize),
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply an output-preserving transformation to a model.
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output container; the manifest and report are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo suite on toy models.
    Simulate {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct PairArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    manifest_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[arg(long)]
    manifest_b: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Stat {
    L2,
    U,
    H,
    Match,
    Jsd,
    Huref,
    General,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Permute,
    Rotate,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    NullUniformity,
    Power,
    Robustness,
}

fn parse_tokens(s: &str) -> Result<(usize, usize), String> {
    let (n, len) = s.split_once(',').ok_or("expected `sequences,length`")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    let (n, len) = (parse(n)?, parse(len)?);
    if n == 0 || len == 0 {
        return Err("sequence count and length must be positive".into());
    }
    Ok((n, len))
}

fn load(model: &Path, manifest: &Path) -> Result<ModelBundle> {
    load_model(model, manifest).with_context(|| format!("loading {} with {}", model.display(), manifest.display()))
}

/// Tokens for transformers, Gaussian inputs of the same count for MLP families.
fn probe_for(model: &ModelBundle, tokens: (usize, usize), seed: u64) -> Probe {
    let m = model.manifest();
    let seed = derive_seed(seed, "probe", 0);
    match m.family {
        Family::GluTransformer => Probe::Tokens(random_token_batch(m.vocab, tokens.0, tokens.1, seed)),
        _ => Probe::Inputs(gaussian_inputs(tokens.0 * tokens.1, m.d_emb, seed)),
    }
}

fn write_report(doc: &mut ReportDocument, start: Instant, out: Option<&Path>) -> Result<()> {
    doc.timing.elapsed_seconds = start.elapsed().as_secs_f64();
    let text = doc.to_json()?;
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_test(
    pair: &PairArgs,
    stat: Stat,
    permutations: usize,
    seed: u64,
    tokens: (usize, usize),
) -> Result<TestResult> {
    let a = load(&pair.model_a, &pair.manifest_a)?;
    let b = load(&pair.model_b, &pair.manifest_b)?;
    let config = json!({ "T": permutations, "seed": seed, "tokens": [tokens.0, tokens.1] });
    let result = match stat {
        Stat::L2 => {
            let class = match a.manifest().family {
                Family::GluTransformer => TransformClass::Full,
                _ => TransformClass::MlpOnly,
            };
            let outcome = permtest(&a, &b, phi_l2, permutations, seed, class)?;
            let mut r = TestResult::new("l2", json!({ "T": permutations, "seed": seed, "class": class }))
                .with_aggregate(outcome.p);
            r.value = Some(outcome.statistic);
            r.permtest = Some(outcome);
            r
        }
        Stat::U => {
            let ps = phi_u(&a, &b)?;
            TestResult::new("u", json!({})).with_blocks(&ps).with_aggregate(aggregate_blocks(&ps)?)
        }
        Stat::H => {
            let ps = phi_h(&a, &b, &probe_for(&a, tokens, seed))?;
            TestResult::new("h", config).with_blocks(&ps).with_aggregate(aggregate_blocks(&ps)?)
        }
        Stat::Match => {
            let outcomes = phi_match(&a, &b, &probe_for(&a, tokens, seed))?;
            let ps: Vec<_> = outcomes.iter().map(|o| o.p).collect();
            let mut r = TestResult::new("match", config).with_blocks(&ps).with_aggregate(aggregate_blocks(&ps)?);
            for (block, o) in r.per_block.iter_mut().zip(&outcomes) {
                block.unit_map = Some(o.gate.pairs());
            }
            r
        }
        Stat::Jsd => {
            let v = a.manifest().vocab;
            let batch: TokenBatch = random_token_batch(v, tokens.0, tokens.1, derive_seed(seed, "probe", 0));
            let mut r = TestResult::new("jsd", config);
            r.value = Some(jsd_baseline(&a, &b, &batch)?);
            r
        }
        Stat::Huref => {
            let mut r = TestResult::new("huref", json!({ "rows": 512, "seed": seed }));
            for i in 0..a.manifest().n_blocks.min(b.manifest().n_blocks) {
                let (ma, mb, mf) = huref_invariants(&a, &b, i, 512, seed)?;
                r.values.extend([ma, mb, mf]);
            }
            r
        }
        Stat::General => {
            let cfg = GeneralizedConfig {
                init_seed: derive_seed(seed, "init", 0),
                eval_seed: derive_seed(seed, "eval", 0),
                ..GeneralizedConfig::default()
            };
            let outcome = generalized_test(&a, &b, &cfg)?;
            TestResult::from_generalized(&outcome, serde_json::to_value(&cfg)?)
        }
    };
    Ok(result)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let start = Instant::now();
    let version = env!("CARGO_PKG_VERSION");
    match cli.command {
        Command::Test {
            pair,
            stat,
            permutations,
            seed,
            tokens,
            out,
        } => {
            let mut doc = ReportDocument::new(
                version,
                json!({ "command": "test", "stat": format!("{stat:?}").to_lowercase(), "T": permutations, "seed": seed,
                        "tokens": [tokens.0, tokens.1], "model_a": pair.model_a, "model_b": pair.model_b }),
            );
            doc.push(cmd_test(&pair, stat, permutations, seed, tokens)?);
            write_report(&mut doc, start, out.as_deref())?;
        }
        Command::Localize {
            pair,
            threshold,
            seed,
            tokens,
            out,
        } => {
            if !(threshold > 0.0 && threshold <= 1.0) {
                bail!(Error::Parameter(format!("threshold must lie in (0, 1], got {threshold}")));
            }
            let a = load(&pair.model_a, &pair.manifest_a)?;
            let b = load(&pair.model_b, &pair.manifest_b)?;
            let matches = localize_blocks(&a, &b, &probe_for(&a, tokens, seed), threshold)?;
            let config = json!({ "threshold": threshold, "seed": seed, "tokens": [tokens.0, tokens.1] });
            let mut doc = ReportDocument::new(version, json!({ "command": "localize", "config": config.clone() }));
            doc.push(TestResult::from_localization(&matches, config));
            write_report(&mut doc, start, out.as_deref())?;
        }
        Command::Transform {
            model,
            manifest,
            kind,
            seed,
            out,
        } => {
            let original = load(&model, &manifest)?;
            let kind = match kind {
                Kind::Permute => TransformKind::Permute,
                Kind::Rotate => TransformKind::Rotate,
                Kind::Both => TransformKind::Both,
            };
            let spec = TransformSpec::for_model(&original, kind, seed);
            let transformed = spec.apply(&original)?;
            let batch = random_token_batch(original.manifest().vocab.max(1), 4, 16, derive_seed(seed, "self-check", 0));
            let diff = max_output_diff(&original, &transformed, &batch, derive_seed(seed, "self-check", 1))?;
            let passed = diff <= SELF_CHECK_TOLERANCE;

            write_container(transformed.tensors(), &out)?;
            let manifest_out = sidecar(&out, "manifest.json");
            transformed.manifest().write(&manifest_out)?;
            let mut doc = ReportDocument::new(
                version,
                json!({ "command": "transform", "model": model, "manifest": manifest, "seed": seed }),
            );
            doc.transform = Some(TransformReport {
                spec: serde_json::to_value(&spec)?,
                max_logit_diff: diff,
                tolerance: SELF_CHECK_TOLERANCE,
                passed,
                output: out.display().to_string(),
            });
            write_report(&mut doc, start, Some(&sidecar(&out, "report.json")))?;
            if !passed {
                eprintln!("self-check failed: max output difference {diff:e} exceeds {SELF_CHECK_TOLERANCE:e}");
                return Ok(ExitCode::from(EXIT_SELF_CHECK));
            }
        }
        Command::Simulate {
            suite,
            trials,
            seed,
            out,
        } => {
            if trials == 0 {
                bail!(Error::Parameter("--trials must be at least 1".into()));
            }
            let suite = match suite {
                SuiteArg::NullUniformity => Suite::NullUniformity,
                SuiteArg::Power => Suite::Power,
                SuiteArg::Robustness => Suite::Robustness,
            };
            let cfg = SuiteConfig::default();
            let mut doc = ReportDocument::new(
                version,
                json!({ "command": "simulate", "suite": suite, "trials": trials, "seed": seed, "config": cfg }),
            );
            doc.simulation = Some(run_suite(suite, &cfg, trials, seed)?);
            write_report(&mut doc, start, out.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(format!(".{suffix}"));
    PathBuf::from(name)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Incompatible(_)) => EXIT_INCOMPATIBLE,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
