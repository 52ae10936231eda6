//! JSON report documents written by the command-line tool.

use serde::{Deserialize, Serialize};

use crate::independence::{BlockMatch, GeneralizedOutcome, PermTestOutcome};
use crate::simulate::SuiteSummary;
use crate::stats::LogPValue;

pub const SCHEMA_VERSION: &str = "1.0.0";

/// A p-value as it appears in reports: the ε-clamped display value next to
/// the unclamped base-10 logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub display_p: f64,
    pub log10_p: f64,
    pub ln_p: f64,
    pub exact_max: bool,
}

impl From<LogPValue> for PValueReport {
    fn from(p: LogPValue) -> Self {
        Self {
            display_p: p.display_p(),
            log10_p: p.log10_p(),
            ln_p: p.ln_p(),
            exact_max: p.is_exact_max(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    /// Block of the first model.
    pub i: usize,
    /// Block of the second model.
    pub j: usize,
    pub p: PValueReport,
    /// `(unit of model A, unit of model B)` pairs, when the statistic matches units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_map: Option<Vec<(usize, usize)>>,
}

/// Outcome of one statistic on one model pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: String,
    #[serde(default)]
    pub per_block: Vec<BlockResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<PValueReport>,
    /// Raw statistic value for statistics without a p-value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Additional raw values (e.g. `[M_a, M_b, M_f]` per block).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permtest: Option<PermTestOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Settings that reproduce the numbers.
    pub config: serde_json::Value,
}

impl TestResult {
    pub fn new(statistic: &str, config: serde_json::Value) -> Self {
        Self {
            statistic: statistic.to_string(),
            per_block: Vec::new(),
            aggregate: None,
            value: None,
            values: Vec::new(),
            permtest: None,
            warnings: Vec::new(),
            config,
        }
    }

    pub fn with_blocks(mut self, ps: &[LogPValue]) -> Self {
        self.per_block = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| BlockResult {
                i,
                j: i,
                p: p.into(),
                unit_map: None,
            })
            .collect();
        self
    }

    pub fn with_aggregate(mut self, p: LogPValue) -> Self {
        self.aggregate = Some(p.into());
        self
    }

    pub fn from_generalized(outcome: &GeneralizedOutcome, config: serde_json::Value) -> Self {
        let mut r = Self::new("general", config)
            .with_blocks(&outcome.per_block)
            .with_aggregate(outcome.aggregate);
        r.values = outcome.fit_losses.iter().flat_map(|&(a, b)| [a, b]).collect();
        r.warnings = outcome.warnings.clone();
        r
    }

    pub fn from_localization(matches: &[BlockMatch], config: serde_json::Value) -> Self {
        let mut r = Self::new("localize", config);
        r.per_block = matches
            .iter()
            .map(|m| BlockResult {
                i: m.i,
                j: m.j,
                p: m.p.into(),
                unit_map: Some(m.unit_map.clone()),
            })
            .collect();
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub spec: serde_json::Value,
    pub max_logit_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub statistic: String,
    pub log10_p: f64,
    pub display_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub tool_version: String,
    pub command: serde_json::Value,
    #[serde(default)]
    pub results: Vec<TestResult>,
    #[serde(default)]
    pub verdict: Vec<VerdictEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SuiteSummary>,
    pub timing: Timing,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

impl ReportDocument {
    pub fn new(tool_version: &str, command: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            tool_version: tool_version.to_string(),
            command,
            results: Vec::new(),
            verdict: Vec::new(),
            transform: None,
            simulation: None,
            timing: Timing::default(),
        }
    }

    /// Appends a result and its aggregate (if any) to the verdict summary.
    pub fn push(&mut self, result: TestResult) {
        if let Some(p) = result.aggregate {
            self.verdict.push(VerdictEntry {
                statistic: result.statistic.clone(),
                log10_p: p.log10_p,
                display_p: p.display_p,
            });
        }
        self.results.push(result);
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_p_keeps_its_exponent() {
        let r = PValueReport::from(LogPValue::from_ln(-1000.0));
        assert_eq!(r.display_p, crate::stats::DISPLAY_FLOOR);
        assert!((r.log10_p + 1000.0 / std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn verdict_follows_aggregates() {
        let mut doc = ReportDocument::new("0", serde_json::json!({}));
        doc.push(TestResult::new("jsd", serde_json::json!({})));
        doc.push(TestResult::new("u", serde_json::json!({})).with_aggregate(LogPValue::from_p(0.5)));
        assert_eq!(doc.verdict.len(), 1);
        let back: ReportDocument = serde_json::from_str(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
    }
}
