use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::gateway::{render_ledger_rows, CallLedger, LedgerRow};
use crate::propagation::{CallAudit, DrainStats};

use super::metrics::{hit_at_k, ndcg_at_k};
use super::pipeline::CaseResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub hit: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLine {
    pub case_id: String,
    pub user: String,
    pub ground_truth: String,
    pub rank: usize,
    pub top: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub settings: Vec<(String, String)>,
    pub cases: usize,
    /// Ascending K.
    pub metrics: Vec<MetricRow>,
    pub per_case: Vec<CaseLine>,
    pub stage_r_fallbacks: usize,
    pub rerank_failures: usize,
    pub propagation: DrainStats,
    pub audit: CallAudit,
    pub ledger: Vec<LedgerRow>,
}

impl EvalReport {
    pub(crate) fn build(
        config: &PipelineConfig,
        ruleset_source: &str,
        results: &[CaseResult],
        ledger: &CallLedger,
        propagation: DrainStats,
        audit: CallAudit,
    ) -> Self {
        let mut ks = config.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        let n = results.len();
        let metrics = ks
            .iter()
            .map(|&k| {
                let mean = |f: fn(usize, usize) -> Result<f64, super::EvalError>| {
                    if n == 0 {
                        return 0.0;
                    }
                    results.iter().map(|r| f(r.rank, k).expect("validated rank and K")).sum::<f64>() / n as f64
                };
                MetricRow { k, hit: mean(hit_at_k), ndcg: mean(ndcg_at_k) }
            })
            .collect();
        let a = config.ablation;
        let settings = [
            ("domain", config.domain.to_string()),
            ("rules", ruleset_source.to_string()),
            ("k", config.k.to_string()),
            ("n_facets", config.n_facets.to_string()),
            ("token_budget", config.token_budget.to_string()),
            ("temperature", config.temperature.to_string()),
            ("ranker", format!("{:?}", config.ranker).to_lowercase()),
            ("propagation", format!("{:?}", config.propagation).to_lowercase()),
            ("collab_read", a.collab_read.to_string()),
            ("llm_curation", a.llm_curation.to_string()),
            ("collab_write", a.collab_write.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            settings,
            cases: n,
            metrics,
            per_case: results
                .iter()
                .map(|r| CaseLine {
                    case_id: r.case_id.clone(),
                    user: r.user.to_string(),
                    ground_truth: r.ground_truth.to_string(),
                    rank: r.rank,
                    top: r.ranked.entries.first().map(|e| e.item.to_string()).unwrap_or_default(),
                })
                .collect(),
            stage_r_fallbacks: results.iter().filter(|r| r.stage_r_fallback).count(),
            rerank_failures: results.iter().filter(|r| r.rerank_failed).count(),
            propagation,
            audit,
            ledger: ledger.rows(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn metric(&self, k: usize) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.k == k)
    }

    /// Plain-text report: settings, the H@K / N@K table (N@1 equals H@1 and
    /// is omitted), per-case ranks and the token ledger.
    pub fn render(&self) -> String {
        let mut out = String::from("# memrec evaluation report\n\n");
        for (key, value) in &self.settings {
            let _ = writeln!(out, "{key:<14} {value}");
        }
        let _ = writeln!(out, "{:<14} {}\n", "cases", self.cases);

        let mut header = Vec::new();
        let mut values = Vec::new();
        for m in &self.metrics {
            header.push(format!("H@{}", m.k));
            values.push(format!("{:.4}", m.hit));
            if m.k > 1 {
                header.push(format!("N@{}", m.k));
                values.push(format!("{:.4}", m.ndcg));
            }
        }
        let row = |cells: &[String]| cells.iter().map(|c| format!("{c:>8}")).collect::<Vec<_>>().join("");
        let _ = writeln!(out, "{}", row(&header));
        let _ = writeln!(out, "{}\n", row(&values));

        let _ = writeln!(out, "stage-r fallbacks   {}", self.stage_r_fallbacks);
        let _ = writeln!(out, "rerank failures     {}", self.rerank_failures);
        let _ = writeln!(
            out,
            "propagation         applied {} failed {}",
            self.propagation.applied, self.propagation.failed
        );
        let _ = writeln!(out, "call audit          {}\n", self.audit);

        let _ = writeln!(out, "{:<12} {:<16} {:<16} {:>5}  top", "case", "user", "ground_truth", "rank");
        for c in &self.per_case {
            let _ = writeln!(out, "{:<12} {:<16} {:<16} {:>5}  {}", c.case_id, c.user, c.ground_truth, c.rank, c.top);
        }
        out.push('\n');
        out.push_str(&render_ledger_rows(&self.ledger, false));
        out
    }
}
