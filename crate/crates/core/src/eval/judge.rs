use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{ChatRequest, Field, Gateway, Role, Shape, Stage};
use crate::prompts::{render, PromptId};

use super::EvalError;

pub const CRITERIA: [&str; 3] = ["specificity", "relevance", "factuality"];
pub const MODELS: [&str; 3] = ["model_a", "model_b", "model_c"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeItem {
    pub user_summary: String,
    pub item_title: String,
    pub rationale_a: String,
    pub rationale_b: String,
    pub rationale_c: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CriterionMeans {
    pub specificity: f64,
    pub relevance: f64,
    pub factuality: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub judged: usize,
    /// Items whose verdict was malformed or out of range.
    pub skipped: usize,
    /// Means for models A, B and C, in that order.
    pub means: [CriterionMeans; 3],
}

impl JudgeReport {
    pub fn render(&self) -> String {
        let mut out = format!("judged {} skipped {}\n", self.judged, self.skipped);
        out.push_str(&format!("{:<8} {:>11} {:>10} {:>11}\n", "model", "specificity", "relevance", "factuality"));
        for (name, m) in ["A", "B", "C"].iter().zip(&self.means) {
            out.push_str(&format!(
                "{:<8} {:>11.2} {:>10.2} {:>11.2}\n",
                name, m.specificity, m.relevance, m.factuality
            ));
        }
        out
    }
}

fn verdict_shape() -> Shape {
    let scores = || Shape::object(CRITERIA.map(|c| Field::required(c, Shape::Integer)));
    Shape::object(MODELS.map(|m| Field::required(m, scores())))
}

fn scores(value: &Value) -> Option<[[u8; 3]; 3]> {
    let mut out = [[0u8; 3]; 3];
    for (mi, model) in MODELS.iter().enumerate() {
        for (ci, criterion) in CRITERIA.iter().enumerate() {
            let s = value.get(model)?.get(criterion)?.as_i64()?;
            if !(1..=5).contains(&s) {
                return None;
            }
            out[mi][ci] = s as u8;
        }
    }
    Some(out)
}

/// Scores each item's three rationales on a 1-5 scale per criterion and
/// averages over the items that received a valid verdict.
pub fn judge_rationales(items: &[JudgeItem], gateway: &Gateway) -> Result<JudgeReport, EvalError> {
    let system = render(PromptId::JudgeSystem, &[])?;
    let mut sums = [[0u64; 3]; 3];
    let mut report = JudgeReport::default();
    for item in items {
        let prompt = render(
            PromptId::JudgeUser,
            &[
                ("user_history_summary", &item.user_summary),
                ("item_title", &item.item_title),
                ("rationale_model_a", &item.rationale_a),
                ("rationale_model_b", &item.rationale_b),
                ("rationale_model_c", &item.rationale_c),
            ],
        )?;
        let request = ChatRequest::new(Role::Judge, Stage::Judge, prompt).with_system(system.clone());
        let verdict = match gateway.complete_structured(&request, &verdict_shape()) {
            Ok(reply) => scores(&reply.value),
            Err(e) if e.raw_text().is_some() => None,
            Err(e) => return Err(e.into()),
        };
        match verdict {
            Some(s) => {
                report.judged += 1;
                for (sum, row) in sums.iter_mut().zip(s) {
                    for (acc, v) in sum.iter_mut().zip(row) {
                        *acc += u64::from(v);
                    }
                }
            }
            None => report.skipped += 1,
        }
    }
    if report.judged > 0 {
        let n = report.judged as f64;
        for (m, s) in report.means.iter_mut().zip(sums) {
            *m = CriterionMeans {
                specificity: s[0] as f64 / n,
                relevance: s[1] as f64 / n,
                factuality: s[2] as f64 / n,
            };
        }
    }
    Ok(report)
}
