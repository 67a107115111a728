use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;

use super::{CallKind, ChatRequest, Role, Stage, Usage};

/// Counters for one (role, stage) pair. Every field only grows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    /// First attempts at a logical request.
    pub calls: u64,
    /// Repair round-trips and re-issued requests.
    pub retries: u64,
    /// Calls that returned an error.
    pub failures: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl LedgerEntry {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub stage: Stage,
    pub role: Role,
    #[serde(flatten)]
    pub entry: LedgerEntry,
}

#[derive(Debug, Default)]
pub struct CallLedger {
    entries: Mutex<BTreeMap<(Stage, Role), LedgerEntry>>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record_success(&self, request: &ChatRequest, usage: Usage, elapsed: Duration) {
        let mut entries = self.entries.lock();
        let entry = entries.entry((request.stage, request.role)).or_default();
        match request.kind {
            CallKind::Primary => entry.calls += 1,
            CallKind::Repair | CallKind::Retry => entry.retries += 1,
        }
        entry.input_tokens += usage.input_tokens;
        entry.output_tokens += usage.output_tokens;
        entry.elapsed += elapsed;
    }

    pub(crate) fn record_failure(&self, request: &ChatRequest, elapsed: Duration) {
        let mut entries = self.entries.lock();
        let entry = entries.entry((request.stage, request.role)).or_default();
        entry.failures += 1;
        entry.elapsed += elapsed;
    }

    pub fn entry(&self, role: Role, stage: Stage) -> LedgerEntry {
        self.entries.lock().get(&(stage, role)).copied().unwrap_or_default()
    }

    /// Sum over roles for one stage.
    pub fn stage_total(&self, stage: Stage) -> LedgerEntry {
        let entries = self.entries.lock();
        let mut total = LedgerEntry::default();
        for ((s, _), e) in entries.iter() {
            if *s == stage {
                total.calls += e.calls;
                total.retries += e.retries;
                total.failures += e.failures;
                total.input_tokens += e.input_tokens;
                total.output_tokens += e.output_tokens;
                total.elapsed += e.elapsed;
            }
        }
        total
    }

    pub fn stage_calls(&self, stage: Stage) -> u64 {
        self.stage_total(stage).calls
    }

    pub fn total_calls(&self) -> u64 {
        self.entries.lock().values().map(|e| e.calls).sum()
    }

    /// Every backend invocation: first attempts, follow-ups and failures.
    pub fn total_invocations(&self) -> u64 {
        self.entries.lock().values().map(|e| e.calls + e.retries + e.failures).sum()
    }

    pub fn rows(&self) -> Vec<LedgerRow> {
        self.entries.lock().iter().map(|(&(stage, role), &entry)| LedgerRow { stage, role, entry }).collect()
    }

    pub fn reset(&self) {
        self.entries.lock().clear();
    }

    /// Per-stage token table: stage, role, calls, retries, input, output,
    /// total and input/output ratio. No wall-clock columns, so the table is
    /// reproducible for a deterministic backend.
    pub fn render_table(&self) -> String {
        render_rows(&self.rows(), false)
    }

    /// Same table with an extra wall-clock column.
    pub fn render_table_with_timings(&self) -> String {
        render_rows(&self.rows(), true)
    }
}

fn io_ratio(entry: &LedgerEntry) -> String {
    if entry.output_tokens == 0 {
        "-".to_string()
    } else {
        format!("{:.1} : 1", entry.input_tokens as f64 / entry.output_tokens as f64)
    }
}

pub(crate) fn render_rows(rows: &[LedgerRow], timings: bool) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "{:<14} {:<8} {:>6} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "stage", "role", "calls", "retries", "input", "output", "total", "io_ratio"
    );
    if timings {
        let _ = write!(out, " {:>10}", "wall_ms");
    }
    out.push('\n');
    let mut total = LedgerEntry::default();
    for row in rows {
        let e = &row.entry;
        let _ = write!(
            out,
            "{:<14} {:<8} {:>6} {:>8} {:>10} {:>10} {:>10} {:>10}",
            row.stage.to_string(),
            row.role.to_string(),
            e.calls,
            e.retries,
            e.input_tokens,
            e.output_tokens,
            e.total_tokens(),
            io_ratio(e)
        );
        if timings {
            let _ = write!(out, " {:>10}", e.elapsed.as_millis());
        }
        out.push('\n');
        total.calls += e.calls;
        total.retries += e.retries;
        total.input_tokens += e.input_tokens;
        total.output_tokens += e.output_tokens;
        total.elapsed += e.elapsed;
    }
    let _ = write!(
        out,
        "{:<14} {:<8} {:>6} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "total",
        "-",
        total.calls,
        total.retries,
        total.input_tokens,
        total.output_tokens,
        total.total_tokens(),
        io_ratio(&total)
    );
    if timings {
        let _ = write!(out, " {:>10}", total.elapsed.as_millis());
    }
    out.push('\n');
    out
}
