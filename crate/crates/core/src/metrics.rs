//! Analysis quantities over stored trajectories: per-turn context curves,
//! pass@1, and intra-page extraction scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::inner_loop::ExtractionRecord;
use crate::outer_loop::{Termination, Trajectory};
use crate::pipeline::{FilterStats, JudgeError, RejectionReport, Verdict};
use crate::sandbox::SiteManifest;

/// Per-turn accounting of one trajectory: (context tokens handed to the
/// policy at that turn, raw page tokens processed up to and including it).
pub fn turn_accounting(t: &Trajectory) -> Vec<(u64, u64)> {
    let mut cumulative = 0;
    t.turns
        .iter()
        .map(|turn| {
            cumulative += turn.response.as_ref().map_or(0, |r| r.meta.raw_page_tokens);
            (turn.context_tokens, cumulative)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based.
    pub turn_index: usize,
    pub outer_context_tokens: f64,
    pub cumulative_whole_info_tokens: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextCurve {
    pub points: Vec<CurvePoint>,
    /// Trajectories that reached turn i+1.
    pub active_counts: Vec<usize>,
}

/// Means over the trajectories still active at each turn.
pub fn context_curve(trajectories: &[Trajectory]) -> ContextCurve {
    let per: Vec<Vec<(u64, u64)>> = trajectories.iter().map(turn_accounting).collect();
    let horizon = per.iter().map(Vec::len).max().unwrap_or(0);
    let mut curve = ContextCurve::default();
    for k in 0..horizon {
        let active: Vec<(u64, u64)> = per.iter().filter_map(|a| a.get(k).copied()).collect();
        let n = active.len() as f64;
        curve.points.push(CurvePoint {
            turn_index: k + 1,
            outer_context_tokens: active.iter().map(|a| a.0 as f64).sum::<f64>() / n,
            cumulative_whole_info_tokens: active.iter().map(|a| a.1 as f64).sum::<f64>() / n,
        });
        curve.active_counts.push(active.len());
    }
    curve
}

impl ContextCurve {
    /// First turn whose mean cumulative raw-page tokens exceed `limit`.
    pub fn first_turn_exceeding(&self, limit: u64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.cumulative_whole_info_tokens > limit as f64)
            .map(|p| p.turn_index)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("turn_index,outer_context_tokens,cumulative_whole_info_tokens,active\n");
        for (p, a) in self.points.iter().zip(&self.active_counts) {
            let _ = writeln!(
                out,
                "{},{:.2},{:.2},{a}",
                p.turn_index, p.outer_context_tokens, p.cumulative_whole_info_tokens
            );
        }
        out
    }
}

/// Anything carrying a correctness judgment.
pub trait Graded {
    fn correct(&self) -> bool;
}

impl Graded for bool {
    fn correct(&self) -> bool {
        *self
    }
}

impl Graded for Verdict {
    fn correct(&self) -> bool {
        self.correct
    }
}

impl Graded for RejectionReport {
    fn correct(&self) -> bool {
        self.judge_verdict.as_ref().is_some_and(|v| v.correct)
    }
}

/// Fraction judged correct; `None` for an empty input.
pub fn pass_at_1<G: Graded>(items: &[G]) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    Some(items.iter().filter(|g| g.correct()).count() as f64 / items.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionGrade {
    /// `None` when the record has nothing to retain.
    pub retention: Option<f64>,
    /// `None` when the segment holds no planted fact.
    pub accuracy: Option<f64>,
}

pub trait ExtractionJudge: Send + Sync {
    fn grade(&self, record: &ExtractionRecord) -> Result<ExtractionGrade, JudgeError>;
}

/// Sandbox grading against planted bookkeeping: retention is the fraction of
/// element markers in the segment that survive into the evidence, accuracy
/// the fraction of planted facts in the segment that do.
#[derive(Debug, Clone, Default)]
pub struct PlantedFactJudge {
    pub facts: Vec<String>,
}

impl PlantedFactJudge {
    pub fn new(facts: Vec<String>) -> Self {
        PlantedFactJudge { facts }
    }

    /// Every task's gold answer is a planted fact.
    pub fn from_manifest(manifest: &SiteManifest) -> Self {
        PlantedFactJudge::new(manifest.tasks.iter().map(|t| t.gold.answer.clone()).collect())
    }
}

/// `[id=eN]` markers in order of appearance.
pub fn element_markers(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("[id=") {
        let tail = &rest[i..];
        match tail.find(']') {
            Some(j) => {
                out.push(&tail[..=j]);
                rest = &tail[j + 1..];
            }
            None => break,
        }
    }
    out
}

fn fraction(found: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| found as f64 / total as f64)
}

impl ExtractionJudge for PlantedFactJudge {
    fn grade(&self, r: &ExtractionRecord) -> Result<ExtractionGrade, JudgeError> {
        let evidence = &r.output.evidence;
        let mut markers = element_markers(&r.segment.text);
        markers.sort_unstable();
        markers.dedup();
        let kept = markers.iter().filter(|m| evidence.contains(*m)).count();
        let facts: Vec<&String> = self.facts.iter().filter(|f| r.segment.text.contains(f.as_str())).collect();
        let recalled = facts.iter().filter(|f| evidence.contains(f.as_str())).count();
        Ok(ExtractionGrade {
            retention: fraction(kept, markers.len()),
            accuracy: fraction(recalled, facts.len()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionEval {
    /// Mean over records with something to retain (1.0 when there are none).
    pub retention_score: f64,
    /// Mean over records whose segment holds a planted fact (1.0 when none).
    pub extraction_accuracy: f64,
    pub n: usize,
    pub n_retention: usize,
    pub n_accuracy: usize,
}

pub fn eval_extractions(records: &[ExtractionRecord], judge: &dyn ExtractionJudge) -> Result<ExtractionEval, JudgeError> {
    let grades = records.iter().map(|r| judge.grade(r)).collect::<Result<Vec<_>, _>>()?;
    let mean = |xs: Vec<f64>| -> (f64, usize) {
        if xs.is_empty() {
            (1.0, 0)
        } else {
            (xs.iter().sum::<f64>() / xs.len() as f64, xs.len())
        }
    };
    let (retention_score, n_retention) = mean(grades.iter().filter_map(|g| g.retention).collect());
    let (extraction_accuracy, n_accuracy) = mean(grades.iter().filter_map(|g| g.accuracy).collect());
    Ok(ExtractionEval {
        retention_score,
        extraction_accuracy,
        n: records.len(),
        n_retention,
        n_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_trajectories: usize,
    pub terminations: BTreeMap<String, usize>,
    pub mean_tool_calls: f64,
    pub mean_peak_context_tokens: f64,
    pub mean_whole_info_tokens: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionEval>,
    pub curve: ContextCurve,
}

fn termination_name(t: Termination) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn build_report(
    trajectories: &[Trajectory],
    reports: Option<&[RejectionReport]>,
    extraction_judge: Option<&dyn ExtractionJudge>,
) -> Result<Report, JudgeError> {
    let n = trajectories.len();
    let mean = |f: &dyn Fn(&Trajectory) -> u64| {
        if n == 0 {
            0.0
        } else {
            trajectories.iter().map(|t| f(t) as f64).sum::<f64>() / n as f64
        }
    };
    let mut terminations = BTreeMap::new();
    for t in trajectories {
        *terminations.entry(termination_name(t.termination)).or_insert(0) += 1;
    }
    let extraction = match extraction_judge {
        Some(j) => {
            let records: Vec<ExtractionRecord> = trajectories.iter().flat_map(|t| t.extraction_records.clone()).collect();
            Some(eval_extractions(&records, j)?)
        }
        None => None,
    };
    Ok(Report {
        n_trajectories: n,
        terminations,
        mean_tool_calls: mean(&|t| t.stats.tool_calls as u64),
        mean_peak_context_tokens: mean(&|t| t.stats.peak_context_tokens),
        mean_whole_info_tokens: mean(&|t| t.stats.whole_info_tokens),
        pass_at_1: reports.and_then(pass_at_1),
        filter: reports.map(crate::pipeline::filter_stats),
        extraction,
        curve: context_curve(trajectories),
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trajectories           {}", self.n_trajectories);
        for (k, v) in &self.terminations {
            let _ = writeln!(s, "  {k:<24} {v}");
        }
        let _ = writeln!(s, "mean tool calls        {:.2}", self.mean_tool_calls);
        let _ = writeln!(s, "mean peak context      {:.1}", self.mean_peak_context_tokens);
        let _ = writeln!(s, "mean whole info        {:.1}", self.mean_whole_info_tokens);
        if let Some(p) = self.pass_at_1 {
            let _ = writeln!(s, "pass@1                 {p:.4}");
        }
        if let Some(f) = &self.filter {
            let _ = writeln!(s, "accepted               {}/{}", f.accepted, f.total);
            for (v, c) in &f.by_violation {
                let _ = writeln!(s, "  {:<24} {c}", v.as_str());
            }
        }
        if let Some(e) = &self.extraction {
            let _ = writeln!(s, "retention              {:.4} (n={})", e.retention_score, e.n_retention);
            let _ = writeln!(s, "extraction accuracy    {:.4} (n={})", e.extraction_accuracy, e.n_accuracy);
        }
        let _ = writeln!(s, "\n{:>5} {:>12} {:>12} {:>7}", "turn", "context", "whole_info", "active");
        for (p, a) in self.curve.points.iter().zip(&self.curve.active_counts) {
            let _ = writeln!(
                s,
                "{:>5} {:>12.1} {:>12.1} {:>7}",
                p.turn_index, p.outer_context_tokens, p.cumulative_whole_info_tokens, a
            );
        }
        s
    }
}
