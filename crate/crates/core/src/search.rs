//! The test-time loop: sample K candidates, render, verify, keep the argmax, and resample with
//! feedback while the best score stays below the threshold. Phases are chained through the last
//! frame of each selected sketch.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{debug, info};

use crate::error::{Error, Result};
use crate::planner::{
    diversity_filter, plan_to_json, PlannerBackend, PlannerFeedback, PlanningContext, ProposalRequest, RejectedSummary,
    TrajectoryCandidate, DEFAULT_MIN_DIVERSITY,
};
use crate::raster::RgbImage;
use crate::render::{last_frame, render_sketch_with, VideoSketch};
use crate::scene::{BBox, HighLevelPlan, SceneBundle, SubInstruction};
use crate::verify::{VerificationReport, Verifier, VerifierWeights, VerifyInput};

/// Extra proposal batches requested when the diversity filter leaves fewer than K candidates.
pub const REFILL_BATCHES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub k: usize,
    pub tau: f64,
    pub max_rounds: u32,
    pub weights: VerifierWeights,
    pub min_diversity: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            tau: 0.6,
            max_rounds: 3,
            weights: VerifierWeights::default(),
            min_diversity: DEFAULT_MIN_DIVERSITY,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.min_diversity.is_nan() || self.min_diversity < 0.0 {
            return Err(Error::Config("min_diversity must be non-negative".into()));
        }
        self.weights.validate()
    }
}

/// Position of the highest combined score; the lowest position wins ties.
pub fn select_best(reports: &[VerificationReport]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        if best.is_none_or(|(_, s)| r.combined > s) {
            best = Some((i, r.combined));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyCandidateSet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub candidate: TrajectoryCandidate,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<PlannerFeedback>,
    /// Candidates dropped by the diversity filter, by index.
    pub dropped: Vec<usize>,
    pub candidates: Vec<CandidateRecord>,
    pub best_index: usize,
    pub best_combined: f64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase: usize,
    pub text: String,
    /// SHA-256 of the context frame's raw RGB bytes.
    pub context_frame_sha256: String,
    pub rounds: Vec<RoundRecord>,
    pub selected_index: usize,
    pub selected_round: u32,
    pub selected_combined: f64,
    pub below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<serde_json::Value>,
    pub phases: Vec<PhaseTrace>,
}

/// Result of searching one sub-instruction.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub selected: TrajectoryCandidate,
    pub sketch: VideoSketch,
    pub report: VerificationReport,
    pub trace: PhaseTrace,
}

/// Hook for persisting every scored candidate as it is produced.
pub trait SearchObserver {
    fn candidate(
        &mut self,
        _phase: usize,
        _candidate: &TrajectoryCandidate,
        _sketch: &VideoSketch,
        _report: &VerificationReport,
    ) -> Result<()> {
        Ok(())
    }
}

impl SearchObserver for () {}

pub fn frame_digest(frame: &RgbImage) -> String {
    hex::encode(Sha256::digest(frame.as_raw()))
}

/// Boxes of context objects that do not move in `sub`.
pub fn held_boxes(context: &PlanningContext, sub: &SubInstruction) -> BTreeMap<String, BBox> {
    context
        .boxes
        .iter()
        .filter(|(id, _)| !sub.moving_ids.contains(id))
        .map(|(id, b)| (id.clone(), *b))
        .collect()
}

fn feedback_for(round: u32, sub: &SubInstruction, records: &[CandidateRecord]) -> PlannerFeedback {
    let subject = sub.subject();
    let rejected_summaries = records
        .iter()
        .map(|r| {
            let worst = r.report.worst_law();
            let sem_worse = worst.is_none_or(|w| r.report.semantic.score < w.score);
            let (worst_law, explanation) = match worst {
                Some(w) if !sem_worse => (w.law.to_string(), w.explanation.clone()),
                _ => ("semantic".to_string(), r.report.semantic.explanation.clone()),
            };
            let boxes = r.candidate.boxes(subject);
            RejectedSummary {
                candidate_index: r.candidate.candidate_index,
                combined_score: r.report.combined,
                worst_law,
                explanation,
                start_box: boxes.first().copied(),
                end_box: boxes.last().copied(),
            }
        })
        .collect();
    PlannerFeedback {
        rejected_summaries,
        attempt: round,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn search_sub_instruction(
    sub: &SubInstruction,
    plan: &HighLevelPlan,
    context: &PlanningContext,
    scene: &SceneBundle,
    planner: &mut dyn PlannerBackend,
    verifier: &mut dyn Verifier,
    config: &SearchConfig,
    observer: &mut dyn SearchObserver,
) -> Result<PhaseOutcome> {
    config.validate()?;
    let held = held_boxes(context, sub);
    let mut next_index = 0usize;
    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut feedback: Option<PlannerFeedback> = None;
    // (round, candidate, sketch, report) of the best candidate seen so far
    let mut best: Option<(u32, TrajectoryCandidate, VideoSketch, VerificationReport)> = None;

    for round in 1..=config.max_rounds {
        let mut pool: Vec<TrajectoryCandidate> = Vec::new();
        let mut sampled: Vec<usize> = Vec::new();
        for batch in 0..=REFILL_BATCHES {
            if batch > 0 && pool.len() >= config.k {
                break;
            }
            let want = if batch == 0 { config.k } else { config.k - pool.len() };
            let req = ProposalRequest {
                sub,
                plan,
                context,
                scene,
                k: want,
                feedback: feedback.as_ref(),
                round,
                batch,
            };
            let mut fresh = planner.propose_trajectories(&req)?;
            for c in &mut fresh {
                c.candidate_index = next_index;
                sampled.push(next_index);
                next_index += 1;
            }
            pool.extend(fresh);
            pool = diversity_filter(pool, config.min_diversity);
        }
        pool.truncate(config.k);
        if pool.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        let dropped = sampled
            .into_iter()
            .filter(|i| !pool.iter().any(|c| c.candidate_index == *i))
            .collect();

        let mut records = Vec::with_capacity(pool.len());
        let mut sketches = Vec::with_capacity(pool.len());
        for cand in pool {
            let sketch = render_sketch_with(&cand, scene, &held);
            let report = verifier.verify(&VerifyInput {
                sketch: &sketch,
                candidate: &cand,
                sub,
                scene,
                held: &held,
                weights: &config.weights,
            })?;
            debug!(phase = sub.index, round, candidate = cand.candidate_index, combined = report.combined, "scored");
            observer.candidate(sub.index, &cand, &sketch, &report)?;
            records.push(CandidateRecord { candidate: cand, report });
            sketches.push(sketch);
        }
        let reports: Vec<VerificationReport> = records.iter().map(|r| r.report.clone()).collect();
        let pos = select_best(&reports)?;
        let round_best = &records[pos];
        let accepted = round_best.report.combined >= config.tau;
        info!(
            phase = sub.index,
            round,
            candidate = round_best.candidate.candidate_index,
            combined = round_best.report.combined,
            accepted,
            "round finished"
        );
        if best.as_ref().is_none_or(|(_, _, _, r)| round_best.report.combined > r.combined) {
            best = Some((round, round_best.candidate.clone(), sketches.swap_remove(pos), round_best.report.clone()));
        }
        let resample_reason = (!accepted).then(|| {
            format!(
                "best combined {:.4} below threshold {:.4}",
                round_best.report.combined, config.tau
            )
        });
        let next_feedback = (!accepted).then(|| feedback_for(round, sub, &records));
        rounds.push(RoundRecord {
            round,
            feedback: feedback.take(),
            dropped,
            best_index: round_best.candidate.candidate_index,
            best_combined: round_best.report.combined,
            candidates: records,
            accepted,
            resample_reason,
        });
        if accepted {
            break;
        }
        feedback = next_feedback;
    }

    let (selected_round, selected, sketch, report) = best.expect("at least one round ran");
    let below_threshold = report.combined < config.tau;
    let trace = PhaseTrace {
        phase: sub.index,
        text: sub.text.clone(),
        context_frame_sha256: frame_digest(&context.frame),
        rounds,
        selected_index: selected.candidate_index,
        selected_round,
        selected_combined: report.combined,
        below_threshold,
    };
    Ok(PhaseOutcome {
        selected,
        sketch,
        report,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub plan: HighLevelPlan,
    pub phases: Vec<PhaseOutcome>,
    /// Context frame each phase started from.
    pub contexts: Vec<RgbImage>,
}

impl PipelineOutcome {
    pub fn below_threshold(&self) -> bool {
        self.phases.iter().any(|p| p.trace.below_threshold)
    }

    pub fn selected(&self) -> Vec<&TrajectoryCandidate> {
        self.phases.iter().map(|p| &p.selected).collect()
    }

    pub fn trace(&self, prompt: &str) -> PipelineTrace {
        PipelineTrace {
            prompt: prompt.to_string(),
            plan: Some(plan_to_json(&self.plan)),
            phases: self.phases.iter().map(|p| p.trace.clone()).collect(),
        }
    }
}

/// A pipeline failure together with the trace of everything completed before it.
#[derive(Debug)]
pub struct PipelineError {
    pub error: Error,
    pub partial: PipelineTrace,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} completed phases)", self.error, self.partial.phases.len())
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub fn run_pipeline(
    prompt: &str,
    scene: &SceneBundle,
    planner: &mut dyn PlannerBackend,
    verifier: &mut dyn Verifier,
    config: &SearchConfig,
    observer: &mut dyn SearchObserver,
) -> std::result::Result<PipelineOutcome, PipelineError> {
    let mut partial = PipelineTrace {
        prompt: prompt.to_string(),
        plan: None,
        phases: Vec::new(),
    };
    let plan = match planner.propose_plan(prompt, scene) {
        Ok(p) => p,
        Err(error) => return Err(PipelineError { error, partial }),
    };
    partial.plan = Some(plan_to_json(&plan));
    let mut context = PlanningContext::initial(scene);
    let mut phases = Vec::with_capacity(plan.sub_instructions.len());
    let mut contexts = Vec::with_capacity(plan.sub_instructions.len());
    for sub in &plan.sub_instructions {
        let outcome = match search_sub_instruction(sub, &plan, &context, scene, planner, verifier, config, observer) {
            Ok(o) => o,
            Err(error) => return Err(PipelineError { error, partial }),
        };
        partial.phases.push(outcome.trace.clone());
        let next = PlanningContext {
            frame: last_frame(&outcome.sketch).clone(),
            boxes: {
                let mut boxes = context.boxes.clone();
                boxes.extend(outcome.selected.final_boxes());
                boxes
            },
        };
        contexts.push(std::mem::replace(&mut context, next).frame);
        phases.push(outcome);
    }
    Ok(PipelineOutcome { plan, phases, contexts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::{Law, LawScore, SemanticScore};

    fn report(i: usize, combined: f64) -> VerificationReport {
        VerificationReport {
            candidate_index: i,
            semantic: SemanticScore {
                score: combined,
                explanation: String::new(),
            },
            laws: Law::ALL.iter().map(|&l| LawScore::new(l, combined, "")).collect(),
            weights: VerifierWeights::default(),
            combined,
        }
    }

    #[test]
    fn select_examples() {
        let r: Vec<_> = [0.2, 0.9, 0.5].iter().enumerate().map(|(i, &s)| report(i, s)).collect();
        assert_eq!(select_best(&r).unwrap(), 1);
        let r: Vec<_> = [0.7, 0.7].iter().enumerate().map(|(i, &s)| report(i, s)).collect();
        assert_eq!(select_best(&r).unwrap(), 0);
        assert!(matches!(select_best(&[]), Err(Error::EmptyCandidateSet)));
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = SearchConfig { k: 0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SearchConfig { tau: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SearchConfig { max_rounds: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
