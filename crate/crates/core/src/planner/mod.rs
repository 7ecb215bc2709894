//! Trajectory proposal: the plan/candidate types, backends, and output parsers.

mod diversity;
mod parse;
mod remote;
mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use diversity::{candidate_distance, diversity_filter, DEFAULT_MIN_DIVERSITY};
pub use parse::{
    parse_plan_response, parse_plan_response_with_total, parse_plan_value, parse_trajectory_response, plan_from_manifest,
    plan_to_json,
};
pub(crate) use remote::describe_goal;
pub use remote::{RemotePlanner, DEFAULT_SCHEMA_RETRIES};
pub use scripted::{CandidateKind, ScriptedMode, ScriptedPlanner};

use crate::error::Result;
use crate::raster::RgbImage;
use crate::scene::{bbox_center, BBox, HighLevelPlan, Point, SceneBundle, SubInstruction};

/// One proposed motion for a sub-instruction: a box per moving object per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCandidate {
    pub candidate_index: usize,
    pub frames: Vec<BTreeMap<String, BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<Vec<Option<String>>>,
}

impl TrajectoryCandidate {
    pub fn new(candidate_index: usize, frames: Vec<BTreeMap<String, BBox>>) -> Self {
        Self {
            candidate_index,
            frames,
            captions: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn object_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.frames.iter().flat_map(|f| f.keys().map(String::as_str)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Boxes of one object in frame order, skipping frames where it is absent.
    pub fn boxes(&self, id: &str) -> Vec<BBox> {
        self.frames.iter().filter_map(|f| f.get(id).copied()).collect()
    }

    pub fn centers(&self, id: &str) -> Vec<Point> {
        self.frames.iter().filter_map(|f| f.get(id)).map(bbox_center).collect()
    }

    pub fn final_boxes(&self) -> BTreeMap<String, BBox> {
        self.frames.last().cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedSummary {
    pub candidate_index: usize,
    pub combined_score: f64,
    pub worst_law: String,
    pub explanation: String,
    pub start_box: Option<BBox>,
    pub end_box: Option<BBox>,
}

/// What went wrong in the previous round, handed back to the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerFeedback {
    pub rejected_summaries: Vec<RejectedSummary>,
    /// Retry counter, starting at 1 for the first resample.
    pub attempt: u32,
}

impl PlannerFeedback {
    /// Text injected into the trajectory prompt's history slot.
    pub fn to_prompt_text(&self) -> String {
        let mut out = format!(
            "Feedback on previous attempt {} (all candidates were rejected):\n",
            self.attempt
        );
        for r in &self.rejected_summaries {
            let fmt_box = |b: Option<BBox>| {
                b.map(|b| {
                    format!(
                        "[{:.3}, {:.3}, {:.3}, {:.3}]",
                        b.x_min(),
                        b.y_min(),
                        b.x_max(),
                        b.y_max()
                    )
                })
                .unwrap_or_else(|| "n/a".into())
            };
            out.push_str(&format!(
                "- candidate {} scored {:.3}; weakest check: {} ({}); start {} end {}\n",
                r.candidate_index,
                r.combined_score,
                r.worst_law,
                r.explanation,
                fmt_box(r.start_box),
                fmt_box(r.end_box)
            ));
        }
        out.push_str("Avoid these failure modes in the new trajectories.");
        out
    }
}

/// Visual and geometric state the next phase starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningContext {
    pub frame: RgbImage,
    /// Current box of every scene object.
    pub boxes: BTreeMap<String, BBox>,
}

impl PlanningContext {
    pub fn initial(scene: &SceneBundle) -> Self {
        Self {
            frame: scene.initial_frame.clone(),
            boxes: scene.initial_boxes(),
        }
    }
}

/// Everything a backend needs to propose candidates for one sub-instruction.
#[derive(Debug, Clone, Copy)]
pub struct ProposalRequest<'a> {
    pub sub: &'a SubInstruction,
    pub plan: &'a HighLevelPlan,
    pub context: &'a PlanningContext,
    pub scene: &'a SceneBundle,
    pub k: usize,
    pub feedback: Option<&'a PlannerFeedback>,
    /// 1-based search round.
    pub round: u32,
    /// 0 for the main batch, incremented for each diversity refill.
    pub batch: u32,
}

pub trait PlannerBackend {
    fn propose_plan(&mut self, prompt: &str, scene: &SceneBundle) -> Result<HighLevelPlan>;

    fn propose_trajectories(&mut self, request: &ProposalRequest<'_>) -> Result<Vec<TrajectoryCandidate>>;
}
