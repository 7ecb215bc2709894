//! Planner backed by a remote multimodal model.

use serde_json::Value;
use tracing::warn;

use super::{parse_plan_response_with_total, parse_trajectory_response, PlannerBackend, ProposalRequest, TrajectoryCandidate};
use crate::error::{Error, Result, SchemaError, SchemaErrorKind};
use crate::prompts::{self, fill};
use crate::scene::{HighLevelPlan, SceneBundle, DEFAULT_PLAN_FRAMES};
use crate::transport::{encode_base64, ChatMessage, ModelClient};

/// Resamples allowed after a malformed response, per call.
pub const DEFAULT_SCHEMA_RETRIES: u32 = 3;

pub struct RemotePlanner {
    client: ModelClient,
    max_retries: u32,
    total_frames: u32,
}

impl RemotePlanner {
    pub fn new(client: ModelClient) -> Self {
        Self {
            client,
            max_retries: DEFAULT_SCHEMA_RETRIES,
            total_frames: DEFAULT_PLAN_FRAMES,
        }
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    /// Send `messages` until `parse` accepts the reply or the retry cap is exhausted.
    fn ask<T>(&mut self, messages: &[ChatMessage], mut parse: impl FnMut(&str) -> Result<T, SchemaError>) -> Result<T> {
        let mut last = None;
        for attempt in 0..=self.max_retries {
            let text = self.client.complete(messages)?;
            match parse(&text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    warn!(attempt, error = %e, "planner output rejected, resampling");
                    last = Some(e);
                }
            }
        }
        Err(Error::Schema(last.expect("at least one attempt")))
    }

    /// Ask which objects move and which stay static; used when the bundle lists no static labels.
    pub fn propose_objects(&mut self, prompt: &str, scene: &SceneBundle) -> Result<(Vec<String>, Vec<String>)> {
        let image = encode_base64(&scene.initial_frame.to_png_bytes()?);
        let messages = [
            ChatMessage::system(prompts::OBJECT_PROPOSAL_SYSTEM),
            ChatMessage::user(prompts::OBJECT_PROPOSAL_USER.replace("<TEXT_PROMPT>", prompt), vec![image]),
        ];
        self.ask(&messages, |text| {
            let start = text.find('{');
            let end = text.rfind('}');
            let v: Value = match (start, end) {
                (Some(s), Some(e)) if e > s => serde_json::from_str(&text[s..=e])
                    .map_err(|e| SchemaError::new(SchemaErrorKind::Malformed, "$", e.to_string()))?,
                _ => return Err(SchemaError::new(SchemaErrorKind::Malformed, "$", "no JSON object")),
            };
            let list = |key: &str| -> Result<Vec<String>, SchemaError> {
                v.get(key)
                    .and_then(Value::as_array)
                    .ok_or_else(|| SchemaError::new(SchemaErrorKind::MissingField, format!("$.{key}"), "expected array"))?
                    .iter()
                    .map(|s| {
                        s.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| SchemaError::new(SchemaErrorKind::BadType, format!("$.{key}"), "expected strings"))
                    })
                    .collect()
            };
            Ok((list("moving_objects")?, list("static_objects")?))
        })
    }
}

fn fmt_box(b: &crate::scene::BBox) -> String {
    format!("[{:.3}, {:.3}, {:.3}, {:.3}]", b.x_min(), b.y_min(), b.x_max(), b.y_max())
}

impl PlannerBackend for RemotePlanner {
    fn propose_plan(&mut self, prompt: &str, scene: &SceneBundle) -> Result<HighLevelPlan> {
        let static_objects = if scene.static_labels.is_empty() {
            self.propose_objects(prompt, scene)?.1
        } else {
            scene.static_labels.clone()
        };
        let total = self.total_frames.to_string();
        let object_lines = scene
            .objects
            .iter()
            .map(|o| format!("- {} (id: {}): currently at {}", o.label, o.id, fmt_box(&o.initial_box)))
            .collect::<Vec<_>>()
            .join("\n");
        let ids = scene.objects.iter().map(|o| o.id.as_str()).collect::<Vec<_>>().join(", ");
        let user = format!(
            "{}\n{}",
            fill(
                prompts::PLAN_USER,
                &[("text_prompt", prompt), ("total_frames", &total), ("object_lines", &object_lines)]
            ),
            fill(prompts::PLAN_SCHEMA, &[("total_frames", &total), ("object_ids", &ids)])
        );
        let image = encode_base64(&scene.initial_frame.to_png_bytes()?);
        let messages = [
            ChatMessage::system(fill(prompts::PLAN_SYSTEM, &[("total_frames", &total)])),
            ChatMessage::user(user, vec![image]),
        ];
        let total_frames = self.total_frames;
        let mut plan = self.ask(&messages, |text| {
            let plan = parse_plan_response_with_total(text, total_frames)?;
            plan.check_objects(scene)
                .map_err(|e| SchemaError::new(SchemaErrorKind::UnknownObject, "$.phases", e.to_string()))?;
            Ok(plan)
        })?;
        if plan.source_prompt.is_empty() {
            plan.source_prompt = prompt.to_string();
        }
        if plan.static_objects.is_empty() {
            plan.static_objects = static_objects;
        }
        Ok(plan)
    }

    fn propose_trajectories(&mut self, req: &ProposalRequest<'_>) -> Result<Vec<TrajectoryCandidate>> {
        let sub = req.sub;
        let start = req.plan.phase_start(sub.index);
        let end = start + sub.frame_budget - 1;
        let (start_s, end_s) = (start.to_string(), end.to_string());
        let phase_name = format!("phase_{}", sub.index);
        let total = req.plan.total_plan_frames.to_string();
        let moving = sub.moving_ids.join(", ");
        let statics = req.plan.static_objects.join(", ");
        let mut history = String::from("Current object positions:\n");
        for (id, b) in &req.context.boxes {
            history.push_str(&format!("- {id}: {}\n", fmt_box(b)));
        }
        history.push_str(&format!("Expected end goal: {}\n", describe_goal(&sub.goal)));
        if let Some(fb) = req.feedback {
            history.push('\n');
            history.push_str(&fb.to_prompt_text());
        }
        let vars = [
            ("CHUNK_START", start_s.as_str()),
            ("CHUNK_END", end_s.as_str()),
            ("PHASE_NAME", phase_name.as_str()),
            ("PHASE_DESCRIPTION", sub.text.as_str()),
            ("TOTAL_FRAMES_NUM", total.as_str()),
            ("COORDS_GUIDE", prompts::COORDS_GUIDE),
            ("MOVING_OBJECTS", moving.as_str()),
            ("STATIC_OBJECTS", statics.as_str()),
            ("TEXT_PROMPT", req.plan.source_prompt.as_str()),
            ("HISTORY_TEXT", history.trim_end()),
        ];
        let user = format!(
            "{}\n\n{}",
            fill(prompts::TRAJECTORY_USER, &vars),
            prompts::multi_candidate_instruction(req.k)
        );
        let image = encode_base64(&req.context.frame.to_png_bytes()?);
        let messages = [
            ChatMessage::system(fill(prompts::TRAJECTORY_SYSTEM, &vars)),
            ChatMessage::user(user, vec![image]),
        ];
        let mut candidates = self.ask(&messages, |text| parse_trajectory_response(text, sub))?;
        candidates.truncate(req.k);
        Ok(candidates)
    }
}

/// Human-readable goal used in prompts.
pub(crate) fn describe_goal(goal: &crate::scene::GoalSpec) -> String {
    let mut parts = Vec::new();
    if !goal.description.is_empty() {
        parts.push(goal.description.clone());
    }
    if let Some(r) = goal.region {
        parts.push(format!("end inside box {}", fmt_box(&r)));
    }
    if let Some(d) = goal.direction {
        parts.push(format!("net motion along ({:.2}, {:.2})", d.x, d.y));
    }
    parts.join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{BBox, GoalSpec, Point};

    #[test]
    fn describe_goal_mentions_region_and_direction() {
        let g = GoalSpec {
            region: Some(BBox::new(0.7, 0.4, 0.9, 0.6).unwrap()),
            direction: Some(Point::new(1.0, 0.0)),
            description: "ball at the right".into(),
        };
        let s = describe_goal(&g);
        assert!(s.contains("ball at the right"));
        assert!(s.contains("[0.700, 0.400, 0.900, 0.600]"));
        assert!(s.contains("(1.00, 0.00)"));
    }
}
