//! Strict parsers for planner output.
//!
//! Plans use one canonical JSON schema:
//!
//! ```json
//! {"prompt": "...", "total_frames": 41, "static_objects": ["table"],
//!  "phases": [{"action": "...", "duration": 20, "object_ids": ["ball"],
//!              "goal": {"region": [x0, y0, x1, y1], "direction": [dx, dy], "description": "..."}}]}
//! ```
//!
//! Trajectories are accepted either as `Frame_N: [["name", [x1, y1, x2, y2]], ...], caption: ...`
//! lines (optionally grouped under `Trajectory <n>:` headers) or as the equivalent JSON nesting:
//! a candidate is an array of frames, a frame an array of `["name", [x1, y1, x2, y2]]` pairs, and a
//! response is one candidate or an array of candidates.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::TrajectoryCandidate;
use crate::error::{SchemaError, SchemaErrorKind as K};
use crate::scene::{BBox, GoalSpec, HighLevelPlan, Point, SubInstruction, DEFAULT_PLAN_FRAMES, MAX_PHASES};

type Parsed<T> = std::result::Result<T, SchemaError>;

fn err<T>(kind: K, location: impl Into<String>, detail: impl Into<String>) -> Parsed<T> {
    Err(SchemaError::new(kind, location, detail))
}

/// Strip markdown fences and surrounding chatter, returning the outermost JSON-looking span.
fn json_span(raw: &str, open: char, close: char) -> Option<&str> {
    let start = raw.find(open)?;
    let end = raw.rfind(close)?;
    (end > start).then(|| &raw[start..=end])
}

fn parse_json_document(raw: &str, open: char, close: char) -> Parsed<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Ok(v);
    }
    match json_span(trimmed, open, close) {
        Some(span) => serde_json::from_str(span).or_else(|e| err(K::Malformed, "$", e.to_string())),
        None => err(K::Malformed, "$", "no JSON document found"),
    }
}

pub fn parse_plan_response(raw: &str) -> Parsed<HighLevelPlan> {
    parse_plan_response_with_total(raw, DEFAULT_PLAN_FRAMES)
}

pub fn parse_plan_response_with_total(raw: &str, total_frames: u32) -> Parsed<HighLevelPlan> {
    let value = parse_json_document(raw, '{', '}')?;
    parse_plan_value(&value, total_frames)
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, loc: &str) -> Parsed<&'a str> {
    match obj.get(key) {
        None | Some(Value::Null) => err(K::MissingField, format!("{loc}.{key}"), "required field is missing"),
        Some(Value::String(s)) => Ok(s),
        Some(other) => err(K::BadType, format!("{loc}.{key}"), format!("expected string, got {other}")),
    }
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], loc: &str) -> Parsed<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => err(K::BadType, format!("{loc}.{k}"), "unexpected field"),
        None => Ok(()),
    }
}

fn parse_box(v: &Value, loc: &str) -> Parsed<BBox> {
    let arr = match v.as_array() {
        Some(a) if a.len() == 4 => a,
        _ => return err(K::InvalidBox, loc, format!("expected [x1, y1, x2, y2], got {v}")),
    };
    let mut nums = [0.0; 4];
    for (slot, x) in nums.iter_mut().zip(arr) {
        *slot = x
            .as_f64()
            .ok_or_else(|| SchemaError::new(K::InvalidBox, loc, format!("non-numeric coordinate {x}")))?;
    }
    BBox::try_from(nums).map_err(|e| SchemaError::new(K::InvalidBox, loc, e.to_string()))
}

fn parse_goal(v: &Value, loc: &str) -> Parsed<GoalSpec> {
    let obj = v
        .as_object()
        .ok_or_else(|| SchemaError::new(K::BadType, loc, "goal must be an object"))?;
    check_keys(obj, &["region", "direction", "description"], loc)?;
    let region = match obj.get("region") {
        None | Some(Value::Null) => None,
        Some(r) => Some(parse_box(r, &format!("{loc}.region"))?),
    };
    let direction = match obj.get("direction") {
        None | Some(Value::Null) => None,
        Some(d) => {
            let pair = d
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some(Point::new(a[0].as_f64()?, a[1].as_f64()?)));
            match pair {
                Some(p) => Some(p),
                None => return err(K::BadType, format!("{loc}.direction"), "expected [dx, dy]"),
            }
        }
    };
    let description = match obj.get("description") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return err(K::BadType, format!("{loc}.description"), format!("expected string, got {other}")),
    };
    let goal = GoalSpec {
        region,
        direction,
        description,
    };
    goal.validate().map_err(|d| SchemaError::new(K::InvalidGoal, loc, d))?;
    Ok(goal)
}

/// Validate a plan document already parsed as JSON.
pub fn parse_plan_value(value: &Value, total_frames: u32) -> Parsed<HighLevelPlan> {
    let root = value
        .as_object()
        .ok_or_else(|| SchemaError::new(K::BadType, "$", "plan must be a JSON object"))?;
    check_keys(root, &["prompt", "total_frames", "static_objects", "phases"], "$")?;

    let source_prompt = match root.get("prompt") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return err(K::BadType, "$.prompt", format!("expected string, got {other}")),
    };
    if let Some(t) = root.get("total_frames") {
        match t.as_u64() {
            Some(t) if t == total_frames as u64 => {}
            Some(t) => {
                return err(
                    K::FrameBudgetMismatch,
                    "$.total_frames",
                    format!("plan declares {t} frames, pipeline uses {total_frames}"),
                )
            }
            None => return err(K::BadType, "$.total_frames", "expected a non-negative integer"),
        }
    }
    let static_objects = match root.get("static_objects") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| SchemaError::new(K::BadType, format!("$.static_objects[{i}]"), "expected string"))
            })
            .collect::<Parsed<_>>()?,
        Some(_) => return err(K::BadType, "$.static_objects", "expected an array"),
    };

    let phases = match root.get("phases") {
        None | Some(Value::Null) => return err(K::MissingField, "$.phases", "required field is missing"),
        Some(Value::Array(a)) => a,
        Some(_) => return err(K::BadType, "$.phases", "expected an array"),
    };
    if phases.is_empty() || phases.len() > MAX_PHASES {
        return err(
            K::PhaseCountOutOfRange,
            "$.phases",
            format!("{} phases, expected 1..={MAX_PHASES}", phases.len()),
        );
    }

    let mut subs = Vec::with_capacity(phases.len());
    for (i, phase) in phases.iter().enumerate() {
        let loc = format!("$.phases[{i}]");
        let obj = phase
            .as_object()
            .ok_or_else(|| SchemaError::new(K::BadType, &loc, "phase must be an object"))?;
        check_keys(obj, &["action", "duration", "object_ids", "goal"], &loc)?;
        let text = get_str(obj, "action", &loc)?.to_string();
        let frame_budget = match obj.get("duration") {
            None | Some(Value::Null) => return err(K::MissingField, format!("{loc}.duration"), "required field is missing"),
            Some(d) => match d.as_u64() {
                Some(n) if n >= 2 && n <= u32::MAX as u64 => n as u32,
                Some(n) => {
                    return err(K::FrameBudgetMismatch, format!("{loc}.duration"), format!("{n} frames, need at least 2"))
                }
                None => return err(K::BadType, format!("{loc}.duration"), format!("expected integer, got {d}")),
            },
        };
        let moving_ids: Vec<String> = match obj.get("object_ids") {
            None | Some(Value::Null) => {
                return err(K::MissingField, format!("{loc}.object_ids"), "required field is missing")
            }
            Some(Value::Array(ids)) => ids
                .iter()
                .enumerate()
                .map(|(j, s)| match s.as_str() {
                    Some(s) if !s.is_empty() => Ok(s.to_string()),
                    _ => err(K::BadType, format!("{loc}.object_ids[{j}]"), "expected non-empty string"),
                })
                .collect::<Parsed<_>>()?,
            Some(_) => return err(K::BadType, format!("{loc}.object_ids"), "expected an array"),
        };
        if moving_ids.is_empty() {
            return err(K::MissingField, format!("{loc}.object_ids"), "at least one moving object is required");
        }
        let goal = match obj.get("goal") {
            None | Some(Value::Null) => return err(K::MissingField, format!("{loc}.goal"), "required field is missing"),
            Some(g) => parse_goal(g, &format!("{loc}.goal"))?,
        };
        subs.push(SubInstruction {
            index: i + 1,
            text,
            frame_budget,
            moving_ids,
            goal,
        });
    }

    let sum: u64 = subs.iter().map(|s| s.frame_budget as u64).sum();
    if sum != total_frames as u64 {
        return err(
            K::FrameBudgetMismatch,
            "$.phases",
            format!("durations sum to {sum}, expected {total_frames}"),
        );
    }

    Ok(HighLevelPlan {
        source_prompt,
        total_plan_frames: total_frames,
        static_objects,
        sub_instructions: subs,
    })
}

/// Canonical JSON form of a plan; [`parse_plan_value`] inverts it.
pub fn plan_to_json(plan: &HighLevelPlan) -> Value {
    let phases: Vec<Value> = plan
        .sub_instructions
        .iter()
        .map(|s| {
            json!({
                "action": s.text,
                "duration": s.frame_budget,
                "object_ids": s.moving_ids,
                "goal": s.goal,
            })
        })
        .collect();
    json!({
        "prompt": plan.source_prompt,
        "total_frames": plan.total_plan_frames,
        "static_objects": plan.static_objects,
        "phases": phases,
    })
}

/// Read a plan shipped in a scene manifest. Phases without a `duration` share the frame budget
/// evenly, the remainder going to the last phase; everything else is validated strictly.
pub fn plan_from_manifest(value: &Value, total_frames: u32) -> Parsed<HighLevelPlan> {
    let mut value = value.clone();
    if let Some(phases) = value.get_mut("phases").and_then(Value::as_array_mut) {
        let missing = phases.iter().filter(|p| p.get("duration").is_none()).count();
        if missing > 0 && !phases.is_empty() {
            let fixed: u64 = phases.iter().filter_map(|p| p.get("duration")?.as_u64()).sum();
            let free = (total_frames as u64).saturating_sub(fixed);
            let share = free / missing as u64;
            let mut remaining = missing;
            for p in phases.iter_mut() {
                if let Some(obj) = p.as_object_mut() {
                    if !obj.contains_key("duration") {
                        remaining -= 1;
                        let n = if remaining == 0 { free - share * (missing as u64 - 1) } else { share };
                        obj.insert("duration".into(), json!(n));
                    }
                }
            }
        }
    }
    parse_plan_value(&value, total_frames)
}

fn candidate_from_frames(
    frames: Vec<(BTreeMap<String, BBox>, Option<String>)>,
    sub: &SubInstruction,
    index: usize,
    loc: &str,
) -> Parsed<TrajectoryCandidate> {
    if frames.len() != sub.frame_budget as usize {
        return err(
            K::FrameCount,
            loc,
            format!("{} frames, sub-instruction needs {}", frames.len(), sub.frame_budget),
        );
    }
    for (t, (boxes, _)) in frames.iter().enumerate() {
        if let Some(missing) = sub.moving_ids.iter().find(|id| !boxes.contains_key(*id)) {
            return err(
                K::MissingObject,
                format!("{loc}.frame[{t}]"),
                format!("moving object `{missing}` has no box"),
            );
        }
    }
    let any_caption = frames.iter().any(|(_, c)| c.is_some());
    let (frames, captions): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    Ok(TrajectoryCandidate {
        candidate_index: index,
        frames,
        captions: any_caption.then_some(captions),
    })
}

fn parse_frame_entries(v: &Value, sub: &SubInstruction, loc: &str) -> Parsed<BTreeMap<String, BBox>> {
    let entries = v
        .as_array()
        .ok_or_else(|| SchemaError::new(K::BadType, loc, "frame must be an array of [name, box] pairs"))?;
    let mut boxes = BTreeMap::new();
    for (j, entry) in entries.iter().enumerate() {
        let eloc = format!("{loc}[{j}]");
        let pair = entry
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| SchemaError::new(K::BadType, &eloc, "expected [name, [x1, y1, x2, y2]]"))?;
        let name = pair[0]
            .as_str()
            .ok_or_else(|| SchemaError::new(K::BadType, &eloc, "object name must be a string"))?;
        if !sub.moving_ids.iter().any(|m| m == name) {
            return err(K::UnknownObject, &eloc, format!("`{name}` is not a moving object of this phase"));
        }
        let b = parse_box(&pair[1], &eloc)?;
        if boxes.insert(name.to_string(), b).is_some() {
            return err(K::BadType, &eloc, format!("`{name}` appears twice in one frame"));
        }
    }
    Ok(boxes)
}

/// Split off the bracketed array at the start of `s`, respecting quoted strings.
fn leading_array(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start();
    if !s.starts_with('[') {
        return None;
    }
    let mut depth = 0i32;
    let mut in_str = false;
    let mut escaped = false;
    for (i, ch) in s.char_indices() {
        if in_str {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_str = true,
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&s[..=i], &s[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

fn is_candidate_header(line: &str) -> bool {
    let lower = line.trim_start_matches(['#', '*', ' ']).to_ascii_lowercase();
    let rest = if let Some(r) = lower.strip_prefix("trajectory") {
        r
    } else if let Some(r) = lower.strip_prefix("candidate") {
        r
    } else {
        return false;
    };
    let rest = rest.trim_start_matches([' ', '#', '_']);
    rest.starts_with(|c: char| c.is_ascii_digit()) && !rest.contains('[')
}

fn parse_line_format(text: &str, sub: &SubInstruction) -> Parsed<Vec<TrajectoryCandidate>> {
    type Frame = (BTreeMap<String, BBox>, Option<String>);
    let mut groups: Vec<Vec<(u64, Frame)>> = Vec::new();
    let mut current: Vec<(u64, Frame)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']);
        if is_candidate_header(line) {
            if !current.is_empty() {
                groups.push(std::mem::take(&mut current));
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("Frame_").or_else(|| line.strip_prefix("frame_")) else {
            continue;
        };
        let loc = format!("line {}", lineno + 1);
        let (num, rest) = rest
            .split_once(':')
            .ok_or_else(|| SchemaError::new(K::Malformed, &loc, "expected `Frame_N: [...]`"))?;
        let n: u64 = num
            .trim()
            .parse()
            .map_err(|_| SchemaError::new(K::Malformed, &loc, format!("bad frame number `{num}`")))?;
        let (array, tail) =
            leading_array(rest).ok_or_else(|| SchemaError::new(K::Malformed, &loc, "missing box list"))?;
        let value: Value =
            serde_json::from_str(array).map_err(|e| SchemaError::new(K::Malformed, &loc, e.to_string()))?;
        let boxes = parse_frame_entries(&value, sub, &loc)?;
        let caption = tail
            .trim_start_matches([',', ' '])
            .strip_prefix("caption:")
            .map(|c| c.trim().to_string())
            .filter(|c| !c.is_empty());
        current.push((n, (boxes, caption)));
    }
    if !current.is_empty() {
        groups.push(current);
    }
    if groups.is_empty() {
        return err(K::Malformed, "$", "no Frame_N lines found");
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(k, frames)| {
            let loc = format!("candidate {}", k + 1);
            for w in frames.windows(2) {
                if w[1].0 != w[0].0 + 1 {
                    return err(
                        K::FrameCount,
                        &loc,
                        format!("frame numbers jump from {} to {}", w[0].0, w[1].0),
                    );
                }
            }
            candidate_from_frames(frames.into_iter().map(|(_, f)| f).collect(), sub, k, &loc)
        })
        .collect()
}

fn is_entry(v: &Value) -> bool {
    matches!(v.as_array(), Some(a) if a.len() == 2 && a[0].is_string())
}

fn is_frame(v: &Value) -> bool {
    matches!(v.as_array(), Some(a) if a.iter().all(is_entry))
}

fn parse_json_format(value: &Value, sub: &SubInstruction) -> Parsed<Vec<TrajectoryCandidate>> {
    let top = value
        .as_array()
        .ok_or_else(|| SchemaError::new(K::BadType, "$", "expected an array"))?;
    let candidates: Vec<&Value> = match top.first() {
        None => return err(K::FrameCount, "$", "empty trajectory"),
        Some(first) if is_frame(first) => vec![value],
        Some(_) => top.iter().collect(),
    };
    candidates
        .into_iter()
        .enumerate()
        .map(|(k, cand)| {
            let loc = format!("$[{k}]");
            let frames = cand
                .as_array()
                .ok_or_else(|| SchemaError::new(K::BadType, &loc, "candidate must be an array of frames"))?;
            let parsed = frames
                .iter()
                .enumerate()
                .map(|(t, f)| Ok((parse_frame_entries(f, sub, &format!("{loc}[{t}]"))?, None)))
                .collect::<Parsed<Vec<_>>>()?;
            candidate_from_frames(parsed, sub, k, &loc)
        })
        .collect()
}

/// Parse a trajectory response into validated candidates with exactly `frame_budget` frames.
pub fn parse_trajectory_response(raw: &str, sub: &SubInstruction) -> Parsed<Vec<TrajectoryCandidate>> {
    if raw.contains("Frame_") || raw.contains("frame_") {
        return parse_line_format(raw, sub);
    }
    let value = parse_json_document(raw, '[', ']')?;
    parse_json_format(&value, sub)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(frames: u32) -> SubInstruction {
        SubInstruction {
            index: 1,
            text: "move the ball right".into(),
            frame_budget: frames,
            moving_ids: vec!["ball".into()],
            goal: GoalSpec {
                region: None,
                direction: Some(Point::new(1.0, 0.0)),
                description: "ball on the right".into(),
            },
        }
    }

    fn plan_json(durations: &[u32]) -> String {
        let phases: Vec<Value> = durations
            .iter()
            .map(|d| {
                json!({"action": "roll", "duration": d, "object_ids": ["ball"],
                       "goal": {"direction": [1.0, 0.0], "description": "right"}})
            })
            .collect();
        json!({"prompt": "roll the ball", "phases": phases}).to_string()
    }

    #[test]
    fn two_phase_plan_parses() {
        let plan = parse_plan_response(&plan_json(&[20, 21])).unwrap();
        assert_eq!(plan.sub_instructions.len(), 2);
        assert_eq!(plan.total_plan_frames, 41);
        assert_eq!(plan.sub_instructions[1].frame_budget, 21);
        assert_eq!(plan.phase_start(2), 21);
    }

    #[test]
    fn missing_duration_is_missing_field() {
        let mut v: Value = serde_json::from_str(&plan_json(&[20, 21])).unwrap();
        v["phases"][1].as_object_mut().unwrap().remove("duration");
        let e = parse_plan_response(&v.to_string()).unwrap_err();
        assert_eq!(e.kind, K::MissingField);
        assert_eq!(e.location, "$.phases[1].duration");
    }

    #[test]
    fn five_phases_out_of_range() {
        let e = parse_plan_response(&plan_json(&[8, 8, 8, 8, 9])).unwrap_err();
        assert_eq!(e.kind, K::PhaseCountOutOfRange);
    }

    #[test]
    fn budget_must_sum() {
        let e = parse_plan_response(&plan_json(&[20, 20])).unwrap_err();
        assert_eq!(e.kind, K::FrameBudgetMismatch);
    }

    #[test]
    fn plan_inside_fenced_chatter() {
        let raw = format!("Here you go:\n```json\n{}\n```\nThanks", plan_json(&[41]));
        assert!(parse_plan_response(&raw).is_ok());
    }

    #[test]
    fn manifest_plan_splits_evenly() {
        let v = json!({"phases": [
            {"action": "a", "object_ids": ["ball"], "goal": {"direction": [1.0, 0.0]}},
            {"action": "b", "object_ids": ["ball"], "goal": {"direction": [1.0, 0.0]}},
            {"action": "c", "object_ids": ["ball"], "goal": {"direction": [1.0, 0.0]}}]});
        let plan = plan_from_manifest(&v, 41).unwrap();
        let d: Vec<u32> = plan.sub_instructions.iter().map(|s| s.frame_budget).collect();
        assert_eq!(d, vec![13, 13, 15]);
    }

    fn line_response(frames: u32, name: &str) -> String {
        (0..frames)
            .map(|t| {
                let x = 0.1 + 0.05 * t as f64;
                format!("Frame_{}: [[\"{name}\", [{x:.3}, 0.4, {:.3}, 0.5]]], caption: step {t}", t + 1, x + 0.1)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn ten_frame_line_response() {
        let c = parse_trajectory_response(&line_response(10, "ball"), &sub(10)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].frames.len(), 10);
        assert_eq!(c[0].captions.as_ref().unwrap()[3].as_deref(), Some("step 3"));
    }

    #[test]
    fn unknown_object_rejected() {
        let e = parse_trajectory_response(&line_response(10, "tree"), &sub(10)).unwrap_err();
        assert_eq!(e.kind, K::UnknownObject);
    }

    #[test]
    fn inverted_box_rejected() {
        let raw = "Frame_1: [[\"ball\", [0.4, 0.4, 0.3, 0.6]]]\nFrame_2: [[\"ball\", [0.4, 0.4, 0.5, 0.6]]]";
        let e = parse_trajectory_response(raw, &sub(2)).unwrap_err();
        assert_eq!(e.kind, K::InvalidBox);
    }

    #[test]
    fn wrong_frame_count() {
        let e = parse_trajectory_response(&line_response(9, "ball"), &sub(10)).unwrap_err();
        assert_eq!(e.kind, K::FrameCount);
    }

    #[test]
    fn grouped_candidates_and_json_agree() {
        let raw = format!(
            "Trajectory 1:\n{}\nTrajectory 2:\n{}",
            line_response(3, "ball"),
            line_response(3, "ball")
        );
        let lines = parse_trajectory_response(&raw, &sub(3)).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].candidate_index, 1);

        let frames: Vec<Value> = lines[0]
            .frames
            .iter()
            .map(|f| {
                let b: [f64; 4] = f["ball"].into();
                json!([["ball", b]])
            })
            .collect();
        let single = parse_trajectory_response(&Value::Array(frames.clone()).to_string(), &sub(3)).unwrap();
        assert_eq!(single[0].frames, lines[0].frames);
        let multi = parse_trajectory_response(&json!([frames.clone(), frames]).to_string(), &sub(3)).unwrap();
        assert_eq!(multi.len(), 2);
    }

    #[test]
    fn garbage_is_malformed() {
        let e = parse_trajectory_response("I cannot help with that.", &sub(3)).unwrap_err();
        assert_eq!(e.kind, K::Malformed);
        let e = parse_plan_response("sure!").unwrap_err();
        assert_eq!(e.kind, K::Malformed);
    }
}
