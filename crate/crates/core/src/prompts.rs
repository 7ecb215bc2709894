//! Prompt templates for the remote planner and verifier backends.
//!
//! Templates use `{NAME}` placeholders; [`fill`] substitutes them and leaves unknown ones intact.

pub const PLAN_SYSTEM: &str = include_str!("../assets/prompts/plan_system.txt");
pub const PLAN_USER: &str = include_str!("../assets/prompts/plan_user.txt");
pub const PLAN_SCHEMA: &str = include_str!("../assets/prompts/plan_schema.txt");
pub const OBJECT_PROPOSAL_SYSTEM: &str = include_str!("../assets/prompts/object_proposal_system.txt");
pub const OBJECT_PROPOSAL_USER: &str = include_str!("../assets/prompts/object_proposal_user.txt");
pub const TRAJECTORY_SYSTEM: &str = include_str!("../assets/prompts/trajectory_system.txt");
pub const TRAJECTORY_USER: &str = include_str!("../assets/prompts/trajectory_user.txt");
pub const ALIGNMENT_SYSTEM: &str = include_str!("../assets/prompts/alignment_system.txt");
pub const ALIGNMENT_USER: &str = include_str!("../assets/prompts/alignment_user.txt");
pub const PHYSICS: &str = include_str!("../assets/prompts/physics.txt");

pub const COORDS_GUIDE: &str = "Boxes are [x1, y1, x2, y2] in normalized image coordinates in [0,1]. \
(0,0) is the top-left corner, x grows to the right and y grows downward. x1 < x2 and y1 < y2.";

/// Replace each `{key}` with its value.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Appended to the trajectory request so that one call yields all K candidates.
pub fn multi_candidate_instruction(k: usize) -> String {
    format!(
        "Produce {k} distinct trajectories. Start each with a line `Trajectory <n>:` (n = 1..{k}), \
followed by its Frame_N lines."
    )
}

/// In-context example for one law, slotted into the physics template.
pub fn law_example(law: crate::verify::Law) -> &'static str {
    use crate::verify::Law;
    match law {
        Law::Newton => {
            "Law: Newtonian Consistency.\n\
Positive: a ball rolls right, moving 0.04 per frame and slowing smoothly to a stop -> {\"score\": 1.0, \"explanation\": \"smooth deceleration\"}\n\
Negative: a cup is at x=0.2 in one frame and x=0.7 in the next -> {\"score\": 0.1, \"explanation\": \"teleportation between frames\"}"
        }
        Law::Penetration => {
            "Law: Penetration Violation.\n\
Positive: a box slides along the floor and stops in front of the wall -> {\"score\": 1.0, \"explanation\": \"no contact with static elements\"}\n\
Negative: a ball moves straight through a table leg -> {\"score\": 0.1, \"explanation\": \"object passes through a static obstacle\"}"
        }
        Law::Gravity => {
            "Law: Gravitational Coherence.\n\
Positive: a thrown ball rises and falls along an arc before landing -> {\"score\": 1.0, \"explanation\": \"ballistic arc\"}\n\
Negative: an apple stays still in mid-air for many frames with nothing holding it -> {\"score\": 0.2, \"explanation\": \"object hovers unsupported\"}"
        }
        Law::Deformation => {
            "Law: Deformation Consistency.\n\
Positive: a car drives across the frame with a constant box size -> {\"score\": 1.0, \"explanation\": \"stable size\"}\n\
Negative: a rigid book doubles in height while sliding -> {\"score\": 0.1, \"explanation\": \"unexplained size change\"}"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_replaces_every_occurrence() {
        let s = fill("{A} and {A} but {B}", &[("A", "x")]);
        assert_eq!(s, "x and x but {B}");
    }

    #[test]
    fn templates_carry_expected_slots() {
        assert!(TRAJECTORY_USER.contains("{CHUNK_START}"));
        assert!(TRAJECTORY_SYSTEM.contains("{COORDS_GUIDE}"));
        assert!(ALIGNMENT_USER.contains("{END_GOAL}"));
        assert!(PHYSICS.contains("{LAW_EXAMPLE}"));
        assert!(PLAN_USER.contains("{text_prompt}"));
    }
}
