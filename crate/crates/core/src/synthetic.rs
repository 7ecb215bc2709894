//! Seeded synthetic scenes: one colored shape resting on the ground, an optional floating shelf,
//! and a plan that moves the shape across the canvas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::plan_to_json;
use crate::raster::{round_half_up, Mask, PixelRect, RgbImage};
use crate::scene::{
    bbox_center, cut_sprite, BBox, GoalSpec, HighLevelPlan, ObjectAsset, Point, SceneBundle, SubInstruction,
    DEFAULT_PLAN_FRAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    /// Canvas edge in pixels (square canvas).
    pub canvas: u32,
    pub shape: Shape,
    /// Object edge as a fraction of the canvas.
    pub object_size: f64,
    pub color: [u8; 3],
    pub sky_color: [u8; 3],
    pub ground_color: [u8; 3],
    pub ground_line: f64,
    pub obstacle: Option<BBox>,
    pub obstacle_color: [u8; 3],
    /// 1 or 2; two phases stop halfway.
    pub phases: usize,
    /// Replaces the generated goal of the last phase.
    pub goal: Option<GoalSpec>,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            canvas: 128,
            shape: Shape::Square,
            object_size: 0.12,
            color: [200, 40, 40],
            sky_color: [180, 210, 235],
            ground_color: [110, 90, 60],
            ground_line: 0.9,
            obstacle: Some(BBox::new(0.4, 0.3, 0.6, 0.45).expect("valid shelf")),
            obstacle_color: [90, 90, 90],
            phases: 1,
            goal: None,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.canvas < 16 {
            return Err(Error::Config("canvas must be at least 16 px".into()));
        }
        if !(0.02..=0.3).contains(&self.object_size) {
            return Err(Error::Config("object_size must lie in [0.02, 0.3]".into()));
        }
        if !(self.object_size..=1.0).contains(&self.ground_line) {
            return Err(Error::Config("ground_line must leave room for the object".into()));
        }
        if !(1..=2).contains(&self.phases) {
            return Err(Error::Config("phases must be 1 or 2".into()));
        }
        if let Some(g) = &self.goal {
            g.validate().map_err(Error::Config)?;
        }
        Ok(())
    }
}

fn goal_around(center: Point, direction: f64, description: String) -> GoalSpec {
    let region = BBox::new(
        (center.x - 0.08).max(0.0),
        (center.y - 0.1).max(0.0),
        (center.x + 0.08).min(1.0),
        (center.y + 0.1).min(1.0),
    )
    .expect("goal region inside the canvas");
    GoalSpec {
        region: Some(region),
        direction: Some(Point::new(direction, 0.0)),
        description,
    }
}

/// Build the scene described by `spec`. The same spec always yields the same bundle.
pub fn make_synthetic(spec: &SyntheticSceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut start_x: f64 = rng.gen_range(0.15..0.25);
    let mut goal_x: f64 = rng.gen_range(0.75..0.85);
    let mirrored = rng.gen_bool(0.5);
    if mirrored {
        start_x = 1.0 - start_x;
        goal_x = 1.0 - goal_x;
    }

    let n = spec.canvas;
    let ground_px = round_half_up(spec.ground_line * n as f64, n);
    let mut background = RgbImage::filled(n, n, spec.sky_color);
    for y in ground_px..n {
        for x in 0..n {
            background.put(x, y, spec.ground_color);
        }
    }
    let mut static_mask = Mask::new(n, n);
    if let Some(ob) = spec.obstacle {
        let r = ob.pixel_rect(n, n);
        static_mask.fill_rect(r, true);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                background.put(x, y, spec.obstacle_color);
            }
        }
    }

    let side = round_half_up(spec.object_size * n as f64, n).max(2);
    let x0 = round_half_up(start_x * n as f64 - side as f64 / 2.0, n - side);
    let rect = PixelRect {
        x0,
        y0: ground_px - side,
        x1: x0 + side,
        y1: ground_px,
    };
    let mut mask = Mask::new(n, n);
    let r = side as f64 / 2.0;
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let inside = match spec.shape {
                Shape::Square => true,
                Shape::Disc => {
                    let dx = x as f64 + 0.5 - (rect.x0 as f64 + r);
                    let dy = y as f64 + 0.5 - (rect.y0 as f64 + r);
                    dx * dx + dy * dy <= r * r
                }
            };
            mask.set(x, y, inside);
        }
    }
    let mut frame = background.clone();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if mask.get(x, y) {
                frame.put(x, y, spec.color);
            }
        }
    }
    let sprite = cut_sprite(&frame, &mask).ok_or_else(|| Error::Config("object mask is empty".into()))?;
    let initial_box = BBox::from_pixel_rect(rect, n, n).map_err(|e| Error::Config(format!("object box: {e:?}")))?;

    let (id, label) = match spec.shape {
        Shape::Square => ("block", "red block"),
        Shape::Disc => ("ball", "red ball"),
    };
    let direction = if goal_x > start_x { 1.0 } else { -1.0 };
    let side_name = if direction > 0.0 { "right" } else { "left" };
    let prompt = format!("The {label} slides along the ground to the {side_name} side of the scene.");
    let start = bbox_center(&initial_box);
    let goal_center = Point::new(goal_x, start.y);
    let final_goal = spec
        .goal
        .clone()
        .unwrap_or_else(|| goal_around(goal_center, direction, format!("the {label} rests at the {side_name} side")));
    let ids = vec![id.to_string()];
    let subs = if spec.phases == 1 {
        vec![SubInstruction {
            index: 1,
            text: format!("slide the {label} to the {side_name}"),
            frame_budget: DEFAULT_PLAN_FRAMES,
            moving_ids: ids,
            goal: final_goal,
        }]
    } else {
        let half = DEFAULT_PLAN_FRAMES / 2;
        let mid = Point::new((start.x + goal_x) / 2.0, start.y);
        vec![
            SubInstruction {
                index: 1,
                text: format!("slide the {label} to the middle"),
                frame_budget: half,
                moving_ids: ids.clone(),
                goal: goal_around(mid, direction, format!("the {label} reaches the middle")),
            },
            SubInstruction {
                index: 2,
                text: format!("keep sliding the {label} to the {side_name}"),
                frame_budget: DEFAULT_PLAN_FRAMES - half,
                moving_ids: ids,
                goal: final_goal,
            },
        ]
    };
    let static_labels: Vec<String> = spec.obstacle.iter().map(|_| "shelf".to_string()).collect();
    let plan = HighLevelPlan {
        source_prompt: prompt.clone(),
        total_plan_frames: DEFAULT_PLAN_FRAMES,
        static_objects: static_labels.clone(),
        sub_instructions: subs,
    };
    let object = ObjectAsset {
        id: id.into(),
        label: label.into(),
        sprite,
        mask,
        initial_box,
        resizable: false,
    };
    SceneBundle::new(
        frame,
        background,
        vec![object],
        static_mask,
        Some(spec.ground_line),
        Some(prompt),
        static_labels,
        Some(plan_to_json(&plan)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::plan_from_manifest;
    use crate::scene::{load_scene_bundle, save_scene_bundle};
    use std::fs;

    #[test]
    fn default_bundle_loads() {
        let scene = make_synthetic(&SyntheticSceneSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene_bundle(&scene, dir.path()).unwrap();
        let loaded = load_scene_bundle(dir.path()).unwrap();
        assert_eq!(loaded.objects.len(), 1);
        let plan = plan_from_manifest(loaded.plan.as_ref().unwrap(), DEFAULT_PLAN_FRAMES).unwrap();
        assert_eq!(plan.sub_instructions.len(), 1);
        let b = loaded.objects[0].initial_box;
        assert!((b.y_max() - 0.9).abs() < 1e-2);
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = SyntheticSceneSpec::with_seed(42);
        save_scene_bundle(&make_synthetic(&spec).unwrap(), dir_a.path()).unwrap();
        save_scene_bundle(&make_synthetic(&spec).unwrap(), dir_b.path()).unwrap();
        fn files(dir: &std::path::Path, out: &mut Vec<std::path::PathBuf>) {
            for e in fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    files(&p, out);
                } else {
                    out.push(p);
                }
            }
        }
        let mut all = Vec::new();
        files(dir_a.path(), &mut all);
        assert!(all.len() >= 5);
        for a in all {
            let rel = a.strip_prefix(dir_a.path()).unwrap();
            assert_eq!(fs::read(&a).unwrap(), fs::read(dir_b.path().join(rel)).unwrap(), "{rel:?} differs");
        }
    }

    #[test]
    fn obstacle_in_goal_region_is_valid() {
        let goal = BBox::new(0.7, 0.75, 0.9, 0.95).unwrap();
        let spec = SyntheticSceneSpec {
            obstacle: Some(goal),
            goal: Some(GoalSpec {
                region: Some(goal),
                direction: None,
                description: "inside the crate".into(),
            }),
            ..SyntheticSceneSpec::with_seed(3)
        };
        let scene = make_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scene_bundle(&scene, dir.path()).unwrap();
        assert!(load_scene_bundle(dir.path()).is_ok());
    }

    #[test]
    fn disc_and_two_phase_variants() {
        let spec = SyntheticSceneSpec {
            shape: Shape::Disc,
            phases: 2,
            ..SyntheticSceneSpec::with_seed(5)
        };
        let scene = make_synthetic(&spec).unwrap();
        let plan = plan_from_manifest(scene.plan.as_ref().unwrap(), DEFAULT_PLAN_FRAMES).unwrap();
        assert_eq!(plan.sub_instructions.iter().map(|s| s.frame_budget).collect::<Vec<_>>(), vec![20, 21]);
        assert!(scene.objects[0].mask.count() < scene.objects[0].sprite.width() as usize * scene.objects[0].sprite.height() as usize);
    }
}
