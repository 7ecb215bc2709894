//! Deterministic planner backend used for tests, demos, and ablation sweeps.
//!
//! Candidates are perturbations of the straight path from each object's current box to its goal.
//! Some are deliberately broken ("planted violations") so that a verifier's ranking can be checked
//! against known ground truth. Every candidate is a pure function of
//! `(seed, phase, round, batch, slot)`, so asking for more candidates never changes earlier ones.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{plan_from_manifest, PlannerBackend, ProposalRequest, TrajectoryCandidate};
use crate::error::{Error, Result};
use crate::scene::{bbox_center, BBox, HighLevelPlan, Point, SceneBundle, SubInstruction, DEFAULT_PLAN_FRAMES};

/// Distance travelled when a goal gives only a direction.
const DIRECTION_TRAVEL: f64 = 0.3;
const TELEPORT_OFFSET: f64 = 0.25;
const HOVER_LIFT: f64 = 0.2;
const DRIFT_GROWTH: f64 = 2.0;
const CLEAN_JITTER: f64 = 0.02;
const CLEAN_MAX_EASE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    /// Exact constant-velocity path to the goal.
    Straight,
    /// Straight path with a jittered endpoint and a mild ease-in/out.
    Clean,
    /// Starts displaced sideways and snaps back halfway through.
    Teleport,
    /// Arcs through the centroid of the static obstacle mask.
    Penetration,
    /// Straight path lifted off its support.
    Hover,
    /// Straight path whose box height triples.
    SizeDrift,
}

impl CandidateKind {
    pub const VIOLATIONS: [CandidateKind; 4] = [Self::Teleport, Self::Penetration, Self::Hover, Self::SizeDrift];

    pub fn is_violation(self) -> bool {
        Self::VIOLATIONS.contains(&self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Straight => "straight",
            Self::Clean => "clean",
            Self::Teleport => "teleport",
            Self::Penetration => "penetration",
            Self::Hover => "hover",
            Self::SizeDrift => "size_drift",
        }
    }
}

impl fmt::Display for CandidateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedMode {
    /// One clean candidate plus one of each violation per five slots, shuffled per round.
    Planted,
    /// Each slot independently clean with the given probability, otherwise a random violation.
    Mixed { clean_fraction: f64 },
    /// Every slot of the given kind.
    Only(CandidateKind),
}

#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    seed: u64,
    mode: ScriptedMode,
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 chained over the parts
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

impl ScriptedPlanner {
    pub fn new(seed: u64, mode: ScriptedMode) -> Self {
        Self { seed, mode }
    }

    /// Planted-violation planner, the default test double.
    pub fn planted(seed: u64) -> Self {
        Self::new(seed, ScriptedMode::Planted)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng(&self, parts: &[u64]) -> ChaCha8Rng {
        let mut all = vec![self.seed];
        all.extend_from_slice(parts);
        ChaCha8Rng::seed_from_u64(mix(&all))
    }

    /// Kinds assigned to slots `0..k` for a given phase, round and batch.
    pub fn planned_kinds(&self, phase: usize, round: u32, batch: u32, k: usize) -> Vec<CandidateKind> {
        match &self.mode {
            ScriptedMode::Only(kind) => vec![*kind; k],
            ScriptedMode::Planted if batch > 0 => vec![CandidateKind::Clean; k],
            ScriptedMode::Planted => {
                let mut layout = [
                    CandidateKind::Clean,
                    CandidateKind::Teleport,
                    CandidateKind::Penetration,
                    CandidateKind::Hover,
                    CandidateKind::SizeDrift,
                ];
                layout.shuffle(&mut self.rng(&[phase as u64, round as u64, batch as u64, u64::MAX]));
                (0..k).map(|j| layout[j % layout.len()]).collect()
            }
            ScriptedMode::Mixed { clean_fraction } => (0..k)
                .map(|j| {
                    let mut rng = self.rng(&[phase as u64, round as u64, batch as u64, j as u64, 1]);
                    if rng.gen_bool(clean_fraction.clamp(0.0, 1.0)) {
                        CandidateKind::Clean
                    } else {
                        *CandidateKind::VIOLATIONS.choose(&mut rng).expect("non-empty")
                    }
                })
                .collect(),
        }
    }

    /// Build one candidate of the given kind.
    pub fn candidate(
        &self,
        kind: CandidateKind,
        sub: &SubInstruction,
        current: &BTreeMap<String, BBox>,
        scene: &SceneBundle,
        rng: &mut ChaCha8Rng,
    ) -> TrajectoryCandidate {
        let frames_n = sub.frame_budget as usize;
        let start_of = |id: &str| {
            current
                .get(id)
                .copied()
                .or_else(|| scene.object(id).map(|o| o.initial_box))
                .unwrap_or_else(|| BBox::new(0.45, 0.45, 0.55, 0.55).expect("valid"))
        };
        let subject = sub.subject();
        let subject_start = start_of(subject);
        let target = goal_center(sub, &subject_start);
        let shift = target.sub(bbox_center(&subject_start));

        let mut frames = vec![BTreeMap::new(); frames_n];
        for id in &sub.moving_ids {
            let start = start_of(id);
            let from = bbox_center(&start);
            let to = Point::new(from.x + shift.x, from.y + shift.y);
            let kind = if id == subject { kind } else { CandidateKind::Straight };
            let path = build_path(kind, from, to, &start, frames_n, scene, rng);
            for (frame, b) in frames.iter_mut().zip(path) {
                frame.insert(id.clone(), b);
            }
        }
        TrajectoryCandidate::new(0, frames)
    }
}

fn goal_center(sub: &SubInstruction, start: &BBox) -> Point {
    if let Some(region) = sub.goal.region {
        return bbox_center(&region);
    }
    let c = bbox_center(start);
    let d = sub.goal.direction.unwrap_or(Point::new(0.0, 0.0));
    Point::new(c.x + d.x * DIRECTION_TRAVEL, c.y + d.y * DIRECTION_TRAVEL)
}

fn lerp(a: Point, b: Point, s: f64) -> Point {
    Point::new(a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s)
}

fn place(center: Point, w: f64, h: f64) -> BBox {
    BBox::centered_within(center, w, h).expect("box of positive size inside the unit square")
}

/// Pixel-mean of the static mask in normalized coordinates.
fn obstacle_centroid(scene: &SceneBundle) -> Option<Point> {
    let m = &scene.static_mask;
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) {
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
                n += 1;
            }
        }
    }
    (n > 0).then(|| Point::new(sx / n as f64 / m.width() as f64, sy / n as f64 / m.height() as f64))
}

fn build_path(
    kind: CandidateKind,
    from: Point,
    to: Point,
    start: &BBox,
    n: usize,
    scene: &SceneBundle,
    rng: &mut ChaCha8Rng,
) -> Vec<BBox> {
    let (w, h) = (start.width(), start.height());
    let u = |t: usize| if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
    match kind {
        CandidateKind::Straight => (0..n).map(|t| place(lerp(from, to, u(t)), w, h)).collect(),
        CandidateKind::Clean => {
            let jitter = rng.gen_range(-CLEAN_JITTER..=CLEAN_JITTER);
            let ease = rng.gen_range(0.0..=CLEAN_MAX_EASE);
            let end = Point::new(to.x + jitter, to.y);
            (0..n)
                .map(|t| {
                    let v = u(t);
                    let s = (1.0 - ease) * v + ease * v * v * (3.0 - 2.0 * v);
                    place(lerp(from, end, s), w, h)
                })
                .collect()
        }
        CandidateKind::Teleport => {
            let half = n.div_ceil(2);
            (0..n)
                .map(|t| {
                    let c = lerp(from, to, u(t));
                    if t >= half {
                        return place(c, w, h);
                    }
                    let room_left = c.x - w / 2.0;
                    let room_right = 1.0 - (c.x + w / 2.0);
                    let c = if room_left.max(room_right) >= TELEPORT_OFFSET {
                        let dx = if room_right >= room_left { TELEPORT_OFFSET } else { -TELEPORT_OFFSET };
                        Point::new(c.x + dx, c.y)
                    } else {
                        let dy = if c.y >= 0.5 { -TELEPORT_OFFSET } else { TELEPORT_OFFSET };
                        Point::new(c.x, c.y + dy)
                    };
                    place(c, w, h)
                })
                .collect()
        }
        CandidateKind::Penetration => {
            let mid = lerp(from, to, 0.5);
            let through = obstacle_centroid(scene).unwrap_or(Point::new(mid.x, mid.y - 0.25));
            // quadratic Bezier that passes through `through` at its midpoint
            let ctrl = Point::new(2.0 * through.x - mid.x, 2.0 * through.y - mid.y);
            (0..n)
                .map(|t| {
                    let s = u(t);
                    let a = (1.0 - s) * (1.0 - s);
                    let b = 2.0 * s * (1.0 - s);
                    let c = s * s;
                    let p = Point::new(
                        a * from.x + b * ctrl.x + c * to.x,
                        a * from.y + b * ctrl.y + c * to.y,
                    );
                    place(p, w, h)
                })
                .collect()
        }
        CandidateKind::Hover => (0..n)
            .map(|t| {
                let c = lerp(from, to, u(t));
                place(Point::new(c.x, c.y - HOVER_LIFT), w, h)
            })
            .collect(),
        CandidateKind::SizeDrift => (0..n)
            .map(|t| {
                let v = u(t);
                let c = lerp(from, to, v * v);
                let grown = (h * (1.0 + DRIFT_GROWTH * v)).min(c.y + h / 2.0).max(h);
                // bottom edge stays put while the box grows upward
                let bottom = c.y + h / 2.0;
                place(Point::new(c.x, bottom - grown / 2.0), w, grown)
            })
            .collect(),
    }
}

impl PlannerBackend for ScriptedPlanner {
    fn propose_plan(&mut self, prompt: &str, scene: &SceneBundle) -> Result<HighLevelPlan> {
        let value = scene
            .plan
            .as_ref()
            .ok_or_else(|| Error::Config("the scripted planner needs a `plan` in the scene manifest".into()))?;
        let mut plan = plan_from_manifest(value, DEFAULT_PLAN_FRAMES)?;
        if !prompt.is_empty() {
            plan.source_prompt = prompt.to_string();
        }
        if plan.static_objects.is_empty() {
            plan.static_objects = scene.static_labels.clone();
        }
        plan.check_objects(scene)?;
        Ok(plan)
    }

    fn propose_trajectories(&mut self, req: &ProposalRequest<'_>) -> Result<Vec<TrajectoryCandidate>> {
        let kinds = self.planned_kinds(req.sub.index, req.round, req.batch, req.k);
        Ok(kinds
            .into_iter()
            .enumerate()
            .map(|(j, kind)| {
                let mut rng = self.rng(&[req.sub.index as u64, req.round as u64, req.batch as u64, j as u64]);
                let mut c = self.candidate(kind, req.sub, &req.context.boxes, req.scene, &mut rng);
                c.candidate_index = j;
                c
            })
            .collect())
    }
}
