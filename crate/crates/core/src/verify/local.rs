//! Deterministic verifier: geometric checks on the candidate boxes.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::{fit_quadratic, Law, LawScore, SemanticScore, VerificationReport, Verifier, VerifyInput};
use crate::error::Result;
use crate::planner::TrajectoryCandidate;
use crate::raster::{round_half_up, Mask, PixelRect};
use crate::scene::{bbox_center, BBox, GoalSpec, SceneBundle};

/// Tunable thresholds of the local checks. Distances are normalized image units per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalThresholds {
    pub accel_ok: f64,
    pub accel_zero: f64,
    pub jump: f64,
    pub jump_cap: f64,
    pub penetration_ok: f64,
    pub penetration_zero: f64,
    pub support_band: f64,
    pub stack_tolerance: f64,
    pub min_run: usize,
    pub g_min: f64,
    pub hover_eps: f64,
    pub hover_min_run: usize,
    pub gravity_violation: f64,
    pub deformation_ok: f64,
    pub deformation_zero: f64,
}

impl Default for LocalThresholds {
    fn default() -> Self {
        Self {
            accel_ok: 0.02,
            accel_zero: 0.10,
            jump: 0.15,
            jump_cap: 0.3,
            penetration_ok: 0.05,
            penetration_zero: 0.5,
            support_band: 0.02,
            stack_tolerance: 0.01,
            min_run: 3,
            g_min: 0.001,
            hover_eps: 0.005,
            hover_min_run: 5,
            gravity_violation: 0.2,
            deformation_ok: 0.05,
            deformation_zero: 0.5,
        }
    }
}

/// 1 up to `ok`, 0 from `zero` on, linear in between.
pub fn band(v: f64, ok: f64, zero: f64) -> f64 {
    if v <= ok {
        1.0
    } else if v >= zero {
        0.0
    } else {
        (zero - v) / (zero - ok)
    }
}

pub fn verify_semantic_local(candidate: &TrajectoryCandidate, goal: &GoalSpec, subject: &str) -> SemanticScore {
    let centers = candidate.centers(subject);
    let (Some(&first), Some(&last)) = (centers.first(), centers.last()) else {
        return SemanticScore {
            score: 0.0,
            explanation: format!("`{subject}` does not appear in the candidate"),
        };
    };
    let mut terms = Vec::new();
    let mut notes = Vec::new();
    if let Some(region) = goal.region {
        if region.contains(last) {
            terms.push(1.0);
            notes.push("final center inside goal region".to_string());
        } else {
            let d = last.dist(bbox_center(&region));
            let t = 1.0 - (d / SQRT_2).clamp(0.0, 1.0);
            terms.push(t);
            notes.push(format!("final center {d:.3} from goal region center"));
        }
    }
    if let Some(dir) = goal.direction {
        let disp = last.sub(first);
        let n = disp.norm();
        if n < 1e-12 {
            terms.push(0.5);
            notes.push("no net displacement".to_string());
        } else {
            let cos = ((disp.x * dir.x + disp.y * dir.y) / (n * dir.norm())).clamp(-1.0, 1.0);
            terms.push((1.0 + cos) / 2.0);
            notes.push(format!("net displacement at cos {cos:.3} to goal direction"));
        }
    }
    let score = if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    };
    SemanticScore {
        score,
        explanation: notes.join("; "),
    }
}

pub fn verify_newton(candidate: &TrajectoryCandidate, th: &LocalThresholds) -> LawScore {
    let mut score: f64 = 1.0;
    let mut notes = Vec::new();
    for id in candidate.object_ids() {
        let c = candidate.centers(id);
        let v: Vec<_> = c.windows(2).map(|w| w[1].sub(w[0])).collect();
        let max_v = v.iter().map(|d| d.norm()).fold(0.0, f64::max);
        let mut s = if c.len() < 3 {
            notes.push(format!("{id}: fewer than 3 frames, acceleration not checked"));
            1.0
        } else {
            let max_a = v.windows(2).map(|w| w[1].sub(w[0]).norm()).fold(0.0, f64::max);
            let s = band(max_a, th.accel_ok, th.accel_zero);
            if s < 1.0 {
                notes.push(format!("{id}: peak acceleration {max_a:.3} per frame^2"));
            }
            s
        };
        if max_v > th.jump {
            s = s.min(th.jump_cap);
            notes.push(format!("{id}: jump of {max_v:.3} in one frame (teleportation)"));
        }
        score = score.min(s);
    }
    let explanation = if notes.is_empty() {
        "smooth, bounded accelerations".to_string()
    } else {
        notes.join("; ")
    };
    LawScore::new(Law::Newton, score, explanation)
}

/// Summed-area table of a mask for O(1) rectangle counts.
#[derive(Debug, Clone)]
pub struct MaskIntegral {
    width: u32,
    height: u32,
    sums: Vec<u64>,
}

impl MaskIntegral {
    pub fn new(mask: &Mask) -> Self {
        let (w, h) = mask.dimensions();
        let stride = w as usize + 1;
        let mut sums = vec![0u64; stride * (h as usize + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += mask.get(x, y) as u64;
                let i = (y as usize + 1) * stride + x as usize + 1;
                sums[i] = sums[i - stride] + row;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Number of set pixels inside `rect` (clipped to the mask).
    pub fn count(&self, rect: PixelRect) -> u64 {
        let r = rect.clip(self.width, self.height);
        if r.width() == 0 || r.height() == 0 {
            return 0;
        }
        let stride = self.width as usize + 1;
        let at = |x: u32, y: u32| self.sums[y as usize * stride + x as usize];
        at(r.x1, r.y1) + at(r.x0, r.y0) - at(r.x0, r.y1) - at(r.x1, r.y0)
    }
}

/// Fraction of the box's pixel footprint covered by the mask.
pub fn overlap_fraction(integral: &MaskIntegral, b: &BBox) -> f64 {
    let rect = b.pixel_rect(integral.width, integral.height);
    integral.count(rect) as f64 / rect.area() as f64
}

pub fn verify_penetration(candidate: &TrajectoryCandidate, scene: &SceneBundle, th: &LocalThresholds) -> LawScore {
    if scene.static_mask.is_empty() {
        return LawScore::new(Law::Penetration, 1.0, "no static obstacles");
    }
    let integral = MaskIntegral::new(&scene.static_mask);
    let mut worst: Option<(f64, usize, &str)> = None;
    for (t, frame) in candidate.frames.iter().enumerate() {
        for (id, b) in frame {
            let f = overlap_fraction(&integral, b);
            if worst.is_none_or(|(w, _, _)| f > w) {
                worst = Some((f, t, id));
            }
        }
    }
    let Some((f, t, id)) = worst else {
        return LawScore::new(Law::Penetration, 1.0, "no boxes");
    };
    let score = band(f, th.penetration_ok, th.penetration_zero);
    let explanation = if f == 0.0 {
        "no contact with static elements".to_string()
    } else {
        format!("{id} overlaps static elements by {:.1}% at frame {}", f * 100.0, t + 1)
    };
    LawScore::new(Law::Penetration, score, explanation)
}

fn band_below(b: &BBox, depth: f64, width: u32, height: u32) -> Option<PixelRect> {
    let r = b.pixel_rect(width, height);
    let y0 = round_half_up(b.y_max() * height as f64, height);
    let mut y1 = round_half_up((b.y_max() + depth) * height as f64, height);
    if y0 >= height {
        return None;
    }
    if y1 <= y0 {
        y1 = y0 + 1;
    }
    Some(PixelRect { x0: r.x0, y0, x1: r.x1, y1 })
}

fn supported(
    b: &BBox,
    others: impl Iterator<Item = BBox>,
    scene: &SceneBundle,
    integral: &MaskIntegral,
    th: &LocalThresholds,
) -> bool {
    if b.y_max() + th.support_band >= scene.ground_line() {
        return true;
    }
    if band_below(b, th.support_band, scene.width, scene.height).is_some_and(|r| integral.count(r) > 0) {
        return true;
    }
    let (lo, hi) = (b.y_max() - th.stack_tolerance, b.y_max() + th.support_band);
    others.into_iter().any(|o| {
        let horizontal = o.x_min() < b.x_max() && o.x_max() > b.x_min();
        horizontal && (lo..=hi).contains(&o.y_min())
    })
}

pub fn verify_gravity(
    candidate: &TrajectoryCandidate,
    scene: &SceneBundle,
    held: &BTreeMap<String, BBox>,
    th: &LocalThresholds,
) -> LawScore {
    let integral = MaskIntegral::new(&scene.static_mask);
    let mut score: f64 = 1.0;
    let mut notes = Vec::new();
    for id in candidate.object_ids() {
        // (frame, center y) for unsupported frames, split into maximal runs
        let mut runs: Vec<Vec<f64>> = Vec::new();
        let mut current: Vec<f64> = Vec::new();
        let mut first_frame = Vec::new();
        for (t, frame) in candidate.frames.iter().enumerate() {
            let Some(b) = frame.get(id) else {
                continue;
            };
            let others = frame
                .iter()
                .filter(|(k, _)| k.as_str() != id)
                .map(|(_, v)| *v)
                .chain(held.iter().filter(|(k, _)| k.as_str() != id && !frame.contains_key(*k)).map(|(_, v)| *v));
            if supported(b, others, scene, &integral, th) {
                if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
            } else {
                if current.is_empty() {
                    first_frame.push(t + 1);
                }
                current.push(bbox_center(b).y);
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
        for (run, start) in runs.iter().zip(first_frame) {
            if run.len() < th.min_run {
                continue;
            }
            let travel: f64 = run.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let curvature = fit_quadratic(run).map_or(0.0, |q| q.c2);
            if run.len() >= th.hover_min_run && travel < th.hover_eps {
                score = score.min(th.gravity_violation);
                notes.push(format!("{id} hovers unsupported for {} frames from frame {start}", run.len()));
            } else if curvature < th.g_min {
                score = score.min(th.gravity_violation);
                notes.push(format!(
                    "{id} unsupported for {} frames from frame {start} without falling (curvature {curvature:.4})",
                    run.len()
                ));
            }
        }
    }
    let explanation = if notes.is_empty() {
        "objects supported or on ballistic arcs".to_string()
    } else {
        notes.join("; ")
    };
    LawScore::new(Law::Gravity, score, explanation)
}

pub fn verify_deformation(candidate: &TrajectoryCandidate, scene: &SceneBundle, th: &LocalThresholds) -> LawScore {
    let mut worst: Option<(f64, &str)> = None;
    for id in candidate.object_ids() {
        if scene.object(id).is_some_and(|o| o.resizable) {
            continue;
        }
        let boxes = candidate.boxes(id);
        let Some(first) = boxes.first() else {
            continue;
        };
        let (w1, h1) = (first.width(), first.height());
        let d = boxes
            .iter()
            .map(|b| (b.width() / w1 - 1.0).abs().max((b.height() / h1 - 1.0).abs()))
            .fold(0.0, f64::max);
        if worst.is_none_or(|(w, _)| d > w) {
            worst = Some((d, id));
        }
    }
    match worst {
        None => LawScore::new(Law::Deformation, 1.0, "no rigid objects to check"),
        Some((d, id)) => {
            let explanation = if d <= th.deformation_ok {
                "stable object size".to_string()
            } else {
                format!("{id} size drifts by {:.1}%", d * 100.0)
            };
            LawScore::new(Law::Deformation, band(d, th.deformation_ok, th.deformation_zero), explanation)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LocalVerifier {
    pub thresholds: LocalThresholds,
}

impl LocalVerifier {
    pub fn new(thresholds: LocalThresholds) -> Self {
        Self { thresholds }
    }

    pub fn report(&self, input: &VerifyInput<'_>) -> Result<VerificationReport> {
        let th = &self.thresholds;
        let c = input.candidate;
        let semantic = verify_semantic_local(c, &input.sub.goal, input.sub.subject());
        let laws = vec![
            verify_newton(c, th),
            verify_penetration(c, input.scene, th),
            verify_gravity(c, input.scene, input.held, th),
            verify_deformation(c, input.scene, th),
        ];
        VerificationReport::assemble(c.candidate_index, semantic, laws, *input.weights)
    }
}

impl Verifier for LocalVerifier {
    fn verify(&mut self, input: &VerifyInput<'_>) -> Result<VerificationReport> {
        self.report(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RgbImage;
    use crate::scene::Point;

    fn cand(boxes: Vec<[f64; 4]>) -> TrajectoryCandidate {
        let frames = boxes
            .into_iter()
            .map(|b| BTreeMap::from([("a".to_string(), BBox::try_from(b).unwrap())]))
            .collect();
        TrajectoryCandidate::new(0, frames)
    }

    fn at_y(ys: &[f64]) -> TrajectoryCandidate {
        cand(ys.iter().map(|&y| [0.45, y - 0.05, 0.55, y + 0.05]).collect())
    }

    fn empty_scene(mask: Mask, ground: Option<f64>) -> SceneBundle {
        let (w, h) = mask.dimensions();
        SceneBundle::new(
            RgbImage::new(w, h),
            RgbImage::new(w, h),
            vec![],
            mask,
            ground,
            None,
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn band_is_linear() {
        assert_eq!(band(0.05, 0.05, 0.5), 1.0);
        assert!((band(0.275, 0.05, 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(band(0.7, 0.05, 0.5), 0.0);
    }

    #[test]
    fn semantic_terms() {
        let c = cand(vec![[0.1, 0.4, 0.2, 0.5], [0.4, 0.4, 0.5, 0.5]]);
        let inside = GoalSpec {
            region: Some(BBox::new(0.3, 0.3, 0.6, 0.6).unwrap()),
            direction: None,
            description: String::new(),
        };
        assert_eq!(verify_semantic_local(&c, &inside, "a").score, 1.0);
        let opposite = GoalSpec {
            region: None,
            direction: Some(Point::new(-1.0, 0.0)),
            description: String::new(),
        };
        assert!(verify_semantic_local(&c, &opposite, "a").score.abs() < 1e-12);
        // final center (0.45, 0.45); region centered 0.5 away on each axis -> d = 0.7071
        let far = GoalSpec {
            region: Some(BBox::new(0.9, 0.9, 1.0, 1.0).unwrap()),
            direction: None,
            description: String::new(),
        };
        let s = verify_semantic_local(&c, &far, "a").score;
        assert!((s - 0.5).abs() < 1e-9, "{s}");
    }

    #[test]
    fn newton_examples() {
        let th = LocalThresholds::default();
        let still = cand(vec![[0.1, 0.1, 0.2, 0.2]; 5]);
        assert_eq!(verify_newton(&still, &th).score, 1.0);
        let uniform = cand((0..8).map(|t| {
            let x = 0.05 * t as f64;
            [x, 0.1, x + 0.1, 0.2]
        }).collect());
        assert_eq!(verify_newton(&uniform, &th).score, 1.0);
        let jump = cand(vec![[0.1, 0.1, 0.2, 0.2], [0.1, 0.1, 0.2, 0.2], [0.5, 0.1, 0.6, 0.2], [0.5, 0.1, 0.6, 0.2]]);
        assert!(verify_newton(&jump, &th).score <= 0.3);
        let short = cand(vec![[0.1, 0.1, 0.2, 0.2], [0.11, 0.1, 0.21, 0.2]]);
        let s = verify_newton(&short, &th);
        assert_eq!(s.score, 1.0);
        assert!(s.explanation.contains("fewer than 3"));
    }

    #[test]
    fn penetration_examples() {
        let th = LocalThresholds::default();
        let c = cand(vec![[0.25, 0.25, 0.75, 0.75]]);
        let scene = empty_scene(Mask::new(100, 100), None);
        assert_eq!(verify_penetration(&c, &scene, &th).score, 1.0);
        let mut full = Mask::new(100, 100);
        full.fill_rect(PixelRect { x0: 0, y0: 0, x1: 100, y1: 100 }, true);
        assert_eq!(verify_penetration(&c, &empty_scene(full, None), &th).score, 0.0);
        // 40x40 px box, obstacle strip 11x40 inside it: 440 / 1600 = 0.275
        let mut m = Mask::new(100, 100);
        m.fill_rect(PixelRect { x0: 30, y0: 30, x1: 41, y1: 70 }, true);
        let c = cand(vec![[0.3, 0.3, 0.7, 0.7]]);
        let s = verify_penetration(&c, &empty_scene(m, None), &th).score;
        assert!((s - 0.5).abs() < 1e-12, "{s}");
    }

    #[test]
    fn integral_matches_brute_force() {
        let mut m = Mask::new(17, 13);
        for y in 0..13 {
            for x in 0..17 {
                m.set(x, y, (x * 7 + y * 3) % 5 == 0);
            }
        }
        let sat = MaskIntegral::new(&m);
        for r in [
            PixelRect { x0: 0, y0: 0, x1: 17, y1: 13 },
            PixelRect { x0: 3, y0: 2, x1: 9, y1: 11 },
            PixelRect { x0: 16, y0: 12, x1: 30, y1: 30 },
        ] {
            let c = r.clip(17, 13);
            let brute = (c.y0..c.y1)
                .flat_map(|y| (c.x0..c.x1).map(move |x| (x, y)))
                .filter(|&(x, y)| m.get(x, y))
                .count() as u64;
            assert_eq!(sat.count(r), brute);
        }
    }

    #[test]
    fn gravity_examples() {
        let th = LocalThresholds::default();
        let scene = empty_scene(Mask::new(64, 64), Some(0.9));
        let none = BTreeMap::new();
        let resting = at_y(&[0.85; 10]);
        assert_eq!(verify_gravity(&resting, &scene, &none, &th).score, 1.0);
        let falling: Vec<f64> = (0..8).map(|t| 0.2 + 0.002 * (t * t) as f64).collect();
        assert_eq!(verify_gravity(&at_y(&falling), &scene, &none, &th).score, 1.0);
        let hover = at_y(&[0.3; 10]);
        assert_eq!(verify_gravity(&hover, &scene, &none, &th).score, 0.2);
        // a short unsupported run is ignored
        let blip = at_y(&[0.85, 0.85, 0.3, 0.3, 0.85]);
        assert_eq!(verify_gravity(&blip, &scene, &none, &th).score, 1.0);
    }

    #[test]
    fn gravity_support_from_mask_and_stack() {
        let th = LocalThresholds::default();
        let mut m = Mask::new(100, 100);
        m.fill_rect(PixelRect { x0: 40, y0: 35, x1: 60, y1: 40 }, true);
        let scene = empty_scene(m, None);
        let on_shelf = at_y(&[0.3; 10]);
        assert_eq!(verify_gravity(&on_shelf, &scene, &BTreeMap::new(), &th).score, 1.0);
        let no_shelf = empty_scene(Mask::new(100, 100), None);
        assert_eq!(verify_gravity(&on_shelf, &no_shelf, &BTreeMap::new(), &th).score, 0.2);
        let table = BTreeMap::from([("t".to_string(), BBox::new(0.4, 0.355, 0.6, 0.6).unwrap())]);
        assert_eq!(verify_gravity(&on_shelf, &no_shelf, &table, &th).score, 1.0);
    }

    #[test]
    fn deformation_examples() {
        let th = LocalThresholds::default();
        let scene = empty_scene(Mask::new(10, 10), None);
        let same = cand(vec![[0.1, 0.1, 0.3, 0.3], [0.4, 0.1, 0.6, 0.3]]);
        assert_eq!(verify_deformation(&same, &scene, &th).score, 1.0);
        let doubled = cand(vec![[0.1, 0.1, 0.3, 0.3], [0.1, 0.1, 0.5, 0.3]]);
        assert_eq!(verify_deformation(&doubled, &scene, &th).score, 0.0);
        let drift = cand(vec![[0.1, 0.1, 0.3, 0.3], [0.1, 0.1, 0.355, 0.3]]);
        assert!((verify_deformation(&drift, &scene, &th).score - 0.5).abs() < 1e-9);
    }
}
