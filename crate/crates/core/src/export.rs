//! Dense point tracks for a trajectory-conditioned video generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::planner::TrajectoryCandidate;
use crate::raster::RgbImage;
use crate::scene::{bbox_center, BBox, HighLevelPlan, Point};
use crate::transport::{encode_base64, EndpointConfig, Transport};

pub const TRACK_FILE_VERSION: u32 = 1;
pub const DEFAULT_OUTPUT_FRAMES: usize = 81;
pub const DEFAULT_TRACK_FPS: f64 = 16.0;
const JUNCTION_EPS: f64 = 1e-6;

/// Sparse per-object center sequences across all phases.
///
/// Objects are tracked from the first phase that moves them; before that, and in phases where
/// they are static, they sit at their last known center. A junction frame is collapsed when
/// every tracked object repeats its previous point, so all sequences keep a common length.
pub fn concat_plan(
    plan: &HighLevelPlan,
    selected: &[TrajectoryCandidate],
    initial: &BTreeMap<String, BBox>,
) -> Result<BTreeMap<String, Vec<Point>>> {
    if selected.len() != plan.sub_instructions.len() {
        return Err(Error::LengthMismatch(format!(
            "{} selected trajectories for {} phases",
            selected.len(),
            plan.sub_instructions.len()
        )));
    }
    let mut tracks: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    for sub in &plan.sub_instructions {
        for id in &sub.moving_ids {
            tracks.entry(id.clone()).or_default();
        }
    }
    let mut last: BTreeMap<String, Point> = BTreeMap::new();
    for id in tracks.keys() {
        let b = initial
            .get(id)
            .ok_or_else(|| Error::ObjectMismatch(format!("`{id}` has no initial box")))?;
        last.insert(id.clone(), bbox_center(b));
    }
    for (seg_no, (sub, cand)) in plan.sub_instructions.iter().zip(selected).enumerate() {
        let mut seg: BTreeMap<String, Vec<Point>> = BTreeMap::new();
        for id in tracks.keys() {
            let moving = sub.moving_ids.contains(id);
            let present: Vec<Option<Point>> = cand.frames.iter().map(|f| f.get(id).map(bbox_center)).collect();
            let pts = if present.iter().all(Option::is_some) && !present.is_empty() {
                present.into_iter().flatten().collect()
            } else if present.iter().all(Option::is_none) && !moving {
                vec![last[id]; cand.len()]
            } else {
                let t = present.iter().position(Option::is_none).unwrap_or(0);
                return Err(Error::ObjectMismatch(format!(
                    "`{id}` is missing at frame {} of phase {}",
                    t + 1,
                    sub.index
                )));
            };
            seg.insert(id.clone(), pts);
        }
        let collapse = seg_no > 0
            && seg.iter().all(|(id, pts)| {
                let prev = tracks[id].last().copied();
                match (prev, pts.first()) {
                    (Some(p), Some(q)) => p.dist(*q) <= JUNCTION_EPS,
                    _ => false,
                }
            });
        for (id, pts) in seg {
            let skip = usize::from(collapse);
            if let Some(&p) = pts.last() {
                last.insert(id.clone(), p);
            }
            tracks.get_mut(&id).expect("tracked").extend_from_slice(&pts[skip.min(pts.len())..]);
        }
    }
    Ok(tracks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTrack {
    pub id: String,
    pub points: Vec<Point>,
}

/// Piecewise-linear resampling of `points` to `t` samples with exact endpoints.
pub fn interpolate_dense(points: &[Point], t: usize) -> Result<Vec<Point>> {
    let p = points.len();
    if p < 2 {
        return Err(Error::BadLength(format!("need at least 2 points, got {p}")));
    }
    if t < p {
        return Err(Error::BadLength(format!("cannot resample {p} points to {t}")));
    }
    let (span, steps) = (p - 1, t - 1);
    Ok((0..t)
        .map(|j| {
            // u = j * span / steps, split into integer and fractional parts without rounding error
            let num = j * span;
            let (i, rem) = (num / steps, num % steps);
            if rem == 0 {
                return points[i];
            }
            let f = rem as f64 / steps as f64;
            let (a, b) = (points[i], points[i + 1]);
            Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
        })
        .collect())
}

/// Concatenate and densify the selected plan into one track per moving object.
pub fn dense_tracks(
    plan: &HighLevelPlan,
    selected: &[TrajectoryCandidate],
    initial: &BTreeMap<String, BBox>,
    t: usize,
) -> Result<Vec<DenseTrack>> {
    concat_plan(plan, selected, initial)?
        .into_iter()
        .map(|(id, pts)| {
            Ok(DenseTrack {
                points: interpolate_dense(&pts, t)?,
                id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub version: u32,
    pub prompt: String,
    pub frames: usize,
    pub fps: f64,
    /// `[width, height]` in pixels.
    pub resolution: [u32; 2],
    pub tracks: Vec<DenseTrack>,
}

impl TrackFile {
    pub fn new(tracks: Vec<DenseTrack>, meta: &TrackMeta) -> Result<Self> {
        let frames = tracks.first().map_or(0, |t| t.points.len());
        if let Some(bad) = tracks.iter().find(|t| t.points.len() != frames) {
            return Err(Error::LengthMismatch(format!(
                "track `{}` has {} points, expected {frames}",
                bad.id,
                bad.points.len()
            )));
        }
        Ok(Self {
            version: TRACK_FILE_VERSION,
            prompt: meta.prompt.clone(),
            frames,
            fps: meta.fps,
            resolution: [meta.width, meta.height],
            tracks,
        })
    }

    pub fn to_json_string(&self) -> String {
        // serde_json prints the shortest representation that round-trips exactly
        let mut s = serde_json::to_string_pretty(self).expect("track file serializes");
        s.push('\n');
        s
    }
}

pub fn write_track_file(tracks: Vec<DenseTrack>, path: &Path, meta: &TrackMeta) -> Result<TrackFile> {
    let file = TrackFile::new(tracks, meta)?;
    fs::write(path, file.to_json_string()).map_err(|e| Error::io(path, e))?;
    Ok(file)
}

pub fn read_track_file(path: &Path) -> Result<TrackFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TrackFile = serde_json::from_str(&text)?;
    if let Some(bad) = file.tracks.iter().find(|t| t.points.len() != file.frames) {
        return Err(Error::LengthMismatch(format!(
            "track `{}` has {} points, header says {}",
            bad.id,
            bad.points.len(),
            file.frames
        )));
    }
    Ok(file)
}

/// Where a generation request goes.
pub enum GeneratorTarget {
    /// Write the request payload to this file instead of sending it.
    DryRun(PathBuf),
    Remote {
        endpoint: Option<EndpointConfig>,
        transport: Box<dyn Transport>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobHandle {
    DryRun { payload: PathBuf },
    Submitted { job_id: String },
}

pub fn generation_payload(track: &TrackFile, initial_frame: &RgbImage) -> Result<Value> {
    Ok(json!({
        "prompt": track.prompt,
        "track": track,
        "initial_frame": encode_base64(&initial_frame.to_png_bytes()?),
    }))
}

/// Hand the track and first frame to an external trajectory-conditioned generator.
pub fn submit_generation(track: &TrackFile, initial_frame: &RgbImage, target: GeneratorTarget) -> Result<JobHandle> {
    let payload = generation_payload(track, initial_frame)?;
    match target {
        GeneratorTarget::DryRun(path) => {
            let mut text = serde_json::to_string_pretty(&payload)?;
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(JobHandle::DryRun { payload: path })
        }
        GeneratorTarget::Remote { endpoint, mut transport } => {
            let endpoint = endpoint.ok_or_else(|| Error::Transport("no generator endpoint configured".into()))?;
            let resp = transport.post_json(&endpoint.url, endpoint.api_key.as_deref(), &payload)?;
            let job_id = resp
                .get("job_id")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Transport(format!("generator response lacks `job_id`: {resp}")))?;
            Ok(JobHandle::Submitted {
                job_id: job_id.to_string(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GoalSpec, SubInstruction};

    fn sub(index: usize, budget: u32, ids: &[&str]) -> SubInstruction {
        SubInstruction {
            index,
            text: String::new(),
            frame_budget: budget,
            moving_ids: ids.iter().map(|s| s.to_string()).collect(),
            goal: GoalSpec {
                region: None,
                direction: Some(Point::new(1.0, 0.0)),
                description: String::new(),
            },
        }
    }

    fn line(id: &str, x0: f64, step: f64, n: usize) -> TrajectoryCandidate {
        let frames = (0..n)
            .map(|t| {
                let x = x0 + step * t as f64;
                BTreeMap::from([(id.to_string(), BBox::new(x - 0.05, 0.4, x + 0.05, 0.5).unwrap())])
            })
            .collect();
        TrajectoryCandidate::new(0, frames)
    }

    fn plan(subs: Vec<SubInstruction>) -> HighLevelPlan {
        HighLevelPlan {
            source_prompt: String::new(),
            total_plan_frames: subs.iter().map(|s| s.frame_budget).sum(),
            static_objects: vec![],
            sub_instructions: subs,
        }
    }

    fn init(ids: &[(&str, f64)]) -> BTreeMap<String, BBox> {
        ids.iter()
            .map(|(id, x)| (id.to_string(), BBox::new(x - 0.05, 0.4, x + 0.05, 0.5).unwrap()))
            .collect()
    }

    #[test]
    fn single_phase_keeps_all_points() {
        let p = plan(vec![sub(1, 41, &["a"])]);
        let out = concat_plan(&p, &[line("a", 0.2, 0.01, 41)], &init(&[("a", 0.2)])).unwrap();
        assert_eq!(out["a"].len(), 41);
    }

    #[test]
    fn junction_duplicate_collapses() {
        let p = plan(vec![sub(1, 20, &["a"]), sub(2, 21, &["a"])]);
        let first = line("a", 0.2, 0.01, 20);
        let second = line("a", 0.2 + 0.01 * 19.0, 0.01, 21);
        let out = concat_plan(&p, &[first, second], &init(&[("a", 0.2)])).unwrap();
        assert_eq!(out["a"].len(), 40);
    }

    #[test]
    fn object_static_in_later_phase_is_held() {
        let p = plan(vec![sub(1, 5, &["a"]), sub(2, 6, &["b"])]);
        let out = concat_plan(
            &p,
            &[line("a", 0.2, 0.05, 5), line("b", 0.7, -0.02, 6)],
            &init(&[("a", 0.2), ("b", 0.7)]),
        )
        .unwrap();
        // both objects repeat their point at the junction, so it collapses: 5 + 6 - 1
        assert_eq!(out["a"].len(), 10);
        assert_eq!(out["b"].len(), 10);
        let end_a = out["a"][4];
        assert!(out["a"][5..].iter().all(|p| *p == end_a));
        assert!(out["b"][..5].iter().all(|p| (p.x - 0.7).abs() < 1e-12));
    }

    #[test]
    fn vanishing_moving_object_is_an_error() {
        let p = plan(vec![sub(1, 3, &["a"])]);
        let mut c = line("a", 0.2, 0.01, 3);
        c.frames[2].clear();
        assert!(matches!(
            concat_plan(&p, &[c], &init(&[("a", 0.2)])),
            Err(Error::ObjectMismatch(_))
        ));
    }

    #[test]
    fn interpolation_examples() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 1.0)];
        assert_eq!(
            interpolate_dense(&pts, 3).unwrap(),
            vec![Point::new(0.0, 0.0), Point::new(0.5, 0.5), Point::new(1.0, 1.0)]
        );
        let c = [Point::new(0.3, 0.7); 4];
        assert!(interpolate_dense(&c, 9).unwrap().iter().all(|p| *p == c[0]));
        assert!(matches!(interpolate_dense(&pts[..1], 5), Err(Error::BadLength(_))));
        assert!(matches!(interpolate_dense(&c, 3), Err(Error::BadLength(_))));
    }

    #[test]
    fn track_file_round_trip_and_mismatch() {
        let meta = TrackMeta {
            fps: 16.0,
            width: 480,
            height: 480,
            prompt: "p".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("track.json");
        let pts: Vec<Point> = (0..81).map(|i| Point::new(i as f64 / 81.0, 0.1 + 1.0 / 3.0)).collect();
        let written = write_track_file(vec![DenseTrack { id: "a".into(), points: pts.clone() }], &path, &meta).unwrap();
        assert_eq!(read_track_file(&path).unwrap(), written);
        let bad = vec![
            DenseTrack { id: "a".into(), points: pts.clone() },
            DenseTrack { id: "b".into(), points: pts[..80].to_vec() },
        ];
        assert!(matches!(write_track_file(bad, &path, &meta), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn generator_dry_run_and_missing_endpoint() {
        let meta = TrackMeta {
            fps: 16.0,
            width: 8,
            height: 8,
            prompt: "p".into(),
        };
        let track = TrackFile::new(vec![], &meta).unwrap();
        let frame = RgbImage::new(8, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("payload.json");
        let h = submit_generation(&track, &frame, GeneratorTarget::DryRun(path.clone())).unwrap();
        assert_eq!(h, JobHandle::DryRun { payload: path.clone() });
        assert!(path.is_file());

        struct Unreachable;
        impl Transport for Unreachable {
            fn post_json(&mut self, _: &str, _: Option<&str>, _: &Value) -> Result<Value> {
                panic!("no request expected")
            }
        }
        let target = GeneratorTarget::Remote {
            endpoint: None,
            transport: Box::new(Unreachable),
        };
        assert!(matches!(submit_generation(&track, &frame, target), Err(Error::Transport(_))));
    }
}
