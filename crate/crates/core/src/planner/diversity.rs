use super::TrajectoryCandidate;
use crate::scene::bbox_center;

pub const DEFAULT_MIN_DIVERSITY: f64 = 0.05;

/// Root-mean-square center distance between two candidates, over frames and shared objects.
///
/// Averaging over frames keeps the threshold independent of the frame budget.
pub fn candidate_distance(a: &TrajectoryCandidate, b: &TrajectoryCandidate) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for (id, ba) in fa {
            if let Some(bb) = fb.get(id) {
                let d = bbox_center(ba).dist(bbox_center(bb));
                sum += d * d;
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    (sum / n as f64).sqrt()
}

/// Greedily keep candidates at least `min_dist` from every earlier kept one.
pub fn diversity_filter(candidates: Vec<TrajectoryCandidate>, min_dist: f64) -> Vec<TrajectoryCandidate> {
    let mut kept: Vec<TrajectoryCandidate> = Vec::with_capacity(candidates.len());
    for cand in candidates {
        if kept.iter().all(|k| candidate_distance(k, &cand) >= min_dist) {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::BBox;
    use std::collections::BTreeMap;

    fn line(dx: f64, n: usize) -> TrajectoryCandidate {
        let frames = (0..n)
            .map(|t| {
                let x = 0.1 + dx + 0.02 * t as f64;
                BTreeMap::from([("a".to_string(), BBox::new(x, 0.4, x + 0.1, 0.5).unwrap())])
            })
            .collect();
        TrajectoryCandidate::new(0, frames)
    }

    #[test]
    fn identical_candidates_collapse() {
        assert_eq!(diversity_filter(vec![line(0.0, 5), line(0.0, 5)], 0.05).len(), 1);
    }

    #[test]
    fn uniform_offset_distance() {
        // every frame differs by 0.1 in x, so the RMS is 0.1
        let d = candidate_distance(&line(0.0, 7), &line(0.1, 7));
        assert!((d - 0.1).abs() < 1e-12);
        assert_eq!(diversity_filter(vec![line(0.0, 7), line(0.1, 7)], 0.05).len(), 2);
    }

    #[test]
    fn empty_input() {
        assert!(diversity_filter(Vec::new(), 0.05).is_empty());
    }

    #[test]
    fn keeps_earlier_on_conflict() {
        let mut a = line(0.0, 5);
        a.candidate_index = 7;
        let mut b = line(0.01, 5);
        b.candidate_index = 8;
        let out = diversity_filter(vec![a, b], 0.05);
        assert_eq!(out[0].candidate_index, 7);
    }
}
