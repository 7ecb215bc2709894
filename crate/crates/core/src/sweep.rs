//! Best-of-K sweep over seeded synthetic scenes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{ScriptedMode, ScriptedPlanner};
use crate::scene::SceneBundle;
use crate::search::{run_pipeline, SearchConfig};
use crate::synthetic::{make_synthetic, SyntheticSceneSpec};
use crate::verify::{LocalVerifier, Verifier, VerifyInput};

/// Share of clean candidates drawn by the sweep's scripted planner.
pub const DEFAULT_CLEAN_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub seeds: usize,
    pub mean_score: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub spec: SyntheticSceneSpec,
    pub search: SearchConfig,
    pub clean_fraction: f64,
}

impl SweepConfig {
    pub fn new(ks: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            ks,
            seeds,
            spec: SyntheticSceneSpec::default(),
            search: SearchConfig::default(),
            clean_fraction: DEFAULT_CLEAN_FRACTION,
        }
    }
}

/// Oracle score of one seeded run: the local verifier's mean combined score over the selected
/// candidates of every phase, recomputed independently of the verifier used during search.
fn oracle_run(scene: &SceneBundle, seed: u64, config: &SweepConfig, k: usize) -> Result<f64> {
    let mut planner = ScriptedPlanner::new(
        seed,
        ScriptedMode::Mixed {
            clean_fraction: config.clean_fraction,
        },
    );
    let mut verifier = LocalVerifier::default();
    let search = SearchConfig { k, ..config.search };
    let prompt = scene.prompt.clone().unwrap_or_default();
    let outcome = run_pipeline(&prompt, scene, &mut planner, &mut verifier, &search, &mut ()).map_err(|e| e.error)?;
    let mut oracle = LocalVerifier::default();
    let mut context = scene.initial_boxes();
    let mut total = 0.0;
    for (sub, phase) in outcome.plan.sub_instructions.iter().zip(&outcome.phases) {
        let held = context
            .iter()
            .filter(|(id, _)| !sub.moving_ids.contains(id))
            .map(|(id, b)| (id.clone(), *b))
            .collect();
        let report = oracle.verify(&VerifyInput {
            sketch: &phase.sketch,
            candidate: &phase.selected,
            sub,
            scene,
            held: &held,
            weights: &search.weights,
        })?;
        total += report.combined;
        context.extend(phase.selected.final_boxes());
    }
    Ok(total / outcome.phases.len() as f64)
}

pub fn k_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.ks.contains(&0) {
        return Err(Error::Config("K values must be at least 1".into()));
    }
    if config.seeds.is_empty() {
        return Err(Error::Config("the sweep needs at least one seed".into()));
    }
    let scenes = config
        .seeds
        .iter()
        .map(|&seed| {
            make_synthetic(&SyntheticSceneSpec {
                seed,
                ..config.spec.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    config
        .ks
        .iter()
        .map(|&k| {
            let scores = config
                .seeds
                .iter()
                .zip(&scenes)
                .map(|(&seed, scene)| oracle_run(scene, seed, config, k))
                .collect::<Result<Vec<f64>>>()?;
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let std = if scores.len() > 1 {
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(SweepRow {
                k,
                seeds: scores.len(),
                mean_score: mean,
                std,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("K,seeds,mean_score,std\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.k, r.seeds, r.mean_score, r.std);
    }
    out
}
