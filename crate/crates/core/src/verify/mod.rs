//! Semantic and physical scoring of candidate sketches, and the selection objective.

mod fit;
mod local;
mod remote;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use fit::{fit_quadratic, Quadratic};
pub use local::{
    band, overlap_fraction, verify_deformation, verify_gravity, verify_newton, verify_penetration, verify_semantic_local,
    LocalThresholds, LocalVerifier, MaskIntegral,
};
pub use remote::{parse_score_response, RemoteVerifier, DEFAULT_PARSE_RETRIES};

use crate::error::{Error, Result};
use crate::planner::TrajectoryCandidate;
use crate::render::VideoSketch;
use crate::scene::{BBox, SceneBundle, SubInstruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    Newton,
    Penetration,
    Gravity,
    Deformation,
}

impl Law {
    pub const ALL: [Law; 4] = [Law::Newton, Law::Penetration, Law::Gravity, Law::Deformation];

    pub fn as_str(self) -> &'static str {
        match self {
            Law::Newton => "newton",
            Law::Penetration => "penetration",
            Law::Gravity => "gravity",
            Law::Deformation => "deformation",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Law::Newton => "Newtonian Consistency",
            Law::Penetration => "Penetration Violation",
            Law::Gravity => "Gravitational Coherence",
            Law::Deformation => "Deformation Consistency",
        }
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawScore {
    pub law: Law,
    pub score: f64,
    pub explanation: String,
}

impl LawScore {
    pub fn new(law: Law, score: f64, explanation: impl Into<String>) -> Self {
        Self {
            law,
            score: score.clamp(0.0, 1.0),
            explanation: explanation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticScore {
    pub score: f64,
    pub explanation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawWeights {
    pub newton: f64,
    pub penetration: f64,
    pub gravity: f64,
    pub deformation: f64,
}

impl LawWeights {
    pub fn get(&self, law: Law) -> f64 {
        match law {
            Law::Newton => self.newton,
            Law::Penetration => self.penetration,
            Law::Gravity => self.gravity,
            Law::Deformation => self.deformation,
        }
    }
}

impl Default for LawWeights {
    fn default() -> Self {
        Self {
            newton: 0.25,
            penetration: 0.25,
            gravity: 0.25,
            deformation: 0.25,
        }
    }
}

/// Weights of the selection objective `λ_sem·s_sem + λ_phys·Σ λ_l·s_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierWeights {
    pub semantic: f64,
    pub physics: f64,
    pub laws: LawWeights,
}

impl Default for VerifierWeights {
    fn default() -> Self {
        Self {
            semantic: 0.5,
            physics: 0.5,
            laws: LawWeights::default(),
        }
    }
}

const WEIGHT_EPS: f64 = 1e-9;

impl VerifierWeights {
    pub fn validate(&self) -> Result<()> {
        let laws = Law::ALL.map(|l| self.laws.get(l));
        let all = [self.semantic, self.physics].into_iter().chain(laws);
        if all.clone().any(|w| !w.is_finite() || w < 0.0) {
            return Err(Error::Weight("weights must be finite and non-negative".into()));
        }
        if (self.semantic + self.physics - 1.0).abs() > WEIGHT_EPS {
            return Err(Error::Weight(format!(
                "semantic + physics weights sum to {}, expected 1",
                self.semantic + self.physics
            )));
        }
        let sum: f64 = laws.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_EPS {
            return Err(Error::Weight(format!("law weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Combined selection score, clamped to [0, 1] against rounding.
pub fn combine(semantic: f64, laws: &[LawScore], weights: &VerifierWeights) -> Result<f64> {
    weights.validate()?;
    let physics: f64 = laws.iter().map(|l| weights.laws.get(l.law) * l.score).sum();
    Ok((weights.semantic * semantic + weights.physics * physics).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub candidate_index: usize,
    pub semantic: SemanticScore,
    /// One entry per law, in [`Law::ALL`] order.
    pub laws: Vec<LawScore>,
    pub weights: VerifierWeights,
    pub combined: f64,
}

impl VerificationReport {
    pub fn assemble(
        candidate_index: usize,
        semantic: SemanticScore,
        mut laws: Vec<LawScore>,
        weights: VerifierWeights,
    ) -> Result<Self> {
        laws.sort_by_key(|l| l.law);
        let combined = combine(semantic.score, &laws, &weights)?;
        Ok(Self {
            candidate_index,
            semantic,
            laws,
            weights,
            combined,
        })
    }

    pub fn law(&self, law: Law) -> Option<&LawScore> {
        self.laws.iter().find(|l| l.law == law)
    }

    /// Lowest-scoring law; the earliest law wins ties.
    pub fn worst_law(&self) -> Option<&LawScore> {
        self.laws.iter().fold(None, |acc: Option<&LawScore>, l| match acc {
            Some(a) if a.score <= l.score => Some(a),
            _ => Some(l),
        })
    }
}

/// Map a verbal rating to a score; longer phrases are matched first.
pub fn descriptive_score(text: &str) -> Option<f64> {
    const TABLE: [(&str, f64); 6] = [
        ("somewhat inconsistent", 0.7),
        ("somewhat consistent", 0.8),
        ("very inconsistent", 0.1),
        ("very consistent", 1.0),
        ("inconsistent", 0.4),
        ("consistent", 0.9),
    ];
    let lower = text.to_lowercase();
    TABLE.iter().find(|(phrase, _)| lower.contains(phrase)).map(|&(_, s)| s)
}

/// Everything a verifier sees for one candidate.
#[derive(Debug, Clone, Copy)]
pub struct VerifyInput<'a> {
    pub sketch: &'a VideoSketch,
    pub candidate: &'a TrajectoryCandidate,
    pub sub: &'a SubInstruction,
    pub scene: &'a SceneBundle,
    /// Boxes of scene objects that do not move in this phase.
    pub held: &'a BTreeMap<String, BBox>,
    pub weights: &'a VerifierWeights,
}

pub trait Verifier {
    fn verify(&mut self, input: &VerifyInput<'_>) -> Result<VerificationReport>;
}
