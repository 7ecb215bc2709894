//! Verifier backed by a remote multimodal model: one alignment query and one query per law.

use serde_json::Value;
use tracing::warn;

use super::{descriptive_score, Law, LawScore, SemanticScore, VerificationReport, Verifier, VerifyInput};
use crate::error::{Error, Result};
use crate::planner::describe_goal;
use crate::prompts::{self, fill};
use crate::transport::{encode_base64, ChatMessage, ModelClient};

/// Resamples allowed after an unparseable reply, per query.
pub const DEFAULT_PARSE_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScore {
    pub score: f64,
    pub explanation: String,
    /// The reply's number fell outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Read `{score, explanation}` from a reply, accepting verbal ratings in place of numbers.
pub fn parse_score_response(text: &str) -> std::result::Result<ParsedScore, String> {
    let object = match (text.find('{'), text.rfind('}')) {
        (Some(s), Some(e)) if e > s => serde_json::from_str::<Value>(&text[s..=e]).ok(),
        _ => None,
    };
    if let Some(v) = object {
        let explanation = v.get("explanation").and_then(Value::as_str).unwrap_or_default().to_string();
        let raw = match v.get("score") {
            Some(Value::Number(n)) => n.as_f64(),
            Some(Value::String(s)) => s.trim().parse::<f64>().ok().or_else(|| descriptive_score(s)),
            _ => None,
        };
        if let Some(raw) = raw.filter(|r| r.is_finite()) {
            let score = raw.clamp(0.0, 1.0);
            return Ok(ParsedScore {
                score,
                explanation,
                clamped: score != raw,
            });
        }
        if let Some(score) = descriptive_score(&explanation) {
            return Ok(ParsedScore {
                score,
                explanation,
                clamped: false,
            });
        }
    }
    if let Some(raw) = text.trim().parse::<f64>().ok().filter(|r| r.is_finite()) {
        let score = raw.clamp(0.0, 1.0);
        return Ok(ParsedScore {
            score,
            explanation: String::new(),
            clamped: score != raw,
        });
    }
    match descriptive_score(text) {
        Some(score) => Ok(ParsedScore {
            score,
            explanation: text.trim().to_string(),
            clamped: false,
        }),
        None => Err(format!("no score found in reply: {:.120}", text.trim())),
    }
}

pub struct RemoteVerifier {
    client: ModelClient,
    max_retries: u32,
}

impl RemoteVerifier {
    pub fn new(client: ModelClient) -> Self {
        Self {
            client,
            max_retries: DEFAULT_PARSE_RETRIES,
        }
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    fn ask(&mut self, messages: &[ChatMessage], what: &str) -> Result<ParsedScore> {
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            let text = self.client.complete(messages)?;
            match parse_score_response(&text) {
                Ok(p) => {
                    if p.clamped {
                        warn!(query = what, "score out of range, clamped to {}", p.score);
                    }
                    return Ok(p);
                }
                Err(e) => {
                    warn!(query = what, attempt, error = %e, "verifier reply rejected, resampling");
                    last = e;
                }
            }
        }
        Err(Error::Parse(format!("{what}: {last}")))
    }
}

impl Verifier for RemoteVerifier {
    fn verify(&mut self, input: &VerifyInput<'_>) -> Result<VerificationReport> {
        let frames = input
            .sketch
            .frames
            .iter()
            .map(|f| f.to_png_bytes().map(|b| encode_base64(&b)))
            .collect::<Result<Vec<_>>>()?;
        let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
            return Err(Error::Codec("cannot verify an empty sketch".into()));
        };
        let sub = input.sub;
        let phase_name = format!("phase_{}", sub.index);
        let goal = describe_goal(&sub.goal);
        let alignment = [
            ChatMessage::system(prompts::ALIGNMENT_SYSTEM),
            ChatMessage::user(
                fill(
                    prompts::ALIGNMENT_USER,
                    &[("PHASE_NAME", &phase_name), ("PHASE_DESCRIPTION", &sub.text), ("END_GOAL", &goal)],
                ),
                vec![first.clone(), last.clone()],
            ),
        ];
        let sem = self.ask(&alignment, "alignment")?;
        let semantic = SemanticScore {
            score: sem.score,
            explanation: sem.explanation,
        };
        let mut laws = Vec::with_capacity(4);
        for law in Law::ALL {
            let text = format!(
                "{}\n\nEvaluate only {}.",
                fill(prompts::PHYSICS, &[("LAW_EXAMPLE", prompts::law_example(law))]),
                law.title()
            );
            let p = self.ask(&[ChatMessage::user(text, frames.clone())], law.as_str())?;
            laws.push(LawScore::new(law, p.score, p.explanation));
        }
        VerificationReport::assemble(input.candidate.candidate_index, semantic, laws, *input.weights)
    }
}
