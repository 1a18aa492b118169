use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RewardError;
use crate::obs::{normalize, Matcher, ObsRole};

/// Similarity of a free-text prediction to the reference, in `[0, 1]`.
pub trait OpenScorer: Send + Sync {
    fn score(&self, prediction: &str, reference: &str) -> Result<f64, RewardError>;
    fn name(&self) -> &str;
}

/// F1 over extracted observation sets.
///
/// Precision counts prediction observations matched in the reference, recall
/// the converse. When neither side yields observations the texts are
/// compared after normalization.
pub struct EntityF1Scorer {
    matcher: Arc<dyn Matcher>,
}

impl EntityF1Scorer {
    pub fn new(matcher: Arc<dyn Matcher>) -> Self {
        Self { matcher }
    }
}

impl OpenScorer for EntityF1Scorer {
    fn score(&self, prediction: &str, reference: &str) -> Result<f64, RewardError> {
        if prediction.trim().is_empty() || reference.trim().is_empty() {
            return Ok(0.0);
        }
        let pred = self.matcher.extract(prediction, ObsRole::Model)?;
        let gold = self.matcher.extract(reference, ObsRole::GroundTruth)?;
        if pred.is_empty() || gold.is_empty() {
            let same = pred.is_empty() && gold.is_empty() && normalize(prediction) == normalize(reference);
            return Ok(if same { 1.0 } else { 0.0 });
        }
        let p = self.matcher.intersect_count(&pred, &gold)? as f64 / pred.len() as f64;
        let r = self.matcher.intersect_count(&gold, &pred)? as f64 / gold.len() as f64;
        if p + r == 0.0 {
            return Ok(0.0);
        }
        Ok(2.0 * p * r / (p + r))
    }

    fn name(&self) -> &str {
        "entity_f1"
    }
}

/// Runs an external program per call. The program receives
/// `{"prediction": .., "reference": ..}` on stdin and must print one number
/// in `[0, 1]` on stdout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandScorer {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl OpenScorer for CommandScorer {
    fn score(&self, prediction: &str, reference: &str) -> Result<f64, RewardError> {
        let fail = |m: String| RewardError::Scorer(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        let payload = serde_json::json!({ "prediction": prediction, "reference": reference });
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(payload.to_string().as_bytes())
            .map_err(|e| fail(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| fail(format!("expected a number, got {:?}", text.trim())))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!("score {v} outside [0, 1]")));
        }
        Ok(v)
    }

    fn name(&self) -> &str {
        &self.program
    }
}
