use std::collections::{BTreeMap, BTreeSet};

use radr_core::model::{PartitionTag, VqaSample};
use radr_core::rewards::{total_reward, RewardContext};

pub const REPORT: &str = "Small left pleural effusion. No pneumothorax.";

/// Think text and the factuality it should earn against `REPORT`.
pub const THINKS: [(&str, f64); 3] = [
    ("There is cardiomegaly.", 0.0),
    ("There is a small left pleural effusion. There is cardiomegaly.", 0.5),
    ("There is a small left pleural effusion.", 1.0),
];

pub struct Case {
    pub partition: PartitionTag,
    pub well_formed: bool,
    pub correct: bool,
    pub output: String,
    pub expected: (f64, f64, f64),
}

pub fn build(partition: PartitionTag, well_formed: bool, correct: bool, think: Option<usize>) -> Case {
    let answer = if correct { "A" } else { "B" };
    let answer_span = format!("<answer>{answer}</answer>");
    let output = match (think, well_formed) {
        (Some(k), true) => format!("<think>{}</think>{answer_span}", THINKS[k].0),
        // Think after the answer breaks the structure but keeps both spans.
        (Some(k), false) => format!("{answer_span}<think>{}</think>", THINKS[k].0),
        (None, true) => answer_span,
        (None, false) => format!("{answer_span}</think>"),
    };
    let process = match (partition, think) {
        (PartitionTag::ReasoningAugmented, Some(k)) => THINKS[k].1,
        _ => 0.0,
    };
    Case {
        partition,
        well_formed,
        correct,
        output,
        expected: (f64::from(u8::from(well_formed)), f64::from(u8::from(correct)), process),
    }
}

pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    for well_formed in [false, true] {
        for correct in [false, true] {
            // Answer-only: no think, a factual think and a hallucinated think.
            for think in [None, Some(2), Some(0)] {
                out.push(build(PartitionTag::AnswerOnly, well_formed, correct, think));
            }
            for think in [Some(0), Some(1), Some(2)] {
                out.push(build(PartitionTag::ReasoningAugmented, well_formed, correct, think));
            }
        }
    }
    out
}

pub fn sample_for(partition: PartitionTag) -> VqaSample {
    let s = super::binary_sample("r1", "A");
    match partition {
        PartitionTag::ReasoningAugmented => super::with_report(s, REPORT, "There is a small left pleural effusion."),
        PartitionTag::AnswerOnly => s,
    }
}

/// Scores every case and checks components, totals and independence of
/// format and outcome from the think text. Returns the number of cases.
pub fn check_grid(ctx: &RewardContext) -> Result<usize, String> {
    let cases = cases();
    let mut totals: BTreeMap<PartitionTag, BTreeSet<String>> = BTreeMap::new();
    // (partition, well_formed, correct) -> observed (format, outcome) across think variants.
    let mut fixed: BTreeMap<(PartitionTag, bool, bool), BTreeSet<(u64, u64)>> = BTreeMap::new();
    for c in &cases {
        let r = total_reward(&c.output, &sample_for(c.partition), c.partition, ctx).map_err(|e| e.to_string())?;
        if (r.format, r.outcome, r.process) != c.expected {
            return Err(format!(
                "{:?} {}: got {:?}",
                c.partition,
                c.output,
                (r.format, r.outcome, r.process)
            ));
        }
        if r.total != r.format + r.outcome + r.process {
            return Err(format!("total {} is not the component sum", r.total));
        }
        totals.entry(c.partition).or_default().insert(format!("{}", r.total));
        fixed
            .entry((c.partition, c.well_formed, c.correct))
            .or_default()
            .insert((r.format.to_bits(), r.outcome.to_bits()));
    }
    if fixed.values().any(|v| v.len() != 1) {
        return Err("think text moved format or outcome".into());
    }
    let a: BTreeSet<&str> = totals[&PartitionTag::AnswerOnly].iter().map(String::as_str).collect();
    if a != BTreeSet::from(["0", "1", "2"]) {
        return Err(format!("answer-only totals {a:?}"));
    }
    let r = &totals[&PartitionTag::ReasoningAugmented];
    if let Some(t) = ["0", "1", "2", "3"].into_iter().find(|t| !r.contains(*t)) {
        return Err(format!("reasoning-augmented totals {r:?} miss {t}"));
    }
    Ok(cases.len())
}
