//! Synthetic "factual grammar" corpus: binary questions over a handful of
//! findings, tiny reports listing the present findings, and reasoning that
//! restates them. Small enough that a tabular policy can learn it in a few
//! hundred steps, rich enough that factual and hallucinated reasoning score
//! differently.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{AnswerOption, Corpus, Split, TaskType, VqaSample};

pub const GRAMMAR_FINDINGS: [&str; 6] = [
    "effusion",
    "edema",
    "cardiomegaly",
    "pneumothorax",
    "atelectasis",
    "consolidation",
];

fn question(finding: &str) -> String {
    format!("Does this chest X-ray show {finding}?")
}

fn base(id: String, finding: &str, present: bool) -> VqaSample {
    VqaSample {
        images: vec![format!("synthetic/{id}.png")],
        id,
        task: TaskType::BinaryDiagnosis,
        question: question(finding),
        options: vec![AnswerOption::new("A", "yes"), AnswerOption::new("B", "no")],
        answer: if present { "A" } else { "B" }.into(),
        report: None,
        reasoning: None,
        source: "factual-grammar".into(),
        split: Split::Train,
    }
}

/// `n_reasoning` report-bearing samples and `n_answer` answer-only samples.
pub fn factual_grammar(n_reasoning: usize, n_answer: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_reasoning + n_answer);
    for i in 0..n_reasoning {
        let k = rng.gen_range(1..=2);
        let present: Vec<&str> = GRAMMAR_FINDINGS.choose_multiple(&mut rng, k).copied().collect();
        let asked_present = rng.gen_bool(0.5);
        let asked = if asked_present {
            present[rng.gen_range(0..present.len())]
        } else {
            let absent: Vec<&str> = GRAMMAR_FINDINGS
                .iter()
                .copied()
                .filter(|f| !present.contains(f))
                .collect();
            absent[rng.gen_range(0..absent.len())]
        };
        let report: Vec<String> = present.iter().map(|f| format!("{f}.")).collect();
        let mut reasoning: Vec<String> = present.iter().map(|f| format!("{f} .")).collect();
        if !asked_present {
            reasoning.push(format!("no {asked} ."));
        }
        let mut s = base(format!("fg-r{i:03}"), asked, asked_present);
        s.report = Some(report.join(" "));
        s.reasoning = Some(reasoning.join(" "));
        samples.push(s);
    }
    for i in 0..n_answer {
        let asked = GRAMMAR_FINDINGS[rng.gen_range(0..GRAMMAR_FINDINGS.len())];
        samples.push(base(format!("fg-a{i:03}"), asked, rng.gen_bool(0.5)));
    }
    Corpus::new(samples, format!("factual-grammar seed={seed}")).expect("synthetic samples are valid")
}
