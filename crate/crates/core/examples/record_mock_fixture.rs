//! Regenerates `fixtures/mock_fixture.jsonl` from the hand-written mining
//! transcripts in `fixtures/transcripts.json`.
//!
//! The transcripts are keyed by sample id and stage, which is easy to review;
//! the mock fixture is keyed by request idempotency key, which is what the
//! mock backend needs. This runs the real miner against a scripted transport
//! that answers from the transcripts, then exports the response cache.
//!
//! Usage: cargo run -p radr-core --example record_mock_fixture [fixtures-dir]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use radr_core::llm::{Backend, ChatRequest, ClientOptions, CompletionClient, ResponseCache, Transport, TransportError};
use radr_core::miner::Miner;
use radr_core::model::{load_corpus, write_jsonl, Corpus};
use radr_core::obs::LexicalMatcher;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Transcript {
    plan: String,
    evidence: BTreeMap<String, String>,
    refine: String,
}

struct Scripted {
    corpus: Corpus,
    transcripts: BTreeMap<String, Transcript>,
}

fn field<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(name)).map(str::trim)
}

impl Scripted {
    fn by_question(&self, question: &str) -> Option<&Transcript> {
        let s = self.corpus.samples.iter().find(|s| s.question.trim() == question)?;
        self.transcripts.get(&s.id)
    }
}

impl Transport for Scripted {
    fn chat(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let p = &request.prompt;
        let missing = || TransportError::fatal(format!("no transcript for prompt:\n{p}"));
        if let Some(goal) = field(p, "Step:") {
            let report = p.split_once("Report:\n").map(|(_, r)| r.trim()).ok_or_else(missing)?;
            let sample = self
                .corpus
                .samples
                .iter()
                .find(|s| s.report.as_deref().map(str::trim) == Some(report))
                .ok_or_else(missing)?;
            return self
                .transcripts
                .get(&sample.id)
                .and_then(|t| t.evidence.get(goal))
                .cloned()
                .ok_or_else(missing);
        }
        let t = field(p, "Question:")
            .and_then(|q| self.by_question(q))
            .ok_or_else(missing)?;
        Ok(if p.contains("\nSteps:\n") {
            t.refine.clone()
        } else {
            t.plan.clone()
        })
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    let corpus = load_corpus(dir.join("corpus.jsonl"))?;
    let transcripts: BTreeMap<String, Transcript> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("transcripts.json"))?)?;
    let transport = Scripted {
        corpus: corpus.clone(),
        transcripts,
    };
    let backend = Backend::Remote {
        model: "scripted".into(),
        transport: Arc::new(transport),
    };
    let client = Arc::new(CompletionClient::new(
        backend,
        Some(ResponseCache::in_memory()),
        ClientOptions::default(),
    ));
    let miner = Miner::new(client.clone(), Arc::new(LexicalMatcher::default()));
    let (chains, rejections) = miner.mine_all(&corpus.samples, 1);
    for c in &chains {
        println!("mined {} r_f={}", c.sample_id, c.r_f);
    }
    for r in &rejections {
        println!("rejected {} at {}: {}", r.sample_id, r.stage, r.reason);
    }
    let records = client.cache().map(ResponseCache::export_fixture).unwrap_or_default();
    std::fs::write(dir.join("mock_fixture.jsonl"), write_jsonl(&records))?;
    println!("wrote {} records", records.len());
    Ok(())
}
