use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MinedChain, MinerError};
use crate::model::{write_jsonl, Corpus, Split, VqaSample};

pub const BUNDLE_FILES: [&str; 4] = ["train_R.jsonl", "train_A.jsonl", "test_R.jsonl", "test_A.jsonl"];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub reasoning_augmented: usize,
    pub answer_only: usize,
}

impl PartitionCounts {
    fn add(&mut self, reasoning: bool) {
        if reasoning {
            self.reasoning_augmented += 1;
        } else {
            self.answer_only += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub provenance: String,
    /// Unit used when balancing multi-disease samples.
    pub balancing_unit: String,
    pub files: BTreeMap<String, usize>,
    pub total: PartitionCounts,
    pub by_split: BTreeMap<String, PartitionCounts>,
    pub by_task: BTreeMap<String, PartitionCounts>,
    pub by_source: BTreeMap<String, PartitionCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkBundle {
    pub train_r: Vec<VqaSample>,
    pub train_a: Vec<VqaSample>,
    pub test_r: Vec<VqaSample>,
    pub test_a: Vec<VqaSample>,
    pub manifest: Manifest,
}

impl BenchmarkBundle {
    pub fn files(&self) -> [(&'static str, &[VqaSample]); 4] {
        [
            (BUNDLE_FILES[0], &self.train_r),
            (BUNDLE_FILES[1], &self.train_a),
            (BUNDLE_FILES[2], &self.test_r),
            (BUNDLE_FILES[3], &self.test_a),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<(), MinerError> {
        let io = |p: &Path, e: std::io::Error| MinerError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, records) in self.files() {
            let path = dir.join(name);
            fs::write(&path, write_jsonl(records)).map_err(|e| io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&path, json).map_err(|e| io(&path, e))
    }

    /// Reads the reasoning-augmented and answer-only records of one split.
    pub fn load_split(dir: &Path, split: Split) -> Result<Corpus, MinerError> {
        let names = match split {
            Split::Train => [BUNDLE_FILES[0], BUNDLE_FILES[1]],
            Split::Test => [BUNDLE_FILES[2], BUNDLE_FILES[3]],
        };
        let mut samples = Vec::new();
        for name in names {
            samples.extend(crate::model::load_corpus(dir.join(name))?.samples);
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Corpus::new(samples, dir.display().to_string())?)
    }
}

/// Attaches surviving narratives as reasoning and splits the corpus into
/// partition files. Samples without a chain become answer-only, with any
/// report stripped. Records are sorted by id.
pub fn compile_benchmark(corpus: &Corpus, chains: &[MinedChain], seed: u64) -> Result<BenchmarkBundle, MinerError> {
    let index: HashMap<&str, &VqaSample> = corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut narratives: HashMap<&str, &str> = HashMap::new();
    for c in chains {
        if !index.contains_key(c.sample_id.as_str()) {
            return Err(MinerError::DanglingChain(c.sample_id.clone()));
        }
        narratives.insert(&c.sample_id, &c.narrative);
    }

    let mut samples: Vec<&VqaSample> = corpus.samples.iter().collect();
    samples.sort_by(|a, b| a.id.cmp(&b.id));

    let mut bundle = BenchmarkBundle {
        train_r: vec![],
        train_a: vec![],
        test_r: vec![],
        test_a: vec![],
        manifest: Manifest {
            seed,
            provenance: corpus.provenance.clone(),
            balancing_unit: "answer_option_combination".into(),
            files: BTreeMap::new(),
            total: PartitionCounts::default(),
            by_split: BTreeMap::new(),
            by_task: BTreeMap::new(),
            by_source: BTreeMap::new(),
        },
    };
    for s in samples {
        let mut out = s.clone();
        let reasoning = match narratives.get(s.id.as_str()) {
            Some(n) if s.has_report() => {
                out.reasoning = Some((*n).to_string());
                true
            }
            _ => {
                out.report = None;
                out.reasoning = None;
                false
            }
        };
        let m = &mut bundle.manifest;
        m.total.add(reasoning);
        m.by_split.entry(split_name(s.split).into()).or_default().add(reasoning);
        m.by_task.entry(s.task.as_str().into()).or_default().add(reasoning);
        m.by_source.entry(s.source.clone()).or_default().add(reasoning);
        match (s.split, reasoning) {
            (Split::Train, true) => bundle.train_r.push(out),
            (Split::Train, false) => bundle.train_a.push(out),
            (Split::Test, true) => bundle.test_r.push(out),
            (Split::Test, false) => bundle.test_a.push(out),
        }
    }
    let counts: Vec<(String, usize)> = bundle.files().iter().map(|(n, r)| (n.to_string(), r.len())).collect();
    bundle.manifest.files.extend(counts);
    Ok(bundle)
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}
