use std::collections::HashMap;

use super::normalize;

/// Version of the shipped table. Golden tests pin this value.
pub const SHIPPED_SYNONYMS_VERSION: u32 = 1;

const SHIPPED: &str = include_str!("../../data/synonyms.tsv");

/// Maps normalized phrases to a canonical form.
///
/// File format: `# synonyms v<N>` header, `#` comments, then one canonical
/// form per line followed by tab-separated synonyms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymTable {
    pub version: u32,
    map: HashMap<String, String>,
}

impl SynonymTable {
    pub fn shipped() -> Self {
        Self::parse(SHIPPED).expect("shipped synonym table parses")
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut version = None;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(rest) = line.strip_prefix("# synonyms v") {
                version = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| format!("line {}: bad version {rest:?}", i + 1))?,
                );
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let canonical = normalize(cols.next().unwrap_or_default());
            if canonical.is_empty() {
                return Err(format!("line {}: empty canonical form", i + 1));
            }
            for syn in cols {
                let syn = normalize(syn);
                if syn.is_empty() {
                    continue;
                }
                if let Some(prev) = map.insert(syn.clone(), canonical.clone()) {
                    if prev != canonical {
                        return Err(format!(
                            "line {}: {syn:?} maps to both {prev:?} and {canonical:?}",
                            i + 1
                        ));
                    }
                }
            }
            map.insert(canonical.clone(), canonical);
        }
        Ok(Self {
            version: version.ok_or("missing `# synonyms v<N>` header")?,
            map,
        })
    }

    /// Canonical form of an already-normalized phrase, if listed.
    pub fn canonical(&self, normalized: &str) -> Option<&str> {
        self.map.get(normalized).map(String::as_str)
    }
}
