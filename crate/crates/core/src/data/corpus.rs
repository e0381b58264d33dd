use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;
use crate::java::{deserialize_tree, parse_method_source, serialize_tree, Ast, JavaError};

/// One side of a code change, as source or as a pre-parsed tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fragment {
    Source(String),
    Tree(Ast),
}

impl Fragment {
    /// The full (unsimplified) tree of the fragment.
    pub fn ast(&self) -> Result<Ast, JavaError> {
        match self {
            Fragment::Source(src) => parse_method_source(src),
            Fragment::Tree(ast) => Ok(ast.clone()),
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Fragment::Source(s) => s.trim().is_empty(),
            Fragment::Tree(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewSample {
    pub id: String,
    pub repo: String,
    pub original: Fragment,
    pub revised: Fragment,
    pub comment: String,
    /// 0 = rejected, 1 = accepted.
    pub label: u8,
}

/// Treatment of keys outside the record schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyPolicy {
    #[default]
    Strict,
    Lenient,
}

const KNOWN_KEYS: &[&str] = &[
    "id",
    "repo",
    "original",
    "revised",
    "original_ast",
    "revised_ast",
    "comment",
    "label",
];

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    repo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_ast: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    revised: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    revised_ast: Option<String>,
    comment: String,
    label: i64,
}

fn fragment(
    line: usize,
    side: &str,
    src: Option<String>,
    tree: Option<String>,
) -> Result<Fragment, DataError> {
    let invalid = |message: String| DataError::Invalid { line, message };
    match (src, tree) {
        (Some(_), Some(_)) => Err(invalid(format!("both {side} and {side}_ast given"))),
        (None, None) => Err(invalid(format!("missing {side} (or {side}_ast)"))),
        (Some(s), None) => Ok(Fragment::Source(s)),
        (None, Some(t)) => deserialize_tree(&t)
            .map(Fragment::Tree)
            .map_err(|e| invalid(format!("{side}_ast: {e}"))),
    }
}

/// Parses corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(text: &str, policy: KeyPolicy) -> Result<Vec<ReviewSample>, DataError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(DataError::Parse {
                line,
                message: "record is not an object".into(),
            });
        };
        if policy == KeyPolicy::Strict {
            if let Some(k) = obj.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                return Err(DataError::Invalid {
                    line,
                    message: format!("unknown key {k:?}"),
                });
            }
        }
        let rec: Record =
            serde_json::from_value(Value::Object(obj)).map_err(|e| DataError::Parse {
                line,
                message: e.to_string(),
            })?;
        let label = match rec.label {
            0 => 0,
            1 => 1,
            other => {
                return Err(DataError::Invalid {
                    line,
                    message: format!("label must be 0 or 1, got {other}"),
                })
            }
        };
        let original = fragment(line, "original", rec.original, rec.original_ast)?;
        let revised = fragment(line, "revised", rec.revised, rec.revised_ast)?;
        for (side, f) in [("original", &original), ("revised", &revised)] {
            if f.is_empty() {
                return Err(DataError::Invalid {
                    line,
                    message: format!("{side} is empty"),
                });
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::Invalid {
                line,
                message: format!("duplicate id {:?}", rec.id),
            });
        }
        out.push(ReviewSample {
            id: rec.id,
            repo: rec.repo,
            original,
            revised,
            comment: rec.comment,
            label,
        });
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, policy: KeyPolicy) -> Result<Vec<ReviewSample>, DataError> {
    parse_corpus(&std::fs::read_to_string(path)?, policy)
}

/// Serializes samples, one record per line.
pub fn write_corpus(samples: &[ReviewSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let (mut original, mut original_ast, mut revised, mut revised_ast) =
            (None, None, None, None);
        match &s.original {
            Fragment::Source(src) => original = Some(src.clone()),
            Fragment::Tree(ast) => original_ast = Some(serialize_tree(ast)),
        }
        match &s.revised {
            Fragment::Source(src) => revised = Some(src.clone()),
            Fragment::Tree(ast) => revised_ast = Some(serialize_tree(ast)),
        }
        let rec = Record {
            id: s.id.clone(),
            repo: s.repo.clone(),
            original,
            original_ast,
            revised,
            revised_ast,
            comment: s.comment.clone(),
            label: i64::from(s.label),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(samples: &[ReviewSample], path: &Path) -> Result<(), DataError> {
    crate::io::write_atomic(path, write_corpus(samples).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub rejected_count: usize,
    pub reject_rate: f64,
}

pub fn corpus_stats(samples: &[ReviewSample]) -> Result<CorpusStats, DataError> {
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let rejected = samples.iter().filter(|s| s.label == 0).count();
    Ok(CorpusStats {
        sample_count: samples.len(),
        rejected_count: rejected,
        reject_rate: rejected as f64 / samples.len() as f64,
    })
}

pub fn stats_by_repo(samples: &[ReviewSample]) -> Result<BTreeMap<String, CorpusStats>, DataError> {
    let mut groups: BTreeMap<String, Vec<ReviewSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(s.repo.clone()).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(repo, group)| Ok((repo, corpus_stats(&group)?)))
        .collect()
}

impl ReviewSample {
    pub fn from_sources(
        id: &str,
        repo: &str,
        original: &str,
        revised: &str,
        comment: &str,
        label: u8,
    ) -> Self {
        Self {
            id: id.into(),
            repo: repo.into(),
            original: Fragment::Source(original.into()),
            revised: Fragment::Source(revised.into()),
            comment: comment.into(),
            label,
        }
    }
}
