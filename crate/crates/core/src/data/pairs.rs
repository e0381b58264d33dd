use std::collections::HashMap;

use super::DataError;
use crate::java::{parse_compilation_unit, MethodInfo};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodPair {
    pub original: MethodInfo,
    pub revised: MethodInfo,
}

impl MethodPair {
    /// `name(T1,T2)` identity key.
    pub fn signature(&self) -> String {
        format!(
            "{}({})",
            self.original.name,
            self.original.param_types.join(",")
        )
    }
}

type Identity = (String, Vec<String>);

fn identity(m: &MethodInfo) -> Identity {
    (m.name.clone(), m.param_types.clone())
}

/// Pairs same-identity methods whose bodies differ, in original-file order.
///
/// Methods without a body and methods present on one side only are dropped.
/// Bodies are compared token by token, so formatting and comments do not count.
pub fn extract_method_pairs(
    original_file: &str,
    revised_file: &str,
) -> Result<Vec<MethodPair>, DataError> {
    let original = parse_compilation_unit(original_file)?;
    let revised = parse_compilation_unit(revised_file)?;
    let mut by_id: HashMap<Identity, MethodInfo> = HashMap::new();
    for m in revised.into_iter().filter(|m| m.has_body) {
        by_id.entry(identity(&m)).or_insert(m);
    }
    let mut out = Vec::new();
    for m in original.into_iter().filter(|m| m.has_body) {
        if let Some(r) = by_id.remove(&identity(&m)) {
            if r.token_texts != m.token_texts {
                out.push(MethodPair {
                    original: m,
                    revised: r,
                });
            }
        }
    }
    Ok(out)
}
