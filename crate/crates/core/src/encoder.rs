//! Request encoding: turns a user request into the two retrieval queries
//! (task memory and knowledge) plus advisory facets.
//!
//! The helper model is asked for a line-prefixed reply. Anything unusable,
//! including backend errors, degrades to [`fallback_encode`], so encoding a
//! non-empty request always succeeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ChatBackend, ChatMessage};
use crate::engine::actions::ActionRegistry;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("request is empty")]
    EmptyRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Semantics,
    Spatiotemporal,
    Operations,
    Files,
}

impl Facet {
    pub const ALL: [Facet; 4] = [Facet::Semantics, Facet::Spatiotemporal, Facet::Operations, Facet::Files];

    fn prefix(&self) -> &'static str {
        match self {
            Facet::Semantics => "SEMANTICS:",
            Facet::Spatiotemporal => "SPATIOTEMPORAL:",
            Facet::Operations => "OPERATIONS:",
            Facet::Files => "FILES:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryObject {
    pub task_memory_query: String,
    pub knowledge_query: String,
    pub facets: BTreeMap<Facet, Option<String>>,
    pub raw_request: String,
}

impl QueryObject {
    pub fn facet(&self, facet: Facet) -> Option<&str> {
        self.facets.get(&facet).and_then(|f| f.as_deref())
    }
}

fn empty_facets() -> BTreeMap<Facet, Option<String>> {
    Facet::ALL.iter().map(|f| (*f, None)).collect()
}

const DECOMPOSE_PROMPT: &str = "Decompose the spreadsheet request below into retrieval queries.
Reply with a fenced block containing exactly these lines:
```
TASK_QUERY: <what past task would be most similar>
KNOWLEDGE_QUERY: <what general knowledge would help>
SEMANTICS: <optional intent summary>
SPATIOTEMPORAL: <optional dates, ranges or periods>
OPERATIONS: <optional comma-separated operations>
FILES: <optional files or sheets involved>
```";

/// Degraded-mode encoding with the reference action vocabulary.
pub fn fallback_encode(request: &str) -> Result<QueryObject, EncodeError> {
    fallback_encode_with(request, &ActionRegistry::reference())
}

/// Both queries are the request itself; the operations facet lists the
/// actions whose keywords occur in the request, in order of first mention.
pub fn fallback_encode_with(request: &str, registry: &ActionRegistry) -> Result<QueryObject, EncodeError> {
    if request.trim().is_empty() {
        return Err(EncodeError::EmptyRequest);
    }
    let lowered = request.to_lowercase();
    let mut found: Vec<(usize, &str)> = registry
        .iter()
        .filter_map(|sig| {
            sig.match_terms()
                .filter_map(|kw| lowered.find(&kw.to_lowercase()))
                .min()
                .map(|pos| (pos, sig.name))
        })
        .collect();
    found.sort();

    let mut facets = empty_facets();
    if !found.is_empty() {
        let ops: Vec<&str> = found.into_iter().map(|(_, name)| name).collect();
        facets.insert(Facet::Operations, Some(ops.join(", ")));
    }
    Ok(QueryObject {
        task_memory_query: request.to_string(),
        knowledge_query: request.to_string(),
        facets,
        raw_request: request.to_string(),
    })
}

/// Parse the helper's reply. Returns `None` unless both queries are present.
pub fn parse_decomposition(reply: &str, request: &str) -> Option<QueryObject> {
    let mut task = None;
    let mut knowledge = None;
    let mut facets = empty_facets();
    for line in reply.lines().map(str::trim) {
        if let Some(v) = line.strip_prefix("TASK_QUERY:") {
            task = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("KNOWLEDGE_QUERY:") {
            knowledge = Some(v.trim().to_string());
        } else if let Some(facet) = Facet::ALL.iter().find(|f| line.starts_with(f.prefix())) {
            let v = line[facet.prefix().len()..].trim();
            if !v.is_empty() {
                facets.insert(*facet, Some(v.to_string()));
            }
        }
    }
    match (task, knowledge) {
        (Some(t), Some(k)) if !t.is_empty() && !k.is_empty() => Some(QueryObject {
            task_memory_query: t,
            knowledge_query: k,
            facets,
            raw_request: request.to_string(),
        }),
        _ => None,
    }
}

/// Encode `request`, consulting `helper` when one is configured.
pub fn encode(request: &str, helper: Option<&dyn ChatBackend>) -> Result<QueryObject, EncodeError> {
    let fallback = fallback_encode(request)?;
    let Some(helper) = helper else {
        return Ok(fallback);
    };
    let messages = [
        ChatMessage::system(DECOMPOSE_PROMPT),
        ChatMessage::user(request),
    ];
    match helper.chat_complete(&messages, 256) {
        Ok(reply) => match parse_decomposition(&reply, request) {
            Some(qo) => Ok(qo),
            None => {
                log::warn!("unparseable request decomposition, using fallback");
                Ok(fallback)
            }
        },
        Err(e) => {
            log::warn!("request decomposition failed ({e}), using fallback");
            Ok(fallback)
        }
    }
}
