//! Code Call List generation.
//!
//! A CCL is the verbatim code of one target function plus every function
//! reachable from it in the call graph, deduplicated and ordered: target
//! first, then callees in DFS pre-order, with modifiers hoisted to the
//! end. Segments are dropped against a token budget, shallowest kept
//! first.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use base64::Engine as _;
use thiserror::Error;

use crate::callgraph::{reachable_set, CallGraph, GraphError};
use crate::parser::{FunctionId, ParsedUnit};

#[derive(Debug, Error)]
pub enum CclError {
    #[error("unknown function: {0}")]
    UnknownFunction(FunctionId),
    #[error("budget {budget} too small for target {target} ({needed} tokens)")]
    BudgetTooSmall {
        target: FunctionId,
        needed: usize,
        budget: usize,
    },
}

impl From<GraphError> for CclError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownFunction(id) => CclError::UnknownFunction(id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRole {
    Target,
    Modifier,
    Constructor,
    Callee,
}

impl SegmentRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentRole::Target => "target",
            SegmentRole::Modifier => "modifier",
            SegmentRole::Constructor => "constructor",
            SegmentRole::Callee => "callee",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodeSegment {
    pub function_id: FunctionId,
    /// Verbatim span text, comments and header included.
    pub code: String,
    pub role: SegmentRole,
    /// Hop distance from the target; 0 iff role is Target.
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct CodeCallList {
    pub target: FunctionId,
    pub segments: Vec<CodeSegment>,
    pub token_estimate: usize,
    pub truncated: bool,
    /// Reachable functions excluded by the budget.
    pub omitted: Vec<FunctionId>,
}

impl CodeCallList {
    /// Segment code strings in order, the paper-style list-of-strings view.
    pub fn codes(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.code.as_str()).collect()
    }
}

/// Whitespace-word count scaled by 4/3, rounded up: a model-agnostic
/// token-count proxy.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 133).div_ceil(100)
}

/// Verbatim code of a function or modifier (signature-only text for
/// bodiless declarations).
pub fn extract_code<'a>(unit: &'a ParsedUnit, id: &FunctionId) -> Result<&'a str, CclError> {
    unit.span_text(id).ok_or_else(|| CclError::UnknownFunction(id.clone()))
}

pub fn generate_ccl(
    graph: &CallGraph,
    unit: &ParsedUnit,
    target: &FunctionId,
    budget: usize,
) -> Result<CodeCallList, CclError> {
    let target_code = extract_code(unit, target)?.to_string();
    let target_tokens = estimate_tokens(&target_code);
    if target_tokens > budget {
        return Err(CclError::BudgetTooSmall {
            target: target.clone(),
            needed: target_tokens,
            budget,
        });
    }

    let reachable = reachable_set(graph, target)?;
    let depths = hop_depths(graph, target);
    let is_modifier = |id: &FunctionId| unit.modifier(id).is_some();

    // Presentation order: DFS pre-order with modifiers hoisted to the end.
    let mut ordered: Vec<&FunctionId> = Vec::with_capacity(reachable.len());
    ordered.extend(reachable.iter().filter(|id| !is_modifier(id)));
    ordered.extend(reachable.iter().filter(|id| is_modifier(id)));

    // Budget selection favors shallow segments; each drop decision is made
    // against the running total at that point.
    let mut by_depth: Vec<&FunctionId> = ordered.clone();
    by_depth.sort_by_key(|id| depths.get(*id).copied().unwrap_or(usize::MAX));
    let mut total = target_tokens;
    let mut included: Vec<&FunctionId> = Vec::new();
    let mut omitted: Vec<FunctionId> = Vec::new();
    for id in by_depth {
        let code = match extract_code(unit, id) {
            Ok(c) => c,
            Err(_) => {
                // Reachable node without a span (synthetic graphs): count as
                // omitted so the closure invariant still holds.
                omitted.push(id.clone());
                continue;
            }
        };
        let tokens = estimate_tokens(code);
        if total + tokens > budget {
            omitted.push(id.clone());
        } else {
            total += tokens;
            included.push(id);
        }
    }

    let mut segments = vec![CodeSegment {
        function_id: target.clone(),
        code: target_code,
        role: SegmentRole::Target,
        depth: 0,
    }];
    for id in &ordered {
        if !included.contains(id) {
            continue;
        }
        let role = if is_modifier(id) {
            SegmentRole::Modifier
        } else if id.name == "constructor" {
            SegmentRole::Constructor
        } else {
            SegmentRole::Callee
        };
        segments.push(CodeSegment {
            function_id: (*id).clone(),
            code: extract_code(unit, id)?.to_string(),
            role,
            depth: depths.get(*id).copied().unwrap_or(usize::MAX),
        });
    }

    Ok(CodeCallList {
        target: target.clone(),
        segments,
        token_estimate: total,
        truncated: !omitted.is_empty(),
        omitted,
    })
}

/// One CCL per function with a body declared in `contract`, keyed by id in
/// declaration order. Per-function failures become diagnostics, never an
/// abort.
pub fn generate_all_ccls(
    graph: &CallGraph,
    unit: &ParsedUnit,
    contract: &str,
    budget: usize,
) -> (Vec<(FunctionId, CodeCallList)>, Vec<(FunctionId, CclError)>) {
    let mut ccls = Vec::new();
    let mut diagnostics = Vec::new();
    for f in unit.functions_of(contract) {
        if !f.body_present {
            continue;
        }
        match generate_ccl(graph, unit, &f.id, budget) {
            Ok(ccl) => ccls.push((f.id.clone(), ccl)),
            Err(e) => diagnostics.push((f.id.clone(), e)),
        }
    }
    (ccls, diagnostics)
}

/// Shortest hop distance from the target to every reachable node.
fn hop_depths(graph: &CallGraph, target: &FunctionId) -> BTreeMap<FunctionId, usize> {
    let mut depths = BTreeMap::new();
    depths.insert(target.clone(), 0usize);
    let mut frontier = vec![target.clone()];
    let mut depth = 0usize;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for id in &frontier {
            for e in graph.edges_of(id) {
                if !depths.contains_key(&e.callee) {
                    depths.insert(e.callee.clone(), depth);
                    next.push(e.callee.clone());
                }
            }
        }
        frontier = next;
    }
    depths.remove(target);
    depths
}

/// Batch export: one record per CCL with its ordered segments. Code is
/// base64 so records stay line-oriented.
pub fn batch_text(ccls: &[(FunctionId, CodeCallList)]) -> String {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = String::new();
    for (id, ccl) in ccls {
        let _ = writeln!(
            out,
            "ccl {id} truncated={} tokens={}",
            ccl.truncated, ccl.token_estimate
        );
        for seg in &ccl.segments {
            let _ = writeln!(
                out,
                "segment {} {} {}",
                seg.function_id,
                seg.role.as_str(),
                b64.encode(&seg.code)
            );
        }
        for omitted in &ccl.omitted {
            let _ = writeln!(out, "omitted {omitted}");
        }
        out.push_str("end\n");
    }
    out
}

/// Parse the batch export back into CCLs (used for stage handoff).
pub fn parse_batch_text(text: &str) -> Result<Vec<(FunctionId, CodeCallList)>, String> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = Vec::new();
    let mut current: Option<CodeCallList> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| format!("ccl batch line {}: {msg}", lineno + 1);
        let mut parts = line.splitn(4, ' ');
        match parts.next() {
            Some("ccl") => {
                let id = parts
                    .next()
                    .and_then(FunctionId::parse)
                    .ok_or_else(|| err("bad target id"))?;
                let truncated = parts
                    .next()
                    .and_then(|s| s.strip_prefix("truncated="))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad truncated flag"))?;
                let tokens = parts
                    .next()
                    .and_then(|s| s.strip_prefix("tokens="))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad token estimate"))?;
                current = Some(CodeCallList {
                    target: id,
                    segments: Vec::new(),
                    token_estimate: tokens,
                    truncated,
                    omitted: Vec::new(),
                });
            }
            Some("segment") => {
                let ccl = current.as_mut().ok_or_else(|| err("segment outside record"))?;
                let id = parts
                    .next()
                    .and_then(FunctionId::parse)
                    .ok_or_else(|| err("bad segment id"))?;
                let role = match parts.next() {
                    Some("target") => SegmentRole::Target,
                    Some("modifier") => SegmentRole::Modifier,
                    Some("constructor") => SegmentRole::Constructor,
                    Some("callee") => SegmentRole::Callee,
                    _ => return Err(err("bad segment role")),
                };
                let code = parts
                    .next()
                    .and_then(|s| b64.decode(s).ok())
                    .and_then(|b| String::from_utf8(b).ok())
                    .ok_or_else(|| err("bad segment code"))?;
                let depth = if role == SegmentRole::Target { 0 } else { 1 };
                ccl.segments.push(CodeSegment { function_id: id, code, role, depth });
            }
            Some("omitted") => {
                let ccl = current.as_mut().ok_or_else(|| err("omitted outside record"))?;
                let id = parts
                    .next()
                    .and_then(FunctionId::parse)
                    .ok_or_else(|| err("bad omitted id"))?;
                ccl.omitted.push(id);
            }
            Some("end") => {
                let ccl = current.take().ok_or_else(|| err("end outside record"))?;
                out.push((ccl.target.clone(), ccl));
            }
            _ => return Err(err("unknown record")),
        }
    }
    Ok(out)
}
