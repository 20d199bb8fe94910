//! Prompt rendering and audit-campaign planning.
//!
//! Two prompt families: CAQ (the generic four-part audit questionnaire,
//! one per function) and CWE (the same questionnaire specialized to one
//! named vulnerability type, one per function × catalog entry).

use std::fmt::Write as _;

use base64::Engine as _;
use thiserror::Error;

use crate::ccl::{estimate_tokens, CodeCallList};
use crate::parser::FunctionId;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("CWE plan requested with an empty catalog")]
    EmptyCatalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    Caq,
    Cwe,
}

impl PromptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::Caq => "caq",
            PromptMode::Cwe => "cwe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "caq" | "CAQ" => Some(PromptMode::Caq),
            "cwe" | "CWE" => Some(PromptMode::Cwe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CweEntry {
    pub id: String,
    pub name: String,
    pub description: Option<String>,
}

impl CweEntry {
    pub fn new(id: &str, name: &str) -> Self {
        CweEntry { id: id.to_string(), name: name.to_string(), description: None }
    }
}

#[derive(Debug, Clone)]
pub struct PromptInstance {
    pub target: FunctionId,
    pub mode: PromptMode,
    pub cwe: Option<CweEntry>,
    pub text: String,
    pub token_estimate: usize,
}

/// The CAQ instruction block, preserved verbatim from the questionnaire
/// this tool reproduces, idiosyncratic phrasing included.
const CAQ_TEMPLATE: &str = "Analyze the following code, respond me in this format (fill in the part): 1. Are there any vulnerabilities? Provide a brief initial response with one of the following: 'Yes,' 'No,' or 'Not sure.' If your answer is 'No,' you can stop here. If your answer is 'Yes,' proceed to the next steps. 2. Explain in details how this vulnerability can be exploited :___. 3. The business impact of this vulnerabilities in one sentence: function leads to. 4. The potential solutions of this vulnerabilities. Note: You can state more than one lines which have this vulnerability! This is a short extraction of the solidity code and please assume all the variables in this code have been defined. {CODE}";

/// The CWE variant: identical except item 1 names the vulnerability type.
const CWE_TEMPLATE: &str = "Analyze the following code, respond me in this format (fill in the part): 1. Are there any {CWE_TYPE} vulnerabilities? Provide a brief initial response with one of the following: 'Yes,' 'No,' or 'Not sure.' If your answer is 'No,' you can stop here. If your answer is 'Yes,' proceed to the next steps. 2. Explain in details how this vulnerability can be exploited :___. 3. The business impact of this vulnerabilities in one sentence: function leads to. 4. The potential solutions of this vulnerabilities. Note: You can state more than one lines which have this vulnerability! This is a short extraction of the solidity code and please assume all the variables in this code have been defined. {CODE}";

pub fn caq_template() -> &'static str {
    CAQ_TEMPLATE
}

pub fn cwe_template() -> &'static str {
    CWE_TEMPLATE
}

fn code_block(ccl: &CodeCallList) -> String {
    let mut block = String::new();
    for seg in &ccl.segments {
        block.push('\n');
        block.push_str(&seg.code);
    }
    block
}

pub fn render_caq(ccl: &CodeCallList) -> PromptInstance {
    let text = CAQ_TEMPLATE.replace("{CODE}", &code_block(ccl));
    let token_estimate = estimate_tokens(&text);
    PromptInstance {
        target: ccl.target.clone(),
        mode: PromptMode::Caq,
        cwe: None,
        text,
        token_estimate,
    }
}

pub fn render_cwe(ccl: &CodeCallList, cwe: &CweEntry) -> PromptInstance {
    let text = CWE_TEMPLATE
        .replace("{CWE_TYPE}", &cwe.name)
        .replace("{CODE}", &code_block(ccl));
    let token_estimate = estimate_tokens(&text);
    PromptInstance {
        target: ccl.target.clone(),
        mode: PromptMode::Cwe,
        cwe: Some(cwe.clone()),
        text,
        token_estimate,
    }
}

/// CAQ: one instance per CCL. CWE: function-major, catalog order within.
pub fn plan_audit(
    ccls: &[(FunctionId, CodeCallList)],
    mode: PromptMode,
    catalog: &[CweEntry],
) -> Result<Vec<PromptInstance>, PromptError> {
    match mode {
        PromptMode::Caq => Ok(ccls.iter().map(|(_, ccl)| render_caq(ccl)).collect()),
        PromptMode::Cwe => {
            if catalog.is_empty() {
                return Err(PromptError::EmptyCatalog);
            }
            let mut plan = Vec::with_capacity(ccls.len() * catalog.len());
            for (_, ccl) in ccls {
                for cwe in catalog {
                    plan.push(render_cwe(ccl, cwe));
                }
            }
            Ok(plan)
        }
    }
}

/// Default 38-entry catalog: the ten taxonomy category names first, then
/// numbered placeholders users replace with their full type list.
pub fn default_catalog() -> Vec<CweEntry> {
    let named = [
        "access control",
        "bad randomness",
        "denial of service",
        "reentrancy",
        "arithmetic",
        "front running",
        "unchecked low level calls",
        "time manipulation",
        "short addresses",
        "other",
    ];
    let mut catalog: Vec<CweEntry> = named
        .iter()
        .enumerate()
        .map(|(i, name)| CweEntry::new(&format!("VT-{:02}", i + 1), name))
        .collect();
    for i in named.len()..38 {
        catalog.push(CweEntry::new(
            &format!("VT-{:02}", i + 1),
            &format!("placeholder type {:02}", i + 1),
        ));
    }
    catalog
}

/// Catalog file: one `id|name|description` per line; `#` comments allowed.
pub fn parse_catalog(text: &str) -> Vec<CweEntry> {
    let mut catalog = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, '|');
        let id = parts.next().unwrap_or("").trim();
        let name = parts.next().unwrap_or("").trim();
        if id.is_empty() || name.is_empty() {
            continue;
        }
        let description = parts.next().map(|d| d.trim().to_string()).filter(|d| !d.is_empty());
        catalog.push(CweEntry { id: id.to_string(), name: name.to_string(), description });
    }
    catalog
}

pub fn catalog_text(catalog: &[CweEntry]) -> String {
    let mut out = String::from("# vulnerability type catalog: id|name|description\n");
    for e in catalog {
        let _ = writeln!(out, "{}|{}|{}", e.id, e.name, e.description.as_deref().unwrap_or(""));
    }
    out
}

/// Plan file: one `target mode cwe-or-dash base64(text)` record per line.
pub fn plan_text(plan: &[PromptInstance]) -> String {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = String::new();
    for p in plan {
        let cwe = p.cwe.as_ref().map(|c| c.name.replace(' ', "_")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{} {} {} {}", p.target, p.mode.as_str(), cwe, b64.encode(&p.text));
    }
    out
}

pub fn parse_plan_text(text: &str) -> Result<Vec<PromptInstance>, String> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut plan = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| format!("plan line {}: {msg}", lineno + 1);
        let mut parts = line.splitn(4, ' ');
        let target = parts
            .next()
            .and_then(FunctionId::parse)
            .ok_or_else(|| err("bad target id"))?;
        let mode = parts
            .next()
            .and_then(PromptMode::parse)
            .ok_or_else(|| err("bad mode"))?;
        let cwe_field = parts.next().ok_or_else(|| err("missing cwe field"))?;
        let cwe = if cwe_field == "-" {
            None
        } else {
            Some(CweEntry::new("VT-??", &cwe_field.replace('_', " ")))
        };
        let prompt_text = parts
            .next()
            .and_then(|s| b64.decode(s).ok())
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| err("bad prompt text"))?;
        let token_estimate = estimate_tokens(&prompt_text);
        plan.push(PromptInstance { target, mode, cwe, text: prompt_text, token_estimate });
    }
    Ok(plan)
}
