//! Structured-response parsing and report assembly.
//!
//! Model responses follow a four-part numbered format: 1. existence
//! judgment, 2. exploitation narrative, 3. business impact, 4. proposed
//! fixes. Parsing is lenient about renumbering, bolding, and prose
//! drift; anything that defies the structure becomes `Unparseable`
//! with the raw text retained.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::parser::FunctionId;
use crate::prompts::{CweEntry, PromptMode};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("findings span multiple contracts: {0} and {1}")]
    MixedContracts(String, String),
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgment {
    Yes,
    No,
    NotSure,
    Unparseable,
}

impl Judgment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Judgment::Yes => "yes",
            Judgment::No => "no",
            Judgment::NotSure => "not-sure",
            Judgment::Unparseable => "unparseable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "yes" => Some(Judgment::Yes),
            "no" => Some(Judgment::No),
            "not-sure" => Some(Judgment::NotSure),
            "unparseable" => Some(Judgment::Unparseable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditFinding {
    pub target: FunctionId,
    pub mode: PromptMode,
    pub cwe: Option<CweEntry>,
    pub judgment: Judgment,
    pub vuln_types: Vec<String>,
    pub exploitation: String,
    pub impact: String,
    pub solutions: String,
    pub locations: Vec<String>,
    pub raw: String,
}

/// Category names plus a keyword table mapping response phrasing onto
/// them. "other" is the fallback for affirmative findings that match
/// nothing.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub categories: Vec<String>,
    pub synonyms: Vec<(String, String)>,
}

pub const CATEGORY_NAMES: [&str; 10] = [
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

impl Default for Taxonomy {
    fn default() -> Self {
        let categories = CATEGORY_NAMES.iter().map(|s| s.to_string()).collect();
        let synonyms = [
            ("access control", "access control"),
            ("unauthorized access", "access control"),
            ("missing access check", "access control"),
            ("onlyowner", "access control"),
            ("privilege", "access control"),
            ("authorization", "access control"),
            ("bad randomness", "bad randomness"),
            ("weak randomness", "bad randomness"),
            ("predictable random", "bad randomness"),
            ("blockhash", "bad randomness"),
            ("denial of service", "denial of service"),
            ("dos", "denial of service"),
            ("gas limit", "denial of service"),
            ("unbounded loop", "denial of service"),
            ("reentrancy", "reentrancy"),
            ("reentrant", "reentrancy"),
            ("re-entrancy", "reentrancy"),
            ("external call before state update", "reentrancy"),
            ("arithmetic", "arithmetic"),
            ("integer overflow", "arithmetic"),
            ("integer underflow", "arithmetic"),
            ("overflow", "arithmetic"),
            ("underflow", "arithmetic"),
            ("division by zero", "arithmetic"),
            ("front running", "front running"),
            ("front-running", "front running"),
            ("frontrun", "front running"),
            ("transaction ordering", "front running"),
            ("sandwich", "front running"),
            ("unchecked low level call", "unchecked low level calls"),
            ("unchecked call", "unchecked low level calls"),
            ("unchecked return value", "unchecked low level calls"),
            ("unchecked send", "unchecked low level calls"),
            ("delegatecall", "unchecked low level calls"),
            ("time manipulation", "time manipulation"),
            ("timestamp dependence", "time manipulation"),
            ("block.timestamp", "time manipulation"),
            ("miner manipulation", "time manipulation"),
            ("short address", "short addresses"),
            ("short addresses", "short addresses"),
        ];
        Taxonomy {
            categories,
            synonyms: synonyms
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Taxonomy {
    /// Synonym file: `keyword|category` lines, `#` comments.
    pub fn parse(text: &str) -> Self {
        let mut taxonomy = Taxonomy {
            categories: CATEGORY_NAMES.iter().map(|s| s.to_string()).collect(),
            synonyms: Vec::new(),
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((keyword, category)) = line.split_once('|') {
                let category = category.trim().to_string();
                if taxonomy.categories.contains(&category) {
                    taxonomy.synonyms.push((keyword.trim().to_lowercase(), category));
                }
            }
        }
        taxonomy
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# synonym table: keyword|category\n");
        for (k, v) in &self.synonyms {
            let _ = writeln!(out, "{k}|{v}");
        }
        out
    }
}

/// Prompt context carried into the finding.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub target: FunctionId,
    pub mode: PromptMode,
    pub cwe: Option<CweEntry>,
}

/// Section headers tolerated as `2.`, `2)`, `**2.`, `2:` etc.
fn section_starts(text: &str) -> Vec<(usize, usize)> {
    let mut starts = Vec::new();
    for (offset, line) in line_offsets(text) {
        let trimmed = line.trim_start().trim_start_matches(['*', '#']).trim_start();
        let mut chars = trimmed.chars();
        if let Some(d) = chars.next() {
            if let Some(num) = d.to_digit(10) {
                if (1..=4).contains(&num) {
                    if let Some(sep) = chars.next() {
                        if sep == '.' || sep == ')' || sep == ':' {
                            starts.push((num as usize, offset));
                        }
                    }
                }
            }
        }
    }
    starts
}

fn line_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        out.push((offset, line.trim_end_matches('\n')));
        offset += line.len();
    }
    out
}

fn judgment_from(section: &str) -> Judgment {
    let lower = section.to_lowercase();
    // "Not sure" must be checked before the bare "no" token.
    if lower.contains("not sure") {
        return Judgment::NotSure;
    }
    for token in lower.split(|c: char| !c.is_alphanumeric()) {
        match token {
            "yes" => return Judgment::Yes,
            "no" => return Judgment::No,
            _ => {}
        }
    }
    Judgment::Unparseable
}

/// Lines quoted in backticks or inside fenced code blocks.
fn collect_locations(text: &str) -> Vec<String> {
    let mut locations = Vec::new();
    let mut in_fence = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            if !trimmed.is_empty() {
                locations.push(trimmed.to_string());
            }
            continue;
        }
        // Inline single-backtick quotes.
        let mut rest = trimmed;
        while let Some(open) = rest.find('`') {
            let after = &rest[open + 1..];
            match after.find('`') {
                Some(close) => {
                    let quoted = &after[..close];
                    if !quoted.is_empty() {
                        locations.push(quoted.to_string());
                    }
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
    }
    locations
}

pub fn parse_response(text: &str, context: &PromptContext) -> AuditFinding {
    let starts = section_starts(text);
    let mut finding = AuditFinding {
        target: context.target.clone(),
        mode: context.mode,
        cwe: context.cwe.clone(),
        judgment: Judgment::Unparseable,
        vuln_types: Vec::new(),
        exploitation: String::new(),
        impact: String::new(),
        solutions: String::new(),
        locations: Vec::new(),
        raw: text.to_string(),
    };

    let Some(first) = starts.iter().position(|(num, _)| *num == 1) else {
        return finding;
    };

    // Slice each numbered section up to the next numbered header.
    let mut sections: BTreeMap<usize, &str> = BTreeMap::new();
    for (i, (num, offset)) in starts.iter().enumerate().skip(first) {
        let end = starts.get(i + 1).map(|(_, o)| *o).unwrap_or(text.len());
        sections.entry(*num).or_insert(&text[*offset..end]);
    }

    finding.judgment = judgment_from(sections[&1]);
    if finding.judgment == Judgment::Yes {
        let strip = |s: &&str| -> String {
            s.trim_start()
                .trim_start_matches(['*', '#'])
                .trim_start()
                .trim_start_matches(|c: char| c.is_ascii_digit())
                .trim_start_matches(['.', ')', ':'])
                .trim_start_matches('*')
                .trim()
                .to_string()
        };
        finding.exploitation = sections.get(&2).map(strip).unwrap_or_default();
        finding.impact = sections.get(&3).map(strip).unwrap_or_default();
        finding.solutions = sections.get(&4).map(strip).unwrap_or_default();
        finding.locations = collect_locations(text);
    }
    finding
}

/// All categories whose keywords appear in the text, longest keyword
/// first so specific phrases beat their substrings. Affirmative findings
/// matching nothing fall back to "other".
pub fn classify_vuln_text(text: &str, taxonomy: &Taxonomy, judgment: Judgment) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut keyed: Vec<&(String, String)> = taxonomy.synonyms.iter().collect();
    keyed.sort_by_key(|(k, _)| std::cmp::Reverse(k.len()));
    let mut categories: Vec<String> = Vec::new();
    let mut consumed = lower.clone();
    for (keyword, category) in keyed {
        if consumed.contains(keyword.as_str()) {
            if !categories.contains(category) {
                categories.push(category.clone());
            }
            consumed = consumed.replace(keyword.as_str(), " ");
        }
    }
    categories.sort();
    if categories.is_empty() && judgment == Judgment::Yes {
        categories.push("other".to_string());
    }
    categories
}

/// Parse + classify in one step.
pub fn analyze_response(text: &str, context: &PromptContext, taxonomy: &Taxonomy) -> AuditFinding {
    let mut finding = parse_response(text, context);
    if finding.judgment == Judgment::Yes {
        let narrative = format!("{} {}", finding.exploitation, finding.impact);
        finding.vuln_types = classify_vuln_text(&narrative, taxonomy, finding.judgment);
        // A CWE prompt that answers Yes implicitly asserts its own type.
        if let Some(cwe) = &finding.cwe {
            if taxonomy.categories.contains(&cwe.name) && !finding.vuln_types.contains(&cwe.name) {
                finding.vuln_types.push(cwe.name.clone());
                finding.vuln_types.sort();
            }
        }
    }
    finding
}

pub const CSV_COLUMNS: [&str; 10] = [
    "contract",
    "functionId",
    "mode",
    "cwe",
    "judgment",
    "categories",
    "locations",
    "exploitation",
    "impact",
    "solutions",
];

fn single_contract(findings: &[AuditFinding]) -> Result<String, AuditError> {
    let mut contract = String::new();
    for f in findings {
        if contract.is_empty() {
            contract = f.target.contract.clone();
        } else if contract != f.target.contract {
            return Err(AuditError::MixedContracts(contract, f.target.contract.clone()));
        }
    }
    Ok(contract)
}

pub fn assemble_csv(findings: &[AuditFinding]) -> Result<String, AuditError> {
    let contract = single_contract(findings)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_COLUMNS).map_err(|e| AuditError::Csv(e.to_string()))?;
    for f in findings {
        writer
            .write_record([
                contract.as_str(),
                &f.target.to_string(),
                f.mode.as_str(),
                f.cwe.as_ref().map(|c| c.name.as_str()).unwrap_or(""),
                f.judgment.as_str(),
                &f.vuln_types.join("; "),
                &f.locations.join("; "),
                &f.exploitation,
                &f.impact,
                &f.solutions,
            ])
            .map_err(|e| AuditError::Csv(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| AuditError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| AuditError::Csv(e.to_string()))
}

/// Re-read a findings CSV; `raw` is not persisted and comes back empty.
pub fn parse_csv(text: &str) -> Result<Vec<AuditFinding>, AuditError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut findings = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| AuditError::Csv(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let target = FunctionId::parse(&field(1))
            .ok_or_else(|| AuditError::Csv(format!("bad functionId: {}", field(1))))?;
        let mode = PromptMode::parse(&field(2))
            .ok_or_else(|| AuditError::Csv(format!("bad mode: {}", field(2))))?;
        let cwe_name = field(3);
        let judgment = Judgment::parse(&field(4))
            .ok_or_else(|| AuditError::Csv(format!("bad judgment: {}", field(4))))?;
        let split = |s: String| -> Vec<String> {
            s.split("; ").filter(|p| !p.is_empty()).map(|p| p.to_string()).collect()
        };
        findings.push(AuditFinding {
            target,
            mode,
            cwe: if cwe_name.is_empty() { None } else { Some(CweEntry::new("VT-??", &cwe_name)) },
            judgment,
            vuln_types: split(field(5)),
            locations: split(field(6)),
            exploitation: field(7),
            impact: field(8),
            solutions: field(9),
            raw: String::new(),
        });
    }
    Ok(findings)
}

pub fn assemble_markdown(findings: &[AuditFinding]) -> Result<String, AuditError> {
    let contract = single_contract(findings)?;
    let mut out = String::new();
    let _ = writeln!(out, "# Audit report: {contract}\n");
    let mut yes = 0usize;
    let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
    for f in findings {
        if f.judgment == Judgment::Yes {
            yes += 1;
            for c in &f.vuln_types {
                *per_category.entry(c).or_default() += 1;
            }
        }
    }
    let _ = writeln!(out, "{} findings, {yes} affirmative.\n", findings.len());
    if !per_category.is_empty() {
        out.push_str("| category | affirmative findings |\n|---|---|\n");
        for (c, n) in &per_category {
            let _ = writeln!(out, "| {c} | {n} |");
        }
        out.push('\n');
    }
    for f in findings {
        let cwe = f
            .cwe
            .as_ref()
            .map(|c| format!(" [{}]", c.name))
            .unwrap_or_default();
        let _ = writeln!(out, "## {}{cwe}\n", f.target);
        let _ = writeln!(out, "1. Vulnerability present: {}", f.judgment.as_str());
        if f.judgment == Judgment::Yes {
            let _ = writeln!(out, "2. Proof of concept: {}", f.exploitation);
            let _ = writeln!(out, "3. Business impact: {}", f.impact);
            let _ = writeln!(out, "4. Suggested fixes: {}", f.solutions);
            if !f.locations.is_empty() {
                let _ = writeln!(out, "\nQuoted locations:");
                for loc in &f.locations {
                    let _ = writeln!(out, "- `{loc}`");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}
