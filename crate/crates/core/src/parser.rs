//! Pragmatic Solidity subset parser.
//!
//! Parses declarations (contracts, functions, modifiers), brace-matched
//! bodies, and call expressions inside bodies. Full expression parsing is
//! deliberately out of scope: call-graph and chunking only need function
//! units, their spans, and the call sites within them. Comments are kept
//! inside spans; assembly blocks are treated as opaque text.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: u32, msg: String },
    #[error("unknown contract: {0}")]
    UnknownContract(String),
}

/// `Contract.name/arity` identity of a function, modifier, or constructor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionId {
    pub contract: String,
    pub name: String,
    pub arity: usize,
}

impl FunctionId {
    pub fn new(contract: &str, name: &str, arity: usize) -> Self {
        FunctionId {
            contract: contract.to_string(),
            name: name.to_string(),
            arity,
        }
    }

    pub fn parse(s: &str) -> Option<FunctionId> {
        let (rest, arity) = s.rsplit_once('/')?;
        let (contract, name) = rest.rsplit_once('.')?;
        Some(FunctionId {
            contract: contract.to_string(),
            name: name.to_string(),
            arity: arity.parse().ok()?,
        })
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}/{}", self.contract, self.name, self.arity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceSpan {
    pub start: usize,
    /// Exclusive end offset.
    pub end: usize,
    /// 1-based line of `start`.
    pub line: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractKind {
    Contract,
    Interface,
    Library,
    Abstract,
}

#[derive(Debug, Clone)]
pub struct ContractDef {
    pub name: String,
    pub kind: ContractKind,
    pub bases: Vec<String>,
    pub span: SourceSpan,
    /// Region between the opening brace and the first function-like member.
    pub state_var_span: Option<SourceSpan>,
    /// State variable name -> declared type name (plain identifier types only).
    pub state_vars: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    External,
    Internal,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutability {
    None,
    View,
    Pure,
    Payable,
}

#[derive(Debug, Clone)]
pub struct FunctionDef {
    pub id: FunctionId,
    pub name: String,
    pub visibility: Visibility,
    pub mutability: Mutability,
    pub modifiers: Vec<String>,
    /// Includes leading doc comments.
    pub span: SourceSpan,
    pub body_present: bool,
    /// Parameter (type, name) pairs; name empty when unnamed.
    pub params: Vec<(String, String)>,
    /// Contract-typed local declarations in the body, name -> type.
    pub locals: Vec<(String, String)>,
    /// Single identifier return type, when there is exactly one.
    pub return_type: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ModifierDef {
    pub id: FunctionId,
    pub name: String,
    pub span: SourceSpan,
    pub body_present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKindHint {
    Bare,
    Member,
    New,
    ModifierInvocation,
}

#[derive(Debug, Clone)]
pub struct CallSite {
    pub caller: FunctionId,
    pub callee_name: String,
    /// Receiver expression text for member calls.
    pub qualifier: Option<String>,
    pub arg_count: usize,
    pub kind_hint: CallKindHint,
    pub span: SourceSpan,
}

#[derive(Debug, Clone)]
pub struct ParsedUnit {
    pub text: String,
    pub contracts: Vec<ContractDef>,
    pub functions: Vec<FunctionDef>,
    pub modifiers: Vec<ModifierDef>,
    pub call_sites: Vec<CallSite>,
    pub warnings: Vec<String>,
}

impl ParsedUnit {
    pub fn contract(&self, name: &str) -> Option<&ContractDef> {
        self.contracts.iter().find(|c| c.name == name)
    }

    pub fn function(&self, id: &FunctionId) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| &f.id == id)
    }

    pub fn modifier(&self, id: &FunctionId) -> Option<&ModifierDef> {
        self.modifiers.iter().find(|m| &m.id == id)
    }

    /// Functions declared directly in a contract, in declaration order.
    pub fn functions_of(&self, contract: &str) -> Vec<&FunctionDef> {
        self.functions.iter().filter(|f| f.id.contract == contract).collect()
    }

    /// Span text of a function or modifier.
    pub fn span_text(&self, id: &FunctionId) -> Option<&str> {
        let span = self
            .function(id)
            .map(|f| f.span)
            .or_else(|| self.modifier(id).map(|m| m.span))?;
        Some(&self.text[span.start..span.end])
    }

    /// One record per declaration: kind, id, span, modifiers. Stable order.
    pub fn ast_dump(&self) -> String {
        let mut out = String::new();
        for c in &self.contracts {
            let kind = match c.kind {
                ContractKind::Contract => "contract",
                ContractKind::Interface => "interface",
                ContractKind::Library => "library",
                ContractKind::Abstract => "abstract",
            };
            out.push_str(&format!("{kind} {} {}..{}\n", c.name, c.span.start, c.span.end));
        }
        for f in &self.functions {
            out.push_str(&format!(
                "function {} {}..{} modifiers={}\n",
                f.id,
                f.span.start,
                f.span.end,
                f.modifiers.join("+")
            ));
        }
        for m in &self.modifiers {
            out.push_str(&format!("modifier {} {}..{}\n", m.id, m.span.start, m.span.end));
        }
        out
    }
}

/// Functions visible on `contract`: own declarations first, then inherited
/// ones resolved through bases present in the unit. An override (same name
/// and arity) shadows the base definition; each entry keeps the id of its
/// defining contract.
pub fn extract_functions<'a>(
    unit: &'a ParsedUnit,
    contract: &str,
) -> Result<Vec<&'a FunctionDef>, ParseError> {
    let def = unit
        .contract(contract)
        .ok_or_else(|| ParseError::UnknownContract(contract.to_string()))?;
    let mut out: Vec<&FunctionDef> = unit.functions_of(contract);
    let mut bases = def.bases.clone();
    let mut visited = vec![contract.to_string()];
    while let Some(base) = bases.pop() {
        if visited.contains(&base) {
            continue;
        }
        visited.push(base.clone());
        if let Some(base_def) = unit.contract(&base) {
            for f in unit.functions_of(&base) {
                let shadowed = out
                    .iter()
                    .any(|g| g.name == f.name && g.id.arity == f.id.arity);
                if !shadowed {
                    out.push(f);
                }
            }
            bases.extend(base_def.bases.iter().cloned());
        }
    }
    Ok(out)
}

/// Call sites whose caller is `fn_id`, in source order.
pub fn extract_call_sites<'a>(unit: &'a ParsedUnit, fn_id: &FunctionId) -> Vec<&'a CallSite> {
    unit.call_sites.iter().filter(|s| &s.caller == fn_id).collect()
}

pub fn parse(text: &str) -> Result<ParsedUnit, ParseError> {
    Parser::new(text)?.run()
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Ident,
    Num,
    Str,
    Punct(u8),
}

#[derive(Debug, Clone, Copy)]
struct Tok {
    kind: TokKind,
    start: usize,
    end: usize,
}

#[derive(Debug, Clone, Copy)]
struct Comment {
    start: usize,
    end: usize,
    doc: bool,
}

struct Lexed {
    toks: Vec<Tok>,
    comments: Vec<Comment>,
    line_starts: Vec<usize>,
}

fn lex(text: &str) -> Result<Lexed, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut comments = Vec::new();
    let mut line_starts = vec![0usize];
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            line_starts.push(i + 1);
        }
    }
    let line_of = |offset: usize| -> u32 {
        (line_starts.partition_point(|&s| s <= offset)) as u32
    };

    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            let start = i;
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            let doc = text[start..].starts_with("///");
            comments.push(Comment { start, end: i, doc });
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let start = i;
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(ParseError::Syntax {
                        line: line_of(start),
                        msg: "unterminated block comment".to_string(),
                    });
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            let doc = text[start..].starts_with("/**");
            comments.push(Comment { start, end: i, doc });
        } else if c == b'"' || c == b'\'' {
            let start = i;
            i += 1;
            loop {
                if i >= bytes.len() || bytes[i] == b'\n' {
                    return Err(ParseError::Syntax {
                        line: line_of(start),
                        msg: "unterminated string literal".to_string(),
                    });
                }
                if bytes[i] == b'\\' {
                    i += 2;
                    continue;
                }
                if bytes[i] == c {
                    i += 1;
                    break;
                }
                i += 1;
            }
            toks.push(Tok { kind: TokKind::Str, start, end: i });
        } else if c == b'_' || c == b'$' || c.is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len()
                && (bytes[i] == b'_' || bytes[i] == b'$' || bytes[i].is_ascii_alphanumeric())
            {
                i += 1;
            }
            toks.push(Tok { kind: TokKind::Ident, start, end: i });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_')
            {
                // Hex literals, exponents, and version-ish numbers all lex as one blob.
                i += 1;
            }
            // A trailing '.' belongs to the next token (e.g. member access).
            if bytes[i - 1] == b'.' {
                i -= 1;
            }
            toks.push(Tok { kind: TokKind::Num, start, end: i });
        } else if c < 0x80 {
            toks.push(Tok { kind: TokKind::Punct(c), start: i, end: i + 1 });
            i += 1;
        } else {
            // Non-ASCII byte outside strings/comments: treat as opaque.
            let start = i;
            while i < bytes.len() && bytes[i] >= 0x80 {
                i += 1;
            }
            toks.push(Tok { kind: TokKind::Str, start, end: i });
        }
    }

    Ok(Lexed { toks, comments, line_starts })
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

const HEADER_KEYWORDS: &[&str] = &[
    "public", "external", "internal", "private", "view", "pure", "payable", "constant",
    "virtual", "override", "returns",
];

const STMT_KEYWORDS: &[&str] = &[
    "if", "else", "for", "while", "do", "return", "emit", "new", "delete", "try", "catch",
    "assembly", "unchecked", "break", "continue", "revert", "require", "assert", "throw",
    "memory", "storage", "calldata", "is", "using", "function", "modifier", "constructor",
    "mapping", "returns", "pragma", "import",
];

const BUILTINS: &[&str] = &[
    "require", "assert", "revert", "keccak256", "sha256", "sha3", "ripemd160", "ecrecover",
    "addmod", "mulmod", "selfdestruct", "suicide", "gasleft", "blockhash", "payable",
    "address", "type", "unchecked", "delete",
];

fn is_elementary_type(name: &str) -> bool {
    matches!(name, "bool" | "string" | "bytes" | "byte" | "address" | "payable")
        || (name.starts_with("uint") && name[4..].chars().all(|c| c.is_ascii_digit()))
        || (name.starts_with("int") && name[3..].chars().all(|c| c.is_ascii_digit()))
        || (name.starts_with("bytes")
            && !name[5..].is_empty()
            && name[5..].chars().all(|c| c.is_ascii_digit()))
}

fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name) || is_elementary_type(name)
}

/// Body of a parsed function, saved for the second (call-site) pass.
struct PendingBody {
    caller: FunctionId,
    /// Token index range strictly inside the braces.
    toks: (usize, usize),
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Tok>,
    comments: Vec<Comment>,
    line_starts: Vec<usize>,
    contracts: Vec<ContractDef>,
    functions: Vec<FunctionDef>,
    modifiers: Vec<ModifierDef>,
    call_sites: Vec<CallSite>,
    warnings: Vec<String>,
    bodies: Vec<PendingBody>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, ParseError> {
        let lexed = lex(text)?;
        Ok(Parser {
            text,
            toks: lexed.toks,
            comments: lexed.comments,
            line_starts: lexed.line_starts,
            contracts: Vec::new(),
            functions: Vec::new(),
            modifiers: Vec::new(),
            call_sites: Vec::new(),
            warnings: Vec::new(),
            bodies: Vec::new(),
        })
    }

    fn run(mut self) -> Result<ParsedUnit, ParseError> {
        self.parse_top_level()?;
        let bodies = std::mem::take(&mut self.bodies);
        for body in &bodies {
            self.scan_body(body);
        }
        // Call sites in source order regardless of discovery order.
        self.call_sites.sort_by_key(|s| s.span.start);
        Ok(ParsedUnit {
            text: self.text.to_string(),
            contracts: self.contracts,
            functions: self.functions,
            modifiers: self.modifiers,
            call_sites: self.call_sites,
            warnings: self.warnings,
        })
    }

    fn line_of(&self, offset: usize) -> u32 {
        self.line_starts.partition_point(|&s| s <= offset) as u32
    }

    fn span(&self, start: usize, end: usize) -> SourceSpan {
        SourceSpan { start, end, line: self.line_of(start) }
    }

    fn ident(&self, i: usize) -> Option<&'a str> {
        let t = self.toks.get(i)?;
        (t.kind == TokKind::Ident).then(|| &self.text[t.start..t.end])
    }

    fn punct(&self, i: usize, c: u8) -> bool {
        matches!(self.toks.get(i), Some(t) if t.kind == TokKind::Punct(c))
    }

    /// Index of the matching closer for the opener at `open`.
    fn matching(&self, open: usize) -> Result<usize, ParseError> {
        let (open_c, close_c) = match self.toks[open].kind {
            TokKind::Punct(b'{') => (b'{', b'}'),
            TokKind::Punct(b'(') => (b'(', b')'),
            TokKind::Punct(b'[') => (b'[', b']'),
            _ => unreachable!("matching() on non-opener"),
        };
        let mut depth = 0usize;
        for i in open..self.toks.len() {
            match self.toks[i].kind {
                TokKind::Punct(c) if c == open_c => depth += 1,
                TokKind::Punct(c) if c == close_c => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(i);
                    }
                }
                _ => {}
            }
        }
        Err(ParseError::Syntax {
            line: self.line_of(self.toks[open].start),
            msg: format!("unbalanced {}", open_c as char),
        })
    }

    /// Extend a declaration start backwards over directly preceding doc comments.
    fn doc_start(&self, decl_start: usize) -> usize {
        let mut start = decl_start;
        loop {
            let prev = self
                .comments
                .iter()
                .rev()
                .find(|c| c.end <= start && self.text[c.end..start].trim().is_empty());
            match prev {
                Some(c) if c.doc => start = c.start,
                _ => return start,
            }
        }
    }

    /// Skip a statement or declaration: past the first top-level `;`, or
    /// past a top-level brace block if one closes first.
    fn skip_past_semicolon(&self, mut i: usize) -> usize {
        let mut depth = 0usize;
        let mut brace_depth = 0usize;
        while i < self.toks.len() {
            match self.toks[i].kind {
                TokKind::Punct(b'{') => {
                    depth += 1;
                    brace_depth += 1;
                }
                TokKind::Punct(b'}') => {
                    if brace_depth <= 1 {
                        return i + 1;
                    }
                    depth = depth.saturating_sub(1);
                    brace_depth -= 1;
                }
                TokKind::Punct(b'(' | b'[') => depth += 1,
                TokKind::Punct(b')' | b']') => depth = depth.saturating_sub(1),
                TokKind::Punct(b';') if depth == 0 => return i + 1,
                _ => {}
            }
            i += 1;
        }
        i
    }

    fn parse_top_level(&mut self) -> Result<(), ParseError> {
        let mut i = 0usize;
        while i < self.toks.len() {
            match self.ident(i) {
                Some("pragma" | "import" | "using") => i = self.skip_past_semicolon(i),
                Some("abstract") if self.ident(i + 1) == Some("contract") => {
                    i = self.parse_contract(i, i + 1, ContractKind::Abstract)?;
                }
                Some("contract") => i = self.parse_contract(i, i, ContractKind::Contract)?,
                Some("interface") => i = self.parse_contract(i, i, ContractKind::Interface)?,
                Some("library") => i = self.parse_contract(i, i, ContractKind::Library)?,
                Some("function") => {
                    // Free function: attributed to an empty contract name.
                    i = self.parse_function_like(i, "", "function")?;
                }
                Some("struct" | "enum") => i = self.skip_braced_decl(i)?,
                Some(_) | None => i = self.skip_past_semicolon(i),
            }
        }
        Ok(())
    }

    fn skip_braced_decl(&mut self, i: usize) -> Result<usize, ParseError> {
        let mut j = i;
        while j < self.toks.len() && !self.punct(j, b'{') {
            if self.punct(j, b';') {
                return Ok(j + 1);
            }
            j += 1;
        }
        if j >= self.toks.len() {
            return Ok(j);
        }
        Ok(self.matching(j)? + 1)
    }

    fn parse_contract(
        &mut self,
        start_idx: usize,
        kw_idx: usize,
        kind: ContractKind,
    ) -> Result<usize, ParseError> {
        let name = match self.ident(kw_idx + 1) {
            Some(n) => n.to_string(),
            None => return Ok(self.skip_past_semicolon(kw_idx)),
        };
        let mut j = kw_idx + 2;
        let mut bases = Vec::new();
        if self.ident(j) == Some("is") {
            j += 1;
            while j < self.toks.len() && !self.punct(j, b'{') {
                if let Some(base) = self.ident(j) {
                    bases.push(base.to_string());
                    j += 1;
                    // Skip dotted names and base constructor arguments.
                    while self.punct(j, b'.') {
                        if let Some(seg) = self.ident(j + 1) {
                            *bases.last_mut().unwrap() = seg.to_string();
                        }
                        j += 2;
                    }
                    if self.punct(j, b'(') {
                        j = self.matching(j)? + 1;
                    }
                } else {
                    j += 1;
                }
            }
        }
        while j < self.toks.len() && !self.punct(j, b'{') {
            j += 1;
        }
        if j >= self.toks.len() {
            return Err(ParseError::Syntax {
                line: self.line_of(self.toks[kw_idx].start),
                msg: format!("contract {name} has no body"),
            });
        }
        let open = j;
        let close = self.matching(open)?;
        let decl_start = self.doc_start(self.toks[start_idx].start);
        let span = self.span(decl_start, self.toks[close].end);

        let first_member_start = self.parse_members(&name, open + 1, close)?;

        let body_start = self.toks[open].end;
        let state_var_span = first_member_start
            .map(|m| self.span(body_start, m))
            .or_else(|| Some(self.span(body_start, self.toks[close].start)))
            .filter(|s| s.start < s.end);

        // parse_members filled state_vars via the out-param below.
        let mut state_vars = Vec::new();
        self.collect_state_vars(open + 1, close, &mut state_vars);

        self.contracts.push(ContractDef {
            name,
            kind,
            bases,
            span,
            state_var_span,
            state_vars,
        });
        Ok(close + 1)
    }

    /// Parse members between `from..to`; returns the doc-extended start of
    /// the first function-like member, for the state-variable region.
    fn parse_members(
        &mut self,
        contract: &str,
        from: usize,
        to: usize,
    ) -> Result<Option<usize>, ParseError> {
        let mut first_member: Option<usize> = None;
        let mut i = from;
        while i < to {
            match self.ident(i) {
                Some(kw @ ("function" | "constructor" | "fallback" | "receive" | "modifier")) => {
                    let decl_start = self.doc_start(self.toks[i].start);
                    first_member.get_or_insert(decl_start);
                    i = self.parse_function_like(i, contract, kw)?;
                }
                Some("struct" | "enum") => i = self.skip_braced_decl(i)?,
                Some("using" | "event" | "error") => i = self.skip_past_semicolon(i),
                Some(_) | None => i = self.skip_past_semicolon(i),
            }
        }
        Ok(first_member)
    }

    /// Record state variables with plain-identifier or mapping types.
    fn collect_state_vars(&self, from: usize, to: usize, out: &mut Vec<(String, String)>) {
        let mut i = from;
        while i < to {
            match self.ident(i) {
                Some(
                    "function" | "constructor" | "fallback" | "receive" | "modifier" | "struct"
                    | "enum" | "using" | "event" | "error",
                ) => {
                    // Skip whole member.
                    let mut depth = 0usize;
                    while i < to {
                        match self.toks[i].kind {
                            TokKind::Punct(b'{') => depth += 1,
                            TokKind::Punct(b'}') => {
                                depth -= 1;
                                if depth == 0 {
                                    i += 1;
                                    break;
                                }
                            }
                            TokKind::Punct(b';') if depth == 0 => {
                                i += 1;
                                break;
                            }
                            _ => {}
                        }
                        i += 1;
                    }
                }
                Some(type_name) => {
                    // Candidate state variable: Type [attrs] name [= expr] ;
                    let stmt_end = {
                        let mut j = i;
                        let mut depth = 0usize;
                        loop {
                            if j >= to {
                                break j;
                            }
                            match self.toks[j].kind {
                                TokKind::Punct(b'(' | b'[' | b'{') => depth += 1,
                                TokKind::Punct(b')' | b']' | b'}') => {
                                    depth = depth.saturating_sub(1)
                                }
                                TokKind::Punct(b';') if depth == 0 => break j,
                                _ => {}
                            }
                            j += 1;
                        }
                    };
                    let (ty, name_from) = if type_name == "mapping" {
                        // Value type: last identifier before the closing
                        // paren; the name follows the parens (the `=>`
                        // inside them must not stop the name search).
                        match self.matching(i + 1) {
                            Ok(close) if self.punct(i + 1, b'(') => (
                                (i + 2..close).rev().find_map(|k| self.ident(k)),
                                close + 1,
                            ),
                            _ => (None, i + 1),
                        }
                    } else if !is_elementary_type(type_name)
                        && !STMT_KEYWORDS.contains(&type_name)
                        && !self.punct(i + 1, b'.')
                    {
                        (Some(type_name), i + 1)
                    } else {
                        (None, i + 1)
                    };
                    if let Some(ty) = ty {
                        // Name: last identifier before '=' (or before ';').
                        let eq = (name_from..stmt_end)
                            .find(|&k| self.punct(k, b'='))
                            .unwrap_or(stmt_end);
                        if let Some(name) = (name_from..eq).rev().find_map(|k| self.ident(k)) {
                            if !HEADER_KEYWORDS.contains(&name) && name != "immutable" {
                                out.push((name.to_string(), ty.to_string()));
                            }
                        }
                    }
                    i = stmt_end + 1;
                }
                None => i = self.skip_past_semicolon(i),
            }
        }
    }

    fn parse_function_like(
        &mut self,
        kw_idx: usize,
        contract: &str,
        kw: &str,
    ) -> Result<usize, ParseError> {
        let decl_start = self.doc_start(self.toks[kw_idx].start);
        let (name, mut j) = match kw {
            "function" | "modifier" => match self.ident(kw_idx + 1) {
                Some(n) => (n.to_string(), kw_idx + 2),
                // Pre-0.6 unnamed function: the fallback.
                None if self.punct(kw_idx + 1, b'(') => ("fallback".to_string(), kw_idx + 1),
                None => return Ok(self.skip_past_semicolon(kw_idx)),
            },
            other => (other.to_string(), kw_idx + 1),
        };

        // Parameters.
        let mut params = Vec::new();
        if self.punct(j, b'(') {
            let close = self.matching(j)?;
            params = self.parse_params(j + 1, close);
            j = close + 1;
        }
        let arity = params.len();
        let id = FunctionId::new(contract, &name, arity);

        // Header: visibility, mutability, modifier invocations, returns.
        let mut visibility = Visibility::Public;
        let mut mutability = Mutability::None;
        let mut modifiers = Vec::new();
        let mut return_type = None;
        loop {
            if j >= self.toks.len() || self.punct(j, b'{') || self.punct(j, b';') {
                break;
            }
            match self.ident(j) {
                Some("public") => visibility = Visibility::Public,
                Some("external") => visibility = Visibility::External,
                Some("internal") => visibility = Visibility::Internal,
                Some("private") => visibility = Visibility::Private,
                Some("view") => mutability = Mutability::View,
                Some("pure") => mutability = Mutability::Pure,
                Some("payable") => mutability = Mutability::Payable,
                Some("constant") => mutability = Mutability::View,
                Some("virtual") => {}
                Some("override") => {
                    if self.punct(j + 1, b'(') {
                        j = self.matching(j + 1)?;
                    }
                }
                Some("returns") => {
                    if self.punct(j + 1, b'(') {
                        let close = self.matching(j + 1)?;
                        let rets = self.parse_params(j + 2, close);
                        if rets.len() == 1 && !is_elementary_type(&rets[0].0) {
                            return_type = Some(rets[0].0.clone());
                        }
                        j = close;
                    }
                }
                Some(modifier_name) => {
                    let site_start = self.toks[j].start;
                    let mut arg_count = 0usize;
                    let mut site_end = self.toks[j].end;
                    if self.punct(j + 1, b'(') {
                        let close = self.matching(j + 1)?;
                        arg_count = self.count_args(j + 1, close);
                        site_end = self.toks[close].end;
                        j = close;
                    }
                    modifiers.push(modifier_name.to_string());
                    self.call_sites.push(CallSite {
                        caller: id.clone(),
                        callee_name: modifier_name.to_string(),
                        qualifier: None,
                        arg_count,
                        kind_hint: CallKindHint::ModifierInvocation,
                        span: self.span(site_start, site_end),
                    });
                }
                None => {}
            }
            j += 1;
        }

        // Body or semicolon.
        let (body_present, end_idx) = if self.punct(j, b'{') {
            let close = self.matching(j)?;
            self.bodies.push(PendingBody { caller: id.clone(), toks: (j + 1, close) });
            (true, close)
        } else if self.punct(j, b';') {
            (false, j)
        } else {
            return Err(ParseError::Syntax {
                line: self.line_of(self.toks[kw_idx].start),
                msg: format!("{kw} {name}: expected body or ';'"),
            });
        };
        let span = self.span(decl_start, self.toks[end_idx].end);

        if kw == "modifier" {
            self.modifiers.push(ModifierDef { id, name, span, body_present });
        } else {
            // Constructors and fallback/receive default to public visibility.
            let locals = Vec::new(); // filled by the body scan
            self.functions.push(FunctionDef {
                id,
                name,
                visibility,
                mutability,
                modifiers,
                span,
                body_present,
                params,
                locals,
                return_type,
            });
        }
        Ok(end_idx + 1)
    }

    /// Comma-separated `(type, name)` list between token indexes.
    fn parse_params(&self, from: usize, to: usize) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut seg_start = from;
        let mut depth = 0usize;
        let mut i = from;
        let flush = |s: usize, e: usize, out: &mut Vec<(String, String)>| {
            let idents: Vec<&str> = (s..e)
                .filter_map(|k| self.ident(k))
                .filter(|w| !matches!(*w, "memory" | "storage" | "calldata" | "indexed"))
                .collect();
            match idents.as_slice() {
                [] => {}
                [ty] => out.push((ty.to_string(), String::new())),
                [ty, .., name] => out.push((ty.to_string(), name.to_string())),
            }
        };
        while i < to {
            match self.toks[i].kind {
                TokKind::Punct(b'(' | b'[') => depth += 1,
                TokKind::Punct(b')' | b']') => depth = depth.saturating_sub(1),
                TokKind::Punct(b',') if depth == 0 => {
                    flush(seg_start, i, &mut out);
                    seg_start = i + 1;
                }
                _ => {}
            }
            i += 1;
        }
        flush(seg_start, to, &mut out);
        out
    }

    /// Number of top-level comma-separated arguments inside parens.
    fn count_args(&self, open: usize, close: usize) -> usize {
        if close == open + 1 {
            return 0;
        }
        let mut count = 1usize;
        let mut depth = 0usize;
        for i in open + 1..close {
            match self.toks[i].kind {
                TokKind::Punct(b'(' | b'[' | b'{') => depth += 1,
                TokKind::Punct(b')' | b']' | b'}') => depth = depth.saturating_sub(1),
                TokKind::Punct(b',') if depth == 0 => count += 1,
                _ => {}
            }
        }
        count
    }

    // -- second pass ---------------------------------------------------------

    fn scan_body(&mut self, body: &PendingBody) {
        let (from, to) = body.toks;
        let contract_names: Vec<String> =
            self.contracts.iter().map(|c| c.name.clone()).collect();
        let mut locals = Vec::new();
        let mut sites = Vec::new();
        let mut i = from;
        while i < to {
            // Opaque assembly block.
            if self.ident(i) == Some("assembly") {
                let mut j = i + 1;
                while j < to && !self.punct(j, b'{') {
                    j += 1;
                }
                if j < to {
                    if let Ok(close) = self.matching(j) {
                        i = close + 1;
                        continue;
                    }
                }
                i += 1;
                continue;
            }

            // Local declaration: Type name (= | ;)
            if let (Some(ty), Some(name)) = (self.ident(i), self.ident(i + 1)) {
                if (self.punct(i + 2, b'=') || self.punct(i + 2, b';'))
                    && !STMT_KEYWORDS.contains(&ty)
                    && !is_elementary_type(ty)
                    && contract_names.iter().any(|c| c == ty)
                {
                    locals.push((name.to_string(), ty.to_string()));
                }
            }

            // Call expression: Ident '('
            if let Some(callee) = self.ident(i) {
                if self.punct(i + 1, b'(') {
                    let close = match self.matching(i + 1) {
                        Ok(c) => c,
                        Err(_) => {
                            i += 1;
                            continue;
                        }
                    };
                    let arg_count = self.count_args(i + 1, close.min(to));
                    let prev_dot = i > 0 && self.punct(i - 1, b'.');
                    let prev_new = i > 0 && self.ident(i - 1) == Some("new");
                    let prev_emit = i > 0 && self.ident(i - 1) == Some("emit");
                    let site_span = self.span(self.toks[i].start, self.toks[close].end);

                    if prev_emit || STMT_KEYWORDS.contains(&callee) {
                        // control flow / event emission
                    } else if prev_new {
                        sites.push(CallSite {
                            caller: body.caller.clone(),
                            callee_name: callee.to_string(),
                            qualifier: None,
                            arg_count,
                            kind_hint: CallKindHint::New,
                            span: site_span,
                        });
                    } else if prev_dot {
                        let qual_start = self.primary_start(i - 1, from);
                        let qualifier =
                            self.text[self.toks[qual_start].start..self.toks[i - 1].start]
                                .trim()
                                .to_string();
                        if !matches!(qualifier.as_str(), "abi" | "msg" | "block" | "tx")
                            && !is_builtin(callee)
                        {
                            sites.push(CallSite {
                                caller: body.caller.clone(),
                                callee_name: callee.to_string(),
                                qualifier: Some(qualifier),
                                arg_count,
                                kind_hint: CallKindHint::Member,
                                span: site_span,
                            });
                        }
                    } else if is_builtin(callee) {
                        // excluded by the fixed builtin list
                    } else if contract_names.iter().any(|c| c == callee) {
                        // Type conversion, not a call. The clone pattern
                        // `C(impl.clone(data))` constructs a new C, so it
                        // yields a constructor site to C.
                        let has_clone = (i + 2..close).any(|k| {
                            self.ident(k) == Some("clone")
                                && k > 0
                                && self.punct(k - 1, b'.')
                                && self.punct(k + 1, b'(')
                        });
                        if has_clone {
                            sites.push(CallSite {
                                caller: body.caller.clone(),
                                callee_name: callee.to_string(),
                                qualifier: None,
                                arg_count: 0,
                                kind_hint: CallKindHint::New,
                                span: site_span,
                            });
                        }
                    } else {
                        sites.push(CallSite {
                            caller: body.caller.clone(),
                            callee_name: callee.to_string(),
                            qualifier: None,
                            arg_count,
                            kind_hint: CallKindHint::Bare,
                            span: site_span,
                        });
                    }
                }
            }
            i += 1;
        }

        if let Some(f) = self.functions.iter_mut().find(|f| f.id == body.caller) {
            f.locals = locals;
        }
        self.call_sites.extend(sites);
    }

    /// Start token of the postfix chain ending just before token `dot_idx`,
    /// e.g. `token.underlying()` for the `.transfer` that follows it.
    fn primary_start(&self, dot_idx: usize, floor: usize) -> usize {
        let mut j = dot_idx; // points at '.'
        let mut start = dot_idx;
        loop {
            if j == floor {
                return start;
            }
            j -= 1;
            match self.toks[j].kind {
                TokKind::Punct(b')') | TokKind::Punct(b']') => {
                    // Walk back to the matching opener.
                    let close_c = match self.toks[j].kind {
                        TokKind::Punct(c) => c,
                        _ => unreachable!(),
                    };
                    let open_c = if close_c == b')' { b'(' } else { b'[' };
                    let mut depth = 1usize;
                    while j > floor && depth > 0 {
                        j -= 1;
                        match self.toks[j].kind {
                            TokKind::Punct(c) if c == close_c => depth += 1,
                            TokKind::Punct(c) if c == open_c => depth -= 1,
                            _ => {}
                        }
                    }
                    if depth > 0 {
                        return start;
                    }
                    start = j;
                }
                TokKind::Ident => {
                    start = j;
                    if j > floor && self.punct(j - 1, b'.') {
                        j -= 1; // continue through the chain
                    } else {
                        return start;
                    }
                }
                _ => return start,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIMPLE: &str = "pragma solidity 0.8.15;\ncontract C {}\n";

    #[test]
    fn empty_contract_has_no_functions() {
        let unit = parse(SIMPLE).unwrap();
        assert_eq!(unit.contracts.len(), 1);
        assert_eq!(unit.contracts[0].name, "C");
        assert!(unit.functions.is_empty());
    }

    #[test]
    fn function_header_fields_are_extracted() {
        let src = "contract C {\n\
                   \x20   /// Adds liquidity.\n\
                   \x20   function add(uint256 a, uint256 b) external payable onlyOwner returns (uint256) {\n\
                   \x20       return a + b;\n\
                   \x20   }\n\
                   }\n";
        let unit = parse(src).unwrap();
        let f = &unit.functions[0];
        assert_eq!(f.id.to_string(), "C.add/2");
        assert_eq!(f.visibility, Visibility::External);
        assert_eq!(f.mutability, Mutability::Payable);
        assert_eq!(f.modifiers, vec!["onlyOwner"]);
        assert!(f.body_present);
        let span_text = &unit.text[f.span.start..f.span.end];
        assert!(span_text.starts_with("/// Adds liquidity."));
        assert!(span_text.ends_with('}'));
    }

    #[test]
    fn span_text_is_brace_balanced() {
        let src = "contract C { function f() public { if (true) { g(); } } function g() public {} }";
        let unit = parse(src).unwrap();
        for f in &unit.functions {
            let t = &unit.text[f.span.start..f.span.end];
            assert_eq!(
                t.matches('{').count(),
                t.matches('}').count(),
                "unbalanced span for {}",
                f.id
            );
        }
    }

    #[test]
    fn interface_functions_have_no_body() {
        let src = "interface I { function f(uint256 x) external; function g() external view returns (bool); }";
        let unit = parse(src).unwrap();
        assert_eq!(unit.functions.len(), 2);
        assert!(unit.functions.iter().all(|f| !f.body_present));
        assert!(unit.text[unit.functions[0].span.start..unit.functions[0].span.end].ends_with(';'));
    }

    #[test]
    fn unbalanced_braces_report_line() {
        let src = "contract C {\n  function f() public {\n}\n";
        match parse(src).unwrap_err() {
            ParseError::Syntax { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn builtins_are_excluded_from_call_sites() {
        let src = "contract C { function f(address a) public { require(a != address(0)); \
                   bytes32 h = keccak256(abi.encodePacked(a)); emit Done(h); helper(); } \
                   function helper() internal {} }";
        let unit = parse(src).unwrap();
        let names: Vec<&str> = unit.call_sites.iter().map(|s| s.callee_name.as_str()).collect();
        assert_eq!(names, vec!["helper"]);
    }

    #[test]
    fn member_call_qualifier_and_args() {
        let src = "contract T { function burn(address a, uint256 x) public {} \
                   function underlying() public view returns (T) { return this; } } \
                   contract C { function redeem(T token, uint256 amount) external { \
                   token.burn(msg.sender, amount); \
                   token.underlying().transfer(msg.sender, amount); } \
                   function transfer(address to, uint256 x) public {} }";
        let unit = parse(src).unwrap();
        let sites = extract_call_sites(&unit, &FunctionId::new("C", "redeem", 2));
        let got: Vec<(String, Option<String>, usize)> = sites
            .iter()
            .map(|s| (s.callee_name.clone(), s.qualifier.clone(), s.arg_count))
            .collect();
        assert_eq!(
            got,
            vec![
                ("burn".into(), Some("token".into()), 2),
                ("underlying".into(), Some("token".into()), 0),
                ("transfer".into(), Some("token.underlying()".into()), 2),
            ]
        );
    }

    #[test]
    fn recursive_call_yields_self_site() {
        let src = "contract C { function f(uint256 n) public { if (n > 0) { f(n - 1); } } }";
        let unit = parse(src).unwrap();
        let sites = extract_call_sites(&unit, &FunctionId::new("C", "f", 1));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].callee_name, "f");
        assert_eq!(sites[0].kind_hint, CallKindHint::Bare);
    }

    #[test]
    fn empty_body_has_no_sites() {
        let src = "contract C { function f() public pure {} }";
        let unit = parse(src).unwrap();
        assert!(unit.call_sites.is_empty());
    }

    #[test]
    fn assembly_blocks_are_opaque() {
        let src = "contract C { function f() public { assembly { let x := call(gas(), 0, 0, 0, 0, 0, 0) } g(); } function g() public {} }";
        let unit = parse(src).unwrap();
        let names: Vec<&str> = unit.call_sites.iter().map(|s| s.callee_name.as_str()).collect();
        assert_eq!(names, vec!["g"]);
    }

    #[test]
    fn inherited_functions_resolve_through_bases() {
        let src = "contract Base { function f() public virtual {} function h() public {} } \
                   contract Derived is Base { function f() public override {} }";
        let unit = parse(src).unwrap();
        let fns = extract_functions(&unit, "Derived").unwrap();
        let ids: Vec<String> = fns.iter().map(|f| f.id.to_string()).collect();
        // The override shadows Base.f; Base.h is inherited with its defining contract.
        assert_eq!(ids, vec!["Derived.f/0", "Base.h/0"]);
    }

    #[test]
    fn unknown_contract_is_an_error() {
        let unit = parse(SIMPLE).unwrap();
        assert!(matches!(
            extract_functions(&unit, "Nope"),
            Err(ParseError::UnknownContract(_))
        ));
    }

    #[test]
    fn constructor_and_special_functions() {
        let src = "contract C { constructor(uint256 x) { } fallback() external payable {} receive() external payable {} }";
        let unit = parse(src).unwrap();
        let names: Vec<String> = unit.functions.iter().map(|f| f.id.to_string()).collect();
        assert_eq!(names, vec!["C.constructor/1", "C.fallback/0", "C.receive/0"]);
    }

    #[test]
    fn modifier_definition_and_invocation() {
        let src = "contract C { uint256 private _g; \
                   modifier nonReentrant() { _g += 1; _; require(_g == _g); } \
                   function f() external nonReentrant {} }";
        let unit = parse(src).unwrap();
        assert_eq!(unit.modifiers.len(), 1);
        assert_eq!(unit.modifiers[0].id.to_string(), "C.nonReentrant/0");
        let sites = extract_call_sites(&unit, &FunctionId::new("C", "f", 0));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].kind_hint, CallKindHint::ModifierInvocation);
        // Invocation site sits inside the function span (header).
        let f = unit.function(&FunctionId::new("C", "f", 0)).unwrap();
        assert!(sites[0].span.start >= f.span.start && sites[0].span.end <= f.span.end);
    }

    #[test]
    fn state_vars_record_contract_types() {
        let src = "contract T {} contract C { mapping(address => T) public tokens; T public immutable impl; uint256 x; }";
        let unit = parse(src).unwrap();
        let c = unit.contract("C").unwrap();
        assert!(c.state_vars.contains(&("tokens".to_string(), "T".to_string())));
        assert!(c.state_vars.contains(&("impl".to_string(), "T".to_string())));
        assert!(!c.state_vars.iter().any(|(n, _)| n == "x"));
    }

    #[test]
    fn coverage_spans_reconstruct_input() {
        let src = "// header\npragma solidity 0.8.0;\n\ncontract A { function f() public {} }\n\ncontract B {}\n";
        let unit = parse(src).unwrap();
        let mut spans: Vec<(usize, usize)> =
            unit.contracts.iter().map(|c| (c.span.start, c.span.end)).collect();
        spans.sort();
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for (s, e) in spans {
            rebuilt.push_str(&src[cursor..s]);
            rebuilt.push_str(&src[s..e]);
            cursor = e;
        }
        rebuilt.push_str(&src[cursor..]);
        assert_eq!(rebuilt, src);
    }

    #[test]
    fn doc_comment_included_in_span() {
        let src = "contract C {\n    /// NatSpec line one\n    /// line two\n    function f() public {}\n}";
        let unit = parse(src).unwrap();
        let f = &unit.functions[0];
        assert!(unit.text[f.span.start..f.span.end].starts_with("/// NatSpec line one"));
    }

    #[test]
    fn ast_dump_is_stable() {
        let src = "contract C { modifier m() { _; } function f() public m {} }";
        let unit = parse(src).unwrap();
        let dump = unit.ast_dump();
        assert!(dump.contains("contract C"));
        assert!(dump.contains("function C.f/0"));
        assert!(dump.contains("modifiers=m"));
        assert!(dump.contains("modifier C.m/0"));
    }

    #[test]
    fn function_id_round_trip() {
        let id = FunctionId::new("Vault", "withdraw", 2);
        assert_eq!(FunctionId::parse(&id.to_string()), Some(id));
        assert_eq!(FunctionId::parse("garbage"), None);
    }
}
