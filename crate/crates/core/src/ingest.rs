//! Project loading and source flattening.
//!
//! A project is the set of `.sol` files reachable from an entry file via
//! import statements. Flattening consolidates them into one source unit,
//! dependencies first, with an origin map from every output byte back to
//! the file it came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("entry file not found: {0}")]
    MissingEntry(String),
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        source: std::io::Error,
    },
    #[error("unresolved import {import:?} in {from}")]
    UnresolvedImport { import: String, from: String },
    #[error("contract {name} declared in both {first} and {second}")]
    DuplicateContract {
        name: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Local,
    Dependency,
}

#[derive(Debug, Clone)]
pub struct SourceFile {
    /// Project-relative path with `/` separators.
    pub path: String,
    pub content: String,
    pub kind: FileKind,
    /// Resolved import targets, in source order.
    pub imports: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub root: PathBuf,
    pub files: BTreeMap<String, SourceFile>,
    pub remappings: Vec<(String, String)>,
    pub entry: String,
}

/// A span of flattened text mapped back to its source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginSpan {
    pub text_start: usize,
    pub text_end: usize,
    pub path: String,
    pub src_start: usize,
    pub src_end: usize,
}

#[derive(Debug, Clone)]
pub struct FlattenedSource {
    pub text: String,
    pub origin_map: Vec<OriginSpan>,
    pub included_files: Vec<String>,
}

impl FlattenedSource {
    /// Sidecar format: one `textStart,textEnd,path,srcStart,srcEnd` record per span.
    pub fn origin_map_text(&self) -> String {
        let mut out = String::new();
        for span in &self.origin_map {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                span.text_start, span.text_end, span.path, span.src_start, span.src_end
            );
        }
        out
    }

    /// Source path owning the given byte offset of the flattened text.
    pub fn origin_of(&self, offset: usize) -> Option<&OriginSpan> {
        self.origin_map
            .iter()
            .find(|s| s.text_start <= offset && offset < s.text_end)
    }
}

/// Parse a remappings file: one `prefix=dir` per line, `#` comments allowed.
pub fn parse_remappings(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (prefix, dir) = l.split_once('=')?;
            Some((prefix.trim().to_string(), dir.trim().to_string()))
        })
        .collect()
}

/// Load every `.sol` file reachable from `entry` via imports.
pub fn load_project(
    root: &Path,
    entry: &str,
    remappings: &[(String, String)],
) -> Result<Project, IngestError> {
    let entry_norm = normalize(entry);
    if !root.join(&entry_norm).is_file() {
        return Err(IngestError::MissingEntry(entry_norm));
    }

    let mut files: BTreeMap<String, SourceFile> = BTreeMap::new();
    let mut queue = vec![(entry_norm.clone(), FileKind::Local)];
    while let Some((path, kind)) = queue.pop() {
        if files.contains_key(&path) {
            continue;
        }
        let content =
            std::fs::read_to_string(root.join(&path)).map_err(|source| {
                IngestError::UnreadableFile {
                    path: path.clone(),
                    source,
                }
            })?;
        let mut imports = Vec::new();
        for import in import_strings(&content) {
            let (resolved, import_kind) = resolve_import(root, &path, &import, remappings)
                .ok_or_else(|| IngestError::UnresolvedImport {
                    import: import.clone(),
                    from: path.clone(),
                })?;
            imports.push(resolved.clone());
            queue.push((resolved, import_kind));
        }
        files.insert(
            path.clone(),
            SourceFile {
                path,
                content,
                kind,
                imports,
            },
        );
    }

    Ok(Project {
        root: root.to_path_buf(),
        files,
        remappings: remappings.to_vec(),
        entry: entry_norm,
    })
}

/// Flatten the project into one source unit, dependencies first.
///
/// The entry file's pragma is kept and all others stripped; import lines
/// are stripped; duplicate SPDX license lines are dropped after the first
/// emitted one. Output is deterministic: imports are visited in
/// lexicographic order of resolved path, cycles broken by first visit.
pub fn flatten(project: &Project) -> Result<FlattenedSource, IngestError> {
    let order = emission_order(project);
    check_duplicate_contracts(project, &order)?;

    let mut text = String::new();
    let mut origin_map = Vec::new();
    let mut spdx_seen = false;
    for path in &order {
        let file = &project.files[path];
        let keep_pragma = *path == project.entry;
        let strip = strip_ranges(&file.content, keep_pragma, &mut spdx_seen);
        emit_file(file, &strip, &mut text, &mut origin_map);
    }

    Ok(FlattenedSource {
        text,
        origin_map,
        included_files: order,
    })
}

/// DFS post-order from the entry: dependencies before dependents,
/// ties (a file's several imports) broken lexicographically.
fn emission_order(project: &Project) -> Vec<String> {
    let mut order = Vec::new();
    let mut visited = BTreeSet::new();
    let mut stack = vec![(project.entry.clone(), false)];
    while let Some((path, expanded)) = stack.pop() {
        if expanded {
            order.push(path);
            continue;
        }
        if !visited.insert(path.clone()) {
            continue;
        }
        let mut deps: Vec<&String> = project.files[&path].imports.iter().collect();
        deps.sort();
        deps.dedup();
        stack.push((path, true));
        // Reverse so the lexicographically first import is visited first.
        for dep in deps.into_iter().rev() {
            if !visited.contains(dep) {
                stack.push((dep.clone(), false));
            }
        }
    }
    order
}

fn check_duplicate_contracts(project: &Project, order: &[String]) -> Result<(), IngestError> {
    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for path in order {
        for name in contract_names(&project.files[path].content) {
            if let Some(first) = seen.get(&name) {
                if first != path {
                    return Err(IngestError::DuplicateContract {
                        name,
                        first: first.clone(),
                        second: path.clone(),
                    });
                }
            } else {
                seen.insert(name, path.clone());
            }
        }
    }
    Ok(())
}

fn emit_file(
    file: &SourceFile,
    strip: &[(usize, usize)],
    text: &mut String,
    origin_map: &mut Vec<OriginSpan>,
) {
    let mut cursor = 0usize;
    let mut push_kept = |start: usize, end: usize, text: &mut String| {
        if start >= end {
            return;
        }
        let chunk = &file.content[start..end];
        let text_start = text.len();
        text.push_str(chunk);
        origin_map.push(OriginSpan {
            text_start,
            text_end: text.len(),
            path: file.path.clone(),
            src_start: start,
            src_end: end,
        });
    };
    for &(s, e) in strip {
        push_kept(cursor, s, text);
        cursor = e;
    }
    push_kept(cursor, file.content.len(), text);
    if !text.ends_with('\n') {
        let text_start = text.len();
        text.push('\n');
        origin_map.push(OriginSpan {
            text_start,
            text_end: text.len(),
            path: file.path.clone(),
            src_start: file.content.len(),
            src_end: file.content.len(),
        });
    }
}

/// Byte ranges of one file to drop from the flattened output, sorted.
fn strip_ranges(content: &str, keep_pragma: bool, spdx_seen: &mut bool) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut kept_pragma = false;
    let mut scanner = Scanner::new(content);
    while let Some(tok) = scanner.next_token() {
        match tok {
            Token::Word(start, word) => match word {
                "import" => {
                    let end = scanner.skip_to_semicolon();
                    ranges.push((start, eat_line_tail(content, end)));
                }
                "pragma" => {
                    let end = scanner.skip_to_semicolon();
                    if keep_pragma && !kept_pragma {
                        kept_pragma = true;
                    } else {
                        ranges.push((start, eat_line_tail(content, end)));
                    }
                }
                _ => {}
            },
            Token::LineComment(start, end) => {
                if content[start..end].contains("SPDX-License-Identifier") {
                    if *spdx_seen {
                        ranges.push((start, eat_line_tail(content, end)));
                    } else {
                        *spdx_seen = true;
                    }
                }
            }
            _ => {}
        }
    }
    ranges
}

/// Extend a strip range past trailing spaces and one newline so no blank
/// line is left behind.
fn eat_line_tail(content: &str, mut end: usize) -> usize {
    let bytes = content.as_bytes();
    while end < bytes.len() && (bytes[end] == b' ' || bytes[end] == b'\t' || bytes[end] == b'\r') {
        end += 1;
    }
    if end < bytes.len() && bytes[end] == b'\n' {
        end += 1;
    }
    end
}

/// Import path strings, in source order.
fn import_strings(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut scanner = Scanner::new(content);
    while let Some(tok) = scanner.next_token() {
        if let Token::Word(_, "import") = tok {
            // The first string literal before the terminating ';' is the path.
            while let Some(tok) = scanner.next_token() {
                match tok {
                    Token::Str(s, e) => {
                        out.push(content[s + 1..e - 1].to_string());
                        scanner.skip_to_semicolon();
                        break;
                    }
                    Token::Punct(_, ';') => break,
                    _ => {}
                }
            }
        }
    }
    out
}

/// Names declared by `contract`/`interface`/`library` statements.
fn contract_names(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut scanner = Scanner::new(content);
    let mut prev_is_decl = false;
    while let Some(tok) = scanner.next_token() {
        match tok {
            Token::Word(_, w @ ("contract" | "interface" | "library")) => {
                let _ = w;
                prev_is_decl = true;
            }
            Token::Word(_, name) if prev_is_decl => {
                out.push(name.to_string());
                prev_is_decl = false;
            }
            _ => prev_is_decl = false,
        }
    }
    out
}

fn resolve_import(
    root: &Path,
    from: &str,
    import: &str,
    remappings: &[(String, String)],
) -> Option<(String, FileKind)> {
    if import.starts_with("./") || import.starts_with("../") {
        let dir = match from.rfind('/') {
            Some(i) => &from[..i],
            None => "",
        };
        let joined = if dir.is_empty() {
            import.to_string()
        } else {
            format!("{dir}/{import}")
        };
        let candidate = normalize(&joined);
        if root.join(&candidate).is_file() {
            return Some((candidate, FileKind::Local));
        }
        return None;
    }
    // Longest matching remapping prefix wins.
    let mut best: Option<&(String, String)> = None;
    for mapping in remappings {
        if import.starts_with(&mapping.0)
            && best.is_none_or(|b| mapping.0.len() > b.0.len())
        {
            best = Some(mapping);
        }
    }
    if let Some((prefix, dir)) = best {
        let candidate = normalize(&format!("{}/{}", dir.trim_end_matches('/'), &import[prefix.len()..]));
        if root.join(&candidate).is_file() {
            return Some((candidate, FileKind::Dependency));
        }
    }
    let candidate = normalize(import);
    if root.join(&candidate).is_file() {
        return Some((candidate, FileKind::Local));
    }
    None
}

/// Collapse `.` and `..` segments; always `/`-separated.
fn normalize(path: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let unified = path.replace('\\', "/");
    for part in unified.split('/') {
        match part {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            p => parts.push(p),
        }
    }
    parts.join("/")
}

/// Minimal comment- and string-aware token scanner shared by the
/// flattening passes. The full parser has its own lexer.
struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

enum Token<'a> {
    Word(usize, &'a str),
    Str(usize, usize),
    Punct(usize, char),
    LineComment(usize, usize),
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner { src, pos: 0 }
    }

    fn next_token(&mut self) -> Option<Token<'a>> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let c = bytes[self.pos];
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'/' && bytes.get(self.pos + 1) == Some(&b'/') {
                let start = self.pos;
                while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                return Some(Token::LineComment(start, self.pos));
            } else if c == b'/' && bytes.get(self.pos + 1) == Some(&b'*') {
                self.pos += 2;
                while self.pos + 1 < bytes.len()
                    && !(bytes[self.pos] == b'*' && bytes[self.pos + 1] == b'/')
                {
                    self.pos += 1;
                }
                self.pos = (self.pos + 2).min(bytes.len());
            } else if c == b'"' || c == b'\'' {
                let start = self.pos;
                self.pos += 1;
                while self.pos < bytes.len() && bytes[self.pos] != c {
                    if bytes[self.pos] == b'\\' {
                        self.pos += 1;
                    }
                    self.pos += 1;
                }
                self.pos = (self.pos + 1).min(bytes.len());
                return Some(Token::Str(start, self.pos));
            } else if c == b'_' || c.is_ascii_alphabetic() {
                let start = self.pos;
                while self.pos < bytes.len()
                    && (bytes[self.pos] == b'_' || bytes[self.pos].is_ascii_alphanumeric())
                {
                    self.pos += 1;
                }
                return Some(Token::Word(start, &self.src[start..self.pos]));
            } else {
                let start = self.pos;
                self.pos += 1;
                return Some(Token::Punct(start, c as char));
            }
        }
        None
    }

    /// Advance past the next top-level `;`, returning the offset just after it.
    fn skip_to_semicolon(&mut self) -> usize {
        while let Some(tok) = self.next_token() {
            if let Token::Punct(p, ';') = tok {
                return p + 1;
            }
        }
        self.src.len()
    }
}
