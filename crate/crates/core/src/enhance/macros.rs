//! `#define` index over a project tree and macro substitution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::source::AnnotatedFunction;
use crate::verify::lexer::{lex_line, Token, TokenKind};

/// Macro-looking identifier: `[A-Z][A-Z0-9_]{2,}`.
pub fn is_macro_candidate(ident: &str) -> bool {
    let b = ident.as_bytes();
    b.len() >= 3
        && b[0].is_ascii_uppercase()
        && b[1..]
            .iter()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || *c == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroDef {
    pub name: String,
    /// Parameter names for function-like macros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
    pub body: String,
    /// Path relative to the index root.
    pub path: PathBuf,
    pub line: usize,
}

impl MacroDef {
    /// Function-like bodies qualify only when they are one expression.
    fn is_single_expression(&self) -> bool {
        let toks = lex_line(&self.body);
        !toks.is_empty()
            && !toks.iter().any(|t| {
                t.is_punct(";")
                    || t.is_punct("{")
                    || t.is_punct("}")
                    || t.lexeme == "#"
                    || t.lexeme == "##"
                    || ["do", "if", "while", "for", "return", "switch"]
                        .iter()
                        .any(|k| t.is_keyword(k))
            })
    }
}

/// Read-only index of every `#define` under a directory.
#[derive(Debug, Clone, Default)]
pub struct MacroIndex {
    root: PathBuf,
    defs: HashMap<String, Vec<MacroDef>>,
}

fn glob_matches(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        Some((pre, post)) => {
            name.len() >= pre.len() + post.len() && name.starts_with(pre) && name.ends_with(post)
        }
        None => pattern == name,
    }
}

pub const DEFAULT_GLOBS: &[&str] = &["*.c", "*.h"];

/// Parses the `#define` lines of one file, joining `\` continuations.
pub fn parse_defines(text: &str, path: &Path) -> Vec<MacroDef> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    while let Some((i, line)) = lines.next() {
        let trimmed = line.trim_start();
        let Some(rest) = trimmed.strip_prefix('#') else {
            continue;
        };
        let rest = rest.trim_start();
        let Some(rest) = rest.strip_prefix("define") else {
            continue;
        };
        if !rest.starts_with(|c: char| c.is_whitespace()) {
            continue;
        }
        let mut full = rest.to_string();
        while full.trim_end().ends_with('\\') {
            let t = full.trim_end();
            full = t[..t.len() - 1].to_string();
            match lines.next() {
                Some((_, next)) => {
                    full.push(' ');
                    full.push_str(next);
                }
                None => break,
            }
        }
        let full = strip_comments(&full);
        let body = full.trim_start();
        let name: String = body
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        if name.is_empty() {
            continue;
        }
        let after = &body[name.len()..];
        let (params, value) = if let Some(p) = after.strip_prefix('(') {
            let Some(close) = p.find(')') else { continue };
            let params = p[..close]
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            (Some(params), p[close + 1..].trim().to_string())
        } else {
            (None, after.trim().to_string())
        };
        out.push(MacroDef {
            name,
            params,
            body: value.split_whitespace().collect::<Vec<_>>().join(" "),
            path: path.to_path_buf(),
            line: i + 1,
        });
    }
    out
}

fn strip_comments(text: &str) -> String {
    let toks = lex_line(text);
    let mut out = String::new();
    let chars: Vec<char> = text.chars().collect();
    let mut last = 0;
    for t in toks.iter().filter(|t| t.kind == TokenKind::Comment) {
        out.extend(&chars[last..t.column]);
        last = t.column + t.lexeme.chars().count();
    }
    if last < chars.len() {
        out.extend(&chars[last..]);
    }
    out
}

/// Number of directory steps between two relative directories.
fn dir_distance(a: &Path, b: &Path) -> usize {
    let ca: Vec<Component> = a.components().collect();
    let cb: Vec<Component> = b.components().collect();
    let common = ca.iter().zip(&cb).take_while(|(x, y)| x == y).count();
    (ca.len() - common) + (cb.len() - common)
}

impl MacroIndex {
    pub fn build(root: &Path, globs: &[String]) -> std::io::Result<MacroIndex> {
        let globs: Vec<String> = if globs.is_empty() {
            DEFAULT_GLOBS.iter().map(|s| s.to_string()).collect()
        } else {
            globs.to_vec()
        };
        let mut files: Vec<PathBuf> = Vec::new();
        for entry in WalkDir::new(root).follow_links(false) {
            let entry = entry.map_err(std::io::Error::other)?;
            if !entry.file_type().is_file() {
                continue;
            }
            let name = entry.file_name().to_string_lossy();
            if globs.iter().any(|g| glob_matches(g, &name)) {
                files.push(entry.into_path());
            }
        }
        files.sort();
        let mut index = MacroIndex {
            root: root.to_path_buf(),
            defs: HashMap::new(),
        };
        for f in files {
            let bytes = std::fs::read(&f)?;
            let text = String::from_utf8_lossy(&bytes);
            let rel = f.strip_prefix(root).unwrap_or(&f).to_path_buf();
            index.add_source(&text, &rel);
        }
        Ok(index)
    }

    pub fn from_sources<'a>(files: impl IntoIterator<Item = (&'a str, &'a str)>) -> MacroIndex {
        let mut index = MacroIndex::default();
        for (path, text) in files {
            index.add_source(text, Path::new(path));
        }
        index
    }

    pub fn add_source(&mut self, text: &str, rel_path: &Path) {
        for d in parse_defines(text, rel_path) {
            if d.body.is_empty() {
                continue;
            }
            self.defs.entry(d.name.clone()).or_default().push(d);
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.defs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn definitions(&self, name: &str) -> &[MacroDef] {
        self.defs.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Picks one definition: same file, then same directory, then fewest
    /// directory steps, then path order; first occurrence within a file.
    pub fn lookup(&self, name: &str, from: Option<&Path>) -> Option<&MacroDef> {
        let defs = self.defs.get(name)?;
        let from_rel = from.map(|p| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf());
        defs.iter().min_by(|a, b| {
            let key = |d: &MacroDef| {
                let (same_file, dist) = match &from_rel {
                    Some(f) => {
                        let fd = f.parent().unwrap_or(Path::new(""));
                        let dd = d.path.parent().unwrap_or(Path::new(""));
                        (d.path != *f, dir_distance(fd, dd))
                    }
                    None => (true, d.path.components().count()),
                };
                (same_file, dist, d.path.clone(), d.line)
            };
            key(a).cmp(&key(b))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroSubstitution {
    pub name: String,
    /// Replacement text after nested resolution.
    pub value: String,
    pub source: PathBuf,
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroResolution {
    pub substitutions: BTreeMap<String, MacroSubstitution>,
    pub unresolved: Vec<String>,
}

pub const MAX_MACRO_DEPTH: usize = 8;

/// Replaces identifier tokens of `text` that have a substitution, keeping all
/// other characters verbatim. Function-like entries consume their argument list.
fn replace_tokens(text: &str, res: &BTreeMap<String, MacroSubstitution>) -> String {
    let toks: Vec<Token> = lex_line(text);
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::new();
    let mut last = 0;
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        let Some(sub) = (t.kind == TokenKind::Identifier)
            .then(|| res.get(&t.lexeme))
            .flatten()
        else {
            i += 1;
            continue;
        };
        let start = t.column;
        match &sub.params {
            None => {
                out.extend(&chars[last..start]);
                out.push_str(&sub.value);
                last = start + t.lexeme.chars().count();
                i += 1;
            }
            Some(params) => {
                // needs a following `( args )` on this line
                if !toks.get(i + 1).is_some_and(|n| n.is_punct("(")) {
                    i += 1;
                    continue;
                }
                let mut depth = 0;
                let mut args: Vec<Vec<&Token>> = vec![Vec::new()];
                let mut j = i + 1;
                let mut closed = None;
                while j < toks.len() {
                    let tk = &toks[j];
                    if tk.is_punct("(") {
                        depth += 1;
                        if depth > 1 {
                            args.last_mut().unwrap().push(tk);
                        }
                    } else if tk.is_punct(")") {
                        depth -= 1;
                        if depth == 0 {
                            closed = Some(j);
                            break;
                        }
                        args.last_mut().unwrap().push(tk);
                    } else if tk.is_punct(",") && depth == 1 {
                        args.push(Vec::new());
                    } else if tk.kind != TokenKind::Comment {
                        args.last_mut().unwrap().push(tk);
                    }
                    j += 1;
                }
                let Some(close) = closed else {
                    i += 1;
                    continue;
                };
                if args.len() == 1 && args[0].is_empty() {
                    args.clear();
                }
                if args.len() != params.len() {
                    i += 1;
                    continue;
                }
                let arg_text: HashMap<&str, String> = params
                    .iter()
                    .map(String::as_str)
                    .zip(args.iter().map(|a| {
                        a.iter().map(|t| t.lexeme.as_str()).collect::<Vec<_>>().join(" ")
                    }))
                    .collect();
                let body_toks = lex_line(&sub.value);
                let body_chars: Vec<char> = sub.value.chars().collect();
                let mut expanded = String::new();
                let mut blast = 0;
                for bt in &body_toks {
                    if bt.kind == TokenKind::Identifier {
                        if let Some(a) = arg_text.get(bt.lexeme.as_str()) {
                            expanded.extend(&body_chars[blast..bt.column]);
                            expanded.push_str(a);
                            blast = bt.column + bt.lexeme.chars().count();
                        }
                    }
                }
                expanded.extend(&body_chars[blast..]);
                out.extend(&chars[last..start]);
                out.push_str(&expanded);
                let end_tok = &toks[close];
                last = end_tok.column + end_tok.lexeme.chars().count();
                i = close + 1;
            }
        }
    }
    out.extend(&chars[last.min(chars.len())..]);
    out
}

/// Applies resolved substitutions to one line of text.
pub fn substitute(text: &str, res: &MacroResolution) -> String {
    if res.substitutions.is_empty() {
        return text.to_string();
    }
    replace_tokens(text, &res.substitutions)
}

fn macro_names_in(text: &str) -> Vec<String> {
    lex_line(text)
        .into_iter()
        .filter(|t| t.kind == TokenKind::Identifier && is_macro_candidate(&t.lexeme) && t.lexeme != "NULL")
        .map(|t| t.lexeme)
        .collect()
}

/// Resolves macro candidates appearing on `lines` of `func`.
pub fn resolve_macros(
    func: &AnnotatedFunction,
    lines: &BTreeSet<usize>,
    index: &MacroIndex,
) -> MacroResolution {
    let mut names = BTreeSet::new();
    for &l in lines {
        names.extend(macro_names_in(func.text(l)));
    }
    let mut res = MacroResolution::default();
    let from = func.path.as_deref();
    for name in names {
        match resolve_one(&name, index, from, 0, &mut Vec::new()) {
            Some(sub) => {
                res.substitutions.insert(name, sub);
            }
            None => res.unresolved.push(name),
        }
    }
    res
}

fn resolve_one(
    name: &str,
    index: &MacroIndex,
    from: Option<&Path>,
    depth: usize,
    stack: &mut Vec<String>,
) -> Option<MacroSubstitution> {
    if depth >= MAX_MACRO_DEPTH || stack.iter().any(|s| s == name) {
        return None;
    }
    let def = index.lookup(name, from)?;
    if def.params.is_some() && !def.is_single_expression() {
        return None;
    }
    stack.push(name.to_string());
    // nested macros in the body resolve with the same rules
    let mut inner = BTreeMap::new();
    for n in macro_names_in(&def.body) {
        if def.params.as_ref().is_some_and(|p| p.contains(&n)) || inner.contains_key(&n) {
            continue;
        }
        if let Some(s) = resolve_one(&n, index, Some(&def.path), depth + 1, stack) {
            inner.insert(n, s);
        }
    }
    stack.pop();
    let value = if inner.is_empty() {
        def.body.clone()
    } else {
        replace_tokens(&def.body, &inner)
    };
    Some(MacroSubstitution {
        name: name.to_string(),
        value,
        source: def.path.clone(),
        line: def.line,
        params: def.params.clone(),
    })
}
