//! Lenient line-oriented syntax tree for C and decompiler output.
//!
//! The parser only needs statement and block structure: which lines belong to
//! which `if`/loop/`switch` body. Expressions are left as token runs.

use serde::{Deserialize, Serialize};

use crate::verify::lexer::{lex_line_with_state, LexState, Token, TokenKind};

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        LineSpan { start, end }
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn contains_span(&self, other: &LineSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lines(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Function,
    If,
    Else,
    Loop,
    Switch,
    Block,
    Statement,
    Call,
    Return,
    Assignment,
    Declaration,
}

impl NodeKind {
    pub fn is_control(self) -> bool {
        matches!(
            self,
            NodeKind::If | NodeKind::Else | NodeKind::Loop | NodeKind::Switch | NodeKind::Block
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub span: LineSpan,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Node>,
}

impl Node {
    pub fn leaf(kind: NodeKind, span: LineSpan) -> Self {
        Node {
            kind,
            span,
            children: Vec::new(),
        }
    }

    /// Appends a child, keeping sibling spans disjoint. A child starting on a
    /// line already covered by the previous sibling is folded into it.
    pub fn push_child(&mut self, child: Node) {
        if let Some(last) = self.children.last_mut() {
            if child.span.start <= last.span.end {
                last.span.end = last.span.end.max(child.span.end);
                self.span.end = self.span.end.max(last.span.end);
                return;
            }
        }
        self.span.start = self.span.start.min(child.span.start);
        self.span.end = self.span.end.max(child.span.end);
        self.children.push(child);
    }

    /// Pre-order walk.
    pub fn walk(&self, f: &mut impl FnMut(&Node, usize)) {
        fn go(n: &Node, depth: usize, f: &mut impl FnMut(&Node, usize)) {
            f(n, depth);
            for c in &n.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }

    /// Chain of nodes from `self` down to the deepest node containing `line`.
    pub fn path_to_line(&self, line: usize) -> Vec<&Node> {
        let mut path = Vec::new();
        if !self.span.contains(line) {
            return path;
        }
        let mut cur = self;
        path.push(cur);
        while let Some(next) = cur.children.iter().find(|c| c.span.contains(line)) {
            path.push(next);
            cur = next;
        }
        path
    }

    /// True when every child span lies inside its parent and siblings are
    /// pairwise disjoint and ordered.
    pub fn check_nesting(&self) -> bool {
        let mut prev_end = 0usize;
        for (i, c) in self.children.iter().enumerate() {
            if !self.span.contains_span(&c.span) {
                return false;
            }
            if i > 0 && c.span.start <= prev_end {
                return false;
            }
            prev_end = c.span.end;
            if !c.check_nesting() {
                return false;
            }
        }
        true
    }

    /// First and last lines of all nodes.
    pub fn boundary_lines(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk(&mut |n, _| {
            out.push(n.span.start);
            out.push(n.span.end);
        });
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
enum Item {
    Tok(Token, usize),
    /// Preprocessor or comment-only line.
    Opaque(usize),
}

impl Item {
    fn line(&self) -> usize {
        match self {
            Item::Tok(_, l) | Item::Opaque(l) => *l,
        }
    }
}

/// Tokenize lines (1-based numbering starting at `first_line`), carrying
/// block-comment state. Comments are dropped; comment-only and preprocessor
/// lines become opaque items.
fn items_for(lines: &[&str], first_line: usize) -> Vec<Item> {
    let mut items = Vec::new();
    let mut state = LexState::default();
    for (i, text) in lines.iter().enumerate() {
        let line = first_line + i;
        let was_in_comment = state.in_block_comment;
        if !was_in_comment && text.trim_start().starts_with('#') {
            items.push(Item::Opaque(line));
            continue;
        }
        let toks = lex_line_with_state(text, &mut state);
        let code: Vec<Token> = toks
            .into_iter()
            .filter(|t| t.kind != TokenKind::Comment)
            .collect();
        if code.is_empty() {
            if !text.trim().is_empty() {
                items.push(Item::Opaque(line));
            }
            continue;
        }
        items.extend(code.into_iter().map(|t| Item::Tok(t, line)));
    }
    items
}

/// Result of parsing a function body.
#[derive(Debug, Clone)]
pub struct ParsedSyntax {
    pub root: Node,
    /// Structure came from brace counting only.
    pub fallback: bool,
}

/// Parses a whole function (signature through closing brace). Lines are
/// numbered from 1. Falls back to brace-depth segmentation when braces do
/// not balance.
pub fn parse_function_lines(lines: &[&str]) -> ParsedSyntax {
    let n = lines.len().max(1);
    let items = items_for(lines, 1);
    if !braces_balanced(&items) {
        return ParsedSyntax {
            root: fallback_tree(lines),
            fallback: true,
        };
    }
    let mut root = Node::leaf(NodeKind::Function, LineSpan::new(1, n));
    // Skip the signature up to the first `{`.
    let body_start = items
        .iter()
        .position(|it| matches!(it, Item::Tok(t, _) if t.is_punct("{")));
    let mut p = Parser { items: &items, pos: 0 };
    match body_start {
        Some(idx) => {
            p.pos = idx + 1;
            let children = p.parse_statements(true);
            for c in children {
                root.push_child(c);
            }
        }
        None => {
            // no body braces: parse everything as a statement list
            let children = p.parse_statements(false);
            for c in children {
                root.push_child(c);
            }
        }
    }
    root.span = LineSpan::new(1, n);
    clamp(&mut root);
    ParsedSyntax {
        root,
        fallback: false,
    }
}

fn clamp(node: &mut Node) {
    let span = node.span;
    for c in &mut node.children {
        c.span.start = c.span.start.max(span.start);
        c.span.end = c.span.end.min(span.end).max(c.span.start);
        clamp(c);
    }
}

fn braces_balanced(items: &[Item]) -> bool {
    let mut depth: i64 = 0;
    for it in items {
        if let Item::Tok(t, _) = it {
            if t.is_punct("{") {
                depth += 1;
            } else if t.is_punct("}") {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
        }
    }
    depth == 0
}

/// Brace-depth segmentation: every `{ ... }` group is a block, every other
/// line a statement. Total on any input.
pub fn fallback_tree(lines: &[&str]) -> Node {
    let n = lines.len().max(1);
    let mut stack: Vec<Node> = vec![Node::leaf(NodeKind::Function, LineSpan::new(1, n))];
    let mut state = LexState::default();
    for (i, text) in lines.iter().enumerate() {
        let line = i + 1;
        let toks = lex_line_with_state(text, &mut state);
        let opens = toks.iter().filter(|t| t.is_punct("{")).count();
        let closes = toks.iter().filter(|t| t.is_punct("}")).count();
        if text.trim().is_empty() {
            continue;
        }
        if opens > closes && line > 1 {
            for _ in 0..(opens - closes) {
                stack.push(Node::leaf(NodeKind::Block, LineSpan::new(line, line)));
            }
        } else if closes > opens {
            for _ in 0..(closes - opens) {
                if stack.len() > 1 {
                    let mut done = stack.pop().unwrap();
                    done.span.end = line;
                    stack.last_mut().unwrap().push_child(done);
                }
            }
        } else if line > 1 {
            stack
                .last_mut()
                .unwrap()
                .push_child(Node::leaf(NodeKind::Statement, LineSpan::new(line, line)));
        }
    }
    while stack.len() > 1 {
        let mut done = stack.pop().unwrap();
        done.span.end = n;
        stack.last_mut().unwrap().push_child(done);
    }
    let mut root = stack.pop().unwrap();
    root.span = LineSpan::new(1, n);
    clamp(&mut root);
    root
}

struct Parser<'a> {
    items: &'a [Item],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Item> {
        self.items.get(self.pos)
    }

    fn peek_tok(&self) -> Option<&'a Token> {
        match self.items.get(self.pos) {
            Some(Item::Tok(t, _)) => Some(t),
            _ => None,
        }
    }

    fn peek_tok_at(&self, offset: usize) -> Option<&'a Token> {
        match self.items.get(self.pos + offset) {
            Some(Item::Tok(t, _)) => Some(t),
            _ => None,
        }
    }

    fn line(&self) -> usize {
        self.peek()
            .map(Item::line)
            .or_else(|| self.items.last().map(Item::line))
            .unwrap_or(1)
    }

    fn prev_line(&self) -> usize {
        if self.pos == 0 {
            return self.line();
        }
        self.items[self.pos - 1].line()
    }

    /// Parses statements until a closing `}` (consumed when `in_block`) or
    /// the end of input.
    fn parse_statements(&mut self, in_block: bool) -> Vec<Node> {
        let mut out: Vec<Node> = Vec::new();
        while let Some(item) = self.peek() {
            if let Item::Tok(t, _) = item {
                if t.is_punct("}") {
                    self.pos += 1;
                    if in_block {
                        break;
                    }
                    continue;
                }
            }
            if let Some(node) = self.parse_statement() {
                push_disjoint(&mut out, node);
            }
        }
        out
    }

    fn parse_statement(&mut self) -> Option<Node> {
        let item = self.peek()?;
        let start = item.line();
        let tok = match item {
            Item::Opaque(l) => {
                self.pos += 1;
                return Some(Node::leaf(NodeKind::Statement, LineSpan::new(*l, *l)));
            }
            Item::Tok(t, _) => t,
        };
        if tok.is_punct(";") {
            self.pos += 1;
            return None;
        }
        if tok.is_punct("{") {
            self.pos += 1;
            let children = self.parse_statements(true);
            let end = self.prev_line().max(start);
            return Some(with_children(NodeKind::Block, start, end, children));
        }
        if tok.kind == TokenKind::Keyword {
            match tok.lexeme.as_str() {
                "if" => return Some(self.parse_if()),
                "for" | "while" => {
                    self.pos += 1;
                    self.skip_parens();
                    let body = self.parse_body();
                    let end = self.prev_line().max(start);
                    return Some(with_children(NodeKind::Loop, start, end, body));
                }
                "do" => {
                    self.pos += 1;
                    let body = self.parse_body();
                    if self.peek_tok().is_some_and(|t| t.is_keyword("while")) {
                        self.pos += 1;
                        self.skip_parens();
                        if self.peek_tok().is_some_and(|t| t.is_punct(";")) {
                            self.pos += 1;
                        }
                    }
                    let end = self.prev_line().max(start);
                    return Some(with_children(NodeKind::Loop, start, end, body));
                }
                "switch" => {
                    self.pos += 1;
                    self.skip_parens();
                    let body = self.parse_body();
                    let end = self.prev_line().max(start);
                    return Some(with_children(NodeKind::Switch, start, end, body));
                }
                "case" | "default" => {
                    // label up to ':'
                    while let Some(t) = self.peek_tok() {
                        self.pos += 1;
                        if t.is_op(":") {
                            break;
                        }
                    }
                    let end = self.prev_line();
                    return Some(Node::leaf(NodeKind::Statement, LineSpan::new(start, end)));
                }
                "return" => {
                    self.skip_to_semicolon();
                    let end = self.prev_line();
                    return Some(Node::leaf(NodeKind::Return, LineSpan::new(start, end)));
                }
                "else" => {
                    // dangling else: parse as an else node
                    self.pos += 1;
                    let body = self.parse_body();
                    let end = self.prev_line().max(start);
                    return Some(with_children(NodeKind::Else, start, end, body));
                }
                _ => {}
            }
        }
        // label: `IDENT :`
        if tok.kind == TokenKind::Identifier
            && self.peek_tok_at(1).is_some_and(|t| t.is_op(":"))
        {
            self.pos += 2;
            return Some(Node::leaf(NodeKind::Statement, LineSpan::new(start, start)));
        }
        let from = self.pos;
        self.skip_to_semicolon();
        let end = self.prev_line().max(start);
        let toks: Vec<&Token> = self.items[from..self.pos]
            .iter()
            .filter_map(|it| match it {
                Item::Tok(t, _) => Some(t),
                _ => None,
            })
            .collect();
        Some(Node::leaf(classify_simple(&toks), LineSpan::new(start, end)))
    }

    fn parse_if(&mut self) -> Node {
        let start = self.line();
        self.pos += 1; // if
        self.skip_parens();
        let mut node = Node::leaf(NodeKind::If, LineSpan::new(start, start));
        for c in self.parse_body() {
            node.push_child(c);
        }
        node.span.end = node.span.end.max(self.prev_line());
        if self.peek_tok().is_some_and(|t| t.is_keyword("else")) {
            let else_start = self.line();
            self.pos += 1;
            let body = self.parse_body();
            let end = self.prev_line().max(else_start);
            let else_node = with_children(NodeKind::Else, else_start, end, body);
            node.push_child(else_node);
            node.span.end = node.span.end.max(end);
        }
        node
    }

    /// Body of a control structure. A braced block is flattened into its
    /// statements; a single statement is returned alone.
    fn parse_body(&mut self) -> Vec<Node> {
        match self.peek_tok() {
            Some(t) if t.is_punct("{") => {
                self.pos += 1;
                self.parse_statements(true)
            }
            Some(_) | None => match self.peek() {
                Some(_) => self.parse_statement().into_iter().collect(),
                None => Vec::new(),
            },
        }
    }

    fn skip_parens(&mut self) {
        if !self.peek_tok().is_some_and(|t| t.is_punct("(")) {
            return;
        }
        let mut depth = 0i64;
        while let Some(item) = self.peek() {
            self.pos += 1;
            if let Item::Tok(t, _) = item {
                if t.is_punct("(") {
                    depth += 1;
                } else if t.is_punct(")") {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
            }
        }
    }

    /// Consumes through the next `;` at nesting depth zero. Stops before a
    /// `}` that would close the enclosing block.
    fn skip_to_semicolon(&mut self) {
        let mut depth = 0i64;
        while let Some(item) = self.peek() {
            if let Item::Tok(t, _) = item {
                match t.lexeme.as_str() {
                    "(" | "[" | "{" if t.kind == TokenKind::Punctuation => depth += 1,
                    ")" | "]" if t.kind == TokenKind::Punctuation => depth -= 1,
                    "}" if t.kind == TokenKind::Punctuation => {
                        if depth <= 0 {
                            return;
                        }
                        depth -= 1;
                    }
                    ";" if t.kind == TokenKind::Punctuation && depth <= 0 => {
                        self.pos += 1;
                        return;
                    }
                    _ => {}
                }
            }
            self.pos += 1;
        }
    }
}

fn with_children(kind: NodeKind, start: usize, end: usize, children: Vec<Node>) -> Node {
    let mut node = Node::leaf(kind, LineSpan::new(start, end.max(start)));
    for c in children {
        node.push_child(c);
    }
    node
}

fn push_disjoint(out: &mut Vec<Node>, node: Node) {
    if let Some(last) = out.last_mut() {
        if node.span.start <= last.span.end {
            last.span.end = last.span.end.max(node.span.end);
            return;
        }
    }
    out.push(node);
}

const TYPE_WORDS: &[&str] = &[
    "int", "char", "short", "long", "unsigned", "signed", "void", "float", "double", "const",
    "static", "struct", "union", "enum", "volatile", "register", "bool", "_Bool", "__int8",
    "__int16", "__int32", "__int64", "__int128", "extern",
];

/// Classifies a simple (non-control) statement from its tokens.
pub fn classify_simple(toks: &[&Token]) -> NodeKind {
    if toks.is_empty() {
        return NodeKind::Statement;
    }
    if looks_like_declaration(toks) {
        return NodeKind::Declaration;
    }
    let mut depth = 0i64;
    for t in toks {
        if t.is_punct("(") || t.is_punct("[") {
            depth += 1;
        } else if t.is_punct(")") || t.is_punct("]") {
            depth -= 1;
        } else if depth == 0
            && t.kind == TokenKind::Operator
            && matches!(
                t.lexeme.as_str(),
                "=" | "+=" | "-=" | "*=" | "/=" | "%=" | "&=" | "|=" | "^=" | "<<=" | ">>="
                    | "++" | "--"
            )
        {
            return NodeKind::Assignment;
        }
    }
    if is_call_tokens(toks) {
        return NodeKind::Call;
    }
    NodeKind::Statement
}

fn is_call_tokens(toks: &[&Token]) -> bool {
    // strip a leading `(void)` cast
    let toks = if toks.len() > 3
        && toks[0].is_punct("(")
        && toks[1].is_keyword("void")
        && toks[2].is_punct(")")
    {
        &toks[3..]
    } else {
        toks
    };
    let body: Vec<&&Token> = toks.iter().filter(|t| !t.is_punct(";")).collect();
    if body.len() < 3 || body[0].kind != TokenKind::Identifier || !body[1].is_punct("(") {
        return false;
    }
    // the call's closing paren must be the last token
    let mut depth = 0i64;
    for (i, t) in body.iter().enumerate().skip(1) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return i == body.len() - 1;
            }
        }
    }
    false
}

/// Type-ish prefix followed by a declarator name, e.g. `int n = 0;`,
/// `SSL *s;`, `unsigned __int8 v3;`, `_DWORD *v4;`.
pub fn looks_like_declaration(toks: &[&Token]) -> bool {
    let first = match toks.first() {
        Some(t) => t,
        None => return false,
    };
    if first.kind == TokenKind::Keyword {
        return TYPE_WORDS.contains(&first.lexeme.as_str());
    }
    if first.kind != TokenKind::Identifier {
        return false;
    }
    // `Type name`, `Type *name`, `Type **name` followed by ; = [ , (
    let mut i = 1;
    while toks.get(i).is_some_and(|t| t.is_op("*")) {
        i += 1;
    }
    match (toks.get(i), toks.get(i + 1)) {
        (Some(name), Some(next)) if name.kind == TokenKind::Identifier => {
            next.is_punct(";") || next.is_op("=") || next.is_punct("[") || next.is_punct(",")
        }
        (Some(name), None) => name.kind == TokenKind::Identifier,
        _ => false,
    }
}
