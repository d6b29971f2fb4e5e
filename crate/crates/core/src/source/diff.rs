use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SourceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineTag {
    Context,
    Added,
    Deleted,
}

impl LineTag {
    fn prefix(self) -> char {
        match self {
            LineTag::Context => ' ',
            LineTag::Added => '+',
            LineTag::Deleted => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub tag: LineTag,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<DiffLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
}

impl Hunk {
    /// Lines of the given tag paired with their line number in the old
    /// (deleted) or new (added) file.
    pub fn numbered(&self, tag: LineTag) -> Vec<(usize, &str)> {
        let mut old = self.old_start;
        let mut new = self.new_start;
        let mut out = Vec::new();
        for l in &self.lines {
            match l.tag {
                LineTag::Context => {
                    old += 1;
                    new += 1;
                }
                LineTag::Deleted => {
                    if tag == LineTag::Deleted {
                        out.push((old, l.text.as_str()));
                    }
                    old += 1;
                }
                LineTag::Added => {
                    if tag == LineTag::Added {
                        out.push((new, l.text.as_str()));
                    }
                    new += 1;
                }
            }
        }
        out
    }

    fn counted(&self) -> (usize, usize) {
        let old = self
            .lines
            .iter()
            .filter(|l| l.tag != LineTag::Added)
            .count();
        let new = self
            .lines
            .iter()
            .filter(|l| l.tag != LineTag::Deleted)
            .count();
        (old, new)
    }
}

/// A parsed single-file unified diff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDiff {
    pub file_path: String,
    pub hunks: Vec<Hunk>,
    /// Text after the closing `@@` of the first hunk header, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function_hint: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchKind {
    AddOnly,
    DeleteOnly,
    Edit,
}

impl PatchDiff {
    pub fn lines_tagged(&self, tag: LineTag) -> impl Iterator<Item = &DiffLine> {
        self.hunks
            .iter()
            .flat_map(|h| h.lines.iter())
            .filter(move |l| l.tag == tag)
    }

    /// Added or deleted lines that carry non-whitespace content.
    pub fn significant(&self, tag: LineTag) -> usize {
        self.lines_tagged(tag)
            .filter(|l| !l.text.trim().is_empty())
            .count()
    }

    /// Renders back to unified-diff text.
    pub fn to_unified(&self) -> String {
        let mut out = String::new();
        if !self.file_path.is_empty() {
            let _ = writeln!(out, "--- a/{}", self.file_path);
            let _ = writeln!(out, "+++ b/{}", self.file_path);
        }
        for (i, h) in self.hunks.iter().enumerate() {
            let _ = write!(
                out,
                "@@ -{},{} +{},{} @@",
                h.old_start, h.old_count, h.new_start, h.new_count
            );
            let section = h.section.as_ref().or(if i == 0 {
                self.function_hint.as_ref()
            } else {
                None
            });
            if let Some(s) = section {
                let _ = write!(out, " {s}");
            }
            out.push('\n');
            for l in &h.lines {
                out.push(l.tag.prefix());
                out.push_str(&l.text);
                out.push('\n');
            }
        }
        out
    }
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

/// `@@ -a,b +c,d @@ section`
fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize, Option<String>)> {
    let rest = line.strip_prefix("@@ ")?;
    let (ranges, tail) = rest.split_once(" @@")?;
    let mut parts = ranges.split_whitespace();
    let old = parts.next()?.strip_prefix('-')?;
    let new = parts.next()?.strip_prefix('+')?;
    if parts.next().is_some() {
        return None;
    }
    let (os, oc) = parse_range(old)?;
    let (ns, nc) = parse_range(new)?;
    let section = tail.trim();
    let section = (!section.is_empty()).then(|| section.to_string());
    Some((os, oc, ns, nc, section))
}

fn strip_path_prefix(p: &str) -> String {
    let p = p.split('\t').next().unwrap_or(p).trim();
    p.strip_prefix("a/")
        .or_else(|| p.strip_prefix("b/"))
        .unwrap_or(p)
        .to_string()
}

/// Parses a unified diff covering a single file.
pub fn parse_unified_diff(text: &str) -> Result<PatchDiff, SourceError> {
    let mut hunks: Vec<Hunk> = Vec::new();
    let mut file_sections = 0usize;
    let mut old_path: Option<String> = None;
    let mut new_path: Option<String> = None;
    let mut lines = text.lines().peekable();
    let mut lineno = 0usize;

    while let Some(line) = lines.next() {
        lineno += 1;
        if let Some(p) = line.strip_prefix("--- ") {
            if lines.peek().is_some_and(|n| n.starts_with("+++ ")) {
                file_sections += 1;
                if file_sections > 1 {
                    return Err(SourceError::MultiFileDiff);
                }
                old_path = Some(strip_path_prefix(p));
                let np = lines.next().unwrap();
                lineno += 1;
                new_path = Some(strip_path_prefix(&np[4..]));
            }
            continue;
        }
        if line.starts_with("diff --git ") {
            if file_sections >= 1 || !hunks.is_empty() {
                return Err(SourceError::MultiFileDiff);
            }
            continue;
        }
        if !line.starts_with("@@") {
            continue;
        }
        let (os, oc, ns, nc, section) = parse_hunk_header(line).ok_or_else(|| {
            SourceError::MalformedDiff(format!("line {lineno}: bad hunk header `{line}`"))
        })?;
        let mut hunk = Hunk {
            old_start: os,
            old_count: oc,
            new_start: ns,
            new_count: nc,
            lines: Vec::new(),
            section,
        };
        let (mut old_left, mut new_left) = (oc, nc);
        while old_left > 0 || new_left > 0 {
            let Some(body) = lines.peek() else { break };
            if body.starts_with("@@") || body.starts_with("diff --git ") {
                break;
            }
            let body = lines.next().unwrap();
            lineno += 1;
            let (tag, content) = match body.chars().next() {
                Some(' ') => (LineTag::Context, &body[1..]),
                Some('+') => (LineTag::Added, &body[1..]),
                Some('-') => (LineTag::Deleted, &body[1..]),
                Some('\\') => continue,
                None => (LineTag::Context, ""),
                Some(_) => {
                    return Err(SourceError::MalformedDiff(format!(
                        "line {lineno}: unexpected hunk line `{body}`"
                    )))
                }
            };
            match tag {
                LineTag::Context if old_left > 0 && new_left > 0 => {
                    old_left -= 1;
                    new_left -= 1;
                }
                LineTag::Added if new_left > 0 => new_left -= 1,
                LineTag::Deleted if old_left > 0 => old_left -= 1,
                _ => {
                    return Err(SourceError::MalformedDiff(format!(
                        "line {lineno}: hunk content exceeds declared counts"
                    )))
                }
            }
            hunk.lines.push(DiffLine {
                tag,
                text: content.to_string(),
            });
        }
        while lines.peek().is_some_and(|l| l.starts_with('\\')) {
            lines.next();
            lineno += 1;
        }
        if let Some(next) = lines.peek() {
            let stray = (next.starts_with('+') && !next.starts_with("+++ "))
                || (next.starts_with('-') && !next.starts_with("--"));
            if stray {
                return Err(SourceError::MalformedDiff(format!(
                    "line {}: hunk content exceeds declared counts",
                    lineno + 1
                )));
            }
        }
        let (co, cn) = hunk.counted();
        if co != oc || cn != nc {
            return Err(SourceError::MalformedDiff(format!(
                "hunk @@ -{os},{oc} +{ns},{nc} @@ has {co} old / {cn} new lines"
            )));
        }
        hunks.push(hunk);
    }

    if hunks.is_empty() {
        return Err(SourceError::MalformedDiff("no hunks".into()));
    }
    let file_path = match (new_path, old_path) {
        (Some(n), _) if n != "/dev/null" => n,
        (_, Some(o)) => o,
        _ => String::new(),
    };
    let function_hint = hunks[0].section.clone();
    Ok(PatchDiff {
        file_path,
        hunks,
        function_hint,
    })
}

/// Classifies a diff by its non-whitespace added and deleted lines.
pub fn classify_patch(diff: &PatchDiff) -> Result<PatchKind, SourceError> {
    let added = diff.significant(LineTag::Added);
    let deleted = diff.significant(LineTag::Deleted);
    match (added, deleted) {
        (0, 0) => Err(SourceError::EmptyPatch),
        (_, 0) => Ok(PatchKind::AddOnly),
        (0, _) => Ok(PatchKind::DeleteOnly),
        _ => Ok(PatchKind::Edit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_simple_hunk() {
        let d = parse_unified_diff("@@ -1,2 +1,3 @@\n a\n+b\n c").unwrap();
        assert_eq!(d.hunks.len(), 1);
        assert_eq!(d.lines_tagged(LineTag::Added).count(), 1);
        assert_eq!(d.lines_tagged(LineTag::Deleted).count(), 0);
        assert_eq!(d.lines_tagged(LineTag::Context).count(), 2);
        assert_eq!(classify_patch(&d).unwrap(), PatchKind::AddOnly);
    }

    #[test]
    fn empty_body_is_malformed() {
        let err = parse_unified_diff("@@ -1,1 +1,1 @@\n").unwrap_err();
        assert!(matches!(err, SourceError::MalformedDiff(_)));
    }

    #[test]
    fn bad_header_is_malformed() {
        let err = parse_unified_diff("@@ -x,1 +1 @@\n a\n").unwrap_err();
        assert!(matches!(err, SourceError::MalformedDiff(_)));
    }

    #[test]
    fn too_many_lines_is_malformed() {
        let err = parse_unified_diff("@@ -1,1 +1,1 @@\n a\n+b\n").unwrap_err();
        assert!(matches!(err, SourceError::MalformedDiff(_)));
    }

    const MOTIVATING: &str = "\
diff --git a/ssl/s3_lib.c b/ssl/s3_lib.c
index 1111111..2222222 100644
--- a/ssl/s3_lib.c
+++ b/ssl/s3_lib.c
@@ -4,5 +4,5 @@ long ssl_get_algorithm2(SSL *s)
 {
 \tlong alg2 = s->s3->tmp.new_cipher->algorithm2;
-\tif (s->version >= TLS1_2_VERSION &&
+\tif (s->method->version == TLS1_2_VERSION &&
 \t    alg2 == (SSL_HANDSHAKE_MAC_DEFAULT|TLS1_PRF))
 \t\treturn SSL_HANDSHAKE_MAC_SHA256 | TLS1_PRF_SHA256;
";

    #[test]
    fn motivating_edit() {
        let d = parse_unified_diff(MOTIVATING).unwrap();
        assert_eq!(d.file_path, "ssl/s3_lib.c");
        assert_eq!(d.function_hint.as_deref(), Some("long ssl_get_algorithm2(SSL *s)"));
        assert_eq!(d.significant(LineTag::Added), 1);
        assert_eq!(d.significant(LineTag::Deleted), 1);
        assert_eq!(classify_patch(&d).unwrap(), PatchKind::Edit);
        let del = d.hunks[0].numbered(LineTag::Deleted);
        assert_eq!(del, vec![(6, "\tif (s->version >= TLS1_2_VERSION &&")]);
        let add = d.hunks[0].numbered(LineTag::Added);
        assert_eq!(add[0].0, 6);
    }

    #[test]
    fn two_files_rejected() {
        let text = "--- a/x.c\n+++ b/x.c\n@@ -1 +1 @@\n-a\n+b\n--- a/y.c\n+++ b/y.c\n@@ -1 +1 @@\n-a\n+b\n";
        assert_eq!(parse_unified_diff(text).unwrap_err(), SourceError::MultiFileDiff);
    }

    #[test]
    fn deleted_line_that_looks_like_header() {
        // "--- x" inside a hunk is a deleted line "-- x"
        let d = parse_unified_diff("@@ -1,2 +1,1 @@\n--- x\n a\n").unwrap();
        assert_eq!(d.hunks[0].lines[0].text, "-- x");
        assert_eq!(classify_patch(&d).unwrap(), PatchKind::DeleteOnly);
    }

    #[test]
    fn whitespace_only_changes_are_empty() {
        let d = parse_unified_diff("@@ -1,2 +1,2 @@\n-  \n+\t\n a\n").unwrap();
        assert_eq!(classify_patch(&d).unwrap_err(), SourceError::EmptyPatch);
    }

    #[test]
    fn no_newline_marker_is_skipped() {
        let d = parse_unified_diff("@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+b\n").unwrap();
        assert_eq!(d.hunks[0].lines.len(), 2);
    }

    #[test]
    fn renders_back() {
        let d = parse_unified_diff(MOTIVATING).unwrap();
        let again = parse_unified_diff(&d.to_unified()).unwrap();
        assert_eq!(d, again);
    }
}
