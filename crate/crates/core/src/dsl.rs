//! The textual layout format an LLM completes after the `Objects:` cue:
//!
//! ```text
//! Objects: [('a panda eating bambooo', [30, 133, 212, 226]), ('a panda eating bambooo', [262, 137, 222, 221])]
//! Background prompt: A watercolor painting of a forest
//! ```
//!
//! Descriptions are quote-delimited, so they may contain commas and
//! brackets. Offsets in diagnostics count characters, not bytes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::layout::{BoundingBox, Canvas, Layout, ObjectSpec};

const OBJECTS_PREFIX: &str = "objects:";
const BACKGROUND_PREFIX: &str = "background prompt:";

/// Verbatim LLM completion, kept unmodified for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
}

impl RawCompletion {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl From<&str> for RawCompletion {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    MalformedList,
    MalformedTuple,
    MalformedBox,
    MissingBackground,
    TrailingGarbage,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticKind::MalformedList => "malformed list",
            DiagnosticKind::MalformedTuple => "malformed tuple",
            DiagnosticKind::MalformedBox => "malformed box",
            DiagnosticKind::MissingBackground => "missing background",
            DiagnosticKind::TrailingGarbage => "trailing garbage",
        };
        f.write_str(s)
    }
}

/// A parse problem located by character offsets `[start, end)` in the raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind} at {}..{}: {message}", span.0, span.1)]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    pub span: (usize, usize),
    pub message: String,
}

impl ParseDiagnostic {
    fn new(kind: DiagnosticKind, start: usize, end: usize, message: impl Into<String>) -> Self {
        Self {
            kind,
            span: (start, end.max(start)),
            message: message.into(),
        }
    }
}

/// A successful parse together with non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLayout {
    pub layout: Layout,
    pub warnings: Vec<ParseDiagnostic>,
}

struct Cursor<'a> {
    chars: &'a [char],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_ci(&mut self, word: &str) -> bool {
        let n = word.chars().count();
        if self.pos + n > self.chars.len() {
            return false;
        }
        let matches = self.chars[self.pos..self.pos + n]
            .iter()
            .zip(word.chars())
            .all(|(a, b)| a.to_lowercase().eq(b.to_lowercase()));
        if matches {
            self.pos += n;
        }
        matches
    }

    fn len(&self) -> usize {
        self.chars.len()
    }

    fn err(&self, kind: DiagnosticKind, message: impl Into<String>) -> ParseDiagnostic {
        let end = (self.pos + 1).min(self.len());
        ParseDiagnostic::new(kind, self.pos.min(self.len()), end, message)
    }

    /// Quoted string with backslash escapes for the quote and backslash.
    fn quoted(&mut self) -> Result<String, ParseDiagnostic> {
        let start = self.pos;
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => {
                return Err(self.err(
                    DiagnosticKind::MalformedTuple,
                    "expected a quoted description",
                ))
            }
        };
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => {
                    return Err(ParseDiagnostic::new(
                        DiagnosticKind::MalformedTuple,
                        start,
                        self.len(),
                        "unterminated description",
                    ))
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                        None => continue,
                    }
                }
                Some(c) if c == quote => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn integer(&mut self) -> Result<i64, ParseDiagnostic> {
        let start = self.pos;
        if self.peek() == Some('-') || self.peek() == Some('+') {
            self.pos += 1;
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        // Trailing '.', exponent or letters make this a non-integer token.
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_')
        {
            self.pos += 1;
        }
        let token: String = self.chars[start..self.pos].iter().collect();
        token.parse::<i64>().map_err(|_| {
            ParseDiagnostic::new(
                DiagnosticKind::MalformedBox,
                start,
                self.pos.max(start + 1).min(self.len()),
                format!("expected an integer coordinate, found {token:?}"),
            )
        })
    }

    fn bbox(&mut self) -> Result<BoundingBox, ParseDiagnostic> {
        let start = self.pos;
        if !self.eat('[') {
            return Err(self.err(DiagnosticKind::MalformedBox, "expected '[' opening a box"));
        }
        let mut coords = Vec::with_capacity(4);
        self.skip_ws();
        if !self.eat(']') {
            loop {
                self.skip_ws();
                coords.push(self.integer()?);
                self.skip_ws();
                if self.eat(']') {
                    break;
                }
                if !self.eat(',') {
                    return Err(
                        self.err(DiagnosticKind::MalformedBox, "expected ',' or ']' in box")
                    );
                }
            }
        }
        if coords.len() != 4 {
            return Err(ParseDiagnostic::new(
                DiagnosticKind::MalformedBox,
                start,
                self.pos,
                format!("box needs 4 coordinates, found {}", coords.len()),
            ));
        }
        BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| {
            ParseDiagnostic::new(DiagnosticKind::MalformedBox, start, self.pos, e.to_string())
        })
    }

    fn tuple(&mut self) -> Result<ObjectSpec, ParseDiagnostic> {
        let start = self.pos;
        if !self.eat('(') {
            return Err(self.err(
                DiagnosticKind::MalformedTuple,
                "expected '(' opening an object",
            ));
        }
        self.skip_ws();
        let description = self.quoted()?;
        self.skip_ws();
        if !self.eat(',') {
            return Err(self.err(
                DiagnosticKind::MalformedTuple,
                "expected ',' after description",
            ));
        }
        self.skip_ws();
        let bbox = self.bbox()?;
        self.skip_ws();
        if !self.eat(')') {
            return Err(self.err(
                DiagnosticKind::MalformedTuple,
                "expected ')' closing an object",
            ));
        }
        ObjectSpec::new(description, bbox).map_err(|e| {
            ParseDiagnostic::new(
                DiagnosticKind::MalformedTuple,
                start,
                self.pos,
                e.to_string(),
            )
        })
    }

    fn list(&mut self) -> Result<Vec<ObjectSpec>, ParseDiagnostic> {
        if !self.eat('[') {
            return Err(self.err(
                DiagnosticKind::MalformedList,
                "expected '[' opening the object list",
            ));
        }
        let mut objects = Vec::new();
        self.skip_ws();
        if self.eat(']') {
            return Ok(objects);
        }
        loop {
            self.skip_ws();
            objects.push(self.tuple()?);
            self.skip_ws();
            if self.eat(']') {
                return Ok(objects);
            }
            if !self.eat(',') {
                return Err(self.err(
                    DiagnosticKind::MalformedList,
                    "expected ',' or ']' in object list",
                ));
            }
            self.skip_ws();
            // tolerate a trailing comma before the closing bracket
            if self.eat(']') {
                return Ok(objects);
            }
        }
    }
}

/// Parses a completion into a [`Layout`], returning the first fatal
/// diagnostic. Unrecognized trailing lines are dropped; use
/// [`parse_layout_with_warnings`] to see them.
pub fn parse_layout(raw: &RawCompletion, canvas: Canvas) -> Result<Layout, ParseDiagnostic> {
    parse_layout_with_warnings(raw, canvas).map(|p| p.layout)
}

pub fn parse_layout_with_warnings(
    raw: &RawCompletion,
    canvas: Canvas,
) -> Result<ParsedLayout, ParseDiagnostic> {
    let chars: Vec<char> = raw.text.chars().collect();
    let mut cur = Cursor {
        chars: &chars,
        pos: 0,
    };
    cur.skip_ws();
    if cur.eat_ci(OBJECTS_PREFIX) {
        cur.skip_ws();
    }
    let objects = cur.list()?;
    let list_end = cur.pos;

    let mut warnings = Vec::new();
    let mut background: Option<String> = None;
    // Walk the remaining text line by line; the first line (or the remainder
    // of the list's own line) starting with the background key wins.
    let mut line_start = list_end;
    while line_start < chars.len() {
        let line_end = chars[line_start..]
            .iter()
            .position(|&c| c == '\n')
            .map_or(chars.len(), |p| line_start + p);
        let mut lc = Cursor {
            chars: &chars[..line_end],
            pos: line_start,
        };
        lc.skip_ws();
        let content_start = lc.pos;
        if background.is_none() && lc.eat_ci(BACKGROUND_PREFIX) {
            let text: String = chars[lc.pos..line_end].iter().collect();
            background = Some(text.trim().to_string());
        } else if content_start < line_end {
            warnings.push(ParseDiagnostic::new(
                DiagnosticKind::TrailingGarbage,
                content_start,
                line_end,
                "ignored unrecognized text",
            ));
        }
        line_start = line_end + 1;
    }

    let background = match background {
        Some(b) if !b.is_empty() => b,
        _ => {
            return Err(ParseDiagnostic::new(
                DiagnosticKind::MissingBackground,
                list_end,
                chars.len(),
                "no 'Background prompt:' line after the object list",
            ))
        }
    };
    let layout = Layout::with_canvas(objects, background, canvas).map_err(|e| {
        ParseDiagnostic::new(
            DiagnosticKind::MissingBackground,
            list_end,
            chars.len(),
            e.to_string(),
        )
    })?;
    Ok(ParsedLayout { layout, warnings })
}

fn quote_description(s: &str) -> String {
    // Python-repr style: prefer single quotes, switch to double quotes when
    // that avoids escaping.
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        if c == quote || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push(quote);
    out
}

/// Renders only the bracketed object list, e.g. `[('a cat', [1, 2, 3, 4])]`.
pub fn serialize_objects(objects: &[ObjectSpec]) -> String {
    let items: Vec<String> = objects
        .iter()
        .map(|o| {
            let [x, y, w, h] = o.bbox.to_array();
            format!(
                "({}, [{x}, {y}, {w}, {h}])",
                quote_description(&o.description)
            )
        })
        .collect();
    format!("[{}]", items.join(", "))
}

/// Canonical two-line form: `Objects: [...]` then `Background prompt: ...`.
pub fn serialize_layout(layout: &Layout) -> String {
    format!(
        "Objects: {}\nBackground prompt: {}",
        serialize_objects(&layout.objects),
        layout.background_prompt
    )
}

/// Index just past the `]` matching the `[` at `open`, skipping quoted text.
fn matching_bracket(chars: &[char], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut i = open;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Some(q) => {
                if c == '\\' {
                    i += 1;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => quote = Some(c),
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i + 1);
                    }
                }
                _ => {}
            },
        }
        i += 1;
    }
    None
}

fn starts_ci(chars: &[char], at: usize, word: &str) -> bool {
    let n = word.chars().count();
    at + n <= chars.len()
        && chars[at..at + n]
            .iter()
            .zip(word.chars())
            .all(|(a, b)| a.to_lowercase().eq(b.to_lowercase()))
}

/// Pulls the layout block out of a chatty response: the first bracketed
/// object list plus the following `Background prompt:` line.
pub fn extract_layout_block(full_response: &str) -> Result<RawCompletion, ParseDiagnostic> {
    let chars: Vec<char> = full_response.chars().collect();
    let list_start = (0..chars.len()).find(|&i| {
        chars[i] == '['
            && chars[i + 1..]
                .iter()
                .find(|c| !c.is_whitespace())
                .is_some_and(|&c| c == '(' || c == ']')
    });
    let Some(list_start) = list_start else {
        return Err(ParseDiagnostic::new(
            DiagnosticKind::MalformedList,
            0,
            chars.len(),
            "no bracketed object list in response",
        ));
    };
    let Some(list_end) = matching_bracket(&chars, list_start) else {
        return Err(ParseDiagnostic::new(
            DiagnosticKind::MalformedList,
            list_start,
            chars.len(),
            "object list is never closed",
        ));
    };
    let mut text: String = chars[list_start..list_end].iter().collect();

    let background_at = (list_end..chars.len()).find(|&i| starts_ci(&chars, i, BACKGROUND_PREFIX));
    if let Some(at) = background_at {
        let line_end = chars[at..]
            .iter()
            .position(|&c| c == '\n')
            .map_or(chars.len(), |p| at + p);
        let line: String = chars[at..line_end].iter().collect();
        text.push('\n');
        text.push_str(line.trim_end());
    }
    Ok(RawCompletion::new(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PANDA: &str = "[('a panda eating bambooo', [30, 133, 212, 226]), ('a panda eating bambooo', [262, 137, 222, 221])]\nBackground prompt: A watercolor painting of a forest";

    fn parse(s: &str) -> Result<Layout, ParseDiagnostic> {
        parse_layout(&RawCompletion::new(s), Canvas::default())
    }

    #[test]
    fn parses_panda_completion() {
        let l = parse(PANDA).unwrap();
        assert_eq!(l.objects.len(), 2);
        assert_eq!(l.background_prompt, "A watercolor painting of a forest");
        assert_eq!(l.objects[0].description, "a panda eating bambooo");
        assert_eq!(l.objects[1].bbox.to_array(), [262, 137, 222, 221]);
    }

    #[test]
    fn serializes_panda_exactly() {
        let l = parse(PANDA).unwrap();
        assert_eq!(serialize_layout(&l), format!("Objects: {PANDA}"));
    }

    #[test]
    fn empty_list() {
        let l = parse("[]\nBackground prompt: A realistic image of an indoor scene").unwrap();
        assert!(l.objects.is_empty());
        let l = Layout::new(vec![], "a forest").unwrap();
        assert_eq!(
            serialize_layout(&l),
            "Objects: []\nBackground prompt: a forest"
        );
    }

    #[test]
    fn short_box_is_malformed() {
        let e = parse("[('a skier', [5, 152, 139])]\nBackground prompt: snow").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MalformedBox);
    }

    #[test]
    fn non_integer_coordinate_is_malformed_box() {
        let e = parse("[('a', [5.5, 1, 2, 3])]\nBackground prompt: snow").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MalformedBox);
        let e = parse("[('a', [5, 1, 0, 3])]\nBackground prompt: snow").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MalformedBox);
    }

    #[test]
    fn negative_coordinates_parse() {
        let l = parse("[('a', [-5, -1, 2, 3])]\nBackground prompt: snow").unwrap();
        assert_eq!(l.objects[0].bbox.to_array(), [-5, -1, 2, 3]);
    }

    #[test]
    fn missing_background() {
        let e = parse("[('a cat', [1, 2, 3, 4])]").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MissingBackground);
        let e = parse("[('a cat', [1, 2, 3, 4])]\nBackground prompt:   ").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MissingBackground);
    }

    #[test]
    fn tolerant_whitespace_and_quotes() {
        let l = parse(
            "  Objects:[ ( \"a cat, sleeping\" ,[ 1,2 ,3, 4 ] ) , ('it\\'s a dog',[5,6,7,8]),]\n   background PROMPT:   a room  ",
        )
        .unwrap();
        assert_eq!(l.objects[0].description, "a cat, sleeping");
        assert_eq!(l.objects[1].description, "it's a dog");
        assert_eq!(l.background_prompt, "a room");
    }

    #[test]
    fn trailing_lines_are_warnings() {
        let p = parse_layout_with_warnings(
            &RawCompletion::new("[]\nBackground prompt: a room\nNegative prompt: blurry"),
            Canvas::default(),
        )
        .unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.warnings[0].kind, DiagnosticKind::TrailingGarbage);
        assert_eq!(p.layout.background_prompt, "a room");
    }

    #[test]
    fn unicode_descriptions_verbatim() {
        let l = parse("[('一只熊猫', [1, 2, 3, 4])]\nBackground prompt: 森林").unwrap();
        assert_eq!(l.objects[0].description, "一只熊猫");
        assert_eq!(parse(&serialize_layout(&l)).unwrap(), l);
    }

    #[test]
    fn quoting_round_trips() {
        for d in [
            "it's",
            "say \"hi\"",
            "both ' and \"",
            "back\\slash",
            "a, b [c]",
        ] {
            let l = Layout::new(
                vec![ObjectSpec::new(d, BoundingBox::new(0, 0, 1, 1).unwrap()).unwrap()],
                "bg",
            )
            .unwrap();
            assert_eq!(parse(&serialize_layout(&l)).unwrap(), l, "{d}");
        }
    }

    #[test]
    fn malformed_tuple_and_list() {
        assert_eq!(
            parse("[('a', [1,2,3,4]\nBackground prompt: x")
                .unwrap_err()
                .kind,
            DiagnosticKind::MalformedTuple
        );
        assert_eq!(
            parse("[(a, [1,2,3,4])]\nBackground prompt: x")
                .unwrap_err()
                .kind,
            DiagnosticKind::MalformedTuple
        );
        assert_eq!(
            parse("('a', [1,2,3,4])\nBackground prompt: x")
                .unwrap_err()
                .kind,
            DiagnosticKind::MalformedList
        );
        assert_eq!(
            parse("[('a', [1,2,3,4]) ('b', [1,2,3,4])]")
                .unwrap_err()
                .kind,
            DiagnosticKind::MalformedList
        );
    }

    #[test]
    fn spans_stay_in_bounds() {
        let s = "[('a', [1,2,3";
        let e = parse(s).unwrap_err();
        assert!(e.span.0 <= e.span.1 && e.span.1 <= s.chars().count());
    }

    #[test]
    fn extracts_from_chatter() {
        let got = extract_layout_block(
            "Sure! Objects: [('a cat', [10,10,50,50])]\nBackground prompt: a room\nHope this helps.",
        )
        .unwrap();
        assert_eq!(
            got.text,
            "[('a cat', [10,10,50,50])]\nBackground prompt: a room"
        );
    }

    #[test]
    fn extract_rejects_prose() {
        let e = extract_layout_block("I cannot draw that, sorry [citation needed].").unwrap_err();
        assert_eq!(e.kind, DiagnosticKind::MalformedList);
    }

    #[test]
    fn extract_is_identity_on_clean_completion() {
        assert_eq!(extract_layout_block(PANDA).unwrap().text, PANDA);
    }

    #[test]
    fn extract_takes_first_list() {
        let got = extract_layout_block(
            "[('a cat', [1, 2, 3, 4])]\nBackground prompt: a\n[('a dog', [1, 2, 3, 4])]\nBackground prompt: b",
        )
        .unwrap();
        assert_eq!(got.text, "[('a cat', [1, 2, 3, 4])]\nBackground prompt: a");
    }

    #[test]
    fn extract_skips_brackets_inside_descriptions() {
        let got = extract_layout_block("x [('a [weird] ]cat', [1, 2, 3, 4])] Background prompt: a")
            .unwrap();
        assert_eq!(
            got.text,
            "[('a [weird] ]cat', [1, 2, 3, 4])]\nBackground prompt: a"
        );
        assert_eq!(
            parse(&got.text).unwrap().objects[0].description,
            "a [weird] ]cat"
        );
    }
}
