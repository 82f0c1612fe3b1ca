//! Lexical structure check for Python source.
//!
//! This is not a parser. It catches the damage that truncated or chaotic
//! generations leave behind: unterminated strings, unbalanced brackets,
//! broken indentation, a block header with no body, and characters that can
//! never appear in Python outside a string or comment.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxIssue {
    /// 1-based physical line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for SyntaxIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import",
    "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield", "match", "case", "type", "print", "exec",
];

fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn is_invalid_char(c: char) -> bool {
    matches!(c, '$' | '?' | '`') || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())
}

fn indent_width(line: &str) -> usize {
    let mut width = 0;
    for c in line.chars() {
        match c {
            ' ' => width += 1,
            '\t' => width = (width / 8 + 1) * 8,
            '\x0c' => width = 0,
            _ => break,
        }
    }
    width
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Name(bool),
    Number,
    Str,
    Op(char),
}

#[derive(Debug, Default)]
struct LineScan {
    tokens: Vec<Token>,
    /// Quote sequence of a string left open at end of line.
    open_string: Option<&'static str>,
    continuation: bool,
    invalid: Option<char>,
}

/// Finds the end of a string body starting at `pos` (just past the opening
/// quote). Returns the index just past the closing quote.
fn close_string(chars: &[char], mut pos: usize, quote: &str) -> Option<usize> {
    let q: Vec<char> = quote.chars().collect();
    while pos < chars.len() {
        if chars[pos] == '\\' {
            pos += 2;
            continue;
        }
        if chars[pos..].starts_with(&q) {
            return Some(pos + q.len());
        }
        pos += 1;
    }
    None
}

fn scan_line(chars: &[char], start: usize) -> LineScan {
    let mut scan = LineScan::default();
    let mut i = start;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        }
        if c == '\\' && chars[i + 1..].iter().all(|c| c.is_whitespace()) {
            scan.continuation = true;
            break;
        }
        if c == '"' || c == '\'' {
            let triple = chars[i..].starts_with(&[c, c, c]);
            let quote: &'static str = match (c, triple) {
                ('"', true) => "\"\"\"",
                ('\'', true) => "'''",
                ('"', false) => "\"",
                _ => "'",
            };
            let body = i + quote.len();
            scan.tokens.push(Token::Str);
            match close_string(chars, body, quote) {
                Some(end) => i = end,
                None => {
                    scan.open_string = Some(quote);
                    break;
                }
            }
            continue;
        }
        if is_ident_start(c) {
            let mut j = i;
            while j < chars.len() && is_ident_continue(chars[j]) {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            // string prefix such as f"..." or rb'...'
            if j < chars.len() && (chars[j] == '"' || chars[j] == '\'') && word.len() <= 2 {
                i = j;
                continue;
            }
            scan.tokens.push(Token::Name(is_keyword(&word)));
            i = j;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let mut j = i;
            while j < chars.len()
                && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '.')
            {
                let exp = matches!(chars[j], 'e' | 'E');
                j += 1;
                if exp && j < chars.len() && matches!(chars[j], '+' | '-') {
                    j += 1;
                }
            }
            scan.tokens.push(Token::Number);
            i = j;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_invalid_char(c) && scan.invalid.is_none() {
            scan.invalid = Some(c);
        }
        scan.tokens.push(Token::Op(c));
        i += 1;
    }
    scan
}

/// A line "looks like code": no characters Python forbids, and no two
/// adjacent non-keyword names or numbers (`the solution`, `3 apples`), which
/// Python's grammar never allows but prose always contains.
pub fn is_program_like(line: &str) -> bool {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return false;
    }
    if trimmed.starts_with('#') {
        return true;
    }
    let chars: Vec<char> = trimmed.chars().collect();
    let scan = scan_line(&chars, 0);
    if scan.invalid.is_some() {
        return false;
    }
    !has_adjacent_operands(&scan.tokens)
}

fn has_adjacent_operands(tokens: &[Token]) -> bool {
    let bare = |t: &Token| matches!(t, Token::Name(false) | Token::Number);
    tokens.windows(2).any(|w| bare(&w[0]) && bare(&w[1]))
}

/// Checks the structural well-formedness of `source`.
pub fn check(source: &str) -> Result<(), SyntaxIssue> {
    let issue = |line: usize, message: &str| SyntaxIssue {
        line,
        message: message.to_string(),
    };
    let mut indents: Vec<usize> = vec![0];
    let mut brackets: Vec<(char, usize)> = Vec::new();
    let mut open_string: Option<(&'static str, usize)> = None;
    let mut continuation = false;
    let mut expect_indent: Option<usize> = None;
    let mut last_token: Option<Token> = None;
    let mut line_no = 0;

    for (idx, raw) in source.lines().enumerate() {
        line_no = idx + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut start = 0;

        if let Some((quote, _)) = open_string {
            match close_string(&chars, 0, quote) {
                Some(end) => {
                    open_string = None;
                    last_token = Some(Token::Str);
                    start = end;
                }
                None => {
                    if quote.len() == 1 && !raw.ends_with('\\') {
                        return Err(issue(line_no, "unterminated string literal"));
                    }
                    continue;
                }
            }
        } else if brackets.is_empty() && !continuation {
            let content = raw.trim_start();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let width = indent_width(raw);
            let top = *indents.last().expect("never empty");
            if expect_indent.take().is_some() {
                if width <= top {
                    return Err(issue(line_no, "expected an indented block"));
                }
                indents.push(width);
            } else if width > top {
                return Err(issue(line_no, "unexpected indent"));
            } else if width < top {
                while indents.last().is_some_and(|&w| w > width) {
                    indents.pop();
                }
                if indents.last() != Some(&width) {
                    return Err(issue(
                        line_no,
                        "unindent does not match any outer indentation level",
                    ));
                }
            }
            start = raw.len() - content.len();
            start = raw[..start].chars().count();
        }

        let scan = scan_line(&chars, start);
        if let Some(c) = scan.invalid {
            return Err(issue(line_no, &format!("invalid character `{c}`")));
        }
        if has_adjacent_operands(&scan.tokens) {
            return Err(issue(line_no, "invalid syntax"));
        }
        for tok in &scan.tokens {
            if let Token::Op(c) = *tok {
                match c {
                    '(' | '[' | '{' => brackets.push((c, line_no)),
                    ')' | ']' | '}' => {
                        let want = match c {
                            ')' => '(',
                            ']' => '[',
                            _ => '{',
                        };
                        match brackets.pop() {
                            Some((open, _)) if open == want => {}
                            Some((open, _)) => {
                                return Err(issue(
                                    line_no,
                                    &format!("closing `{c}` does not match `{open}`"),
                                ))
                            }
                            None => return Err(issue(line_no, &format!("unmatched `{c}`"))),
                        }
                    }
                    _ => {}
                }
            }
        }
        if let Some(t) = scan.tokens.last() {
            last_token = Some(*t);
        }
        if let Some(quote) = scan.open_string {
            if quote.len() == 1 && !raw.ends_with('\\') {
                return Err(issue(line_no, "unterminated string literal"));
            }
            open_string = Some((quote, line_no));
            continue;
        }
        continuation = scan.continuation;
        if brackets.is_empty() && !continuation {
            if last_token == Some(Token::Op(':')) {
                expect_indent = Some(line_no);
            }
            last_token = None;
        }
    }

    if let Some((_, line)) = open_string {
        return Err(issue(line, "unterminated triple-quoted string"));
    }
    if let Some(&(c, line)) = brackets.last() {
        return Err(issue(line, &format!("`{c}` was never closed")));
    }
    if continuation {
        return Err(issue(
            line_no,
            "unexpected end of input after line continuation",
        ));
    }
    if let Some(line) = expect_indent {
        return Err(issue(line, "expected an indented block"));
    }
    Ok(())
}
