//! Textual detection of degenerate generations, run before any execution.
//!
//! Three states are recognised, checked in this order:
//!
//! * **stuttering**: a block of at most `block_size` lines repeated back to
//!   back at least `repeat_count` times, with the run reaching into the
//!   trailing `window_frac` of the text;
//! * **infinite enumeration**: at least `enum_count` consecutive statements
//!   (or short statement groups) that differ only in their literals;
//! * **gibberish**: text that does not hold together as a program, when the
//!   generation was cut off at the length limit or fewer than
//!   `parse_valid_frac` of its lines look like code.
//!
//! The thresholds are harness choices, exposed as configuration.

pub mod pylex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegenerationKind {
    None,
    Stuttering,
    InfiniteEnumeration,
    Gibberish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationVerdict {
    pub kind: DegenerationKind,
    /// The repeated unit or offending span; empty when `kind` is `None`.
    pub evidence: String,
    /// Share of lines covered by the repetition, or the share of lines that
    /// do not look like code. Zero when `kind` is `None`.
    pub score: f64,
}

impl DegenerationVerdict {
    pub fn none() -> Self {
        DegenerationVerdict {
            kind: DegenerationKind::None,
            evidence: String::new(),
            score: 0.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.kind != DegenerationKind::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegenerationConfig {
    pub repeat_count: usize,
    pub block_size: usize,
    pub enum_count: usize,
    pub parse_valid_frac: f64,
    pub window_frac: f64,
}

impl Default for DegenerationConfig {
    fn default() -> Self {
        DegenerationConfig {
            repeat_count: 5,
            block_size: 3,
            enum_count: 20,
            parse_valid_frac: 0.3,
            window_frac: 0.6,
        }
    }
}

impl DegenerationConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(format!("degeneration.{m}")));
        if self.repeat_count < 2 {
            return bad("repeat_count must be at least 2");
        }
        if self.block_size == 0 {
            return bad("block_size must be positive");
        }
        if self.enum_count < 2 {
            return bad("enum_count must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.parse_valid_frac) {
            return bad("parse_valid_frac must lie in [0, 1]");
        }
        if !(self.window_frac > 0.0 && self.window_frac <= 1.0) {
            return bad("window_frac must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Strips surrounding whitespace and collapses interior runs of spaces and
/// tabs. Comments are kept.
pub fn normalize_line(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalized_lines(source: &str) -> Vec<String> {
    source
        .lines()
        .map(normalize_line)
        .filter(|l| !l.is_empty())
        .collect()
}

/// `1 − distinct / total` over normalized non-blank lines; 0 for empty input.
pub fn repetition_ratio(source_code: &str) -> f64 {
    let lines = normalized_lines(source_code);
    if lines.is_empty() {
        return 0.0;
    }
    let distinct: std::collections::HashSet<&str> = lines.iter().map(String::as_str).collect();
    1.0 - distinct.len() as f64 / lines.len() as f64
}

/// Replaces numeric and string literals, and digit runs inside names, with
/// placeholders, leaving the statement's shape.
pub fn literal_skeleton(line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    let mut prev_ident = false;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' || c == '\'' {
            let mut j = i + 1;
            while j < chars.len() && chars[j] != c {
                if chars[j] == '\\' {
                    j += 1;
                }
                j += 1;
            }
            out.push_str("\"\"");
            i = j + 1;
            prev_ident = false;
            continue;
        }
        if c.is_ascii_digit() && !prev_ident {
            let mut j = i;
            while j < chars.len()
                && (chars[j].is_ascii_alphanumeric() || chars[j] == '.' || chars[j] == '_')
            {
                j += 1;
            }
            out.push('0');
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            // Counters embedded in names: `case_1`, `case_2`, ...
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            out.push('0');
            continue;
        }
        prev_ident = c == '_' || c.is_alphanumeric();
        out.push(c);
        i += 1;
    }
    out
}

/// First back-to-back run (by start, then unit length) of a unit of
/// `1..=max_unit` items repeated at least `min_reps` times and accepted by
/// `accept(start, unit, reps)`.
fn find_run<T: PartialEq>(
    items: &[T],
    max_unit: usize,
    min_reps: usize,
    accept: impl Fn(usize, usize, usize) -> bool,
) -> Option<(usize, usize, usize)> {
    let n = items.len();
    for start in 0..n {
        for unit in 1..=max_unit {
            if start + unit * min_reps > n {
                break;
            }
            let block = &items[start..start + unit];
            let mut reps = 1;
            while start + (reps + 1) * unit <= n
                && &items[start + reps * unit..start + (reps + 1) * unit] == block
            {
                reps += 1;
            }
            if reps >= min_reps && accept(start, unit, reps) {
                return Some((start, unit, reps));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Default)]
pub struct Detector {
    pub config: DegenerationConfig,
}

impl Detector {
    pub fn new(config: DegenerationConfig) -> Self {
        Detector { config }
    }

    /// Applies the stuttering, enumeration and gibberish rules in order,
    /// using the built-in lexical check to decide whether the text parses.
    pub fn detect(&self, source_code: &str, truncated_at_limit: bool) -> DegenerationVerdict {
        self.detect_with(source_code, truncated_at_limit, |src| {
            pylex::check(src).is_ok()
        })
    }

    /// As [`detect`](Self::detect) with a caller-supplied parse check.
    pub fn detect_with(
        &self,
        source_code: &str,
        truncated_at_limit: bool,
        parses: impl Fn(&str) -> bool,
    ) -> DegenerationVerdict {
        let cfg = &self.config;
        let lines = normalized_lines(source_code);
        let n = lines.len();
        if n == 0 {
            return DegenerationVerdict::none();
        }

        let window = ((cfg.window_frac * n as f64).ceil() as usize).clamp(1, n);
        let window_start = n - window;
        if let Some((start, unit, reps)) =
            find_run(&lines, cfg.block_size, cfg.repeat_count, |s, u, r| {
                s + u * r > window_start
            })
        {
            return DegenerationVerdict {
                kind: DegenerationKind::Stuttering,
                evidence: lines[start..start + unit].join("\n"),
                score: ((unit * reps) as f64 / n as f64).min(1.0),
            };
        }

        let skeletons: Vec<String> = lines.iter().map(|l| literal_skeleton(l)).collect();
        if let Some((start, unit, reps)) =
            find_run(&skeletons, cfg.block_size, cfg.enum_count, |_, _, _| true)
        {
            return DegenerationVerdict {
                kind: DegenerationKind::InfiniteEnumeration,
                evidence: lines[start..start + unit].join("\n"),
                score: ((unit * reps) as f64 / n as f64).min(1.0),
            };
        }

        if !parses(source_code) {
            let valid = lines.iter().filter(|l| pylex::is_program_like(l)).count();
            let valid_frac = valid as f64 / n as f64;
            if truncated_at_limit || valid_frac < cfg.parse_valid_frac {
                let evidence = lines
                    .iter()
                    .find(|l| !pylex::is_program_like(l))
                    .or(lines.last())
                    .cloned()
                    .unwrap_or_default();
                return DegenerationVerdict {
                    kind: DegenerationKind::Gibberish,
                    evidence,
                    score: 1.0 - valid_frac,
                };
            }
        }
        DegenerationVerdict::none()
    }
}

/// Detection with default thresholds.
pub fn detect(source_code: &str, truncated_at_limit: bool) -> DegenerationVerdict {
    Detector::default().detect(source_code, truncated_at_limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "n = int(input())\nresult = []\nfor x in range(n):\n";

    #[test]
    fn stutter_after_header() {
        let src = format!("{HEADER}{}", "    result.append(x)\n".repeat(50));
        let v = detect(&src, false);
        assert_eq!(v.kind, DegenerationKind::Stuttering);
        assert_eq!(v.evidence, "result.append(x)");
        assert!(v.score > 0.9);
    }

    #[test]
    fn distinct_program_is_clean() {
        let src = "import sys\n\
def main():\n\
    data = sys.stdin.read().split()\n\
    n = int(data[0])\n\
    values = list(map(int, data[1:1 + n]))\n\
    total = 0\n\
    for v in values:\n\
        if v > 0:\n\
            total += v\n\
    print(total)\n\
\n\
main()\n";
        assert_eq!(src.lines().filter(|l| !l.trim().is_empty()).count(), 11);
        let v = detect(src, false);
        assert_eq!(v, DegenerationVerdict::none());
    }

    #[test]
    fn repeated_calls_truncated_are_not_gibberish() {
        // a model that keeps calling the same function until it is cut off
        let mut src = String::from("def solve(k):\n    return k * k\n\n");
        for i in 1..=40 {
            src.push_str(&format!("print(solve({i}))\n"));
        }
        src.push_str("print(solve(");
        let v = detect(&src, true);
        assert_eq!(v.kind, DegenerationKind::InfiniteEnumeration);
        let exact = format!(
            "def solve(k):\n    return k\n{}print(solve(",
            "print(solve(1))\n".repeat(30)
        );
        assert_eq!(detect(&exact, true).kind, DegenerationKind::Stuttering);
    }

    #[test]
    fn enumeration_of_conditional_arms() {
        let mut src = String::from("n = int(input())\nif n == 0:\n    print(0)\n");
        for i in 1..30 {
            src.push_str(&format!("elif n == {i}:\n    print({})\n", i * i));
        }
        let v = detect(&src, false);
        assert_eq!(v.kind, DegenerationKind::InfiniteEnumeration);
        assert!(v.evidence.contains("elif n == "), "{}", v.evidence);
    }

    #[test]
    fn stutter_beats_enumeration() {
        let src = "x = 0\n".to_string() + &"f(1)\n".repeat(25);
        assert_eq!(detect(&src, false).kind, DegenerationKind::Stuttering);
    }

    #[test]
    fn stutter_outside_window_ignored() {
        let mut src = "a = 1\n".to_string() + &"b.append(1)\n".repeat(5);
        for i in 0..40u8 {
            let (a, b) = ((b'a' + i % 26) as char, (b'a' + i / 26) as char);
            src.push_str(&format!("v{a}{b} = {i} + w{b}{a}\n"));
        }
        assert_eq!(detect(&src, false).kind, DegenerationKind::None);
    }

    #[test]
    fn four_repeats_is_not_stutter() {
        let src = "a = 1\nb = 2\n".to_string() + &"c.append(1)\n".repeat(4);
        assert_eq!(detect(&src, false).kind, DegenerationKind::None);
    }

    #[test]
    fn gibberish_rules() {
        let prose = "the the cat sat on\nbanana dream of sky\nquantum potato waltz\nx = (";
        let v = detect(prose, false);
        assert_eq!(v.kind, DegenerationKind::Gibberish);
        assert!(v.score > 0.7);
        // mostly code, broken at the end: gibberish only if cut off at the limit
        let cut = "n = int(input())\nfor i in range(n):\n    print(i * (";
        assert_eq!(detect(cut, false).kind, DegenerationKind::None);
        assert_eq!(detect(cut, true).kind, DegenerationKind::Gibberish);
        // prose that still parses is left to execution
        assert_eq!(detect("x = 1\ny = 2", true).kind, DegenerationKind::None);
    }

    #[test]
    fn custom_parse_check() {
        let d = Detector::default();
        let v = d.detect_with("foo bar baz\nqux quux", false, |_| true);
        assert_eq!(v.kind, DegenerationKind::None);
        let v = d.detect_with("foo bar baz\nqux quux", false, |_| false);
        assert_eq!(v.kind, DegenerationKind::Gibberish);
    }

    #[test]
    fn repetition_ratio_examples() {
        assert!((repetition_ratio(&"same\n".repeat(10)) - 0.9).abs() < 1e-12);
        let distinct: String = (0..10).map(|i| format!("l{i}\n")).collect();
        assert_eq!(repetition_ratio(&distinct), 0.0);
        assert!((repetition_ratio(&"A\nB\n".repeat(10)) - 0.9).abs() < 1e-12);
        assert_eq!(repetition_ratio(""), 0.0);
        assert_eq!(repetition_ratio("  x  =  1 \n\nx = 1"), 0.5);
    }

    #[test]
    fn skeletons() {
        assert_eq!(literal_skeleton("print(solve(12))"), "print(solve(0))");
        assert_eq!(literal_skeleton("elif n == 3.5:"), "elif n == 0:");
        assert_eq!(literal_skeleton("d['key'] = \"v\""), "d[\"\"] = \"\"");
        assert_eq!(literal_skeleton("x2 = y10"), "x0 = y0");
        assert_eq!(literal_skeleton("case_12 = 12 * k"), "case_0 = 0 * k");
    }

    #[test]
    fn config_validation() {
        assert!(DegenerationConfig::default().validate().is_ok());
        let bad = DegenerationConfig {
            window_frac: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn appending_the_unit_keeps_stutter(
            header in proptest::collection::vec("[a-z]{1,6} = [0-9]{1,3}", 0..15),
            unit in proptest::collection::vec("[a-z]{1,4}\\([a-z0-9]{0,3}\\)", 1..=3),
            reps in 5usize..12,
            extra in 1usize..20,
        ) {
            let mut src = header.join("\n");
            src.push('\n');
            let block = unit.join("\n") + "\n";
            src.push_str(&block.repeat(reps));
            let before = detect(&src, false);
            prop_assume!(before.kind == DegenerationKind::Stuttering);
            src.push_str(&block.repeat(extra));
            prop_assert_eq!(detect(&src, false).kind, DegenerationKind::Stuttering);
        }

        #[test]
        fn verdict_invariants(src in "[a-z =()0-9\n]{0,200}", truncated in any::<bool>()) {
            let v = detect(&src, truncated);
            prop_assert!((0.0..=1.0).contains(&v.score));
            if v.kind == DegenerationKind::None {
                prop_assert_eq!(v.score, 0.0);
                prop_assert!(v.evidence.is_empty());
            } else {
                prop_assert!(!v.evidence.is_empty());
            }
        }
    }
}
