//! Final-answer extraction and comparison.

use serde::{Deserialize, Serialize};

const RELATIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Extracted answer equals the gold string after trimming.
    pub strict: bool,
    /// Answers agree after normalization and numeric comparison.
    pub normalized: bool,
    pub extracted: String,
}

/// Contents of the last `\boxed{...}` in `text`, with nested braces matched.
pub fn extract_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].to_string());
                }
            }
            _ => {}
        }
    }
    None
}

/// Replaces `\text{x}` by `x`, one level of nesting at a time.
fn strip_text_macros(s: &str) -> String {
    let mut out = s.to_string();
    while let Some(pos) = out.find("\\text{") {
        let body_start = pos + "\\text{".len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, ch) in out[body_start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(body_start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                let body = out[body_start..e].to_string();
                out.replace_range(pos..=e, &body);
            }
            None => break,
        }
    }
    out
}

pub fn normalize(answer: &str) -> String {
    let s = strip_text_macros(answer.trim());
    let s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac");
    let s = s.trim().trim_matches('$').trim();
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut digits = 0;
    let mut dots = 0;
    for ch in body.chars() {
        match ch {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if digits == 0 || dots > 1 {
        return None;
    }
    s.parse().ok()
}

fn braced(s: &str) -> Option<(&str, &str)> {
    let rest = s.strip_prefix('{')?;
    let mut depth = 1usize;
    for (i, ch) in rest.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&rest[..i], &rest[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

/// Value of an integer, decimal, `a/b` or `\frac{a}{b}` literal.
pub fn parse_number(answer: &str) -> Option<f64> {
    let compact: String = normalize(answer)
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    let (sign, body) = match compact.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, compact.strip_prefix('+').unwrap_or(&compact)),
    };
    if let Some(rest) = body.strip_prefix("\\frac") {
        let (num, rest) = braced(rest)?;
        let (den, rest) = braced(rest)?;
        if !rest.is_empty() {
            return None;
        }
        let (n, d) = (parse_decimal(num)?, parse_decimal(den)?);
        return (d != 0.0).then(|| sign * n / d);
    }
    if let Some((num, den)) = body.split_once('/') {
        let (n, d) = (parse_decimal(num)?, parse_decimal(den)?);
        return (d != 0.0).then(|| sign * n / d);
    }
    parse_decimal(body).map(|v| sign * v)
}

fn numbers_agree(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= RELATIVE_TOLERANCE * a.abs().max(b.abs())
}

/// Compares two answers under the normalization rules.
pub fn answers_match(a: &str, b: &str) -> bool {
    match (parse_number(a), parse_number(b)) {
        (Some(x), Some(y)) => numbers_agree(x, y),
        _ => normalize(a) == normalize(b),
    }
}

/// Checks a model response against the gold answer. Without a `\boxed{}`
/// the whole trimmed response is taken as the answer.
pub fn verify(response: &str, gold: &str) -> Verdict {
    let extracted = extract_boxed(response).unwrap_or_else(|| response.trim().to_string());
    Verdict {
        strict: extracted.trim() == gold.trim(),
        normalized: answers_match(&extracted, gold),
        extracted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_box_with_nesting() {
        let t = r"first \boxed{1} then \boxed{\frac{1}{2}} done";
        assert_eq!(extract_boxed(t).unwrap(), r"\frac{1}{2}");
        assert!(extract_boxed(r"\boxed{open").is_none());
        assert!(extract_boxed("nothing").is_none());
    }

    #[test]
    fn numeric_forms_agree() {
        assert!(answers_match(r"\dfrac{1}{2}", "0.5"));
        assert!(answers_match("1/2", r"\frac{1}{2}"));
        assert!(answers_match(r"-\frac{3}{4}", "-0.75"));
        assert!(answers_match(r"\text{42}", " 42 "));
        assert!(answers_match("1000000000", "1000000000.5"));
        assert!(!answers_match("1", "2"));
        assert!(!answers_match("nan", "NaN "));
    }

    #[test]
    fn string_fallback_collapses_whitespace() {
        assert!(answers_match("x  +   1", "x + 1"));
        assert!(!answers_match("x+1", "x-1"));
        assert_eq!(parse_number("1/0"), None);
    }

    #[test]
    fn strict_and_normalized_verdicts_differ() {
        let v = verify(r"so \boxed{\dfrac{1}{2}}", "0.5");
        assert!(!v.strict);
        assert!(v.normalized);
        let v = verify(r"\boxed{42}", "42");
        assert!(v.strict && v.normalized);
    }
}
