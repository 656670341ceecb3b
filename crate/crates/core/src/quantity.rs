//! Numeric quantities in measurement text: points, ranges and inequality
//! limits with an optional trailing unit.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{self, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Magnitude {
    Point(f64),
    Range { lo: f64, hi: f64 },
    Limit { direction: Direction, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub magnitude: Magnitude,
    pub unit: Option<&'static Unit>,
}

impl Quantity {
    pub fn kind(&self) -> &'static str {
        match self.magnitude {
            Magnitude::Point(_) => "point",
            Magnitude::Range { .. } => "range",
            Magnitude::Limit { .. } => "limit",
        }
    }

    /// The single number a reader would quote: the point value, the range
    /// midpoint or the limit bound.
    pub fn headline(&self) -> f64 {
        match self.magnitude {
            Magnitude::Point(v) => v,
            Magnitude::Range { lo, hi } => 0.5 * (lo + hi),
            Magnitude::Limit { bound, .. } => bound,
        }
    }

    pub fn unit_symbol(&self) -> &'static str {
        self.unit.map_or("", |u| u.symbol)
    }
}

/// A quantity located inside a larger text.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub quantity: Quantity,
    pub span: Range<usize>,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^([+\-−]?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][+\-−]?\d+)?)(?:\s*[×x*]\s*10(?:\^|\*\*)\(?([+\-−]?\d+)\)?)?",
        )
        .expect("number regex")
    })
}

fn prev_char(text: &str, pos: usize) -> Option<char> {
    text[..pos].chars().next_back()
}

fn starts_number(text: &str, pos: usize) -> bool {
    let rest = &text[pos..];
    let Some(c) = rest.chars().next() else { return false };
    let numeric_start = c.is_ascii_digit()
        || (matches!(c, '+' | '-' | '−' | '.') && rest[c.len_utf8()..].starts_with(|d: char| d.is_ascii_digit()));
    numeric_start && prev_char(text, pos).is_none_or(|p| !p.is_alphanumeric() && p != '.' && p != '_')
}

/// Reads one number starting exactly at `pos`. Returns the value and the end offset.
pub fn number_at(text: &str, pos: usize) -> Option<(f64, usize)> {
    let m = number_re().captures(&text[pos..])?;
    let mantissa = m.get(1)?.as_str().replace('−', "-");
    let literal = match m.get(2) {
        Some(exp) => format!("{mantissa}e{}", exp.as_str().replace('−', "-")),
        None => mantissa,
    };
    let value: f64 = literal.parse().ok()?;
    let end = pos + m.get(0)?.end();
    value.is_finite().then_some((value, end))
}

/// Every standalone number in `text` with its byte span, left to right.
///
/// Digits glued to letters (`Td5`, `PA6`) are not numbers.
pub fn find_numbers(text: &str) -> Vec<(Range<usize>, f64)> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        if starts_number(text, pos) {
            if let Some((v, end)) = number_at(text, pos) {
                out.push((pos..end, v));
                pos = end;
                continue;
            }
        }
        pos += text[pos..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

fn skip_ws(text: &str, mut pos: usize) -> usize {
    while let Some(c) = text[pos..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        pos += c.len_utf8();
    }
    pos
}

fn eat<'a>(text: &str, pos: usize, options: &[&'a str]) -> Option<(&'a str, usize)> {
    options
        .iter()
        .find(|o| text[pos..].starts_with(**o))
        .map(|o| (*o, pos + o.len()))
}

fn eat_unit(text: &str, pos: usize) -> (Option<&'static Unit>, usize) {
    let at = skip_ws(text, pos);
    match units::match_prefix(&text[at..]) {
        Some((u, len)) => (Some(u), at + len),
        None => (None, pos),
    }
}

fn eat_tolerance(text: &str, pos: usize) -> usize {
    let at = skip_ws(text, pos);
    if let Some((_, after)) = eat(text, at, &["±", "+/-", "+-"]) {
        let at = skip_ws(text, after);
        if let Some((_, end)) = number_at(text, at) {
            return end;
        }
    }
    pos
}

const COMPARATORS: &[(&str, Direction)] = &[
    (">=", Direction::Greater),
    ("<=", Direction::Less),
    ("≥", Direction::Greater),
    ("⩾", Direction::Greater),
    ("≤", Direction::Less),
    ("⩽", Direction::Less),
    (">", Direction::Greater),
    ("<", Direction::Less),
];

/// Applies the quantity grammar at `start`. `Ok(None)` means nothing
/// numeric begins here; `Err` means something numeric began but is invalid.
fn grammar_at(text: &str, start: usize) -> Result<Option<Located>> {
    let fail = || Error::ParseFailure(text.to_string());
    let mut pos = start;
    let mut direction = None;
    for (sym, dir) in COMPARATORS {
        if text[pos..].starts_with(sym) {
            direction = Some(*dir);
            pos = skip_ws(text, pos + sym.len());
            break;
        }
    }
    if direction.is_none() && !starts_number(text, pos) {
        return Ok(None);
    }
    let Some((first, end)) = number_at(text, pos) else {
        return if direction.is_some() { Err(fail()) } else { Ok(None) };
    };
    pos = eat_tolerance(text, end);
    let (unit_a, after_unit) = eat_unit(text, pos);
    pos = after_unit;

    if let Some(direction) = direction {
        let q = Quantity {
            magnitude: Magnitude::Limit { direction, bound: first },
            unit: unit_a,
        };
        return Ok(Some(Located { quantity: q, span: start..pos }));
    }

    // Range separator; a bare hyphen only counts when a number follows.
    let sep_at = skip_ws(text, pos);
    let second = eat(text, sep_at, &["–", "\u{2014}", "-", "to "]).and_then(|(_, after)| {
        let at = skip_ws(text, after);
        number_at(text, at)
    });
    if let Some((second, end)) = second {
        let pos2 = eat_tolerance(text, end);
        let (unit_b, end) = eat_unit(text, pos2);
        let unit = match (unit_a, unit_b) {
            (Some(a), Some(b)) if a != b => return Err(fail()),
            (a, b) => a.or(b),
        };
        if !(first < second) {
            return Err(fail());
        }
        let q = Quantity {
            magnitude: Magnitude::Range { lo: first, hi: second },
            unit,
        };
        return Ok(Some(Located { quantity: q, span: start..end }));
    }

    let q = Quantity {
        magnitude: Magnitude::Point(first),
        unit: unit_a,
    };
    Ok(Some(Located { quantity: q, span: start..pos }))
}

/// Parses a span that must consist of exactly one quantity.
///
/// Trailing sentence punctuation is tolerated; any other leftover text
/// (prose, a second number) makes the span ambiguous.
pub fn parse_quantity(text: &str) -> Result<Quantity> {
    let trimmed = text.trim().trim_end_matches(['.', ',', ';']).trim_end();
    let fail = || Error::ParseFailure(text.to_string());
    match grammar_at(trimmed, 0)? {
        Some(found) if found.span.end == trimmed.len() => Ok(found.quantity),
        _ => Err(fail()),
    }
}

/// Finds the first quantity in free text; whatever follows it (test
/// conditions, remarks) is ignored.
pub fn scan_quantity(text: &str) -> Result<Located> {
    let mut pos = 0;
    while pos < text.len() {
        if let Some(found) = grammar_at(text, pos)? {
            return Ok(found);
        }
        pos += text[pos..].chars().next().map_or(1, char::len_utf8);
    }
    Err(Error::ParseFailure(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(sym: &str) -> Option<&'static Unit> {
        units::by_symbol(sym)
    }

    #[test]
    fn point_range_limit() {
        let q = parse_quantity("105 °C").unwrap();
        assert_eq!(q.magnitude, Magnitude::Point(105.0));
        assert_eq!(q.unit, unit("°C"));

        let q = parse_quantity("150–160 MPa").unwrap();
        assert_eq!(q.magnitude, Magnitude::Range { lo: 150.0, hi: 160.0 });
        assert_eq!(q.unit, unit("MPa"));

        let q = parse_quantity(">200 MPa").unwrap();
        assert_eq!(
            q.magnitude,
            Magnitude::Limit {
                direction: Direction::Greater,
                bound: 200.0
            }
        );
    }

    #[test]
    fn grammar_variants() {
        assert_eq!(parse_quantity("150-160 MPa").unwrap().magnitude, Magnitude::Range { lo: 150.0, hi: 160.0 });
        assert_eq!(parse_quantity("150 to 160 MPa").unwrap().magnitude, Magnitude::Range { lo: 150.0, hi: 160.0 });
        assert_eq!(parse_quantity("150 MPa – 160 MPa").unwrap().unit, unit("MPa"));
        assert_eq!(parse_quantity("105 ± 3 °C").unwrap().magnitude, Magnitude::Point(105.0));
        assert_eq!(parse_quantity("105 +/- 3 °C").unwrap().magnitude, Magnitude::Point(105.0));
        assert_eq!(parse_quantity("1.2e-3 S/cm").unwrap().magnitude, Magnitude::Point(1.2e-3));
        assert_eq!(parse_quantity("8.5 × 10^4 g/mol").unwrap().magnitude, Magnitude::Point(85000.0));
        assert_eq!(parse_quantity("−20 °C").unwrap().magnitude, Magnitude::Point(-20.0));
        assert_eq!(parse_quantity("≤ 0.5 %").unwrap().kind(), "limit");
        assert_eq!(parse_quantity("2.4").unwrap().unit, None);
        assert_eq!(parse_quantity("2.4 GPa.").unwrap().unit, unit("GPa"));
    }

    #[test]
    fn failures() {
        assert!(parse_quantity("").is_err());
        assert!(parse_quantity("no number here").is_err());
        assert!(parse_quantity("105 110").is_err());
        assert!(parse_quantity("160–150 MPa").is_err());
        assert!(parse_quantity("150 MPa – 160 GPa").is_err());
        assert!(parse_quantity("around 100–110 °C, depending on tacticity").is_err());
        assert!(parse_quantity(">").is_err());
    }

    #[test]
    fn scan_skips_leading_prose_and_trailing_conditions() {
        let found = scan_quantity("about 45 MPa at 25 °C").unwrap();
        assert_eq!(found.quantity.magnitude, Magnitude::Point(45.0));
        assert_eq!(found.quantity.unit, unit("MPa"));
        assert_eq!(&"about 45 MPa at 25 °C"[found.span], "45 MPa");

        let found = scan_quantity("0.85·φ + 42 MPa").unwrap();
        assert_eq!(found.quantity.magnitude, Magnitude::Point(0.85));
        assert_eq!(found.quantity.unit, None);
    }

    #[test]
    fn glued_digits_are_not_numbers() {
        let nums: Vec<f64> = find_numbers("Td5 of PA6 was 350 °C, 5 wt%").into_iter().map(|(_, v)| v).collect();
        assert_eq!(nums, [350.0, 5.0]);
        let nums: Vec<f64> = find_numbers("150-160").into_iter().map(|(_, v)| v).collect();
        assert_eq!(nums, [150.0, 160.0]);
    }

    proptest! {
        #[test]
        fn never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_quantity(&text);
            let _ = scan_quantity(&text);
            let _ = find_numbers(&text);
        }

        #[test]
        fn never_panics_on_quantity_like_text(text in "[0-9 .,eE×x^\\-–<>≥±°CKMPa%/()toμ]{0,24}") {
            let _ = parse_quantity(&text);
            let _ = scan_quantity(&text);
        }
    }
}
