//! Extraction and canonicalisation of numbers written in answers.
//!
//! Recognised forms: digit literals with optional sign, leading currency
//! symbol, comma thousands separators and decimal point; attached suffixes
//! `k`, `m`/`mn`, `b`/`bn`; following words `hundred`, `thousand`, `million`,
//! `billion`; number words (`zero` .. `ninety`, compounds such as
//! `twenty one`, with `hundred` and the scale words); percentages via `%` or
//! `percent`, which divide by 100.

use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalNumber {
    pub value: Decimal,
    /// The text the number was read from.
    pub origin_form: String,
}

impl CanonicalNumber {
    /// Plain decimal rendering without trailing zeros, e.g. `17000`, `0.97`.
    pub fn canonical(&self) -> String {
        self.value.normalize().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: Decimal, scaled: bool },
    Word(String),
    Percent,
}

#[derive(Debug, Clone)]
struct Span {
    tok: Tok,
    start: usize,
    end: usize,
}

static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?P<num>[-−]?[$€£¥₹]?[-−]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)[A-Za-z]*)|(?P<word>[A-Za-z]+)|(?P<pct>%)")
        .unwrap()
});
static GROUPED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{1,3}(?:,\d{3})+(?:\.\d+)?$").unwrap());

fn suffix_scale(tail: &str) -> Option<Option<Decimal>> {
    match tail.to_ascii_lowercase().as_str() {
        "" => Some(None),
        "k" | "thousand" => Some(Some(Decimal::from(1_000))),
        "m" | "mn" | "mil" | "million" => Some(Some(Decimal::from(1_000_000))),
        "b" | "bn" | "billion" => Some(Some(Decimal::from(1_000_000_000))),
        _ => None,
    }
}

fn scale_word(w: &str) -> Option<Decimal> {
    match w {
        "thousand" => Some(Decimal::from(1_000)),
        "million" => Some(Decimal::from(1_000_000)),
        "billion" => Some(Decimal::from(1_000_000_000)),
        _ => None,
    }
}

fn small_word(w: &str) -> Option<u32> {
    const UNITS: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
        "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    ];
    const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
    if let Some(i) = UNITS.iter().position(|u| *u == w) {
        return Some(i as u32);
    }
    TENS.iter().position(|t| *t == w).map(|i| (i as u32 + 2) * 10)
}

fn is_percent_word(w: &str) -> bool {
    matches!(w, "percent" | "pct" | "percentage")
}

fn tokenize(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    for m in TOKEN.captures_iter(text) {
        let whole = m.get(0).unwrap();
        if let Some(w) = m.name("word") {
            out.push(Span {
                tok: Tok::Word(w.as_str().to_ascii_lowercase()),
                start: w.start(),
                end: w.end(),
            });
        } else if m.name("pct").is_some() {
            out.push(Span {
                tok: Tok::Percent,
                start: whole.start(),
                end: whole.end(),
            });
        } else if let Some(n) = m.name("num") {
            push_numeric(text, n.start(), n.as_str(), &mut out);
        }
    }
    out
}

fn push_numeric(text: &str, start: usize, raw: &str, out: &mut Vec<Span>) {
    let mut s = raw;
    let mut offset = start;
    let mut negative = false;
    let follows_word = text[..start].chars().last().is_some_and(|c| c.is_alphanumeric());
    loop {
        if let Some(rest) = s.strip_prefix(['-', '−']) {
            negative = !follows_word;
            offset += s.len() - rest.len();
            s = rest;
        } else if let Some(rest) = s.strip_prefix(['$', '€', '£', '¥', '₹']) {
            offset += s.len() - rest.len();
            s = rest;
        } else {
            break;
        }
    }
    let digits_end = s
        .char_indices()
        .find(|(_, c)| c.is_ascii_alphabetic())
        .map_or(s.len(), |(i, _)| i);
    let (digits, tail) = s.split_at(digits_end);
    let digits = digits.trim_end_matches(',');
    let Some(scale) = suffix_scale(tail) else {
        // unknown unit glued on ("17km", "5th"): keep the bare number
        push_plain(digits, offset, negative, out);
        return;
    };
    let end = if scale.is_some() {
        offset + s.len()
    } else {
        offset + digits.len()
    };
    if digits.contains(',') && !GROUPED.is_match(digits) {
        // not a thousands grouping: a list like "1,2,3"
        let mut pos = offset;
        for piece in digits.split(',') {
            push_plain(piece, pos, false, out);
            pos += piece.len() + 1;
        }
        return;
    }
    let Ok(mut value) = Decimal::from_str(&digits.replace(',', "")) else { return };
    if let Some(sc) = scale {
        match value.checked_mul(sc) {
            Some(v) => value = v,
            None => return,
        }
    }
    if negative {
        value = -value;
    }
    out.push(Span {
        tok: Tok::Num {
            value,
            scaled: scale.is_some(),
        },
        start,
        end,
    });
}

fn push_plain(digits: &str, offset: usize, negative: bool, out: &mut Vec<Span>) {
    if digits.is_empty() {
        return;
    }
    if let Ok(mut value) = Decimal::from_str(&digits.replace(',', "")) {
        if negative {
            value = -value;
        }
        out.push(Span {
            tok: Tok::Num { value, scaled: false },
            start: offset,
            end: offset + digits.len(),
        });
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Last {
    None,
    Unit,
    Teen,
    Tens,
    Hundred,
    Scale,
}

/// Parses a run of number words starting at `toks[i]`; returns the value and
/// the index one past the last consumed token.
fn parse_words(toks: &[Span], i: usize) -> Option<(Decimal, usize)> {
    let mut total = Decimal::ZERO;
    let mut current = Decimal::ZERO;
    let mut last = Last::None;
    let mut j = i;
    let mut consumed = i;
    while j < toks.len() {
        let Tok::Word(w) = &toks[j].tok else { break };
        if let Some(v) = small_word(w) {
            let kind = match v {
                0..=9 => Last::Unit,
                10..=19 => Last::Teen,
                _ => Last::Tens,
            };
            let ok = match last {
                Last::None | Last::Hundred | Last::Scale => true,
                Last::Tens => kind == Last::Unit && v > 0,
                _ => false,
            };
            if !ok {
                break;
            }
            current += Decimal::from(v);
            last = kind;
        } else if w == "hundred" && matches!(last, Last::Unit | Last::Teen | Last::Tens) {
            current *= Decimal::from(100);
            last = Last::Hundred;
        } else if let Some(sc) = scale_word(w).filter(|_| matches!(last, Last::Unit | Last::Teen | Last::Tens | Last::Hundred)) {
            total += current.checked_mul(sc)?;
            current = Decimal::ZERO;
            last = Last::Scale;
        } else if w == "and"
            && matches!(last, Last::Hundred | Last::Scale)
            && matches!(toks.get(j + 1).map(|t| &t.tok), Some(Tok::Word(n)) if small_word(n).is_some())
        {
            j += 1;
            continue;
        } else {
            break;
        }
        j += 1;
        consumed = j;
    }
    (last != Last::None).then_some((total + current, consumed))
}

/// Every number in `text`, in order, with the byte range each was read from.
fn extract_spans(text: &str) -> Vec<(CanonicalNumber, usize, usize)> {
    let toks = tokenize(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let start = toks[i].start;
        let (mut value, mut next) = match &toks[i].tok {
            Tok::Num { value, scaled } => {
                let mut v = *value;
                let mut n = i + 1;
                if !scaled {
                    if let Some(Tok::Word(w)) = toks.get(n).map(|t| &t.tok) {
                        let factor = if w == "hundred" { Some(Decimal::from(100)) } else { scale_word(w) };
                        if let Some(f) = factor.and_then(|f| v.checked_mul(f)) {
                            v = f;
                            n += 1;
                        }
                    }
                }
                (v, n)
            }
            Tok::Word(_) => match parse_words(&toks, i) {
                Some(r) => r,
                None => {
                    i += 1;
                    continue;
                }
            },
            Tok::Percent => {
                i += 1;
                continue;
            }
        };
        match toks.get(next).map(|t| &t.tok) {
            Some(Tok::Percent) => {
                value /= Decimal::from(100);
                next += 1;
            }
            Some(Tok::Word(w)) if is_percent_word(w) => {
                value /= Decimal::from(100);
                next += 1;
            }
            _ => {}
        }
        let end = toks[next - 1].end;
        out.push((
            CanonicalNumber {
                value,
                origin_form: text[start..end].to_string(),
            },
            start,
            end,
        ));
        i = next;
    }
    out
}

/// All numbers in `text`.
pub fn extract_numbers(text: &str) -> Vec<CanonicalNumber> {
    extract_spans(text).into_iter().map(|(n, _, _)| n).collect()
}

/// The first number in `text`, if any.
pub fn normalize_number(text: &str) -> Option<CanonicalNumber> {
    extract_spans(text).into_iter().next().map(|(n, _, _)| n)
}

/// The number `text` consists of, when it is nothing but one number
/// (currency symbols, whitespace and punctuation aside).
pub fn parse_whole_number(text: &str) -> Option<CanonicalNumber> {
    let spans = extract_spans(text);
    let [(n, start, end)] = spans.as_slice() else { return None };
    let rest = format!("{}{}", &text[..*start], &text[*end..]);
    if rest.chars().any(char::is_alphanumeric) {
        return None;
    }
    Some(n.clone())
}

pub fn is_numeric_answer(gold: &str) -> bool {
    parse_whole_number(gold).is_some()
}

/// Whether some number in `pred` equals the gold number. `rel_tol == 0.0`
/// compares exact decimals.
pub fn numeric_match(pred: &str, gold: &str, rel_tol: f64) -> bool {
    let Some(g) = parse_whole_number(gold).or_else(|| normalize_number(gold)) else { return false };
    extract_numbers(pred).iter().any(|p| {
        if rel_tol == 0.0 {
            p.value == g.value
        } else {
            use rust_decimal::prelude::ToPrimitive;
            let (pv, gv) = (p.value.to_f64().unwrap_or(f64::NAN), g.value.to_f64().unwrap_or(f64::NAN));
            (pv - gv).abs() <= rel_tol * gv.abs()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(s: &str) -> String {
        normalize_number(s).map(|n| n.canonical()).unwrap_or_else(|| "none".into())
    }

    #[test]
    fn stated_conversions() {
        assert_eq!(val("17k"), "17000");
        assert_eq!(val("2.5 million"), "2500000");
        assert_eq!(val("97%"), "0.97");
    }

    #[test]
    fn words_and_separators() {
        assert_eq!(val("three"), "3");
        assert_eq!(val("twenty-one"), "21");
        assert_eq!(val("twenty one thousand"), "21000");
        assert_eq!(val("one hundred and five"), "105");
        assert_eq!(val("$1,234,567.50"), "1234567.5");
        assert_eq!(val("-4.5"), "-4.5");
        assert_eq!(val("no digits here"), "none");
    }

    #[test]
    fn lists_and_ranges() {
        let v: Vec<String> = extract_numbers("pages 3-5 and 1,2").iter().map(|n| n.canonical()).collect();
        assert_eq!(v, vec!["3", "5", "1", "2"]);
        let v: Vec<String> = extract_numbers("one two").iter().map(|n| n.canonical()).collect();
        assert_eq!(v, vec!["1", "2"]);
    }

    #[test]
    fn whole_number_detection() {
        assert!(is_numeric_answer("17k"));
        assert!(is_numeric_answer(" $2.5 million. "));
        assert!(!is_numeric_answer("Business under-performance"));
        assert!(!is_numeric_answer("2019 revenue"));
    }

    #[test]
    fn matching() {
        assert!(numeric_match("about 17,000 units", "17k", 0.0));
        assert!(numeric_match("three", "3", 0.0));
        assert!(!numeric_match("16999", "17k", 0.0));
        assert!(numeric_match("16999", "17k", 0.001));
    }

    #[test]
    fn canonical_is_fixed_point() {
        for s in ["17k", "2.5 million", "97%", "0.5", "-3", "1,000,000"] {
            let c = normalize_number(s).unwrap().canonical();
            assert_eq!(normalize_number(&c).unwrap().canonical(), c);
        }
    }
}
