//! Lenient parsing of the headed-section markdown the agents are asked to produce.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;

/// Recognises `name` as a heading at the start of `line` and returns the rest
/// of the line. Accepted forms: `# Name`, `**Name**`, `**Name:** rest`,
/// `Name: rest`, and a bare `Name` line.
fn heading_rest<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let trimmed = line.trim();
    let had_hash = trimmed.starts_with('#');
    let s = trimmed.trim_start_matches('#').trim_start();
    let s = s.trim_start_matches(['-', '•']).trim_start();
    let emphasised = s.starts_with("**") || s.starts_with("__");
    let s = s.trim_start_matches(['*', '_']);
    if s.len() < name.len() || !s.is_char_boundary(name.len()) || !s[..name.len()].eq_ignore_ascii_case(name) {
        return None;
    }
    let rest = &s[name.len()..];
    if rest.chars().next().is_some_and(|c| c.is_alphanumeric()) {
        return None;
    }
    let rest = rest.trim_start_matches(['*', '_']);
    let colon = rest.trim_start().starts_with(':');
    let rest = rest.trim_start().trim_start_matches(':').trim_start_matches(['*', '_']).trim();
    if had_hash || emphasised || colon || rest.is_empty() {
        Some(rest)
    } else {
        None
    }
}

/// Splits `text` into the named sections. Keys are the names as given;
/// sections that never appear are absent from the map.
pub(crate) fn parse_sections(text: &str, names: &[&str]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for line in text.lines() {
        // longer names first so "Structure Overview" is not mistaken for a prefix match
        let hit = names
            .iter()
            .filter_map(|n| heading_rest(line, n).map(|rest| (*n, rest)))
            .max_by_key(|(n, _)| n.len());
        if let Some((name, rest)) = hit {
            current = Some(name);
            let entry = out.entry(name.to_string()).or_default();
            if !rest.is_empty() {
                entry.push(rest.to_string());
            }
        } else if let Some(name) = current {
            out.entry(name.to_string()).or_default().push(line.to_string());
        }
    }
    out.into_iter()
        .map(|(k, lines)| (k, lines.join("\n").trim().to_string()))
        .collect()
}

pub(crate) fn strip_emphasis(s: &str) -> String {
    s.trim()
        .trim_matches(|c| c == '*' || c == '_')
        .trim()
        .to_string()
}

/// Bullet items of a list section; non-bullet continuation lines are appended
/// to the previous item.
pub(crate) fn bullet_items(section: &str) -> Vec<String> {
    static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[-*•+]|\d+[.)])\s+(.*)$").unwrap());
    let mut items: Vec<String> = Vec::new();
    for line in section.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = BULLET.captures(line) {
            items.push(strip_emphasis(&c[1]));
        } else if let Some(last) = items.last_mut() {
            last.push(' ');
            last.push_str(line.trim());
        } else {
            items.push(strip_emphasis(line));
        }
    }
    items.retain(|s| !s.is_empty());
    items
}

/// `(page, description)` pairs from a structure-overview list, first
/// occurrence of each page kept.
pub(crate) fn slide_lines(section: &str) -> Vec<(u32, String)> {
    static SLIDE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"(?i)^\s*(?:[-*•+]\s*)?(?:\*\*|__)?\s*(?:slide|page)\s*(\d+)\s*(?:\*\*|__)?\s*[:\-–—]?\s*(?:\*\*|__)?\s*(.*)$")
            .unwrap()
    });
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in section.lines() {
        if let Some(c) = SLIDE.captures(line) {
            let Ok(page) = c[1].parse::<u32>() else { continue };
            if seen.insert(page) {
                out.push((page, strip_emphasis(&c[2])));
            }
        }
    }
    out
}

/// Page numbers mentioned as "page N" / "slide N" / "pages N".
pub(crate) fn page_mentions(text: &str) -> BTreeSet<u32> {
    static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:page|slide)s?\s+(\d+)").unwrap());
    MENTION
        .captures_iter(text)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

/// First paragraph of `text`, ignoring a leading heading line.
pub(crate) fn first_paragraph(text: &str) -> String {
    let mut lines = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() {
            if lines.is_empty() {
                continue;
            }
            break;
        }
        if lines.is_empty() && t.starts_with('#') {
            continue;
        }
        lines.push(t);
    }
    strip_emphasis(&lines.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_forms() {
        assert_eq!(heading_rest("**Title**", "Title"), Some(""));
        assert_eq!(heading_rest("## Title", "Title"), Some(""));
        assert_eq!(heading_rest("**Title:** Deck", "Title"), Some("Deck"));
        assert_eq!(heading_rest("**Title** Deck", "Title"), Some("Deck"));
        assert_eq!(heading_rest("Tone: upbeat", "Tone"), Some("upbeat"));
        assert_eq!(heading_rest("Tone of the talk is dry", "Tone"), None);
        assert_eq!(heading_rest("Titles", "Title"), None);
    }

    #[test]
    fn sections_and_lists() {
        let md = "**Title**\nDeck\n\n**Key Insights**\n- one\n- two\n  continues\n**Tone** calm";
        let s = parse_sections(md, &["Title", "Key Insights", "Tone"]);
        assert_eq!(s["Title"], "Deck");
        assert_eq!(s["Tone"], "calm");
        assert_eq!(bullet_items(&s["Key Insights"]), vec!["one", "two continues"]);
    }

    #[test]
    fn slide_lines_dedup() {
        let s = "- **Slide 1**: intro\n- **Slide 2**: body\n- Slide 1: again";
        assert_eq!(
            slide_lines(s),
            vec![(1, "intro".to_string()), (2, "body".to_string())]
        );
    }

    #[test]
    fn mentions() {
        let m = page_mentions("see page 3 and slides 5, also Page 12");
        assert_eq!(m.into_iter().collect::<Vec<_>>(), vec![3, 5, 12]);
    }
}
