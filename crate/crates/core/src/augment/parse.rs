use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::AugmentError;

static LIST_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:\d{1,3}[.):]|\(\d{1,3}\)|[-*•–])\s+(.+)$").expect("valid regex")
});

fn strip_quotes(s: &str) -> &str {
    let pairs = [('"', '"'), ('“', '”'), ('\'', '\''), ('«', '»'), ('„', '“')];
    for (open, close) in pairs {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

/// Extracts up to `expected_n` candidate texts from a completion.
///
/// If any line looks like a numbered or bulleted item, only such items are
/// taken (surrounding chatter is ignored); otherwise every non-empty line is
/// a candidate. Markers and wrapping quotes are stripped and exact
/// duplicates dropped.
pub fn parse_llm_response(raw: &str, expected_n: usize) -> Result<Vec<String>, AugmentError> {
    let lines: Vec<&str> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let items: Vec<&str> = lines
        .iter()
        .filter_map(|l| LIST_ITEM.captures(l).map(|c| c.get(1).expect("group").as_str()))
        .collect();
    let candidates: Vec<&str> = if items.is_empty() {
        lines.into_iter().filter(|l| !l.ends_with(':')).collect()
    } else {
        items
    };

    let mut seen = HashSet::new();
    let out: Vec<String> = candidates
        .into_iter()
        .map(|c| strip_quotes(c.trim()))
        .filter(|c| !c.is_empty())
        .filter(|c| seen.insert(c.to_string()))
        .take(expected_n)
        .map(str::to_string)
        .collect();
    if out.is_empty() {
        return Err(AugmentError::UnparseableResponse);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbered_list() {
        assert_eq!(parse_llm_response("1. a\n2. b\n3. c", 3).unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn bengali_variants() {
        let raw = "Here are three samples:\n\
                   1. \"বালের শিক্ষা মন্ত্রী খুব বেশি মন্ত্রণা করে।\"\n\
                   2. \"বালের শিক্ষা মন্ত্রী শিক্ষার ক্ষেত্রে কাজ করে।\"\n\
                   3. \"বালের শিক্ষা মন্ত্রী প্রশাসনিক কাজে নিয়োজিত।\"\n";
        let out = parse_llm_response(raw, 3).unwrap();
        assert_eq!(
            out,
            vec![
                "বালের শিক্ষা মন্ত্রী খুব বেশি মন্ত্রণা করে।",
                "বালের শিক্ষা মন্ত্রী শিক্ষার ক্ষেত্রে কাজ করে।",
                "বালের শিক্ষা মন্ত্রী প্রশাসনিক কাজে নিয়োজিত।",
            ]
        );
    }

    #[test]
    fn bullets_and_plain_lines() {
        assert_eq!(parse_llm_response("- x\n* y\n• z", 5).unwrap(), vec!["x", "y", "z"]);
        assert_eq!(
            parse_llm_response("Sure:\nfirst\n\nsecond\n", 5).unwrap(),
            vec!["first", "second"]
        );
    }

    #[test]
    fn dedup_and_truncate() {
        assert_eq!(parse_llm_response("1. a\n2. a\n3. b\n4. c", 2).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn empty_is_unparseable() {
        assert!(matches!(parse_llm_response("", 3), Err(AugmentError::UnparseableResponse)));
        assert!(matches!(
            parse_llm_response("1. \"\"\n", 3),
            Err(AugmentError::UnparseableResponse)
        ));
    }
}
