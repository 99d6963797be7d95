//! Deterministic part-of-speech tagger: lexicon lookup, ordered suffix
//! heuristics, a handful of contextual fixes, and `NN` as the fallback.

use std::collections::HashMap;
use std::sync::LazyLock;

use super::tokenize::is_marker;

/// Tag inventory in id order. Id 0 is padding; the last two are the marker
/// tag and the unknown tag.
pub const TAGSET: [&str; 48] = [
    "<pad>", "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS",
    "NNP", "NNPS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH",
    "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", "#", "$", "''", "``",
    "(", ")", ",", ".", ":", "MRK", "UNK",
];

pub const PAD_TAG: u16 = 0;
pub const MRK_TAG: u16 = 46;
pub const UNK_TAG: u16 = 47;

static LEXICON: LazyLock<HashMap<&'static str, u16>> = LazyLock::new(|| {
    include_str!("lexicon.txt")
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (w, t) = l.split_once(' ').expect("lexicon line");
            (w, tag_id(t).expect("lexicon tag"))
        })
        .collect()
});

/// Suffix rules, checked in order; the first match wins.
const SUFFIXES: &[(&str, &str)] = &[
    ("tastic", "JJ"),
    ("ical", "JJ"),
    ("ness", "NN"),
    ("ment", "NN"),
    ("tion", "NN"),
    ("sion", "NN"),
    ("ship", "NN"),
    ("hood", "NN"),
    ("less", "JJ"),
    ("able", "JJ"),
    ("ible", "JJ"),
    ("ing", "VBG"),
    ("ous", "JJ"),
    ("ful", "JJ"),
    ("ive", "JJ"),
    ("ish", "JJ"),
    ("ity", "NN"),
    ("ism", "NN"),
    ("ist", "NN"),
    ("ize", "VB"),
    ("ise", "VB"),
    ("ify", "VB"),
    ("est", "JJS"),
    ("ly", "RB"),
    ("ed", "VBD"),
    ("ic", "JJ"),
    ("al", "JJ"),
];

pub fn tag_id(name: &str) -> Option<u16> {
    TAGSET.iter().position(|&t| t == name).map(|i| i as u16)
}

pub fn tag_name(id: u16) -> &'static str {
    TAGSET.get(id as usize).copied().unwrap_or("UNK")
}

fn id(name: &str) -> u16 {
    tag_id(name).unwrap()
}

fn punct_tag(tok: &str) -> Option<u16> {
    if tok.chars().any(super::normalize::is_word_char) {
        return None;
    }
    let t = if tok.chars().all(|c| matches!(c, '.' | '!' | '?')) {
        "."
    } else {
        match tok {
            "," => ",",
            ":" | ";" | "-" | "--" | "..." => ":",
            "(" | "[" | "{" => "(",
            ")" | "]" | "}" => ")",
            "\"" | "``" | "\u{201c}" => "``",
            "'" | "''" | "\u{201d}" => "''",
            "$" => "$",
            "#" => "#",
            _ => "SYM",
        }
    };
    Some(id(t))
}

fn is_number(tok: &str) -> bool {
    tok.chars().any(|c| c.is_ascii_digit())
        && tok.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | ':'))
}

fn lexical_tag(tok: &str) -> (u16, bool) {
    if is_marker(tok) {
        return (MRK_TAG, true);
    }
    if let Some(t) = punct_tag(tok) {
        return (t, true);
    }
    if is_number(tok) {
        return (id("CD"), true);
    }
    let lower = tok.to_lowercase();
    if let Some(&t) = LEXICON.get(lower.as_str()) {
        return (t, true);
    }
    let n = lower.chars().count();
    for &(suffix, tag) in SUFFIXES {
        if n > suffix.len() + 1 && lower.ends_with(suffix) {
            return (id(tag), false);
        }
    }
    if n > 3 && lower.ends_with('s') && !lower.ends_with("ss") {
        return (id("NNS"), false);
    }
    (id("NN"), false)
}

/// Tags a token sequence; output length always equals input length.
pub fn pos_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<u16> {
    let (nn, nns, vb, vbp, vbz) = (id("NN"), id("NNS"), id("VB"), id("VBP"), id("VBZ"));
    let subjects = [nn, nns, id("NNP"), id("PRP")];
    let mut tags: Vec<u16> = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let (mut tag, known) = lexical_tag(tok.as_ref());
        if let Some(&prev) = tags.last() {
            let prev_name = tag_name(prev);
            // An unknown plural-looking word right after a noun or pronoun is a verb.
            if !known && tag == nns && subjects.contains(&prev) {
                tag = vbz;
            }
            // Base form after "to" or a modal.
            if (prev_name == "TO" || prev_name == "MD") && (tag == vbp || (!known && tag == nn)) {
                tag = vb;
            }
        }
        tags.push(tag);
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(tokens: &[&str]) -> Vec<&'static str> {
        pos_tag(tokens).into_iter().map(tag_name).collect()
    }

    #[test]
    fn tagset_layout() {
        assert_eq!(TAGSET[PAD_TAG as usize], "<pad>");
        assert_eq!(TAGSET[MRK_TAG as usize], "MRK");
        assert_eq!(TAGSET[UNK_TAG as usize], "UNK");
        let mut sorted = TAGSET.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), TAGSET.len());
    }

    #[test]
    fn lexicon_and_context() {
        assert_eq!(names(&["the", "dog", "runs"]), ["DT", "NN", "VBZ"]);
        assert_eq!(names(&["the", "blorps"]), ["DT", "NNS"]);
        assert_eq!(names(&["to", "glorp"]), ["TO", "VB"]);
    }

    #[test]
    fn markers_and_suffixes() {
        assert_eq!(names(&["<url>"]), ["MRK"]);
        assert_eq!(names(&["blorptastic"]), ["JJ"]);
        assert_eq!(names(&["zorbling", "quickly", "zxqv"]), ["VBG", "RB", "NN"]);
        assert_eq!(names(&["!", "?!", ",", "42", ":)"]), [".", ".", ",", "CD", "SYM"]);
    }

    #[test]
    fn length_preserved() {
        assert!(pos_tag::<&str>(&[]).is_empty());
        assert_eq!(pos_tag(&["a"; 17]).len(), 17);
    }

    #[test]
    fn lexicon_parses() {
        assert!(LEXICON.len() > 400);
    }
}
