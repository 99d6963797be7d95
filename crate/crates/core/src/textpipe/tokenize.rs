//! Twitter-aware tokenizer.

use std::sync::LazyLock;

use regex::Regex;

use super::normalize::is_word_char;

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^<[A-Za-z]+>").unwrap());
static EMOTICON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:[8:=;]['`\-]?(?:[)d]+|p+|\(+|[/|l*])|[()]+['`\-]?[8:=;])$").unwrap()
});

/// True for angle-bracket marker tokens such as `<url>`.
pub fn is_marker(tok: &str) -> bool {
    MARKER.find(tok).is_some_and(|m| m.end() == tok.len())
}

/// Splits text into tokens.
///
/// Whitespace separates chunks. A chunk that is entirely an emoticon stays
/// whole; otherwise it is scanned into markers, words (with inner apostrophes
/// or hyphens, e.g. `don't`) and runs of other symbols.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if EMOTICON.is_match(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        scan_chunk(chunk, &mut out);
    }
    out
}

fn scan_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut i = 0;
    while i < chunk.len() {
        let rest = &chunk[i..];
        if let Some(m) = MARKER.find(rest) {
            out.push(m.as_str().to_string());
            i += m.end();
            continue;
        }
        let c = rest.chars().next().unwrap();
        let len = if is_word_char(c) {
            word_len(rest)
        } else {
            punct_len(rest)
        };
        out.push(rest[..len].to_string());
        i += len;
    }
}

fn word_len(s: &str) -> usize {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut j = 0;
    loop {
        while j < chars.len() && is_word_char(chars[j].1) {
            j += 1;
        }
        // Continue across a joiner only if a word character follows it.
        let joiner = j < chars.len() && matches!(chars[j].1, '\'' | '\u{2019}' | '-');
        if joiner && j + 1 < chars.len() && is_word_char(chars[j + 1].1) {
            j += 1;
        } else {
            break;
        }
    }
    chars.get(j).map_or(s.len(), |&(b, _)| b)
}

fn punct_len(s: &str) -> usize {
    let mut end = 0;
    for (b, c) in s.char_indices() {
        if is_word_char(c) || (b > 0 && MARKER.is_match(&s[b..])) {
            break;
        }
        end = b + c.len_utf8();
    }
    end
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn markers_preserved() {
        assert_eq!(
            toks("check <url> <user> <smile>"),
            ["check", "<url>", "<user>", "<smile>"]
        );
        assert_eq!(toks("<heart><number>"), ["<heart>", "<number>"]);
    }

    #[test]
    fn contractions_and_punctuation() {
        assert_eq!(toks("don't stop"), ["don't", "stop"]);
        assert_eq!(toks("wait... what?!"), ["wait", "...", "what", "?!"]);
        assert_eq!(toks("(hello),"), ["(", "hello", "),"]);
        assert_eq!(toks("'quoted'"), ["'", "quoted", "'"]);
        assert_eq!(toks("rock-n-roll e-"), ["rock-n-roll", "e", "-"]);
    }

    #[test]
    fn emoticon_chunks_whole() {
        assert_eq!(toks("hi :-) there"), ["hi", ":-)", "there"]);
        assert_eq!(toks("hi:)"), ["hi", ":)"]);
    }

    #[test]
    fn empty() {
        assert!(toks("").is_empty());
        assert!(toks("   ").is_empty());
    }

    #[test]
    fn marker_detection() {
        assert!(is_marker("<url>"));
        assert!(!is_marker("<url>x"));
        assert!(!is_marker("<"));
    }
}
