//! Rule-cascade tweet normalization.
//!
//! Rules run in a fixed order: URLs, user handles, emoticons, hearts,
//! numbers, hashtags, punctuation repeats, elongations, all-caps words, and
//! finally lowercasing with whitespace collapsed. Every rule is written so that
//! its output can never re-trigger an earlier rule, which makes the whole
//! function idempotent.

use std::sync::LazyLock;

use regex::{Captures, Regex};

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)https?://\S+|www\.(?:\w+\.)+\S*").unwrap());
static HANDLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?[.\d]*\d+[:,.\d]*").unwrap());
// A hashtag whose body was a number keeps the number marker as its body.
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(<number>|\w+)").unwrap());
static REPEAT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[!?.]{2,}").unwrap());

const EYES: &str = "[8:=;]";
const NOSE: &str = "['`\\-]?";

/// Emoticon classes in matching order, each anchored at the start of a chunk.
static EMOTICONS: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    let pat = |body: String| Regex::new(&format!("(?i)^(?:{body})")).unwrap();
    vec![
        (
            pat(format!(r"{EYES}{NOSE}[)d]+|\(+{NOSE}{EYES}")),
            "<smile>",
        ),
        (pat(format!("{EYES}{NOSE}p+")), "<lolface>"),
        (
            pat(format!(r"{EYES}{NOSE}\(+|\)+{NOSE}{EYES}")),
            "<sadface>",
        ),
        (pat(format!(r"{EYES}{NOSE}[/|l*]")), "<neutralface>"),
    ]
});

/// Normalization markers emitted by [`normalize`].
pub const MARKERS: [&str; 12] = [
    "<url>",
    "<user>",
    "<smile>",
    "<lolface>",
    "<sadface>",
    "<neutralface>",
    "<heart>",
    "<number>",
    "<hashtag>",
    "<repeat>",
    "<elong>",
    "<allcaps>",
];

/// Normalizes one raw tweet. Total and idempotent.
pub fn normalize(raw: &str) -> String {
    // Only ASCII case is significant to the rules below.
    let mut s: String = raw
        .chars()
        .flat_map(|c| {
            let lower: Vec<char> = if c.is_ascii() {
                vec![c]
            } else {
                c.to_lowercase().collect()
            };
            lower
        })
        .collect();

    s = URL
        .replace_all(&s, |c: &Captures| {
            let m = &c[0];
            let keep = m.trim_end_matches(|ch: char| !is_word_char(ch));
            let scheme_len = m.find("://").map(|p| p + 3).unwrap_or(4);
            if keep.len() <= scheme_len {
                m.to_string()
            } else {
                format!("<url>{}", &m[keep.len()..])
            }
        })
        .into_owned();
    s = HANDLE.replace_all(&s, "<user>").into_owned();
    s = replace_emoticons(&s);
    s = s.replace("<3", "<heart>");
    s = NUMBER.replace_all(&s, "<number>").into_owned();
    s = HASHTAG
        .replace_all(&s, |c: &Captures| {
            let body = &c[1];
            if is_all_caps(body) {
                format!("<hashtag> {} <allcaps>", body.to_ascii_lowercase())
            } else {
                format!("<hashtag> {body}")
            }
        })
        .into_owned();
    s = REPEAT
        .replace_all(&s, |c: &Captures| {
            let last = c[0].chars().last().unwrap();
            format!(" {last} <repeat>")
        })
        .into_owned();
    s = rewrite_runs(&s, mark_elongation);
    s = rewrite_runs(&s, mark_all_caps);

    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// At least two ASCII capitals and no lowercase letter.
fn is_all_caps(s: &str) -> bool {
    s.chars().filter(|c| c.is_ascii_uppercase()).count() >= 2 && !s.chars().any(char::is_lowercase)
}

/// An emoticon must start a whitespace chunk and be followed by the end of the
/// chunk or by sentence punctuation.
fn replace_emoticons(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while !rest.is_empty() {
        let ws = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let chunk = &rest[..end];
        let mut replaced = false;
        for (re, marker) in EMOTICONS.iter() {
            if let Some(m) = re.find(chunk) {
                let tail = &chunk[m.end()..];
                if tail.is_empty() || tail.starts_with(['!', '?', '.']) {
                    out.push_str(marker);
                    out.push_str(tail);
                    replaced = true;
                    break;
                }
            }
        }
        if !replaced {
            out.push_str(chunk);
        }
        rest = &rest[end..];
    }
    out
}

/// Applies `f` to every maximal run of word characters that is not the body of
/// an angle-bracket marker.
fn rewrite_runs(s: &str, f: fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(s.len() + 16);
    let mut chars = s.char_indices().peekable();
    let mut prev: Option<char> = None;
    while let Some((start, c)) = chars.next() {
        if !is_word_char(c) {
            out.push(c);
            prev = Some(c);
            continue;
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, d)) = chars.peek() {
            if !is_word_char(d) {
                break;
            }
            end = i + d.len_utf8();
            chars.next();
        }
        let run = &s[start..end];
        let next = s[end..].chars().next();
        let is_marker = prev == Some('<') && next == Some('>');
        match (is_marker, f(run)) {
            (false, Some(r)) => out.push_str(&r),
            _ => out.push_str(run),
        }
        prev = run.chars().last();
    }
    out
}

/// "soooo" -> "so <elong>": three or more identical trailing letters.
fn mark_elongation(run: &str) -> Option<String> {
    let chars: Vec<char> = run.chars().collect();
    let last = *chars.last()?;
    if !last.is_ascii_alphabetic() {
        return None;
    }
    let reps = chars
        .iter()
        .rev()
        .take_while(|c| c.eq_ignore_ascii_case(&last))
        .count();
    if reps < 3 {
        return None;
    }
    let stem: String = chars[..chars.len() - reps + 1].iter().collect();
    Some(format!("{stem} <elong>"))
}

fn mark_all_caps(run: &str) -> Option<String> {
    is_all_caps(run).then(|| format!("{} <allcaps>", run.to_ascii_lowercase()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_handle_smile() {
        assert_eq!(
            normalize("Check http://a.b/c @bob :)"),
            "check <url> <user> <smile>"
        );
    }

    #[test]
    fn markers_are_fixed_points() {
        assert_eq!(normalize("<url> <user>"), "<url> <user>");
        for m in MARKERS {
            assert_eq!(normalize(m), m);
        }
    }

    #[test]
    fn hashtag_elongation_repeat() {
        assert_eq!(
            normalize("#HPV soooo bad!!!"),
            "<hashtag> hpv <allcaps> so <elong> bad ! <repeat>"
        );
    }

    #[test]
    fn url_trailing_punctuation_kept() {
        assert_eq!(normalize("see https://x.org/a, ok"), "see <url>, ok");
        assert_eq!(normalize("www.cdc.gov/hpv."), "<url>.");
    }

    #[test]
    fn emoticon_classes() {
        assert_eq!(normalize(":-P ;D :( :| <3"), "<lolface> <smile> <sadface> <neutralface> <heart>");
        assert_eq!(normalize("(: ):"), "<smile> <sadface>");
        // Not at a chunk start: left alone.
        assert_eq!(normalize("and:"), "and:");
        assert_eq!(normalize(":)!!"), "<smile> ! <repeat>");
    }

    #[test]
    fn numbers_and_caps() {
        assert_eq!(normalize("got 3 shots in 2018"), "got <number> shots in <number>");
        assert_eq!(normalize("THIS is BIG"), "this <allcaps> is big <allcaps>");
        assert_eq!(normalize("I am"), "i am");
        assert_eq!(normalize("NOOOO"), "no <allcaps> <elong>");
    }

    #[test]
    fn tricky_idempotence_cases() {
        for s in [
            ":)!!abc",
            "soOO",
            "kk\u{212A}",
            "<URL> <HEART>",
            "#2018 #Hpv_Vax",
            "a..b?!c",
            "\u{130}\u{130}\u{130}",
            "@@x ::)) 8-)",
        ] {
            let once = normalize(s);
            assert_eq!(normalize(&once), once, "input {s:?}");
        }
    }
}
