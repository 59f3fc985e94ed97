//! Lexical helpers shared by POI search, knowledge retrieval and the rubric.

use alloc::string::String;
use alloc::vec::Vec;

/// Function words ignored when comparing content.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "at", "be", "but", "by", "can", "could", "do", "does", "for", "from", "have",
    "how", "i", "if", "in", "is", "it", "its", "me", "my", "now", "of", "on", "or", "please", "so", "that", "the",
    "there", "this", "to", "up", "was", "we", "what", "when", "where", "which", "will", "with", "would", "you", "your",
];

/// Lowercased alphanumeric runs. Everything else separates tokens.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(core::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokens with stopwords removed, order preserved, duplicates kept.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Sorted, deduplicated token set.
pub fn token_set(text: &str) -> Vec<String> {
    let mut set = tokens(text);
    set.sort();
    set.dedup();
    set
}

pub fn content_token_set(text: &str) -> Vec<String> {
    let mut set = content_tokens(text);
    set.sort();
    set.dedup();
    set
}

/// Size of the intersection of two sorted, deduplicated sets.
pub fn intersection_len(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// ASCII case-insensitive substring search returning the byte offset.
pub fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return Some(0);
    }
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| haystack.is_char_boundary(i) && h[i..i + n.len()].eq_ignore_ascii_case(n))
}

pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    find_ci(haystack, needle).is_some()
}

/// Case-insensitive search for `word` bounded by non-alphanumerics.
pub fn find_word_ci(haystack: &str, word: &str) -> Option<usize> {
    let mut from = 0;
    while from <= haystack.len() {
        let rel = find_ci(&haystack[from..], word)?;
        let at = from + rel;
        let end = at + word.len();
        let before_ok = haystack[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

pub fn contains_word_ci(haystack: &str, word: &str) -> bool {
    find_word_ci(haystack, word).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenizes_on_punctuation() {
        assert_eq!(tokens("Huateng Garden South-Gate"), ["huateng", "garden", "south", "gate"]);
        assert_eq!(content_tokens("How many car types can I book now?"), ["many", "car", "types", "book"]);
    }

    #[test]
    fn word_search_respects_boundaries() {
        assert_eq!(find_word_ci("I want to go to X", "go to"), Some(10));
        assert!(!contains_word_ci("Toronto", "to"));
        assert!(contains_word_ci("ride TO the airport", "to"));
    }
}
