/// A lowercase token with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character (not byte) offset of the first character.
    pub start: usize,
    /// Character offset one past the last character.
    pub end: usize,
}

/// Lowercases, splits on whitespace, and isolates every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_start = 0;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                current_start = pos;
            }
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(&mut current),
                start: current_start,
                end: pos,
            });
        }
        if !ch.is_whitespace() {
            tokens.push(Token {
                text: ch.to_lowercase().collect(),
                start: pos,
                end: pos + 1,
            });
        }
    }
    if !current.is_empty() {
        let end = current_start + text.chars().skip(current_start).count();
        tokens.push(Token {
            text: current,
            start: current_start,
            end,
        });
    }
    tokens
}

/// Splits text into sentences at `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((_, ch)) = iter.next() {
        if !matches!(ch, '.' | '!' | '?') {
            continue;
        }
        if let Some(&(next_idx, next)) = iter.peek() {
            if next.is_whitespace() {
                let piece = text[start..next_idx].trim();
                if !piece.is_empty() {
                    sentences.push(piece);
                }
                start = next_idx;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail);
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("Nausea, vomiting."), ["nausea", ",", "vomiting", "."]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
        assert_eq!(tokenize("T45.0X1A"), ["t45", ".", "0x1a"]);
        assert_eq!(tokenize("7-year-old"), ["7", "-", "year", "-", "old"]);
    }

    #[test]
    fn offsets_are_character_based() {
        let toks = tokenize_with_offsets("Café au lait");
        assert_eq!(toks[0].text, "café");
        assert_eq!((toks[0].start, toks[0].end), (0, 4));
        assert_eq!((toks[2].start, toks[2].end), (8, 12));
    }

    #[test]
    fn deterministic() {
        let text = "Seen for Pica; denies seizures!";
        assert_eq!(tokenize(text), tokenize(text));
    }

    #[test]
    fn sentences() {
        assert_eq!(
            split_sentences("He was seen. No fever! Why? ok"),
            ["He was seen.", "No fever!", "Why?", "ok"]
        );
        assert_eq!(split_sentences("Dose 2.5 mg daily."), ["Dose 2.5 mg daily."]);
        assert!(split_sentences("  ").is_empty());
    }
}
