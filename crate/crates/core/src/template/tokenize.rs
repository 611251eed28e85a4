//! Offset-preserving question tokenizer.
//!
//! Words are maximal runs of alphanumeric characters, numbers are digit runs
//! (optionally joined by `.`, `,` or `-` when another digit follows), and every
//! other non-whitespace character is a single punctuation token. Whitespace is
//! never part of a token, so the text between two tokens can always be
//! recovered from the source string.

use serde::{Deserialize, Serialize};

use super::TemplateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Word,
    Number,
    Punctuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QToken {
    pub surface: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub kind: TokenKind,
}

impl QToken {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.byte_start..self.byte_end
    }

    pub fn is_capitalized(&self) -> bool {
        self.kind == TokenKind::Word && self.surface.chars().next().is_some_and(char::is_uppercase)
    }
}

fn is_number_joiner(c: char) -> bool {
    matches!(c, '.' | ',' | '-')
}

/// Splits `text` into tokens. Fails on empty or whitespace-only input.
pub fn tokenize(text: &str) -> Result<Vec<QToken>, TemplateError> {
    if text.trim().is_empty() {
        return Err(TemplateError::InvalidQuestion);
    }
    Ok(scan(text))
}

/// Tokenizer without the non-empty precondition; used by the metrics, where an
/// empty prediction is legal and simply yields no tokens.
pub(crate) fn scan(text: &str) -> Vec<QToken> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_alphanumeric() {
            while i < chars.len() && chars[i].1.is_alphanumeric() {
                i += 1;
            }
            let all_digits = chars[start..i].iter().all(|&(_, ch)| ch.is_ascii_digit());
            if all_digits {
                // 1,000 / 3.14 / 1998-2001 stay whole.
                while i + 1 < chars.len()
                    && is_number_joiner(chars[i].1)
                    && chars[i + 1].1.is_ascii_digit()
                {
                    i += 1;
                    while i < chars.len() && chars[i].1.is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && chars[i].1.is_alphanumeric() {
                    // "1990s": a digit run glued to letters is a word.
                    while i < chars.len() && chars[i].1.is_alphanumeric() {
                        i += 1;
                    }
                    TokenKind::Word
                } else {
                    TokenKind::Number
                }
            } else {
                TokenKind::Word
            }
        } else {
            i += 1;
            TokenKind::Punctuation
        };
        let (byte_start, byte_end) = (byte_at(start), byte_at(i));
        tokens.push(QToken {
            surface: text[byte_start..byte_end].to_string(),
            byte_start,
            byte_end,
            kind,
        });
    }
    tokens
}
