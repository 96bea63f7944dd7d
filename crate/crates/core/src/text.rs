//! Tokenization and segmentation shared by the language model, the neural
//! models and the span-annotation step.
//!
//! Tokens are lowercased. Whitespace separates tokens and every character
//! that is neither alphanumeric nor whitespace becomes a token of its own, so
//! `"Milk isn't a drug."` yields `milk isn ' t a drug .`.

use std::collections::HashMap;

/// Splits `text` into lowercased word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_lowercase().collect());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

/// Splits a document into the minimal units used for span annotation.
pub trait Segmenter {
    fn segment(&self, text: &str) -> Vec<String>;
}

/// Sentence-level units: a unit ends after `.`, `!` or `?` followed by
/// whitespace or the end of the text. Empty units are discarded.
#[derive(Debug, Clone, Copy, Default)]
pub struct SentenceSegmenter;

impl Segmenter for SentenceSegmenter {
    fn segment(&self, text: &str) -> Vec<String> {
        let mut units = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((idx, ch)) = chars.next() {
            if matches!(ch, '.' | '!' | '?') {
                let at_boundary = match chars.peek() {
                    None => true,
                    Some((_, next)) => next.is_whitespace(),
                };
                if at_boundary {
                    let end = idx + ch.len_utf8();
                    push_unit(&text[start..end], &mut units);
                    start = end;
                }
            }
        }
        push_unit(&text[start..], &mut units);
        units
    }
}

/// Word vectors read from `token v1 ... vE` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    /// Blank lines are skipped; every vector must have the same length.
    pub fn parse(content: &str) -> Result<WordVectors, String> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (idx, line) in content.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse::<f64>)
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", idx + 1))?;
            match dim {
                None if values.is_empty() => return Err(format!("line {}: no values", idx + 1)),
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(format!("line {}: {} values, expected {d}", idx + 1, values.len()))
                }
                _ => {}
            }
            vectors.insert(token.to_string(), values);
        }
        Ok(WordVectors {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }
}

fn push_unit(raw: &str, units: &mut Vec<String>) {
    let unit = raw.trim();
    if !unit.is_empty() {
        units.push(unit.to_string());
    }
}
