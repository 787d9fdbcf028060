//! Deterministic text-normalization tokenizer.
//!
//! Text is first split on whitespace into words; each word is then split
//! wherever the major Unicode category of consecutive characters changes, so
//! `"1/2023"` becomes `["1", "/", "2023"]`. Offsets are counted in Unicode
//! scalar values.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

/// Major Unicode category of a token's characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UClass {
    Letter,
    Digit,
    Punct,
    Symbol,
    Other,
}

impl UClass {
    pub fn of(c: char) -> UClass {
        use GeneralCategory::*;
        match get_general_category(c) {
            UppercaseLetter | LowercaseLetter | TitlecaseLetter | ModifierLetter | OtherLetter => {
                UClass::Letter
            }
            DecimalNumber | LetterNumber | OtherNumber => UClass::Digit,
            ConnectorPunctuation | DashPunctuation | OpenPunctuation | ClosePunctuation
            | InitialPunctuation | FinalPunctuation | OtherPunctuation => UClass::Punct,
            MathSymbol | CurrencySymbol | ModifierSymbol | OtherSymbol => UClass::Symbol,
            _ => UClass::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            UClass::Letter => "LETTER",
            UClass::Digit => "DIGIT",
            UClass::Punct => "PUNCT",
            UClass::Symbol => "SYMBOL",
            UClass::Other => "OTHER",
        }
    }
}

impl fmt::Display for UClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Half-open interval of char offsets into the source text.
    pub span: Range<usize>,
    pub word_index: usize,
    pub uclass: UClass,
}

impl Token {
    pub fn is_digits(&self) -> bool {
        self.text.chars().all(|c| c.is_ascii_digit())
    }

    pub fn is_alpha(&self) -> bool {
        self.uclass == UClass::Letter
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub source: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Token> {
        self.tokens.get(i)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Number of whitespace-delimited words.
    pub fn word_count(&self) -> usize {
        word_count(self)
    }

    /// Token indices grouped by word, in word order.
    pub fn word_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.word_count()];
        for (i, t) in self.tokens.iter().enumerate() {
            groups[t.word_index].push(i);
        }
        groups
    }

    /// The source text of each word.
    pub fn words(&self) -> Vec<String> {
        self.word_groups()
            .into_iter()
            .map(|g| g.iter().map(|&i| self.tokens[i].text.as_str()).collect())
            .collect()
    }
}

impl std::ops::Index<usize> for TokenSequence {
    type Output = Token;

    fn index(&self, i: usize) -> &Token {
        &self.tokens[i]
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word_index = 0usize;
    let mut seen_word = false;
    let mut in_word = false;
    let mut current: Option<(String, usize, UClass)> = None;

    let mut flush = |cur: &mut Option<(String, usize, UClass)>, end: usize, word: usize| {
        if let Some((text, start, uclass)) = cur.take() {
            tokens.push(Token {
                text,
                span: start..end,
                word_index: word,
                uclass,
            });
        }
    };

    let mut offset = 0usize;
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, offset, word_index);
            in_word = false;
        } else {
            if !in_word {
                if seen_word {
                    word_index += 1;
                }
                seen_word = true;
                in_word = true;
            }
            let class = UClass::of(c);
            match &mut current {
                Some((buf, _, cls)) if *cls == class => buf.push(c),
                _ => {
                    flush(&mut current, offset, word_index);
                    current = Some((c.to_string(), offset, class));
                }
            }
        }
        offset += 1;
    }
    flush(&mut current, offset, word_index);

    TokenSequence {
        tokens,
        source: text.to_string(),
    }
}

pub fn word_count(seq: &TokenSequence) -> usize {
    seq.tokens.last().map_or(0, |t| t.word_index + 1)
}

/// Converts a char-offset range to a byte range of `text`, if in bounds.
pub fn char_range_to_bytes(text: &str, span: &Range<usize>) -> Option<Range<usize>> {
    let mut start = None;
    let mut end = None;
    let mut count = 0usize;
    for (b, _) in text.char_indices() {
        if count == span.start {
            start = Some(b);
        }
        if count == span.end {
            end = Some(b);
        }
        count += 1;
    }
    if span.start == count {
        start = Some(text.len());
    }
    if span.end == count {
        end = Some(text.len());
    }
    match (start, end) {
        (Some(s), Some(e)) if s <= e => Some(s..e),
        _ => None,
    }
}

/// Slices `text` by char offsets.
pub fn char_slice<'a>(text: &'a str, span: &Range<usize>) -> Option<&'a str> {
    char_range_to_bytes(text, span).map(|r| &text[r])
}
