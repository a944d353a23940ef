//! Penn Treebank style tokenization followed by punctuation removal.
//!
//! The tokenizer follows the PTB conventions that matter for caption text:
//! punctuation is split off words, quotes become `` `` `` / `''`, brackets are
//! normalised to `-LRB-`-style tokens, clitics (`n't`, `'s`, `'ll`, ...) are
//! separated from their host word and a handful of fused forms (`cannot`,
//! `gonna`, ...) are split. Numbers keep their internal `.`, `,` and `:`.
//! Tokens that appear in [`REMOVED_PUNCTUATION`] are dropped and the survivors
//! are lowercased.

use unicode_normalization::UnicodeNormalization;

use super::TokenSeq;

/// Tokens removed after tokenization.
pub const REMOVED_PUNCTUATION: [&str; 17] = [
    "``", "''", "`", "'", "-LRB-", "-RRB-", "-LCB-", "-RCB-", ".", "?", "!", ",", ":", "-", "--",
    "...", ";",
];

const CLITICS: [&str; 6] = ["s", "m", "d", "re", "ve", "ll"];

const ABBREVIATIONS: [&str; 16] = [
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "vs", "etc", "inc", "co", "ltd", "prof", "mt",
    "ave", "approx",
];

// (fused form, split point)
const FUSED: [(&str, usize); 6] = [
    ("cannot", 3),
    ("gonna", 3),
    ("gotta", 3),
    ("wanna", 3),
    ("gimme", 3),
    ("lemme", 3),
];

pub fn is_removed_punctuation(token: &str) -> bool {
    REMOVED_PUNCTUATION.contains(&token)
}

/// Tokenizes a raw caption into a [`TokenSeq`].
pub fn tokenize(raw: &str) -> TokenSeq {
    let tokens = ptb_tokens(raw)
        .into_iter()
        .filter(|t| !is_removed_punctuation(t))
        .map(|t| t.to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    TokenSeq::from_raw_tokens(tokens)
}

/// PTB tokenization without punctuation removal or case folding.
pub fn ptb_tokens(raw: &str) -> Vec<String> {
    let text = normalize(raw);
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        ChunkScanner::new(chunk, &mut out).run();
    }
    out
}

fn normalize(raw: &str) -> String {
    let mut s = String::with_capacity(raw.len());
    for ch in raw.nfc() {
        match ch {
            '\u{201C}' | '\u{201E}' | '\u{00AB}' => s.push_str(" `` "),
            '\u{201D}' | '\u{00BB}' => s.push_str(" '' "),
            '\u{2018}' | '\u{2019}' | '\u{02BC}' => s.push('\''),
            '\u{2013}' | '\u{2014}' => s.push_str(" -- "),
            '\u{2026}' => s.push_str(" ... "),
            '\u{00A0}' => s.push(' '),
            _ => s.push(ch),
        }
    }
    s
}

fn is_boundary(c: Option<char>) -> bool {
    c.is_none_or(|c| !c.is_alphanumeric())
}

struct ChunkScanner<'a> {
    chars: Vec<char>,
    pos: usize,
    word: String,
    out: &'a mut Vec<String>,
}

impl<'a> ChunkScanner<'a> {
    fn new(chunk: &str, out: &'a mut Vec<String>) -> Self {
        Self { chars: chunk.chars().collect(), pos: 0, word: String::new(), out }
    }

    fn peek(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn run_length(&self, c: char) -> usize {
        self.chars[self.pos..].iter().take_while(|&&x| x == c).count()
    }

    fn emit(&mut self, token: &str) {
        self.flush();
        self.out.push(token.to_string());
    }

    fn flush(&mut self) {
        if self.word.is_empty() {
            return;
        }
        let word = std::mem::take(&mut self.word);
        let lower = word.to_lowercase();
        if let Some(&(_, at)) = FUSED.iter().find(|(f, _)| *f == lower) {
            let split = word.char_indices().nth(at).map_or(word.len(), |(i, _)| i);
            self.out.push(word[..split].to_string());
            self.out.push(word[split..].to_string());
        } else {
            self.out.push(word);
        }
    }

    /// Lowercased alphanumeric run starting `offset` chars ahead.
    fn word_ahead(&self, offset: usize) -> String {
        self.chars[(self.pos + offset).min(self.chars.len())..]
            .iter()
            .take_while(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase()
    }

    fn run(mut self) {
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            match c {
                '(' => self.single("-LRB-"),
                ')' => self.single("-RRB-"),
                '[' => self.single("-LSB-"),
                ']' => self.single("-RSB-"),
                '{' => self.single("-LCB-"),
                '}' => self.single("-RCB-"),
                '?' | '!' | ';' | '$' | '#' | '%' => {
                    let mut buf = [0u8; 4];
                    let token = c.encode_utf8(&mut buf).to_string();
                    self.single(&token);
                }
                '"' => {
                    let opening = self.word.is_empty()
                        && (self.pos == 0
                            || matches!(self.chars[self.pos - 1], '(' | '[' | '{' | '`'));
                    self.single(if opening { "``" } else { "''" });
                }
                '`' => {
                    let n = self.run_length('`');
                    self.emit(if n >= 2 { "``" } else { "`" });
                    self.pos += n;
                }
                ',' | ':' => {
                    let numeric = self.pos > 0
                        && self.chars[self.pos - 1].is_ascii_digit()
                        && self.peek(1).is_some_and(|n| n.is_ascii_digit())
                        && !self.word.is_empty();
                    if numeric {
                        self.word.push(c);
                        self.pos += 1;
                    } else {
                        let mut buf = [0u8; 4];
                        let token = c.encode_utf8(&mut buf).to_string();
                        self.single(&token);
                    }
                }
                '-' => {
                    let n = self.run_length('-');
                    if n >= 2 {
                        self.emit("--");
                    } else {
                        self.word.push('-');
                    }
                    self.pos += n;
                }
                '.' => self.period(),
                '\'' => self.apostrophe(),
                _ => {
                    self.word.push(c);
                    self.pos += 1;
                }
            }
        }
        self.flush();
    }

    fn single(&mut self, token: &str) {
        self.emit(token);
        self.pos += 1;
    }

    fn period(&mut self) {
        let n = self.run_length('.');
        if n >= 2 {
            self.emit(if n >= 3 { "..." } else { ".." });
            self.pos += n;
            return;
        }
        if self.peek(1).is_some_and(char::is_alphanumeric) {
            self.word.push('.');
            self.pos += 1;
            return;
        }
        // Word-final period: kept on acronyms ("u.s.") and known abbreviations.
        let acronym = self.word.contains('.')
            && self.word.chars().all(|c| c == '.' || c.is_alphabetic());
        let abbreviation = ABBREVIATIONS.contains(&self.word.to_lowercase().as_str());
        if acronym || abbreviation {
            self.word.push('.');
            self.pos += 1;
        } else {
            self.single(".");
        }
    }

    fn apostrophe(&mut self) {
        let next = self.peek(1);
        if next == Some('\'') {
            self.emit("''");
            self.pos += 2;
            return;
        }
        let ahead = self.word_ahead(1);
        let after = self.peek(1 + ahead.chars().count());
        let clitic = CLITICS.contains(&ahead.as_str()) && is_boundary(after);

        if self.word.is_empty() {
            if clitic {
                // A bare clitic such as "'s" is already a token.
                self.word.push('\'');
                self.pos += 1;
            } else {
                self.single("`");
            }
            return;
        }

        if ahead == "t" && is_boundary(after) && self.word.to_lowercase().ends_with('n') {
            // "don't" -> "do" + "n't"
            let n = self.word.pop().expect("word ends with n");
            self.flush();
            self.word.push(n);
            self.word.push('\'');
            self.pos += 1;
        } else if clitic {
            self.flush();
            self.word.push('\'');
            self.pos += 1;
        } else if next.is_some_and(char::is_alphanumeric) {
            // o'clock, rock'n'roll
            self.word.push('\'');
            self.pos += 1;
        } else {
            self.single("'");
        }
    }
}
