//! Shared tokenizer used by every feature group and by corpus statistics.

/// Split text into lowercase tokens.
///
/// A token is a maximal run of alphanumeric characters, with apostrophes
/// kept when they sit between two alphanumerics ("don't" stays one token).
/// All other punctuation and whitespace separates tokens; digit runs are
/// ordinary tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        // An apostrophe stays inside a word ("don't"), so it extends the
        // token exactly when flanked by alphanumerics.
        let extends_token = c.is_alphanumeric()
            || (c == '\''
                && !current.is_empty()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if extends_token {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Contiguous n-grams of the token list, joined with spaces.
pub fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}
