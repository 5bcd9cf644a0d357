/// Whitespace tokenizer used by the tiny-test backbone.
///
/// Splits on Unicode whitespace, strips surrounding punctuation (including
/// the danda used in Bengali and Assamese) and lowercases. Combining marks
/// inside a token are left alone since Bengali vowel signs are marks.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| {
                c.is_ascii_punctuation() || matches!(c, '।' | '॥' | '“' | '”' | '‘' | '’' | '…')
            })
        })
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
