/// Characters per token in the budget approximation.
pub const CHARS_PER_TOKEN: usize = 4;

/// Model-agnostic token estimate: one token per four characters, rounded up.
pub fn count_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}
