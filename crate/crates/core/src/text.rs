//! Tokenization and sentence splitting shared by retrieval and grounding.

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Splits at `.`, `!`, `?` and newlines. A `.` between two digits (a decimal
/// point) does not end a sentence. Empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let boundary = match c {
            '!' | '?' | '\n' | '\r' => true,
            '.' => {
                let prev = i.checked_sub(1).map(|j| chars[j]);
                let next = chars.get(i + 1);
                !(prev.is_some_and(|p| p.is_ascii_digit()) && next.is_some_and(|n| n.is_ascii_digit()))
            }
            _ => false,
        };
        if boundary {
            push_trimmed(&mut out, &cur);
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    push_trimmed(&mut out, &cur);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Removes citation tags such as `[Fact 2]`.
pub fn strip_fact_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('[') {
        out.push_str(&rest[..start]);
        let after = &rest[start..];
        match after.find(']') {
            Some(end) if is_fact_tag(&after[1..end]) => rest = &after[end + 1..],
            _ => {
                out.push('[');
                rest = &after[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_fact_tag(inner: &str) -> bool {
    let inner = inner.trim();
    inner
        .strip_prefix("Fact")
        .or_else(|| inner.strip_prefix("fact"))
        .map(str::trim)
        .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
}
