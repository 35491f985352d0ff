/// True for whitespace-delimited tokens treated as URLs.
fn is_url_token(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

fn is_kept(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\''
}

/// Normalizes free text for every downstream model.
///
/// Lowercases, drops URL tokens (`http://`, `https://`, `www.` prefixes),
/// replaces every character outside `[a-z0-9']` with a space, then collapses
/// whitespace runs and trims. The function is total and idempotent.
pub fn clean_text(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for token in lowered.split_whitespace().filter(|t| !is_url_token(t)) {
        for c in token.chars() {
            out.push(if is_kept(c) { c } else { ' ' });
        }
        out.push(' ');
    }
    let mut collapsed = String::with_capacity(out.len());
    for word in out.split_whitespace() {
        if !collapsed.is_empty() {
            collapsed.push(' ');
        }
        collapsed.push_str(word);
    }
    collapsed
}
