//! Black/white-list sentence filter applied to generated reports before
//! they are embedded.

/// Removes sentences containing any blacklist term; when the whitelist is
/// non-empty, additionally keeps only sentences containing at least one
/// whitelist term. Sentence order is preserved.
///
/// Sentences end at '.', '!' or '?' followed by whitespace (so decimals like
/// "3.5" do not split); matching is case-insensitive substring matching. The
/// caller guarantees the two term sets are disjoint. With both sets empty the
/// input is returned unchanged.
pub fn filter_report(text: &str, whitelist: &[String], blacklist: &[String]) -> String {
    if whitelist.is_empty() && blacklist.is_empty() {
        return text.to_string();
    }
    let wl: Vec<String> = whitelist.iter().map(|t| t.to_lowercase()).collect();
    let bl: Vec<String> = blacklist.iter().map(|t| t.to_lowercase()).collect();

    let mut out = String::new();
    for span in sentence_spans(text) {
        let lower = span.to_lowercase();
        let blacklisted = bl.iter().any(|t| lower.contains(t));
        let whitelisted = wl.is_empty() || wl.iter().any(|t| lower.contains(t));
        if !blacklisted && whitelisted {
            out.push_str(span);
        }
    }
    out.trim_end().to_string()
}

/// Splits into spans that partition the input; each span carries its
/// terminator and any whitespace up to the next sentence.
fn sentence_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if matches!(bytes[i], b'.' | b'!' | b'?') {
            let mut j = i + 1;
            let mut saw_ws = false;
            while j < bytes.len() && (bytes[j] as char).is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            if saw_ws && j < bytes.len() {
                spans.push(&text[start..j]);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < text.len() {
        spans.push(&text[start..]);
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn whitelist_and_blacklist_together() {
        let out = filter_report("ASPECTS 7. I cannot assess.", &terms(&["ASPECTS"]), &terms(&["cannot"]));
        assert_eq!(out, "ASPECTS 7.");
    }

    #[test]
    fn empty_sets_are_identity() {
        let text = "Left MCA infarct.  Volume 3.5 mL.\nNo mass effect. ";
        assert_eq!(filter_report(text, &[], &[]), text);
    }

    #[test]
    fn full_removal_yields_empty_string() {
        assert_eq!(filter_report("Mass effect present.", &[], &terms(&["present"])), "");
    }

    #[test]
    fn decimals_do_not_split_sentences() {
        let out = filter_report("Volume 3.5 mL noted. Bad scan.", &[], &terms(&["bad"]));
        assert_eq!(out, "Volume 3.5 mL noted.");
    }

    #[test]
    fn matching_is_case_insensitive_and_order_preserved() {
        let text = "aspects 5. Noise here. ASPECTS 9!";
        let out = filter_report(text, &terms(&["Aspects"]), &[]);
        assert_eq!(out, "aspects 5. ASPECTS 9!");
    }

    #[test]
    fn unterminated_tail_is_a_sentence() {
        let out = filter_report("Good start. trailing fragment", &[], &terms(&["fragment"]));
        assert_eq!(out, "Good start.");
    }
}
