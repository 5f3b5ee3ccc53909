/// The model output held no translation line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("model output contains no translation")]
pub struct ExtractError;

const WORD_PREFIXES: [&str; 4] = ["translation:", "answer:", "assistant:", "output:"];
const QUOTE_PAIRS: [(char, char); 5] = [
    ('"', '"'),
    ('“', '”'),
    ('「', '」'),
    ('『', '』'),
    ('`', '`'),
];

/// `[anything]:` or `[anything:]` at the start of the line, up to 40 chars
/// inside the brackets.
fn strip_tag(s: &str) -> Option<&str> {
    let rest = s.strip_prefix('[')?;
    let close = rest.char_indices().take(41).find(|&(_, c)| c == ']')?.0;
    let inner = &rest[..close];
    let after = &rest[close + 1..];
    if let Some(after) = after.strip_prefix(':') {
        return Some(after);
    }
    if inner.ends_with(':') {
        return Some(after);
    }
    None
}

fn strip_word_prefix(s: &str) -> Option<&str> {
    WORD_PREFIXES.iter().find_map(|p| {
        s.get(..p.len())
            .filter(|head| head.eq_ignore_ascii_case(p))
            .map(|_| &s[p.len()..])
    })
}

fn strip_quotes(s: &str) -> Option<&str> {
    QUOTE_PAIRS.iter().find_map(|&(open, close)| {
        let inner = s.strip_prefix(open)?.strip_suffix(close)?;
        Some(inner)
    })
}

fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let next = strip_tag(s)
            .or_else(|| strip_word_prefix(s))
            .or_else(|| strip_quotes(s))
            .map(str::trim);
        match next {
            Some(n) => s = n,
            None => return s,
        }
    }
}

/// Pulls the translation out of raw model output: scaffold prefixes such as
/// `[Amis]:`, `[Correct Answer]:` or `Translation:` are stripped from every
/// line, and the last line with anything left wins, minus surrounding
/// double quotes. Apostrophes are kept since target orthographies use them.
pub fn extract_hypothesis(raw_text: &str) -> Result<String, ExtractError> {
    raw_text
        .lines()
        .rev()
        .map(clean_line)
        .find(|l| !l.is_empty())
        .map(str::to_string)
        .ok_or(ExtractError)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_answer_prefix() {
        assert_eq!(
            extract_hypothesis("[Correct Answer]: Hay , nami’asiptu kaku .").unwrap(),
            "Hay , nami’asiptu kaku ."
        );
    }

    #[test]
    fn empty_and_scaffold_only() {
        assert_eq!(extract_hypothesis(""), Err(ExtractError));
        assert_eq!(extract_hypothesis("  \n\n"), Err(ExtractError));
        assert_eq!(
            extract_hypothesis("[Correct Answer]:\n[amis]:"),
            Err(ExtractError)
        );
    }

    /// Hand-labelled outputs in the shapes chat models actually produce.
    #[test]
    fn recorded_output_fixtures() {
        let cases = [
            (
                "Sure! Here is the translation:\n\n[Amis]: Kapah kaku , aca saka’ulahan .",
                "Kapah kaku , aca saka’ulahan .",
            ),
            (
                "The differences are in word order.\n[Correct Answer]: Hay , nami’asiptu kaku , kapah kina cudad .\n",
                "Hay , nami’asiptu kaku , kapah kina cudad .",
            ),
            ("Translation: \"Makama’an a tala i Taypak ?\"", "Makama’an a tala i Taypak ?"),
            ("[Assistant:] Hacuwa ku tenes a remakat ?", "Hacuwa ku tenes a remakat ?"),
            ("  U silamalay ku kalamkamay .  ", "U silamalay ku kalamkamay ."),
            ("[amis]: [Correct Answer]: 「Pina’ay ku tuki anini ?」", "Pina’ay ku tuki anini ?"),
            ("A, a hacuwa cira a taluma’ ?\n[Correct Answer]:", "A, a hacuwa cira a taluma’ ?"),
            ("'Aray", "'Aray"),
            ("mi’edem tu ulah nu valucu’", "mi’edem tu ulah nu valucu’"),
        ];
        for (raw, want) in cases {
            assert_eq!(extract_hypothesis(raw).unwrap(), want, "raw: {raw:?}");
        }
    }

    proptest! {
        #[test]
        fn idempotent(raw in "[\\[\\]\"“”「」a-zA-Z’:, \n]{0,60}") {
            if let Ok(once) = extract_hypothesis(&raw) {
                prop_assert_eq!(extract_hypothesis(&once).unwrap(), once);
            }
        }
    }
}
