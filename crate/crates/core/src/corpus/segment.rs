/// Tokens that end in a period without ending a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "vs.", "etc.", "e.g.", "i.e.", "inc.",
    "ltd.", "co.", "corp.", "gov.", "sen.", "rep.", "gen.", "col.", "lt.", "sgt.", "jan.", "feb.", "mar.",
    "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.", "no.", "u.s.", "u.k.", "u.n.",
    "d.c.", "a.m.", "p.m.",
];

/// Rule-based sentence splitter.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace (or end of input),
/// unless the whitespace-delimited word carrying the period is a listed
/// abbreviation. Abbreviations are matched case-insensitively.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: Vec<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Segmenter {
    pub fn new<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Segmenter {
            abbreviations: abbreviations.into_iter().map(|a| a.as_ref().to_lowercase()).collect(),
        }
    }

    fn is_abbreviation(&self, word: &str) -> bool {
        let w = word.trim_start_matches(['(', '"', '\'']).to_lowercase();
        self.abbreviations.contains(&w)
    }

    pub fn segment(&self, raw: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = raw.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !matches!(c, '.' | '!' | '?') {
                continue;
            }
            let end = i + c.len_utf8();
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if !at_boundary {
                continue;
            }
            if c == '.' {
                let word_start = raw[..end].rfind(char::is_whitespace).map_or(0, |p| p + 1);
                if self.is_abbreviation(&raw[word_start.max(start)..end]) {
                    continue;
                }
            }
            push_trimmed(&mut out, &raw[start..end]);
            start = end;
        }
        push_trimmed(&mut out, &raw[start..]);
        out
    }
}

fn push_trimmed(out: &mut Vec<String>, seg: &str) {
    let seg = seg.trim();
    if !seg.is_empty() {
        out.push(seg.to_string());
    }
}

/// Splits with the default abbreviation list.
pub fn segment_document(raw: &str) -> Vec<String> {
    Segmenter::default().segment(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(segment_document("A. B? C!"), ["A.", "B?", "C!"]);
    }

    #[test]
    fn empty_input() {
        assert!(segment_document("").is_empty());
        assert!(segment_document("   \n ").is_empty());
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(segment_document("U.S. grew. Then fell."), ["U.S. grew.", "Then fell."]);
    }

    #[test]
    fn punctuation_inside_a_token_is_not_a_boundary() {
        assert_eq!(segment_document("Pi is 3.14 roughly. Yes."), ["Pi is 3.14 roughly.", "Yes."]);
    }

    #[test]
    fn trailing_text_without_punctuation_is_kept() {
        assert_eq!(segment_document("One. two"), ["One.", "two"]);
    }

    #[test]
    fn custom_stoplist() {
        let seg = Segmenter::new(["approx."]);
        assert_eq!(seg.segment("It is approx. ten. Ok"), ["It is approx. ten.", "Ok"]);
        assert_eq!(seg.segment("Dr. Who. Ok"), ["Dr.", "Who.", "Ok"]);
    }
}
