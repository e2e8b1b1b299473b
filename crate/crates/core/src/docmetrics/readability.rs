//! Flesch reading ease and Gunning fog with a dictionary-free syllable
//! heuristic.

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
    /// Words with three or more syllables.
    pub complex_words: usize,
}

/// Vowel groups, less a silent final `e` and a non-syllabic `-es`/`-ed`.
/// Never below 1 for a word with letters.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if w.is_empty() {
        return usize::from(word.chars().any(|c| c.is_alphanumeric()));
    }
    if w.len() <= 3 {
        return 1;
    }
    let is_vowel = |i: usize| matches!(w[i], 'a' | 'e' | 'i' | 'o' | 'u') || (w[i] == 'y' && i > 0);
    let mut groups = 0;
    let mut prev = false;
    for i in 0..w.len() {
        let v = is_vowel(i);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    let n = w.len();
    let consonant = |i: usize| !is_vowel(i);
    let ends = |s: &str| w.iter().rev().take(s.len()).rev().copied().eq(s.chars());
    let silent_e = ends("e") && !(ends("le") && consonant(n - 3)) && consonant(n - 2);
    let silent_suffix = (ends("es") || ends("ed"))
        && consonant(n - 3)
        && !matches!(w[n - 3], 't' | 'd' | 's' | 'x' | 'z');
    if silent_e || silent_suffix {
        groups -= 1;
    }
    groups.max(1)
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Words are whitespace-separated pieces containing a letter or digit.
/// Sentences end at a run of `.`, `!` or `?` followed by whitespace or the
/// end of the text; a trailing fragment is also a sentence.
pub fn text_stats(text: &str) -> TextStats {
    let mut stats = TextStats::default();
    let mut open_sentence = false;
    for piece in text.split_whitespace() {
        if piece.chars().any(char::is_alphanumeric) {
            let y = count_syllables(piece);
            stats.words += 1;
            stats.syllables += y;
            if y >= 3 {
                stats.complex_words += 1;
            }
            open_sentence = true;
        }
        if open_sentence && piece.ends_with(is_terminator) {
            stats.sentences += 1;
            open_sentence = false;
        }
    }
    if open_sentence {
        stats.sentences += 1;
    }
    stats
}

pub fn flesch_from_stats(s: &TextStats) -> Result<f64, MetricError> {
    if s.words == 0 {
        return Err(MetricError::NoWords);
    }
    let (w, sen, y) = (
        s.words as f64,
        s.sentences.max(1) as f64,
        s.syllables as f64,
    );
    Ok(206.835 - 1.015 * (w / sen) - 84.6 * (y / w))
}

pub fn gunning_fog_from_stats(s: &TextStats) -> Result<f64, MetricError> {
    if s.words == 0 {
        return Err(MetricError::NoWords);
    }
    let (w, sen, c) = (
        s.words as f64,
        s.sentences.max(1) as f64,
        s.complex_words as f64,
    );
    Ok(0.4 * ((w / sen) + 100.0 * (c / w)))
}

pub fn flesch(text: &str) -> Result<f64, MetricError> {
    flesch_from_stats(&text_stats(text))
}

pub fn gunning_fog(text: &str) -> Result<f64, MetricError> {
    gunning_fog_from_stats(&text_stats(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(words: usize, sentences: usize, syllables: usize, complex_words: usize) -> TextStats {
        TextStats {
            words,
            sentences,
            syllables,
            complex_words,
        }
    }

    #[test]
    fn syllables() {
        for (w, n) in [
            ("cat", 1),
            ("table", 2),
            ("make", 1),
            ("wanted", 2),
            ("jumped", 1),
            ("boxes", 2),
            ("computer", 3),
            ("initialize", 4),
            ("rhythm", 1),
            ("x", 1),
            ("42", 1),
            ("--", 0),
        ] {
            assert_eq!(count_syllables(w), n, "{w}");
        }
    }

    #[test]
    fn forced_stats() {
        assert!((flesch_from_stats(&stats(10, 1, 15, 0)).unwrap() - 69.785).abs() < 1e-9);
        assert!((gunning_fog_from_stats(&stats(100, 5, 0, 10)).unwrap() - 12.0).abs() < 1e-9);
        assert!(flesch_from_stats(&stats(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn text_examples() {
        assert!((flesch("Cat.").unwrap() - 121.22).abs() < 1e-9);
        let ten = "the cat sat on the mat and ran to me";
        assert!((gunning_fog(ten).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn duplication_invariance() {
        let t = "Initializes the patient record. Returns the chart number.";
        let doubled = format!("{t} {t}");
        assert!((flesch(t).unwrap() - flesch(&doubled).unwrap()).abs() < 1e-9);
        assert!((gunning_fog(t).unwrap() - gunning_fog(&doubled).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(text_stats("One. Two!  Three? four").sentences, 4);
        assert_eq!(text_stats("Sets X...").sentences, 1);
        assert_eq!(text_stats("...").sentences, 0);
        assert_eq!(text_stats("").words, 0);
    }
}
