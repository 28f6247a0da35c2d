use std::collections::HashSet;

use unicode_normalization::UnicodeNormalization;

use super::Corpus;

/// Comparison key for duplicate detection: trimmed, then NFC-normalized.
pub fn normalize_text(text: &str) -> String {
    text.trim().nfc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    pub train: Corpus,
    pub dev: Corpus,
    pub removed: usize,
}

/// Drops texts that occur in both `train` and `dev`.
///
/// Every train occurrence of an overlapping text is removed; in dev only the
/// first occurrence survives. Texts found in just one side are left alone,
/// including repeats within that side. Labels are not part of the key.
pub fn dedup(train: &Corpus, dev: &Corpus) -> DedupOutcome {
    let train_keys: HashSet<String> = train.examples().iter().map(|e| normalize_text(&e.text)).collect();
    let dev_keys: HashSet<String> = dev.examples().iter().map(|e| normalize_text(&e.text)).collect();

    let mut removed = 0;
    let train_out = train.filter(|e| {
        let keep = !dev_keys.contains(&normalize_text(&e.text));
        removed += usize::from(!keep);
        keep
    });

    let mut seen_overlap = HashSet::new();
    let dev_out = dev.filter(|e| {
        let key = normalize_text(&e.text);
        let keep = !train_keys.contains(&key) || seen_overlap.insert(key);
        removed += usize::from(!keep);
        keep
    });

    DedupOutcome {
        train: train_out,
        dev: dev_out,
        removed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::from_examples(
            texts.iter().map(|t| Example::new(*t, 0, "eng")).collect(),
            vec!["a".into()],
        )
        .unwrap()
    }

    fn texts(c: &Corpus) -> Vec<&str> {
        c.examples().iter().map(|e| e.text.as_str()).collect()
    }

    #[test]
    fn disjoint_unchanged() {
        let out = dedup(&corpus(&["a", "b", "b"]), &corpus(&["c"]));
        assert_eq!(texts(&out.train), vec!["a", "b", "b"]);
        assert_eq!(texts(&out.dev), vec!["c"]);
        assert_eq!(out.removed, 0);
    }

    #[test]
    fn single_overlap() {
        let out = dedup(&corpus(&["t1", "t2"]), &corpus(&["t2"]));
        assert_eq!(texts(&out.train), vec!["t1"]);
        assert_eq!(texts(&out.dev), vec!["t2"]);
        assert_eq!(out.removed, 1);
    }

    #[test]
    fn repeated_overlap_keeps_first_dev() {
        let out = dedup(&corpus(&["t2", "t2"]), &corpus(&["t2", "t2"]));
        assert!(out.train.is_empty());
        assert_eq!(texts(&out.dev), vec!["t2"]);
        assert_eq!(out.removed, 3);
    }

    #[test]
    fn nfc_and_trim() {
        // "é" precomposed vs e + combining acute.
        let out = dedup(&corpus(&["  caf\u{e9} "]), &corpus(&["cafe\u{301}", "x"]));
        assert!(out.train.is_empty());
        assert_eq!(out.dev.len(), 2);
        assert_eq!(out.removed, 1);
    }

    #[test]
    fn idempotent() {
        let first = dedup(&corpus(&["a", "b", "a", "c"]), &corpus(&["a", "d", "a", "d"]));
        let second = dedup(&first.train, &first.dev);
        assert_eq!(second.train, first.train);
        assert_eq!(second.dev, first.dev);
        assert_eq!(second.removed, 0);
    }
}
