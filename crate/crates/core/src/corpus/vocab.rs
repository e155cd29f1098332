use std::collections::HashMap;

/// Word frequencies of a corpus.
pub type WordCounts = HashMap<String, u64>;

pub fn count_words<'a>(words: impl IntoIterator<Item = &'a str>) -> WordCounts {
    let mut counts = WordCounts::new();
    for w in words {
        *counts.entry(w.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Words of `a` that never occur in `b`, most frequent first, ties in
/// lexicographic order.
pub fn vocab_difference(a: &WordCounts, b: &WordCounts) -> Vec<String> {
    let mut survivors: Vec<(&String, u64)> =
        a.iter().filter(|(w, _)| !b.contains_key(*w)).map(|(w, &c)| (w, c)).collect();
    survivors.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(y.0)));
    survivors.into_iter().map(|(w, _)| w.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(pairs: &[(&str, u64)]) -> WordCounts {
        pairs.iter().map(|&(w, c)| (w.to_string(), c)).collect()
    }

    #[test]
    fn single_survivor() {
        assert_eq!(vocab_difference(&counts(&[("x", 3), ("y", 1)]), &counts(&[("y", 5)])), ["x"]);
    }

    #[test]
    fn ties_broken_lexicographically() {
        assert_eq!(vocab_difference(&counts(&[("q", 2), ("p", 2)]), &WordCounts::new()), ["p", "q"]);
    }

    #[test]
    fn disjoint_keeps_everything_by_frequency() {
        let a = counts(&[("a", 1), ("b", 9), ("c", 4)]);
        assert_eq!(vocab_difference(&a, &counts(&[("z", 1)])), ["b", "c", "a"]);
    }

    #[test]
    fn counting() {
        let c = count_words("a b a c a".split(' '));
        assert_eq!(c["a"], 3);
        assert_eq!(c.len(), 3);
    }
}
