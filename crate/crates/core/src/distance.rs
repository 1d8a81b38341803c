//! Damerau–Levenshtein edit distance and the length-scaled edit budget used
//! by fuzzy term expansion.

use std::collections::HashMap;

/// Unrestricted Damerau–Levenshtein distance over Unicode scalar values:
/// insertions, deletions, substitutions and transpositions of adjacent
/// characters, each of cost 1. Unlike optimal string alignment, substrings
/// may be edited more than once, so this is a true metric.
pub fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    damerau_levenshtein_chars(&a, &b)
}

pub fn damerau_levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }

    let max_dist = n + m;
    let width = m + 2;
    // (n + 2) x (m + 2) matrix with a sentinel row and column.
    let mut d = vec![0usize; (n + 2) * width];
    let at = |i: usize, j: usize| i * width + j;

    d[at(0, 0)] = max_dist;
    for i in 0..=n {
        d[at(i + 1, 0)] = max_dist;
        d[at(i + 1, 1)] = i;
    }
    for j in 0..=m {
        d[at(0, j + 1)] = max_dist;
        d[at(1, j + 1)] = j;
    }

    let mut last_row: HashMap<char, usize> = HashMap::new();
    for i in 1..=n {
        let mut last_match_col = 0;
        for j in 1..=m {
            let i1 = *last_row.get(&b[j - 1]).unwrap_or(&0);
            let j1 = last_match_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_match_col = j;
                0
            } else {
                1
            };
            let substitution = d[at(i, j)] + cost;
            let insertion = d[at(i + 1, j)] + 1;
            let deletion = d[at(i, j + 1)] + 1;
            let transposition = d[at(i1, j1)] + (i - i1 - 1) + 1 + (j - j1 - 1);
            d[at(i + 1, j + 1)] = substitution.min(insertion).min(deletion).min(transposition);
        }
        last_row.insert(a[i - 1], i);
    }
    d[at(n + 1, m + 1)]
}

/// Maximum edit distance tolerated for a query term of `len` characters
/// during fuzzy retrieval: none below 4, one for 4–7, two from 8 up.
pub fn fuzzy_budget(len: usize) -> usize {
    match len {
        0..=3 => 0,
        4..=7 => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_distances() {
        assert_eq!(damerau_levenshtein("", ""), 0);
        assert_eq!(damerau_levenshtein("abc", ""), 3);
        assert_eq!(damerau_levenshtein("cusinart", "cuisinart"), 1);
        assert_eq!(damerau_levenshtein("sumbrella", "sunbrella"), 1);
        assert_eq!(damerau_levenshtein("salamin", "salomon"), 2);
        assert_eq!(damerau_levenshtein("tset", "test"), 1);
        // Restricted (OSA) distance would be 3 here.
        assert_eq!(damerau_levenshtein("ca", "abc"), 2);
        assert_eq!(damerau_levenshtein("café", "cafe"), 1);
    }

    #[test]
    fn budget_steps() {
        assert_eq!(fuzzy_budget(2), 0);
        assert_eq!(fuzzy_budget(3), 0);
        assert_eq!(fuzzy_budget(4), 1);
        assert_eq!(fuzzy_budget(7), 1);
        assert_eq!(fuzzy_budget(8), 2);
        assert_eq!(fuzzy_budget(20), 2);
    }

    proptest! {
        #[test]
        fn matches_reference_implementation(a in "[a-e]{0,9}", b in "[a-e]{0,9}") {
            prop_assert_eq!(damerau_levenshtein(&a, &b), strsim::damerau_levenshtein(&a, &b));
        }

        #[test]
        fn symmetric_and_zero_iff_equal(a in "[a-d]{0,7}", b in "[a-d]{0,7}") {
            let d = damerau_levenshtein(&a, &b);
            prop_assert_eq!(d, damerau_levenshtein(&b, &a));
            prop_assert_eq!(d == 0, a == b);
        }
    }
}
