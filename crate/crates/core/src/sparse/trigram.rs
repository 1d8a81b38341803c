//! Character-trigram candidate generator over the index vocabulary.
//!
//! Each term is padded with two sentinel characters on both sides, giving
//! `len + 2` trigrams. One edit touches at most four of them (a
//! transposition), so a term within distance `d` of a query of length
//! `len` shares at least `len + 2 - 4d` trigrams with it. Under the fuzzy
//! budget that bound is always >= 2; it is the prefilter, counted per query
//! trigram position. Candidates are verified by exact distance afterwards.

use std::collections::{HashMap, HashSet};

const PAD: char = '\u{0}';

#[derive(Debug, Clone, Default)]
pub(crate) struct TrigramIndex {
    grams: HashMap<u64, Vec<u32>>,
    term_lengths: Vec<u32>,
}

fn pack(a: char, b: char, c: char) -> u64 {
    ((a as u64) << 42) | ((b as u64) << 21) | c as u64
}

fn trigrams(term: &str) -> impl Iterator<Item = u64> {
    let padded: Vec<char> = [PAD, PAD].into_iter().chain(term.chars()).chain([PAD, PAD]).collect();
    (0..padded.len() - 2).map(move |i| pack(padded[i], padded[i + 1], padded[i + 2]))
}

impl TrigramIndex {
    pub(crate) fn build(terms: &[String]) -> Self {
        let mut grams: HashMap<u64, Vec<u32>> = HashMap::new();
        let mut term_lengths = Vec::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            term_lengths.push(term.chars().count() as u32);
            let mut seen = HashSet::new();
            for g in trigrams(term) {
                if seen.insert(g) {
                    grams.entry(g).or_default().push(id as u32);
                }
            }
        }
        Self { grams, term_lengths }
    }

    /// Term ids that could lie within `max_distance` edits of `term`: length
    /// within `max_distance` and at least `len + 2 - 4 * max_distance` of the
    /// query's trigram positions present in the term (at least one). Sorted
    /// ascending.
    pub(crate) fn candidates(&self, term: &str, max_distance: usize) -> Vec<u32> {
        let len = term.chars().count() as i64;
        let need = (len + 2 - 4 * max_distance as i64).max(1) as u32;
        let mut hits: HashMap<u32, u32> = HashMap::new();
        for g in trigrams(term) {
            if let Some(ids) = self.grams.get(&g) {
                for &id in ids {
                    let other = self.term_lengths[id as usize] as i64;
                    if (other - len).unsigned_abs() as usize <= max_distance {
                        *hits.entry(id).or_default() += 1;
                    }
                }
            }
        }
        let mut out: Vec<u32> = hits.into_iter().filter(|&(_, n)| n >= need).map(|(id, _)| id).collect();
        out.sort_unstable();
        out
    }
}
