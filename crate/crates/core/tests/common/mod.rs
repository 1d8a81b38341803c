//! Test support shared by the integration targets: a brute-force BM25
//! scorer, random catalogs, a synthetic brand benchmark and a stub HTTP
//! server.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::thread;

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use speller_core::catalog::CatalogDocument;
use speller_core::eval::EvalPair;
use tokio::sync::oneshot;

// ---------------------------------------------------------------------------
// Brute-force scorer
// ---------------------------------------------------------------------------

/// ASCII-only normalization; test catalogs never contain anything else.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c.to_ascii_lowercase() })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub fn oracle_budget(len: usize) -> usize {
    if len < 4 {
        0
    } else if len < 8 {
        1
    } else {
        2
    }
}

pub struct Oracle {
    ids: Vec<u64>,
    docs: Vec<Vec<String>>,
    vocabulary: BTreeSet<String>,
    avg: f64,
    k1: f64,
    b: f64,
}

impl Oracle {
    pub fn new(catalog: &[CatalogDocument], k1: f64, b: f64) -> Self {
        let mut sorted: Vec<&CatalogDocument> = catalog.iter().collect();
        sorted.sort_by_key(|d| d.doc_id);
        let docs: Vec<Vec<String>> = sorted.iter().map(|d| oracle_tokens(&d.text)).collect();
        let total: usize = docs.iter().map(Vec::len).sum();
        Self {
            ids: sorted.iter().map(|d| d.doc_id).collect(),
            vocabulary: docs.iter().flatten().cloned().collect(),
            avg: total as f64 / docs.len() as f64,
            docs,
            k1,
            b,
        }
    }

    fn term_score(&self, term: &str, doc: &[String]) -> f64 {
        let tf = doc.iter().filter(|t| *t == term).count() as f64;
        if tf == 0.0 {
            return 0.0;
        }
        let n = self.docs.len() as f64;
        let df = self.docs.iter().filter(|d| d.iter().any(|t| t == term)).count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let len = doc.len() as f64;
        let norm = if self.avg > 0.0 { len / self.avg } else { 0.0 };
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }

    /// (term, weight) pairs for each query token, in scoring order.
    fn weighted_terms(&self, query: &str, fuzzy: bool) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for token in oracle_tokens(query) {
            if !fuzzy {
                out.push((token, 1.0));
                continue;
            }
            let budget = oracle_budget(token.chars().count());
            let mut expansions: Vec<(usize, &String)> = self
                .vocabulary
                .iter()
                .map(|v| (strsim::damerau_levenshtein(&token, v), v))
                .filter(|(d, _)| *d <= budget)
                .collect();
            expansions.sort();
            out.extend(expansions.into_iter().map(|(d, v)| (v.clone(), 1.0 / (1.0 + d as f64))));
        }
        out
    }

    /// Every document with a positive score, by (score desc, doc_id asc).
    pub fn rank(&self, query: &str, fuzzy: bool) -> Vec<(u64, f64)> {
        let terms = self.weighted_terms(query, fuzzy);
        let mut scored: Vec<(u64, f64)> = self
            .docs
            .iter()
            .zip(&self.ids)
            .map(|(doc, &id)| {
                let mut score = 0.0;
                for (term, weight) in &terms {
                    let s = self.term_score(term, doc);
                    if s > 0.0 {
                        score += weight * s;
                    }
                }
                (id, score)
            })
            .filter(|&(_, s)| s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    }
}

// ---------------------------------------------------------------------------
// Random catalogs
// ---------------------------------------------------------------------------

pub fn random_word(rng: &mut StdRng, alphabet: &[u8], min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

/// A catalog of up to `max_docs` documents over a small alphabet, so exact
/// and near-duplicate terms are common.
pub fn random_catalog(rng: &mut StdRng, max_docs: usize) -> Vec<CatalogDocument> {
    let vocab: Vec<String> = (0..rng.random_range(5..40)).map(|_| random_word(rng, b"abcdef", 1, 10)).collect();
    let n = rng.random_range(1..=max_docs);
    let mut ids: Vec<u64> = (1..=(n as u64 * 3)).collect();
    ids.shuffle(rng);
    (0..n)
        .map(|i| {
            let words: Vec<&str> = (0..rng.random_range(1..8)).map(|_| vocab.choose(rng).unwrap().as_str()).collect();
            let sep = if rng.random_bool(0.2) { ", " } else { " " };
            let mut text = words.join(sep);
            if rng.random_bool(0.2) {
                text = text.to_uppercase();
            }
            CatalogDocument::new(ids[i], text)
        })
        .collect()
}

/// Up to five terms, mixing catalog words, perturbed catalog words and noise.
pub fn random_query(rng: &mut StdRng, catalog: &[CatalogDocument]) -> String {
    let words: Vec<String> = catalog.iter().flat_map(|d| oracle_tokens(&d.text)).collect();
    (0..rng.random_range(1..=5))
        .map(|_| match rng.random_range(0..3) {
            0 => words.choose(rng).unwrap().clone(),
            1 => {
                let w = words.choose(rng).unwrap().clone();
                let edits = 1 + rng.random_range(0..2);
                perturb(rng, &w, edits)
            }
            _ => random_word(rng, b"abcdefg", 1, 10),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Applies `edits` random edits (substitute, insert, delete, transpose).
pub fn perturb(rng: &mut StdRng, word: &str, edits: usize) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    for _ in 0..edits {
        let op = rng.random_range(0..4);
        match op {
            0 if !chars.is_empty() => {
                let i = rng.random_range(0..chars.len());
                chars[i] = (b'a' + rng.random_range(0..7)) as char;
            }
            1 => {
                let i = rng.random_range(0..=chars.len());
                chars.insert(i, (b'a' + rng.random_range(0..7)) as char);
            }
            2 if chars.len() > 1 => {
                let i = rng.random_range(0..chars.len());
                chars.remove(i);
            }
            _ if chars.len() > 1 => {
                let i = rng.random_range(0..chars.len() - 1);
                chars.swap(i, i + 1);
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Synthetic brand benchmark
// ---------------------------------------------------------------------------

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pronounceable(rng: &mut StdRng, len: usize) -> String {
    (0..len).map(|i| *if i % 2 == 0 { CONSONANTS } else { VOWELS }.choose(rng).unwrap() as char).collect()
}

/// Draws words of length `min..=max` whose distance to every accepted word
/// is at least `min_distance`.
fn spread_words(rng: &mut StdRng, count: usize, min: usize, max: usize, min_distance: usize, taken: &mut Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.random_range(min..=max);
        let w = pronounceable(rng, len);
        if taken.iter().all(|t| strsim::damerau_levenshtein(t, &w) >= min_distance) {
            taken.push(w.clone());
            out.push(w);
        }
    }
    out
}

/// Length-preserving misspelling at exactly `edits` Damerau–Levenshtein
/// distance.
pub fn misspell(rng: &mut StdRng, word: &str, edits: usize) -> String {
    loop {
        let mut chars: Vec<char> = word.chars().collect();
        for _ in 0..edits {
            if rng.random_bool(0.3) {
                let i = rng.random_range(0..chars.len() - 1);
                chars.swap(i, i + 1);
            } else {
                let i = rng.random_range(0..chars.len());
                chars[i] = (b'a' + rng.random_range(0..26)) as char;
            }
        }
        let candidate: String = chars.into_iter().collect();
        if strsim::damerau_levenshtein(word, &candidate) == edits {
            return candidate;
        }
    }
}

pub struct BrandBenchmark {
    pub catalog: Vec<CatalogDocument>,
    pub pairs: Vec<EvalPair>,
    pub brands: Vec<String>,
}

/// `docs` catalog documents `"<brand> <generic> <generic>"`, five per brand,
/// and `queries` labeled pairs: 60% misspelled brand, 20% correctly spelled
/// brand, 20% misspelled generic term without a brand. Brands sit at least
/// five edits from every other word, generic terms at least three.
pub fn brand_benchmark(seed: u64, docs: usize, queries: usize) -> BrandBenchmark {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut taken = Vec::new();
    let generics = spread_words(&mut rng, 150, 5, 7, 3, &mut taken);
    let brand_count = docs / 5;
    let mut brands = Vec::with_capacity(brand_count);
    while brands.len() < brand_count {
        let len = rng.random_range(6..=12);
        let w = pronounceable(&mut rng, len);
        if taken.iter().all(|t| strsim::damerau_levenshtein(t, &w) >= 5) {
            taken.push(w.clone());
            brands.push(w);
        }
    }

    let mut catalog = Vec::with_capacity(docs);
    let mut by_brand: HashMap<usize, Vec<(String, String)>> = HashMap::new();
    for i in 0..docs {
        let b = i % brand_count;
        let g1 = generics.choose(&mut rng).unwrap().clone();
        let mut g2 = generics.choose(&mut rng).unwrap().clone();
        while g2 == g1 {
            g2 = generics.choose(&mut rng).unwrap().clone();
        }
        catalog.push(CatalogDocument::new(i as u64 + 1, format!("{} {g1} {g2}", brands[b])).with_brand(brands[b].clone()));
        by_brand.entry(b).or_default().push((g1, g2));
    }

    let mut pairs = Vec::with_capacity(queries);
    for q in 0..queries {
        let b = rng.random_range(0..brand_count);
        let brand = &brands[b];
        let (g1, g2) = by_brand[&b].choose(&mut rng).unwrap().clone();
        let pair = match q * 10 / queries {
            0..=5 => {
                let edits = if brand.len() >= 9 { 1 + rng.random_range(0..2) } else { 1 };
                EvalPair::new(format!("{} {g1}", misspell(&mut rng, brand, edits)), format!("{brand} {g1}"))
                    .with_brand(brand.clone())
            }
            6..=7 => EvalPair::new(format!("{brand} {g1}"), format!("{brand} {g1}")).with_brand(brand.clone()),
            _ => EvalPair::new(format!("{} {g2}", misspell(&mut rng, &g1, 1)), format!("{g1} {g2}")),
        };
        pairs.push(pair);
    }
    BrandBenchmark { catalog, pairs, brands }
}

/// `n` documents of 3–6 words over a large generated vocabulary, for timing.
pub fn bulk_catalog(seed: u64, n: usize) -> Vec<CatalogDocument> {
    let mut rng = StdRng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..(n / 4).clamp(1000, 150_000)).map(|_| {
            let len = rng.random_range(3..=11);
            pronounceable(&mut rng, len)
        })
        .collect();
    (0..n)
        .map(|i| {
            let words: Vec<&str> = (0..rng.random_range(3..=6)).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect();
            CatalogDocument::new(i as u64 + 1, words.join(" "))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Stub HTTP server
// ---------------------------------------------------------------------------

pub struct StubServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(router: axum::Router) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let handle = thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self { addr, shutdown: Some(shutdown_tx), handle: Some(handle) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// A port with nothing listening on it.
pub fn closed_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}
