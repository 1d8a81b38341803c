mod common;

use common::{random_catalog, random_query, Oracle};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use speller_core::sparse::{build_index, search_bm25, search_fuzzy_bm25, Bm25Params};

fn check(seed: u64, k1: f64, b: f64) -> Result<(), TestCaseError> {
    let mut rng = StdRng::seed_from_u64(seed);
    let catalog = random_catalog(&mut rng, 50);
    let index = build_index(&catalog).unwrap();
    let params = Bm25Params::new(k1, b).unwrap();
    let oracle = Oracle::new(&catalog, k1, b);
    for _ in 0..5 {
        let query = random_query(&mut rng, &catalog);
        for fuzzy in [false, true] {
            let expected = oracle.rank(&query, fuzzy);
            let got = if fuzzy {
                search_fuzzy_bm25(&index, &params, &query, catalog.len())
            } else {
                search_bm25(&index, &params, &query, catalog.len())
            };
            let got_ids: Vec<u64> = got.iter().map(|d| d.doc_id).collect();
            let expected_ids: Vec<u64> = expected.iter().map(|d| d.0).collect();
            prop_assert_eq!(&got_ids, &expected_ids, "query {:?} fuzzy {}", query, fuzzy);
            for (g, e) in got.iter().zip(&expected) {
                prop_assert!((g.score - e.1).abs() <= 1e-9, "{} vs {}", g.score, e.1);
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rankings_match_brute_force(seed in any::<u64>(), k1 in 0.1f64..3.0, b in 0.0f64..=1.0) {
        check(seed, k1, b)?;
    }
}

#[test]
fn default_parameters_over_fixed_seeds() {
    for seed in 0..20 {
        check(seed, 1.2, 0.75).unwrap();
    }
}

#[test]
fn top_k_is_a_prefix_of_the_full_ranking() {
    let mut rng = StdRng::seed_from_u64(7);
    let catalog = random_catalog(&mut rng, 50);
    let index = build_index(&catalog).unwrap();
    let params = Bm25Params::default();
    for _ in 0..20 {
        let q = random_query(&mut rng, &catalog);
        let full = search_fuzzy_bm25(&index, &params, &q, catalog.len());
        for k in 1..=full.len().min(6) {
            let top = search_fuzzy_bm25(&index, &params, &q, k);
            assert_eq!(top.iter().map(|d| d.doc_id).collect::<Vec<_>>(), full[..k].iter().map(|d| d.doc_id).collect::<Vec<_>>());
        }
    }
}
