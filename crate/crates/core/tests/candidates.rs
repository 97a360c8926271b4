mod common;

use common::{brute_force, mention, oracle_sim, random_tiny_case, seq};
use lightlink_core::candidates::{
    name_similarity, read_candidate_cache, recall_from_sets, write_candidate_cache, CandidateIndex, EXACT_MATCH,
};
use lightlink_core::corpus::{Document, Gold};
use lightlink_core::embeddings::WordEmbeddingTable;
use lightlink_core::kb::KnowledgeBase;
use lightlink_core::preprocess::Preprocessor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn axis_table() -> WordEmbeddingTable {
    let mut t = WordEmbeddingTable::new(3).unwrap();
    t.insert("renal", &[1.0, 0.0, 0.0]).unwrap();
    t.insert("kidney", &[1.0, 0.0, 0.0]).unwrap();
    t.insert("failure", &[0.0, 1.0, 0.0]).unwrap();
    t.insert("injury", &[0.0, 1.0, 1.0]).unwrap();
    t.insert("acute", &[0.0, 0.0, 1.0]).unwrap();
    t
}

fn small_kb() -> KnowledgeBase {
    let pre = Preprocessor::default();
    let mut kb = KnowledgeBase::new();
    kb.add_entity("D1", &["kidney failure", "renal failure"], &pre).unwrap();
    kb.add_entity("D2", &["acute kidney injury"], &pre).unwrap();
    kb.add_entity("D3", &["acute failure"], &pre).unwrap();
    kb
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_matches_brute_force(seed in any::<u64>(), k in 1usize..12) {
        let case = random_tiny_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let index = CandidateIndex::new(&case.kb, &case.table);
        for m in &case.mentions {
            let got = index.rank(m, k, &case.table, true).unwrap();
            let want = brute_force(m, &case.kb, &case.table, k);
            prop_assert_eq!(got.len(), want.len());
            for (g, (entity, name, score)) in got.iter().zip(&want) {
                prop_assert_eq!(&g.entity, entity);
                prop_assert_eq!(&g.name.joined(), name);
                prop_assert_eq!(g.score.to_bits(), score.to_bits());
            }
        }
    }

    #[test]
    fn similarity_is_symmetric_and_bounded(seed in any::<u64>()) {
        let case = random_tiny_case(&mut ChaCha8Rng::seed_from_u64(seed));
        for pair in case.mentions.windows(2) {
            let ab = name_similarity(&pair[0], &pair[1], &case.table).unwrap();
            let ba = name_similarity(&pair[1], &pair[0], &case.table).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((ab - oracle_sim(pair[0].tokens(), pair[1].tokens(), &case.table)).abs() < 1e-12);
        }
    }
}

#[test]
fn similarity_by_hand() {
    let t = axis_table();
    // renal matches kidney exactly, failure matches injury at 1/sqrt(2);
    // every token finds its best partner on the other side.
    let s = name_similarity(&seq(&["renal", "failure"]), &seq(&["kidney", "injury"]), &t).unwrap();
    let half = 1.0 / 2f64.sqrt();
    assert!((s - (1.0 + half + 1.0 + half) / 4.0).abs() < 1e-12, "{s}");

    // An unknown token contributes 0 but still counts in the length.
    let s = name_similarity(&seq(&["renal", "xyzzy"]), &seq(&["kidney"]), &t).unwrap();
    assert!((s - 2.0 / 3.0).abs() < 1e-12, "{s}");

    assert_eq!(name_similarity(&seq(&["acute"]), &seq(&["acute"]), &t).unwrap(), 1.0);
}

#[test]
fn exact_matches_filter_the_candidate_list() {
    let kb = small_kb();
    let t = axis_table();
    let index = CandidateIndex::new(&kb, &t);

    // "renal failure" is an exact name of D1 and of nothing else, so only D1
    // survives the filter.
    let filtered = index.rank(&seq(&["renal", "failure"]), 3, &t, true).unwrap();
    assert_eq!(filtered.len(), 1);
    assert_eq!(filtered[0].entity, "D1");
    assert!(filtered[0].score >= EXACT_MATCH);

    let unfiltered = index.rank(&seq(&["renal", "failure"]), 3, &t, false).unwrap();
    let ids: Vec<&str> = unfiltered.iter().map(|c| c.entity.as_str()).collect();
    assert_eq!(ids, ["D1", "D2", "D3"]);

    // Without an exact match nothing is dropped.
    let fuzzy = index.rank(&seq(&["acute", "failure", "injury"]), 3, &t, true).unwrap();
    assert_eq!(fuzzy.len(), 3);
    assert!(index.rank(&seq(&[]), 3, &t, true).is_none());
}

#[test]
fn cache_round_trip_and_recall() {
    let kb = small_kb();
    let t = axis_table();
    let pre = Preprocessor::default();
    let mut doc = Document::new(
        "d1",
        "Renal failure and acute injury. Unknown xyzzy here.",
        vec![
            (0, 13, Gold::Entity("D1".into())),
            (18, 30, Gold::Entity("D2".into())),
            (40, 45, Gold::Nil),
        ],
    )
    .unwrap();
    pre.document(&mut doc);
    let docs = vec![doc];
    let sets = CandidateIndex::new(&kb, &t).generate_all(&docs, 2, &t, true);
    assert_eq!(sets.len(), 3);
    // "acute injury" is closer to "acute failure" than to the gold entity.
    assert_eq!(sets[1].items[0].entity, "D3");
    assert_eq!(recall_from_sets(&docs, &sets).unwrap(), 1.0);
    let top1 = CandidateIndex::new(&kb, &t).generate_all(&docs, 1, &t, true);
    assert_eq!(recall_from_sets(&docs, &top1).unwrap(), 0.5);

    let mut buf = Vec::new();
    write_candidate_cache(&mut buf, &sets).unwrap();
    let back = read_candidate_cache(buf.as_slice(), "cache.jsonl", 2).unwrap();
    assert_eq!(back, sets);

    // A cache holding more candidates than k is rejected.
    let err = read_candidate_cache(buf.as_slice(), "cache.jsonl", 1).unwrap_err();
    assert!(err.to_string().contains("cache.jsonl:2"), "{err}");
}

#[test]
fn single_mention_api_agrees_with_the_index() {
    let kb = small_kb();
    let t = axis_table();
    let m = mention(&seq(&["kidney", "injury"]));
    let one = lightlink_core::candidates::generate_candidates("d", 0, &m, &kb, &t, 2).unwrap();
    let all = CandidateIndex::new(&kb, &t).generate("d", 0, &m, 2, &t, true);
    assert_eq!(one, all);
    assert!(lightlink_core::candidates::generate_candidates("d", 0, &m, &kb, &t, 0).is_err());
    assert!(lightlink_core::candidates::generate_candidates("d", 0, &m, &KnowledgeBase::new(), &t, 2).is_err());
}
