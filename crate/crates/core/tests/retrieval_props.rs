use cika::retrieval::{idf, term_weight, Bm25Index, Bm25Params, CorpusDoc};
use proptest::prelude::*;

const VOCAB: [&str; 8] = [
    "prime", "angle", "circle", "modulo", "bound", "sum", "graph", "root",
];

fn doc(id: String, words: &[usize], tags: Vec<String>) -> CorpusDoc {
    CorpusDoc {
        text: words
            .iter()
            .map(|&w| VOCAB[w])
            .collect::<Vec<_>>()
            .join(" "),
        id,
        concept_tags: tags,
        meta: Default::default(),
    }
}

fn arb_docs() -> impl Strategy<Value = Vec<CorpusDoc>> {
    prop::collection::vec(prop::collection::vec(0usize..VOCAB.len(), 1..12), 1..10).prop_map(
        |texts| {
            texts
                .iter()
                .enumerate()
                .map(|(i, w)| doc(format!("d{i:02}"), w, vec![format!("tag{}", i % 3)]))
                .collect()
        },
    )
}

fn arb_query() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..VOCAB.len(), 1..6)
}

fn words(q: &[usize]) -> String {
    q.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ")
}

fn scores(index: &Bm25Index, q: &str) -> Vec<(String, f64)> {
    let mut hits: Vec<(String, f64)> = index
        .query(q, index.len())
        .unwrap()
        .into_iter()
        .map(|h| (h.id, h.score))
        .collect();
    hits.sort_by(|a, b| a.0.cmp(&b.0));
    hits
}

proptest! {
    #[test]
    fn extra_query_terms_never_lower_a_score(docs in arb_docs(), q in arb_query(), extra in 0usize..VOCAB.len()) {
        let index = Bm25Index::from_docs(docs).unwrap();
        let before = scores(&index, &words(&q));
        let mut longer = q.clone();
        longer.push(extra);
        let after = scores(&index, &words(&longer));
        for ((id_a, a), (id_b, b)) in before.iter().zip(&after) {
            prop_assert_eq!(id_a, id_b);
            prop_assert!(*b >= *a);
        }
    }

    #[test]
    fn term_weight_rises_with_frequency_and_falls_with_length(
        tf in 1.0f64..20.0,
        len in 1.0f64..50.0,
        avgdl in 1.0f64..50.0,
    ) {
        let p = Bm25Params::default();
        prop_assert!(term_weight(tf + 1.0, len, avgdl, p) > term_weight(tf, len, avgdl, p));
        prop_assert!(term_weight(tf, len + 1.0, avgdl, p) < term_weight(tf, len, avgdl, p));
        prop_assert!(term_weight(tf, len, avgdl, p) < p.k1 + 1.0);
    }

    #[test]
    fn rarer_terms_weigh_more(n in 2usize..200, df in 1usize..200) {
        prop_assume!(df < n);
        prop_assert!(idf(n, df) > idf(n, df + 1));
        prop_assert!(idf(n, df + 1) > 0.0);
    }

    #[test]
    fn unique_term_retrieves_its_document(docs in arb_docs(), pick in any::<prop::sample::Index>()) {
        let mut docs = docs;
        let i = pick.index(docs.len());
        docs[i].text.push_str(" singular");
        let id = docs[i].id.clone();
        let index = Bm25Index::from_docs(docs).unwrap();
        let hits = index.query("singular", 1).unwrap();
        prop_assert_eq!(&hits[0].id, &id);
        prop_assert!(hits[0].score > 0.0);
    }

    #[test]
    fn corpus_order_does_not_matter(docs in arb_docs(), q in arb_query(), rot in 0usize..10) {
        let a = Bm25Index::from_docs(docs.clone()).unwrap();
        let mut shuffled = docs;
        shuffled.reverse();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        let b = Bm25Index::from_docs(shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        let k = a.len();
        prop_assert_eq!(a.query(&words(&q), k).unwrap(), b.query(&words(&q), k).unwrap());
    }

    #[test]
    fn hits_are_ranked(docs in arb_docs(), q in arb_query(), k in 1usize..12) {
        let index = Bm25Index::from_docs(docs).unwrap();
        let hits = index.query(&words(&q), k).unwrap();
        prop_assert_eq!(hits.len(), k.min(index.len()));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
        }
    }
}

#[test]
fn cache_survives_a_round_trip_on_disk() {
    let docs = vec![
        doc("a".into(), &[0, 0, 1], vec!["primes".into()]),
        doc("b".into(), &[2, 3], vec![]),
    ];
    let index = Bm25Index::from_docs(docs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    index.save(&path).unwrap();
    assert_eq!(Bm25Index::load(&path).unwrap(), index);
}
