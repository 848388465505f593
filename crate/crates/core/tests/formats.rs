use iert::corpus::{Basket, Corpus, UserHistory, Vocabulary};
use iert::eval::{format_recommendations, metrics_key_values, metrics_table, parse_metrics_key_values, parse_recommendations, Metrics, RankedList};

fn metrics(f1: f64, ndcg: f64) -> Metrics {
    Metrics {
        f1_at_k: f1,
        ndcg_at_k: ndcg,
        k: 5,
        n_users: 9238,
        excluded_empty: 0,
    }
}

#[test]
fn metrics_table_golden() {
    let iert = metrics(0.213, 0.2484);
    let top = metrics(0.1, 0.15);
    let table = metrics_table(&[("IERT", &iert), ("TOP", &top)]);
    assert_eq!(
        table,
        "Model    F1-score@5    NDCG@5\n\
         IERT       0.213000  0.248400\n\
         TOP        0.100000  0.150000\n"
    );
}

#[test]
fn metrics_key_values_golden_and_round_trip() {
    let m = metrics(0.213, 0.2484);
    let text = metrics_key_values("IERT", &m);
    assert_eq!(
        text,
        "model=IERT\nk=5\nn_users=9238\nexcluded_empty=0\nf1_at_k=0.213000000000\nndcg_at_k=0.248400000000\n"
    );
    assert_eq!(parse_metrics_key_values(&text).unwrap(), m);
}

#[test]
fn recommendation_file_golden_and_round_trip() {
    let vocab = Vocabulary::from_items(["bread", "milk", "eggs"]).unwrap();
    let lists = vec![
        RankedList {
            user_index: 0,
            items: vec![6, 4],
            scores: vec![0.75, 0.125],
        },
        RankedList {
            user_index: 1,
            items: vec![5],
            scores: vec![1.0],
        },
    ];
    let text = format_recommendations(&lists, &vocab).unwrap();
    assert_eq!(text, "0\teggs,bread\t0.75,0.125\n1\tmilk\t1.0\n");
    assert_eq!(parse_recommendations(&text, &vocab).unwrap(), lists);
}

#[test]
fn recommendation_scores_round_trip_exactly() {
    let vocab = Vocabulary::from_items(["a", "b"]).unwrap();
    let lists = vec![RankedList {
        user_index: 3,
        items: vec![5, 4],
        scores: vec![1.0 / 3.0, 0.1 + 0.2],
    }];
    let back = parse_recommendations(&format_recommendations(&lists, &vocab).unwrap(), &vocab).unwrap();
    assert_eq!(back[0].scores[1].to_bits(), (0.1f64 + 0.2).to_bits());
    assert_eq!(back[0].scores[0].to_bits(), (1.0f64 / 3.0).to_bits());
}

#[test]
fn corpus_files_golden() {
    let vocab = Vocabulary::from_items(["p9", "p2"]).unwrap();
    let users = vec![UserHistory {
        user_index: 0,
        user_id: "c17".into(),
        baskets: vec![Basket::new(0, vec![4]), Basket::new(1, vec![5, 4]), Basket::new(2, vec![5])],
    }];
    let corpus = Corpus {
        users,
        vocabulary: vocab,
        split: Vec::new(),
    };
    let dir = tempfile::tempdir().unwrap();
    iert::corpus::write_corpus(&corpus, dir.path()).unwrap();
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read(iert::corpus::BASKETS_FILE), "0\t0\t4\n0\t1\t5,4\n0\t2\t5\n");
    assert_eq!(read(iert::corpus::VOCAB_FILE), "4\tp9\n5\tp2\n");
    assert_eq!(read(iert::corpus::USERS_FILE), "0\tc17\n");
}
