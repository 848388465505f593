//! F1@K and NDCG@K on hand-sized examples, plus the TOP baseline on a toy
//! corpus.

use iert::corpus::{generate_synthetic, Basket, SyntheticSpec};
use iert::eval::{evaluate, f1_at_k, metrics_key_values, metrics_table, ndcg_at_k, rank_top_k, top_baseline};

fn main() -> iert::Result<()> {
    let truth = Basket::new(0, vec![4, 5]);
    let recs = [4, 10, 11, 12, 13];
    println!("F1@5   one hit of two, rank 1: {:.6}", f1_at_k(&recs, &truth, 5)?);
    println!("NDCG@5 one hit of two, rank 1: {:.6}", ndcg_at_k(&recs, &truth, 5)?);
    println!("NDCG@5 single item at rank 2:  {:.6}", ndcg_at_k(&[9, 4, 10], &Basket::new(0, vec![4]), 5)?);

    // Ties break toward the lower item index.
    let ranked = rank_top_k(0, vec![(8, 0.5), (6, 0.9), (7, 0.5), (9, 0.1)], 3);
    println!("ranked {:?} with scores {:?}", ranked.items, ranked.scores);

    let corpus = generate_synthetic(&SyntheticSpec::planted(50, 20, 5, 2, 2, 0.1, 1))?;
    let (metrics, per_user) = evaluate(&top_baseline(&corpus, 5)?, &corpus, 5)?;
    print!("{}", metrics_table(&[("TOP", &metrics)]));
    print!("{}", metrics_key_values("TOP", &metrics));
    println!("first user: {:?}", per_user[0]);
    Ok(())
}
