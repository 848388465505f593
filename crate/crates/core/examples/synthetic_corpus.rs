//! Planted co-occurrence pairs and sequential rules, measured back out of
//! the generated corpus.

use iert::corpus::{generate_synthetic, SyntheticSpec, NUM_SPECIAL};

fn main() -> iert::Result<()> {
    let spec = SyntheticSpec::planted(500, 60, 8, 3, 3, 0.1, 42);
    let corpus = generate_synthetic(&spec)?;
    println!(
        "{} users, {} items, {} baskets",
        corpus.num_users(),
        corpus.vocabulary.catalog_size(),
        corpus.users.iter().map(|u| u.baskets.len()).sum::<usize>()
    );

    for &(a, b) in &spec.co_occur_pairs {
        let (a, b) = (a + NUM_SPECIAL, b + NUM_SPECIAL);
        let (mut with_a, mut both) = (0, 0);
        for basket in corpus.users.iter().flat_map(|u| &u.baskets) {
            if basket.contains(a) {
                with_a += 1;
                both += basket.contains(b) as usize;
            }
        }
        println!("pair {a}↔{b}: P(b | a) = {:.3} over {with_a} baskets", both as f64 / with_a as f64);
    }

    for &(x, y) in &spec.sequential_rules {
        let (x, y) = (x + NUM_SPECIAL, y + NUM_SPECIAL);
        let (mut triggered, mut followed) = (0, 0);
        for user in &corpus.users {
            for w in user.baskets.windows(2) {
                if w[0].contains(x) {
                    triggered += 1;
                    followed += w[1].contains(y) as usize;
                }
            }
        }
        println!("rule {x}→{y}: P(y ∈ next | x) = {:.3} over {triggered} transitions", followed as f64 / triggered as f64);
    }
    Ok(())
}
