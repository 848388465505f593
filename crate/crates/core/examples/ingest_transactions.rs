//! Raw transaction log → filtered, split basket corpus on disk.
//!
//! Run with `cargo run --example ingest_transactions`.

use std::io::Cursor;

use iert::corpus::{build_corpus, parse_transactions, read_corpus, split_corpus, write_corpus, BuildOptions, ParseSchema};

fn log_text() -> String {
    let mut text = String::from("date;customer;product\n");
    // Six shoppers, five visits each, three products per visit.
    for user in 0..6 {
        for day in 1..=5 {
            for k in 0..3 {
                let item = (user + day * k) % 7;
                text.push_str(&format!("2001-01-{day:02};c{user};p{item}\n"));
            }
        }
    }
    text.push_str("not-a-date;c0;p1\n");
    text
}

fn main() -> iert::Result<()> {
    let schema = ParseSchema {
        delimiter: b';',
        user_col: "customer".into(),
        date_col: "date".into(),
        item_col: "product".into(),
        date_format: "%Y-%m-%d".into(),
    };
    let parsed = parse_transactions(Cursor::new(log_text()), &schema)?;
    println!("parsed {} records, skipped {}", parsed.records.len(), parsed.skipped);

    let options = BuildOptions {
        min_item_users: 2,
        min_user_items: 4,
        ..Default::default()
    };
    let (corpus, report) = build_corpus(&parsed.records, &options)?;
    println!("{}", report.summary());

    let (corpus, split) = split_corpus(corpus);
    println!("{split:?}");
    let first = &corpus.split[0];
    println!(
        "user {}: {} train baskets, validation {:?}, test {:?}",
        corpus.users[0].user_id,
        first.train.len(),
        first.validation.items,
        first.test.items
    );

    let dir = std::env::temp_dir().join("iert-example-ingest");
    write_corpus(&corpus, &dir)?;
    let back = read_corpus(&dir)?;
    assert_eq!(back, corpus);
    println!("corpus written to {} and read back unchanged", dir.display());
    Ok(())
}
