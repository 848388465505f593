//! Line-oriented corpus files.
//!
//! * `baskets.tsv`: `user_index<TAB>time_index<TAB>item_index,item_index,...`
//!   one line per basket, users ascending, baskets chronological.
//! * `vocab.tsv`: `index<TAB>item_id` for every real item, ascending.
//! * `users.tsv`: `user_index<TAB>user_id`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{split_corpus, Basket, Corpus, UserHistory, Vocabulary, NUM_SPECIAL};
use crate::error::{Error, Result};

pub const BASKETS_FILE: &str = "baskets.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const USERS_FILE: &str = "users.tsv";

pub(crate) fn baskets_text(corpus: &Corpus) -> String {
    let mut out = String::new();
    for u in &corpus.users {
        for b in &u.baskets {
            let items: Vec<String> = b.items.iter().map(usize::to_string).collect();
            writeln!(out, "{}\t{}\t{}", u.user_index, b.time_index, items.join(",")).unwrap();
        }
    }
    out
}

pub(crate) fn vocab_text(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for idx in vocab.real_indices() {
        writeln!(out, "{idx}\t{}", vocab.item_id(idx).unwrap()).unwrap();
    }
    out
}

fn users_text(corpus: &Corpus) -> String {
    let mut out = String::new();
    for u in &corpus.users {
        writeln!(out, "{}\t{}", u.user_index, u.user_id).unwrap();
    }
    out
}

pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in [
        (BASKETS_FILE, baskets_text(corpus)),
        (VOCAB_FILE, vocab_text(&corpus.vocabulary)),
        (USERS_FILE, users_text(corpus)),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn parse_err(file: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{file}:{}", line + 1),
        reason: reason.into(),
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
}

/// Reads a corpus directory and applies the standard split.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let vocab_src = read(dir, VOCAB_FILE)?;
    let mut items = Vec::new();
    for (n, line) in vocab_src.lines().enumerate() {
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(VOCAB_FILE, n, "expected index<TAB>item_id"))?;
        let idx: usize = idx.parse().map_err(|_| parse_err(VOCAB_FILE, n, "bad index"))?;
        if idx != NUM_SPECIAL + items.len() {
            return Err(parse_err(VOCAB_FILE, n, format!("index {idx} out of sequence")));
        }
        items.push(id.to_string());
    }
    let vocabulary = Vocabulary::from_items(items)?;

    let users_src = read(dir, USERS_FILE)?;
    let mut users: Vec<UserHistory> = Vec::new();
    for (n, line) in users_src.lines().enumerate() {
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(USERS_FILE, n, "expected user_index<TAB>user_id"))?;
        if idx.parse::<usize>().ok() != Some(users.len()) {
            return Err(parse_err(USERS_FILE, n, "user indices must be dense and ascending"));
        }
        users.push(UserHistory {
            user_index: users.len(),
            user_id: id.to_string(),
            baskets: Vec::new(),
        });
    }

    let baskets_src = read(dir, BASKETS_FILE)?;
    for (n, line) in baskets_src.lines().enumerate() {
        let mut parts = line.split('\t');
        let (Some(u), Some(t), Some(list), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(BASKETS_FILE, n, "expected three tab-separated fields"));
        };
        let u: usize = u.parse().map_err(|_| parse_err(BASKETS_FILE, n, "bad user index"))?;
        let t: usize = t.parse().map_err(|_| parse_err(BASKETS_FILE, n, "bad time index"))?;
        let items = list
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err(BASKETS_FILE, n, "bad item list"))?;
        if let Some(&bad) = items.iter().find(|&&i| !vocabulary.is_real(i)) {
            return Err(parse_err(BASKETS_FILE, n, format!("item index {bad} not in vocabulary")));
        }
        let user = users
            .get_mut(u)
            .ok_or_else(|| parse_err(BASKETS_FILE, n, format!("unknown user {u}")))?;
        if user.baskets.last().is_some_and(|b| b.time_index >= t) {
            return Err(parse_err(BASKETS_FILE, n, "baskets must be chronological"));
        }
        user.baskets.push(Basket::new(t, items));
    }
    let corpus = Corpus {
        users,
        vocabulary,
        split: Vec::new(),
    };
    Ok(split_corpus(corpus).0)
}
