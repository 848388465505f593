//! Transaction corpora: ingestion, filtering, splitting and synthetic data.

mod build;
mod io;
mod parse;
mod synthetic;

use std::collections::HashMap;

pub use build::{build_corpus, split_corpus, BuildOptions, BuildReport, SplitReport};
pub use io::{read_corpus, write_corpus, BASKETS_FILE, USERS_FILE, VOCAB_FILE};
pub use parse::{parse_transactions, ParseOutcome, ParseSchema, TransactionRecord};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

/// Items bought by one user in one visit, as vocabulary indices in
/// first-appearance order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Basket {
    pub items: Vec<usize>,
    pub time_index: usize,
}

impl Basket {
    pub fn new(time_index: usize, items: Vec<usize>) -> Self {
        Basket { items, time_index }
    }

    pub fn contains(&self, item: usize) -> bool {
        self.items.contains(&item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserHistory {
    pub user_index: usize,
    pub user_id: String,
    pub baskets: Vec<Basket>,
}

/// Bijection between item ids and vocabulary indices. Indices `0..4` are the
/// special tokens; real items occupy `4..4 + catalog_size`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    items: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_items<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::default();
        for item in items {
            let item = item.into();
            if vocab.lookup.contains_key(&item) {
                return Err(Error::Contract(format!("duplicate item id `{item}` in vocabulary")));
            }
            vocab.lookup.insert(item.clone(), vocab.items.len() + NUM_SPECIAL);
            vocab.items.push(item);
        }
        Ok(vocab)
    }

    pub fn catalog_size(&self) -> usize {
        self.items.len()
    }

    /// Catalog plus the four special tokens.
    pub fn size(&self) -> usize {
        self.items.len() + NUM_SPECIAL
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.lookup.get(item_id).copied()
    }

    pub fn item_id(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(NUM_SPECIAL)
            .and_then(|i| self.items.get(i))
            .map(String::as_str)
    }

    pub fn is_real(&self, index: usize) -> bool {
        (NUM_SPECIAL..self.size()).contains(&index)
    }

    pub fn real_indices(&self) -> std::ops::Range<usize> {
        NUM_SPECIAL..self.size()
    }
}

/// Per-user partition: everything but the last two baskets trains, the
/// penultimate validates, the last tests.
#[derive(Clone, Debug, PartialEq)]
pub struct UserSplit {
    pub train: Vec<Basket>,
    pub validation: Basket,
    pub test: Basket,
}

impl UserSplit {
    /// Baskets observed before the test basket (train followed by validation).
    pub fn history_before_test(&self) -> Vec<Basket> {
        let mut h = self.train.clone();
        h.push(self.validation.clone());
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub users: Vec<UserHistory>,
    pub vocabulary: Vocabulary,
    /// Parallel to `users`; empty until [`split_corpus`] runs.
    pub split: Vec<UserSplit>,
}

impl Corpus {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn is_split(&self) -> bool {
        !self.users.is_empty() && self.split.len() == self.users.len()
    }

    pub fn num_baskets(&self) -> usize {
        self.users.iter().map(|u| u.baskets.len()).sum()
    }

    pub fn train_basket_count(&self) -> usize {
        self.split.iter().map(|s| s.train.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_round_trip() {
        let v = Vocabulary::from_items(["x", "y", "z"]).unwrap();
        assert_eq!(v.size(), 7);
        for id in ["x", "y", "z"] {
            assert_eq!(v.item_id(v.index_of(id).unwrap()), Some(id));
        }
        assert_eq!(v.index_of("x"), Some(4));
        assert!(!v.is_real(MASK));
        assert!(v.item_id(CLS).is_none());
        assert!(Vocabulary::from_items(["a", "a"]).is_err());
    }
}
