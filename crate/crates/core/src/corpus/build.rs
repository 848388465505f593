use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use log::warn;

use super::{Basket, Corpus, TransactionRecord, UserHistory, UserSplit, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub min_item_users: usize,
    pub min_user_items: usize,
    pub max_basket_items: usize,
    /// Users need this many baskets to contribute to train, validation and test.
    pub min_user_baskets: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            min_item_users: 10,
            min_user_items: 10,
            max_basket_items: 100,
            min_user_baskets: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildReport {
    pub raw_records: usize,
    pub raw_users: usize,
    pub raw_items: usize,
    pub raw_baskets: usize,
    pub duplicate_rows: usize,
    pub truncated_baskets: usize,
    pub filter_rounds: usize,
    pub removed_items: usize,
    pub removed_users_min_items: usize,
    pub removed_users_min_baskets: usize,
    pub users: usize,
    pub items: usize,
    pub baskets: usize,
}

impl BuildReport {
    pub fn summary(&self) -> String {
        format!(
            "raw_records={} raw_users={} raw_items={} raw_baskets={} duplicate_rows={} rounds={} \
             removed_items={} removed_users_min_items={} removed_users_min_baskets={} users={} items={} baskets={}",
            self.raw_records,
            self.raw_users,
            self.raw_items,
            self.raw_baskets,
            self.duplicate_rows,
            self.filter_rounds,
            self.removed_items,
            self.removed_users_min_items,
            self.removed_users_min_baskets,
            self.users,
            self.items,
            self.baskets
        )
    }
}

struct RawUser<'a> {
    id: &'a str,
    /// Baskets keyed by day; item ids in first-appearance order, deduplicated.
    baskets: BTreeMap<NaiveDate, Vec<&'a str>>,
}

fn basket_view<'a>(user: &RawUser<'a>, items: &HashSet<&str>, max_items: usize) -> Vec<Vec<&'a str>> {
    user.baskets
        .values()
        .map(|b| {
            b.iter()
                .copied()
                .filter(|i| items.contains(i))
                .take(max_items)
                .collect::<Vec<_>>()
        })
        .filter(|b| !b.is_empty())
        .collect()
}

/// Groups records into per-user day baskets and filters items and users to a
/// fixed point: afterwards every item is bought by at least `min_item_users`
/// users, every user bought at least `min_user_items` items over at least
/// `min_user_baskets` non-empty baskets, and no basket exceeds
/// `max_basket_items` (truncated in log order).
pub fn build_corpus(records: &[TransactionRecord], options: &BuildOptions) -> Result<(Corpus, BuildReport)> {
    let mut report = BuildReport {
        raw_records: records.len(),
        ..Default::default()
    };
    if records.is_empty() {
        return Err(Error::EmptyCorpus("no transaction records".into()));
    }

    let mut users: Vec<RawUser<'_>> = Vec::new();
    let mut user_pos: HashMap<&str, usize> = HashMap::new();
    let mut item_order: Vec<&str> = Vec::new();
    let mut seen_items: HashSet<&str> = HashSet::new();
    for r in records {
        let u = *user_pos.entry(r.user_id.as_str()).or_insert_with(|| {
            users.push(RawUser {
                id: r.user_id.as_str(),
                baskets: BTreeMap::new(),
            });
            users.len() - 1
        });
        let basket = users[u].baskets.entry(r.date).or_default();
        if basket.contains(&r.item_id.as_str()) {
            report.duplicate_rows += 1;
        } else {
            basket.push(r.item_id.as_str());
        }
        if seen_items.insert(r.item_id.as_str()) {
            item_order.push(r.item_id.as_str());
        }
    }
    report.raw_users = users.len();
    report.raw_items = item_order.len();
    report.raw_baskets = users.iter().map(|u| u.baskets.len()).sum();

    let mut alive_items: HashSet<&str> = seen_items;
    let mut alive_users: Vec<bool> = vec![true; users.len()];
    loop {
        report.filter_rounds += 1;
        let mut item_users: HashMap<&str, usize> = HashMap::new();
        let mut changed = false;
        for (u, user) in users.iter().enumerate() {
            if !alive_users[u] {
                continue;
            }
            let baskets = basket_view(user, &alive_items, options.max_basket_items);
            let total: usize = baskets.iter().map(Vec::len).sum();
            if total < options.min_user_items {
                alive_users[u] = false;
                report.removed_users_min_items += 1;
                changed = true;
                continue;
            }
            if baskets.len() < options.min_user_baskets {
                alive_users[u] = false;
                report.removed_users_min_baskets += 1;
                changed = true;
                continue;
            }
            let distinct: HashSet<&str> = baskets.iter().flatten().copied().collect();
            for i in distinct {
                *item_users.entry(i).or_default() += 1;
            }
        }
        let before = alive_items.len();
        alive_items.retain(|i| item_users.get(i).copied().unwrap_or(0) >= options.min_item_users.max(1));
        report.removed_items += before - alive_items.len();
        changed |= before != alive_items.len();
        if !changed {
            break;
        }
    }

    let kept_items: Vec<&str> = item_order.iter().copied().filter(|i| alive_items.contains(i)).collect();
    let vocabulary = Vocabulary::from_items(kept_items.iter().copied())?;
    let mut histories = Vec::new();
    for (u, user) in users.iter().enumerate() {
        if !alive_users[u] {
            continue;
        }
        report.truncated_baskets += user
            .baskets
            .values()
            .filter(|b| b.iter().filter(|i| alive_items.contains(*i)).count() > options.max_basket_items)
            .count();
        let baskets = basket_view(user, &alive_items, options.max_basket_items)
            .into_iter()
            .enumerate()
            .map(|(t, items)| {
                let items = items
                    .iter()
                    .map(|i| vocabulary.index_of(i).expect("kept item in vocabulary"))
                    .collect();
                Basket::new(t, items)
            })
            .collect();
        histories.push(UserHistory {
            user_index: histories.len(),
            user_id: user.id.to_string(),
            baskets,
        });
    }
    report.users = histories.len();
    report.items = vocabulary.catalog_size();
    report.baskets = histories.iter().map(|h| h.baskets.len()).sum();
    if histories.is_empty() {
        return Err(Error::EmptyCorpus(report.summary()));
    }
    Ok((
        Corpus {
            users: histories,
            vocabulary,
            split: Vec::new(),
        },
        report,
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitReport {
    pub excluded_users: usize,
}

/// Last basket → test, penultimate → validation, the rest → train. Users
/// with fewer than three baskets are dropped and the remaining users are
/// re-indexed densely.
pub fn split_corpus(mut corpus: Corpus) -> (Corpus, SplitReport) {
    let before = corpus.users.len();
    corpus.users.retain(|u| u.baskets.len() >= 3);
    let report = SplitReport {
        excluded_users: before - corpus.users.len(),
    };
    if report.excluded_users > 0 {
        warn!("split: excluded {} users with fewer than 3 baskets", report.excluded_users);
    }
    corpus.split = corpus
        .users
        .iter_mut()
        .enumerate()
        .map(|(i, u)| {
            u.user_index = i;
            let n = u.baskets.len();
            UserSplit {
                train: u.baskets[..n - 2].to_vec(),
                validation: u.baskets[n - 2].clone(),
                test: u.baskets[n - 1].clone(),
            }
        })
        .collect();
    (corpus, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, day: u32, item: &str) -> TransactionRecord {
        TransactionRecord {
            user_id: user.into(),
            date: NaiveDate::from_ymd_opt(2001, 1, day).unwrap(),
            item_id: item.into(),
        }
    }

    fn no_filter() -> BuildOptions {
        BuildOptions {
            min_item_users: 0,
            min_user_items: 0,
            max_basket_items: 100,
            min_user_baskets: 3,
        }
    }

    #[test]
    fn one_user_three_days() {
        let records = vec![rec("u", 1, "a"), rec("u", 2, "a"), rec("u", 3, "a")];
        let (c, _) = build_corpus(&records, &no_filter()).unwrap();
        assert_eq!(c.users.len(), 1);
        assert_eq!(c.users[0].baskets.len(), 3);
    }

    #[test]
    fn rare_item_removed() {
        // x bought by 2 users, threshold 3
        let mut records = Vec::new();
        for u in ["u1", "u2", "u3", "u4", "u5"] {
            for d in 1..=3 {
                records.push(rec(u, d, "common"));
            }
        }
        records.push(rec("u1", 1, "x"));
        records.push(rec("u2", 2, "x"));
        let opts = BuildOptions {
            min_item_users: 3,
            ..no_filter()
        };
        let (c, r) = build_corpus(&records, &opts).unwrap();
        assert!(c.vocabulary.index_of("x").is_none());
        assert_eq!(c.vocabulary.catalog_size(), 1);
        assert_eq!(r.removed_items, 1);
    }

    #[test]
    fn duplicates_collapse_and_truncation_keeps_log_order() {
        let records = vec![
            rec("u", 1, "a"),
            rec("u", 1, "b"),
            rec("u", 1, "a"),
            rec("u", 1, "c"),
            rec("u", 2, "c"),
            rec("u", 3, "b"),
        ];
        let opts = BuildOptions {
            max_basket_items: 2,
            ..no_filter()
        };
        let (c, r) = build_corpus(&records, &opts).unwrap();
        assert_eq!(r.duplicate_rows, 1);
        assert_eq!(r.truncated_baskets, 1);
        let v = &c.vocabulary;
        assert_eq!(c.users[0].baskets[0].items, vec![v.index_of("a").unwrap(), v.index_of("b").unwrap()]);
    }

    #[test]
    fn everything_filtered_is_empty_corpus_error() {
        let records = vec![rec("u", 1, "a")];
        let err = build_corpus(&records, &BuildOptions::default()).unwrap_err();
        match err {
            Error::EmptyCorpus(msg) => assert!(msg.contains("raw_records=1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn user_with(n: usize, index: usize) -> UserHistory {
        UserHistory {
            user_index: index,
            user_id: format!("u{index}"),
            baskets: (0..n).map(|t| Basket::new(t, vec![4 + t])).collect(),
        }
    }

    fn corpus_of(users: Vec<UserHistory>) -> Corpus {
        Corpus {
            users,
            vocabulary: Vocabulary::from_items((0..10).map(|i| i.to_string())).unwrap(),
            split: vec![],
        }
    }

    #[test]
    fn split_four_baskets() {
        let (c, _) = split_corpus(corpus_of(vec![user_with(4, 0)]));
        let s = &c.split[0];
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.validation.time_index, 2);
        assert_eq!(s.test.time_index, 3);
    }

    #[test]
    fn split_counts_and_exclusion() {
        let (c, r) = split_corpus(corpus_of(vec![user_with(4, 0), user_with(2, 1), user_with(3, 2)]));
        assert_eq!(r.excluded_users, 1);
        assert_eq!(c.train_basket_count(), 3);
        assert_eq!(c.users[1].user_index, 1);
        assert_eq!(c.split[1].train.len(), 1);
    }
}
