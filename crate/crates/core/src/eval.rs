//! Ranking metrics, the popularity baseline and the result files.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Basket, Corpus, Vocabulary};
use crate::error::{Error, Result};

/// Top-K list for one user; scores are non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub user_index: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    pub fn validate(&self) -> Result<()> {
        if self.items.len() != self.scores.len() {
            return Err(Error::Contract(format!("user {}: {} items but {} scores", self.user_index, self.items.len(), self.scores.len())));
        }
        let unique: HashSet<usize> = self.items.iter().copied().collect();
        if unique.len() != self.items.len() {
            return Err(Error::Contract(format!("user {}: duplicate items in ranked list", self.user_index)));
        }
        if self.scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Contract(format!("user {}: scores not non-increasing", self.user_index)));
        }
        Ok(())
    }
}

/// Orders `(item, score)` by descending score, ties to the lower item index,
/// and keeps the first `k`.
pub fn rank_top_k(user_index: usize, mut scored: Vec<(usize, f64)>, k: usize) -> RankedList {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    RankedList {
        user_index,
        items: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
    }
}

fn hits(recs: &[usize], truth: &Basket, k: usize) -> usize {
    recs.iter().take(k).filter(|&&i| truth.contains(i)).count()
}

/// Harmonic mean of precision (hits / k) and recall (hits / |truth|).
pub fn f1_at_k(recs: &[usize], truth: &Basket, k: usize) -> Result<f64> {
    check_args(truth, k)?;
    let h = hits(recs, truth, k) as f64;
    let p = h / k as f64;
    let r = h / truth.len() as f64;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

/// DCG over the first `k` recommendations divided by the ideal DCG over
/// `min(k, |truth|)` hits.
pub fn ndcg_at_k(recs: &[usize], truth: &Basket, k: usize) -> Result<f64> {
    check_args(truth, k)?;
    let dcg: f64 = recs
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| truth.contains(i))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    Ok(dcg / idcg)
}

fn check_args(truth: &Basket, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    if truth.is_empty() {
        return Err(Error::Contract("empty truth basket".into()));
    }
    Ok(())
}

/// Item counts over every training basket, indexed by vocabulary index.
pub fn train_item_counts(corpus: &Corpus) -> Vec<usize> {
    let mut counts = vec![0; corpus.vocabulary.size()];
    for s in &corpus.split {
        for b in &s.train {
            for &i in &b.items {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// The `k` most frequent training items (ties to the lower index), the same
/// list for every user; scores are the counts.
pub fn top_baseline(corpus: &Corpus, k: usize) -> Result<Vec<RankedList>> {
    if corpus.train_basket_count() == 0 {
        return Err(Error::EmptyCorpus("top baseline needs a non-empty train split".into()));
    }
    let counts = train_item_counts(corpus);
    let scored: Vec<(usize, f64)> = corpus.vocabulary.real_indices().map(|i| (i, counts[i] as f64)).collect();
    let list = rank_top_k(0, scored, k);
    Ok((0..corpus.num_users())
        .map(|u| RankedList {
            user_index: u,
            ..list.clone()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserMetrics {
    pub user_index: usize,
    pub f1: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub f1_at_k: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub n_users: usize,
    /// Users skipped because their test basket is empty.
    pub excluded_empty: usize,
}

/// Per-user F1@k and NDCG@k against each user's test basket, averaged
/// uniformly over users.
pub fn evaluate(recs: &[RankedList], corpus: &Corpus, k: usize) -> Result<(Metrics, Vec<UserMetrics>)> {
    if !corpus.is_split() {
        return Err(Error::Contract("evaluation needs a split corpus".into()));
    }
    let mut by_user: BTreeMap<usize, &RankedList> = BTreeMap::new();
    for r in recs {
        by_user.insert(r.user_index, r);
    }
    let missing: Vec<usize> = (0..corpus.num_users()).filter(|u| !by_user.contains_key(u)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingUsers(missing));
    }
    let mut per_user = Vec::new();
    let mut excluded_empty = 0;
    for (u, s) in corpus.split.iter().enumerate() {
        if s.test.is_empty() {
            excluded_empty += 1;
            continue;
        }
        let items = &by_user[&u].items;
        per_user.push(UserMetrics {
            user_index: u,
            f1: f1_at_k(items, &s.test, k)?,
            ndcg: ndcg_at_k(items, &s.test, k)?,
        });
    }
    if per_user.is_empty() {
        return Err(Error::EmptyCorpus("no user with a non-empty test basket".into()));
    }
    let n = per_user.len() as f64;
    Ok((
        Metrics {
            f1_at_k: per_user.iter().map(|m| m.f1).sum::<f64>() / n,
            ndcg_at_k: per_user.iter().map(|m| m.ndcg).sum::<f64>() / n,
            k,
            n_users: per_user.len(),
            excluded_empty,
        },
        per_user,
    ))
}

/// Plain-text comparison table, one row per model.
pub fn metrics_table(rows: &[(&str, &Metrics)]) -> String {
    let k = rows.first().map_or(5, |r| r.1.k);
    let width = rows.iter().map(|r| r.0.len()).chain([5]).max().unwrap_or(5);
    let mut out = String::new();
    let f1 = format!("F1-score@{k}");
    let nd = format!("NDCG@{k}");
    let _ = writeln!(out, "{:<width$}  {:>12}  {:>8}", "Model", f1, nd);
    for (name, m) in rows {
        let _ = writeln!(out, "{:<width$}  {:>12.6}  {:>8.6}", name, m.f1_at_k, m.ndcg_at_k);
    }
    out
}

pub fn metrics_key_values(model: &str, m: &Metrics) -> String {
    format!(
        "model={model}\nk={}\nn_users={}\nexcluded_empty={}\nf1_at_k={:.12}\nndcg_at_k={:.12}\n",
        m.k, m.n_users, m.excluded_empty, m.f1_at_k, m.ndcg_at_k
    )
}

pub fn parse_metrics_key_values(text: &str) -> Result<Metrics> {
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            location: format!("metrics line {}", n + 1),
            reason: "expected key=value".into(),
        })?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        kv.get(k).copied().ok_or_else(|| Error::Parse {
            location: "metrics".into(),
            reason: format!("missing `{k}`"),
        })
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|_| Error::Parse {
            location: "metrics".into(),
            reason: format!("`{k}` is not a number"),
        })
    };
    Ok(Metrics {
        f1_at_k: num("f1_at_k")?,
        ndcg_at_k: num("ndcg_at_k")?,
        k: num("k")? as usize,
        n_users: num("n_users")? as usize,
        excluded_empty: num("excluded_empty")? as usize,
    })
}

pub fn per_user_tsv(rows: &[UserMetrics]) -> String {
    let mut out = String::from("user_index\tf1\tndcg\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.12}\t{:.12}", r.user_index, r.f1, r.ndcg);
    }
    out
}

/// `user_index<TAB>item,item,...<TAB>score,score,...`, items written as their
/// original ids.
pub fn format_recommendations(lists: &[RankedList], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for l in lists {
        let items: Vec<&str> = l
            .items
            .iter()
            .map(|&i| {
                vocab.item_id(i).ok_or(Error::Bounds {
                    table: "vocabulary".into(),
                    index: i,
                    len: vocab.size(),
                })
            })
            .collect::<Result<_>>()?;
        let scores: Vec<String> = l.scores.iter().map(|s| format!("{s:?}")).collect();
        let _ = writeln!(out, "{}\t{}\t{}", l.user_index, items.join(","), scores.join(","));
    }
    Ok(out)
}

pub fn parse_recommendations(text: &str, vocab: &Vocabulary) -> Result<Vec<RankedList>> {
    let mut lists = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            location: format!("recommendations line {}", n + 1),
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let user_index = fields[0].parse().map_err(|_| bad(format!("bad user index `{}`", fields[0])))?;
        let split = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(',').map(str::to_string).collect()
            }
        };
        let items = split(fields[1])
            .iter()
            .map(|id| vocab.index_of(id).ok_or_else(|| bad(format!("unknown item `{id}`"))))
            .collect::<Result<Vec<_>>>()?;
        let scores = split(fields[2])
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad score `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let list = RankedList { user_index, items, scores };
        list.validate().map_err(|e| bad(e.to_string()))?;
        lists.push(list);
    }
    Ok(lists)
}

pub fn write_recommendations(path: &Path, lists: &[RankedList], vocab: &Vocabulary) -> Result<()> {
    fs::write(path, format_recommendations(lists, vocab)?).map_err(|e| Error::io(path, e))
}

pub fn read_recommendations(path: &Path, vocab: &Vocabulary) -> Result<Vec<RankedList>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recommendations(&text, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_corpus, UserHistory};

    fn basket(items: &[usize]) -> Basket {
        Basket::new(0, items.to_vec())
    }

    #[test]
    fn hand_values() {
        let f1 = f1_at_k(&[4, 10, 11, 12, 13], &basket(&[4, 5]), 5).unwrap();
        assert!((f1 - 0.285714).abs() < 1e-6);
        let nd = ndcg_at_k(&[9, 4, 10, 11, 12], &basket(&[4]), 5).unwrap();
        assert!((nd - 0.630930).abs() < 1e-6);
        assert_eq!(ndcg_at_k(&[4], &basket(&[4]), 5).unwrap(), 1.0);
        assert_eq!(f1_at_k(&[9], &basket(&[4]), 5).unwrap(), 0.0);
    }

    #[test]
    fn empty_truth_and_zero_k_rejected() {
        assert!(f1_at_k(&[4], &basket(&[]), 5).is_err());
        assert!(ndcg_at_k(&[4], &basket(&[4]), 0).is_err());
    }

    fn toy() -> Corpus {
        let vocabulary = Vocabulary::from_items(["a", "b", "c"]).unwrap();
        let users = vec![
            UserHistory {
                user_index: 0,
                user_id: "u0".into(),
                baskets: vec![basket(&[4, 5]), basket(&[4]), basket(&[6]), basket(&[4, 5])],
            },
            UserHistory {
                user_index: 1,
                user_id: "u1".into(),
                baskets: vec![basket(&[6]), basket(&[4]), basket(&[6])],
            },
        ];
        split_corpus(Corpus {
            users,
            vocabulary,
            split: vec![],
        })
        .0
    }

    #[test]
    fn top_counts_and_ties() {
        // train baskets: {a,b}, {a}, {c} -> a=2, b=1, c=1
        let lists = top_baseline(&toy(), 3).unwrap();
        assert_eq!(lists[0].items, vec![4, 5, 6]);
        assert_eq!(lists[1], RankedList { user_index: 1, ..lists[0].clone() });
    }

    #[test]
    fn missing_user_listed() {
        let c = toy();
        let recs = vec![rank_top_k(0, vec![(4, 1.0)], 5)];
        match evaluate(&recs, &c, 5) {
            Err(Error::MissingUsers(u)) => assert_eq!(u, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mean_over_users() {
        let c = toy();
        // user 0 truth {a,b}: only a hit -> 0.2857; user 1 truth {c}: miss
        let recs = vec![
            rank_top_k(0, vec![(4, 1.0)], 5),
            rank_top_k(1, vec![(5, 1.0)], 5),
        ];
        let (m, per_user) = evaluate(&recs, &c, 5).unwrap();
        assert!((m.f1_at_k - 0.142857).abs() < 1e-6);
        assert_eq!(per_user.len(), 2);
        assert_eq!(parse_metrics_key_values(&metrics_key_values("x", &m)).unwrap().k, 5);
    }

    #[test]
    fn recommendation_file_golden() {
        let v = Vocabulary::from_items(["milk", "bread"]).unwrap();
        let lists = vec![RankedList {
            user_index: 3,
            items: vec![5, 4],
            scores: vec![0.5, -1.25],
        }];
        let text = format_recommendations(&lists, &v).unwrap();
        assert_eq!(text, "3\tbread,milk\t0.5,-1.25\n");
        assert_eq!(parse_recommendations(&text, &v).unwrap(), lists);
    }
}
