use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_corpus, Basket, Corpus, UserHistory, Vocabulary, NUM_SPECIAL};
use crate::error::{Error, Result};

/// Recipe for a corpus with planted structure. Item numbers are raw catalog
/// positions `0..n_items`; item `k` gets vocabulary index `k + 4` and id
/// `item{k}`.
///
/// Each basket is built as:
/// 1. with probability `trigger_rate`, one rule trigger drawn uniformly;
/// 2. `items_per_basket` distinct items drawn uniformly from the free pool
///    (every item that is neither a pair partner nor a rule consequent);
///    with `phases > 1` the pool is dealt round-robin into that many groups
///    and basket `t` of a user draws only from group `(offset + t) mod
///    phases`, the offset being drawn once per user;
/// 3. the consequent of every trigger present in the previous basket, each
///    with probability `1 - noise_rate`;
/// 4. the partner of every pair head present, each with probability
///    `1 - noise_rate`.
///
/// Items inside a basket are then shuffled.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_baskets_per_user: usize,
    pub co_occur_pairs: Vec<(usize, usize)>,
    pub sequential_rules: Vec<(usize, usize)>,
    pub noise_rate: f64,
    pub seed: u64,
    pub items_per_basket: usize,
    pub trigger_rate: f64,
    pub phases: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 100,
            n_items: 50,
            n_baskets_per_user: 6,
            co_occur_pairs: Vec::new(),
            sequential_rules: Vec::new(),
            noise_rate: 0.0,
            seed: 0,
            items_per_basket: 3,
            trigger_rate: 1.0,
            phases: 0,
        }
    }
}

impl SyntheticSpec {
    /// `n_pairs` pairs `(2k, 2k+1)` followed by `n_rules` rules on the next
    /// items, so no item plays two roles.
    pub fn planted(n_users: usize, n_items: usize, n_baskets: usize, n_pairs: usize, n_rules: usize, noise_rate: f64, seed: u64) -> Self {
        let pairs = (0..n_pairs).map(|k| (2 * k, 2 * k + 1)).collect();
        let base = 2 * n_pairs;
        let rules = (0..n_rules).map(|k| (base + 2 * k, base + 2 * k + 1)).collect();
        SyntheticSpec {
            n_users,
            n_items,
            n_baskets_per_user: n_baskets,
            co_occur_pairs: pairs,
            sequential_rules: rules,
            noise_rate,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic spec: {msg}")));
        let n_rules = self.co_occur_pairs.len() + self.sequential_rules.len();
        if self.n_items < 2 * n_rules {
            return bad(format!("n_items {} < 2 x {} planted pairs and rules", self.n_items, n_rules));
        }
        for &(a, b) in self.co_occur_pairs.iter().chain(&self.sequential_rules) {
            if a >= self.n_items || b >= self.n_items {
                return bad(format!("rule ({a}, {b}) references an item >= n_items {}", self.n_items));
            }
            if a == b {
                return bad(format!("rule ({a}, {b}) relates an item to itself"));
            }
        }
        if [self.noise_rate, self.trigger_rate].iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("noise_rate and trigger_rate must lie in [0, 1]".into());
        }
        if self.n_users == 0 || self.n_baskets_per_user < 3 {
            return bad("need at least one user and three baskets per user".into());
        }
        if self.free_pool().len() / self.phases.max(1) < self.items_per_basket.max(1) {
            return bad("free item pool (per phase) smaller than items_per_basket".into());
        }
        Ok(())
    }

    fn free_pool(&self) -> Vec<usize> {
        let dependent: HashSet<usize> = self
            .co_occur_pairs
            .iter()
            .chain(&self.sequential_rules)
            .map(|&(_, b)| b)
            .collect();
        (0..self.n_items).filter(|i| !dependent.contains(i)).collect()
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = spec.free_pool();
    let keep = 1.0 - spec.noise_rate;
    let vocabulary = Vocabulary::from_items((0..spec.n_items).map(|k| format!("item{k}")))?;

    let mut users = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let mut baskets: Vec<Basket> = Vec::with_capacity(spec.n_baskets_per_user);
        let mut previous: Vec<usize> = Vec::new();
        let offset = if spec.phases > 1 { rng.gen_range(0..spec.phases) } else { 0 };
        for t in 0..spec.n_baskets_per_user {
            let mut items: Vec<usize> = Vec::new();
            let add = |items: &mut Vec<usize>, i: usize| {
                if !items.contains(&i) {
                    items.push(i);
                }
            };
            if !spec.sequential_rules.is_empty() && rng.gen::<f64>() < spec.trigger_rate {
                let (x, _) = spec.sequential_rules[rng.gen_range(0..spec.sequential_rules.len())];
                add(&mut items, x);
            }
            let group: Vec<usize> = if spec.phases > 1 {
                let phase = (offset + t) % spec.phases;
                pool.iter().enumerate().filter(|(j, _)| j % spec.phases == phase).map(|(_, &i)| i).collect()
            } else {
                pool.clone()
            };
            for &i in group.choose_multiple(&mut rng, spec.items_per_basket) {
                add(&mut items, i);
            }
            for &(x, y) in &spec.sequential_rules {
                if previous.contains(&x) && rng.gen::<f64>() < keep {
                    add(&mut items, y);
                }
            }
            for &(a, b) in &spec.co_occur_pairs {
                if items.contains(&a) && rng.gen::<f64>() < keep {
                    add(&mut items, b);
                }
            }
            items.shuffle(&mut rng);
            previous = items.clone();
            baskets.push(Basket::new(t, items.iter().map(|k| k + NUM_SPECIAL).collect()));
        }
        users.push(UserHistory {
            user_index: u,
            user_id: format!("user{u}"),
            baskets,
        });
    }
    let corpus = Corpus {
        users,
        vocabulary,
        split: Vec::new(),
    };
    Ok(split_corpus(corpus).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_rule_rejected() {
        let spec = SyntheticSpec {
            n_items: 10,
            sequential_rules: vec![(3, 10)],
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_pair_always_together() {
        let spec = SyntheticSpec::planted(30, 20, 5, 3, 0, 0.0, 1);
        let c = generate_synthetic(&spec).unwrap();
        let (a, b) = (NUM_SPECIAL, NUM_SPECIAL + 1);
        let mut seen = 0;
        for u in &c.users {
            for bk in &u.baskets {
                if bk.contains(a) {
                    seen += 1;
                    assert!(bk.contains(b));
                }
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn noiseless_rule_always_fires() {
        let spec = SyntheticSpec::planted(30, 20, 6, 0, 2, 0.0, 2);
        let c = generate_synthetic(&spec).unwrap();
        let (x, y) = (NUM_SPECIAL, NUM_SPECIAL + 1);
        let mut fired = 0;
        for u in &c.users {
            for w in u.baskets.windows(2) {
                if w[0].contains(x) {
                    fired += 1;
                    assert!(w[1].contains(y));
                }
            }
        }
        assert!(fired > 0);
    }

    #[test]
    fn phases_advance_one_group_per_basket() {
        let spec = SyntheticSpec {
            n_users: 8,
            n_items: 40,
            n_baskets_per_user: 7,
            phases: 4,
            ..Default::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        let group = |b: &Basket| {
            let g: HashSet<usize> = b.items.iter().map(|i| (i - NUM_SPECIAL) % 4).collect();
            assert_eq!(g.len(), 1, "{:?}", b.items);
            *g.iter().next().unwrap()
        };
        for u in &c.users {
            for w in u.baskets.windows(2) {
                assert_eq!(group(&w[1]), (group(&w[0]) + 1) % 4);
            }
        }
    }
}
