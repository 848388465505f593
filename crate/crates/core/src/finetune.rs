//! Online stage: (history, candidate) packing, candidate-conditioned
//! attention pooling, user gating, scoring and the weighted binary loss.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Basket, Corpus, CLS, NUM_SPECIAL, SEP};
use crate::encoder::{AttentionScope, Encoder, EncoderConfig, InputSequence, NoDropout, SequenceBuilder};
use crate::error::{Error, Result};
use crate::eval::{rank_top_k, train_item_counts, RankedList};
use crate::optim::{adam_step, AdamState};
use crate::params::{truncated_normal, Gradients, ParameterStore};
use crate::pretrain::{apply_masking, masked_item_loss, MaskingConfig, MIP_BIAS};
use crate::tensor::{softmax, Tensor};

pub const POOL_WEIGHT: &str = "finetune.pool.weight";
pub const POOL_BIAS: &str = "finetune.pool.bias";
pub const USER_TABLE: &str = "finetune.user";

#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationInstance {
    pub user_index: usize,
    /// Baskets before the target visit, oldest first.
    pub history: Vec<Basket>,
    pub candidate: usize,
    pub label: bool,
}

/// Packed `[CLS] history [SEP] candidate [SEP]` plus where things landed.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedInstance {
    pub input: InputSequence,
    pub candidate_position: usize,
    pub history_positions: Vec<usize>,
    /// Items dropped from the oldest end of the history.
    pub dropped: usize,
}

/// Packs a history and one candidate into a single sequence. Histories that
/// do not fit in `max_len - 4` items lose their oldest items first.
pub fn pack_history(history: &[Basket], candidate: usize, max_len: usize, per_basket_positions: bool) -> Result<PackedInstance> {
    if candidate < NUM_SPECIAL {
        return Err(Error::Contract(format!("candidate {candidate} is a special token")));
    }
    let budget = max_len.saturating_sub(4);
    let total: usize = history.iter().map(Basket::len).sum();
    let dropped = total.saturating_sub(budget);
    if total == dropped {
        return Err(Error::Contract(format!(
            "empty history after truncation ({total} items, max_sequence_length {max_len})"
        )));
    }
    let mut builder = SequenceBuilder::new(per_basket_positions);
    builder.special(CLS, 0);
    let mut skip = dropped;
    let mut history_positions = Vec::with_capacity(total - dropped);
    for basket in history {
        let cut = skip.min(basket.len());
        skip -= cut;
        let kept = &basket.items[cut..];
        if !kept.is_empty() {
            history_positions.extend(builder.basket(kept, 0));
        }
    }
    builder.special(SEP, 0);
    let candidate_position = builder.basket(&[candidate], 1).start;
    builder.special(SEP, 1);
    Ok(PackedInstance {
        input: builder.finish(),
        candidate_position,
        history_positions,
        dropped,
    })
}

pub fn pack_instance(inst: &RecommendationInstance, max_len: usize, per_basket_positions: bool) -> Result<PackedInstance> {
    pack_history(&inst.history, inst.candidate, max_len, per_basket_positions)
}

/// Attention-pooled history for one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledHistory {
    pub v_b: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// `α = softmax_j(W·(h_c ⊙ h_j) + b)`, `v_B = Σ α_j h_j`. Returns
/// `(v_B [1×D], α [1×n])`.
pub fn attention_pool(tape: &mut Tape<'_>, h_candidate: Var, h_history: Var) -> Result<(Var, Var)> {
    let (n, d) = match tape.shape(h_history) {
        [n, d] => (*n, *d),
        other => return Err(Error::Shape { op: "attention_pool".into(), lhs: other.to_vec(), rhs: vec![] }),
    };
    if n == 0 {
        return Err(Error::Contract("attention pool over zero history rows".into()));
    }
    let hc = tape.reshape(h_candidate, &[d])?;
    let prod = tape.mul(h_history, hc)?;
    let w = tape.param_by_name(POOL_WEIGHT)?;
    let b = tape.param_by_name(POOL_BIAS)?;
    let scores = tape.matmul_nt(prod, w)?;
    let scores = tape.add(scores, b)?;
    let scores = tape.reshape(scores, &[1, n])?;
    let alpha = tape.softmax_rows(scores, None)?;
    let v_b = tape.matmul(alpha, h_history)?;
    Ok((v_b, alpha))
}

/// Tape handles for one scored candidate.
pub struct CandidateForward {
    pub score: Var,
    pub hidden: Var,
    pub h_candidate: Var,
    pub v_b: Var,
    pub alpha: Var,
}

/// Encodes the packed instance and computes `s = h_i · (v_u ⊙ v_B)`.
pub fn candidate_forward<R: Rng>(
    encoder: &Encoder,
    tape: &mut Tape<'_>,
    user_index: usize,
    packed: &PackedInstance,
    dropout: Option<&mut R>,
) -> Result<CandidateForward> {
    let out = encoder.encode(tape, &packed.input, AttentionScope::Full, dropout)?;
    let h_candidate = tape.slice_rows(out.hidden, packed.candidate_position, 1)?;
    let h_history = tape.index_rows(out.hidden, &packed.history_positions, "hidden states")?;
    let (v_b, alpha) = attention_pool(tape, h_candidate, h_history)?;
    let users = tape.param_by_name(USER_TABLE)?;
    let v_u = tape.index_rows(users, &[user_index], "user embedding")?;
    let d = encoder.config.hidden_size;
    let v_b_flat = tape.reshape(v_b, &[d])?;
    let gated = tape.mul(v_u, v_b_flat)?;
    let score = tape.matmul_nt(h_candidate, gated)?;
    Ok(CandidateForward {
        score,
        hidden: out.hidden,
        h_candidate,
        v_b,
        alpha,
    })
}

/// Registers the pooling head and the user table.
pub fn init_head<R: Rng>(store: &mut ParameterStore, hidden_size: usize, num_users: usize, std: f64, rng: &mut R) -> Result<()> {
    store.register(POOL_WEIGHT, truncated_normal(&[1, hidden_size], std, rng))?;
    store.register(POOL_BIAS, truncated_normal(&[1], std, rng))?;
    store.register(USER_TABLE, truncated_normal(&[num_users, hidden_size], std, rng))?;
    Ok(())
}

/// A fine-tuned encoder plus head, ready to score.
#[derive(Clone, Debug)]
pub struct Recommender {
    pub encoder: Encoder,
    pub store: ParameterStore,
}

impl Recommender {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let encoder = Encoder::new(EncoderConfig::from_header(&ck.header)?)?;
        let store = ck.to_store()?;
        for name in [POOL_WEIGHT, POOL_BIAS, USER_TABLE] {
            if !store.contains(name) {
                return Err(Error::Config(format!("checkpoint has no `{name}`; was it fine-tuned?")));
            }
        }
        Ok(Recommender { encoder, store })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store);
        ck.header.extend(self.encoder.config.to_header());
        ck.header.insert("finetune.num_users".into(), self.num_users().to_string());
        ck
    }

    pub fn num_users(&self) -> usize {
        self.store.id(USER_TABLE).map_or(0, |id| self.store.value(id).shape()[0])
    }

    fn pack(&self, history: &[Basket], candidate: usize) -> Result<PackedInstance> {
        let c = &self.encoder.config;
        if candidate >= c.vocab_size {
            return Err(Error::Bounds {
                table: "vocabulary".into(),
                index: candidate,
                len: c.vocab_size,
            });
        }
        pack_history(history, candidate, c.max_sequence_length, c.positions_per_basket)
    }

    fn check_user(&self, user_index: usize) -> Result<()> {
        if user_index >= self.num_users() {
            return Err(Error::Bounds {
                table: "user embedding".into(),
                index: user_index,
                len: self.num_users(),
            });
        }
        Ok(())
    }

    /// Unnormalised score of one packed candidate.
    pub fn score_candidate(&self, user_index: usize, packed: &PackedInstance) -> Result<f64> {
        self.check_user(user_index)?;
        let mut tape = Tape::new(&self.store);
        let f = candidate_forward::<NoDropout>(&self.encoder, &mut tape, user_index, packed, None)?;
        Ok(tape.value(f.score).item())
    }

    pub fn pooled_history(&self, user_index: usize, packed: &PackedInstance) -> Result<PooledHistory> {
        self.check_user(user_index)?;
        let mut tape = Tape::new(&self.store);
        let f = candidate_forward::<NoDropout>(&self.encoder, &mut tape, user_index, packed, None)?;
        Ok(PooledHistory {
            v_b: tape.value(f.v_b).data().to_vec(),
            alphas: tape.value(f.alpha).data().to_vec(),
        })
    }

    /// Hidden state of the candidate position.
    pub fn candidate_state(&self, user_index: usize, packed: &PackedInstance) -> Result<Vec<f64>> {
        self.check_user(user_index)?;
        let mut tape = Tape::new(&self.store);
        let f = candidate_forward::<NoDropout>(&self.encoder, &mut tape, user_index, packed, None)?;
        Ok(tape.value(f.h_candidate).data().to_vec())
    }

    /// Raw scores, one packed sequence per candidate.
    pub fn raw_scores(&self, user_index: usize, history: &[Basket], candidates: &[usize]) -> Result<Vec<f64>> {
        candidates
            .iter()
            .map(|&c| {
                if c < NUM_SPECIAL {
                    return Err(Error::Contract(format!("candidate {c} is a special token")));
                }
                self.score_candidate(user_index, &self.pack(history, c)?)
            })
            .collect()
    }

    /// Softmax over the candidate set of the raw scores.
    pub fn score_items(&self, user_index: usize, history: &[Basket], candidates: &[usize]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Contract("empty candidate set".into()));
        }
        let raw = self.raw_scores(user_index, history, candidates)?;
        Ok(softmax(&Tensor::vector(raw), 0)?.into_data())
    }

    /// Scores every real item not in `exclude` and keeps the best `k` (ties
    /// to the lower index).
    pub fn recommend_top_k(&self, user_index: usize, history: &[Basket], k: usize, exclude: &[usize]) -> Result<RankedList> {
        let candidates: Vec<usize> = (NUM_SPECIAL..self.encoder.config.vocab_size)
            .filter(|i| !exclude.contains(i))
            .collect();
        if k > candidates.len() {
            warn!("k = {k} exceeds the {} rankable items; clamped", candidates.len());
        }
        let raw = self.raw_scores(user_index, history, &candidates)?;
        Ok(rank_top_k(user_index, candidates.into_iter().zip(raw).collect(), k))
    }

    /// Top-k for every user from train + validation history.
    pub fn recommend_all(&self, corpus: &Corpus, k: usize, exclude_seen: bool) -> Result<Vec<RankedList>> {
        corpus
            .split
            .iter()
            .enumerate()
            .map(|(u, s)| {
                let history = s.history_before_test();
                let mut seen: Vec<usize> = Vec::new();
                if exclude_seen {
                    seen = history.iter().flat_map(|b| b.items.iter().copied()).collect();
                    seen.sort_unstable();
                    seen.dedup();
                }
                self.recommend_top_k(u, &history, k, &seen)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeSampling {
    Uniform,
    /// Proportional to training-basket count plus one.
    Popularity,
}

impl FromStr for NegativeSampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NegativeSampling::Uniform),
            "popularity" => Ok(NegativeSampling::Popularity),
            other => Err(Error::Config(format!("negative_sampling must be uniform or popularity, got `{other}`"))),
        }
    }
}

impl fmt::Display for NegativeSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeSampling::Uniform => "uniform",
            NegativeSampling::Popularity => "popularity",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneConfig {
    pub neg_per_pos: usize,
    /// `m`, weight of positive terms.
    pub pos_weight: f64,
    /// `n`, weight of negative terms.
    pub neg_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negative_sampling: NegativeSampling,
    pub aux_mip_weight: f64,
    /// Added to every entry of the freshly drawn user table.
    pub user_init_mean: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            neg_per_pos: 4,
            pos_weight: 4.0,
            neg_weight: 1.0,
            epochs: 1,
            batch_size: 32,
            learning_rate: crate::optim::DEFAULT_LEARNING_RATE,
            negative_sampling: NegativeSampling::Uniform,
            aux_mip_weight: 0.0,
            user_init_mean: 0.0,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_weight > 0.0 && self.neg_weight > 0.0) {
            return Err(Error::Config("loss weights m and n must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.user_init_mean.is_finite() {
            return Err(Error::Config("user_init_mean must be finite".into()));
        }
        if self.aux_mip_weight < 0.0 {
            return Err(Error::Config("aux_mip_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// `Σ −m·y·log p − n·(1−y)·log(1−p)` with `p = σ(s)` clamped, plus
/// `aux_mip_weight · l1` on a masked copy of each packed instance when
/// enabled. Returns the loss and its gradient.
#[allow(clippy::too_many_arguments)]
pub fn finetune_loss(
    encoder: &Encoder,
    store: &ParameterStore,
    batch: &[RecommendationInstance],
    pos_weight: f64,
    neg_weight: f64,
    aux_mip_weight: f64,
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty fine-tune batch".into()));
    }
    let c = &encoder.config;
    let mut total = Gradients::empty(store.len());
    let mut loss = 0.0;
    for (i, inst) in batch.iter().enumerate() {
        let packed = pack_instance(inst, c.max_sequence_length, c.positions_per_basket)?;
        let mut rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
        let mut tape = Tape::new(store);
        let f = candidate_forward(encoder, &mut tape, inst.user_index, &packed, rng.as_mut())?;
        let mut l = tape.weighted_bce(f.score, inst.label, pos_weight, neg_weight, true)?;
        if aux_mip_weight > 0.0 {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(dropout_seeds.map_or(i as u64, |s| s[i] ^ 0x5EED));
            let ex = apply_masking(&packed.input, inst.label, &MaskingConfig::default(), c.vocab_size, &mut mask_rng)?;
            let h = encoder.encode(&mut tape, &ex.input, AttentionScope::Full, rng.as_mut())?.hidden;
            let l1 = masked_item_loss(&mut tape, h, &ex)?;
            let l1 = tape.scale(l1, aux_mip_weight);
            l = tape.add(l, l1)?;
        }
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                detail: format!("fine-tune loss {value}"),
            });
        }
        loss += value;
        total.merge(tape.backward(l)?);
    }
    Ok((loss, total))
}

/// How the encoder is initialised before fine-tuning.
pub enum Initialization<'a> {
    Random(EncoderConfig),
    Pretrained(&'a Checkpoint),
}

/// Fine-tuning run over the training split: every `(user, t ≥ 1)` slot
/// yields the items of train basket `t` as positives and `neg_per_pos`
/// sampled negatives per positive, with train baskets `< t` as history.
pub struct FineTuner {
    pub model: Recommender,
    pub config: FineTuneConfig,
    pub adam: AdamState,
    pub step: usize,
    pub epoch: usize,
    slots: Vec<(usize, usize)>,
    train: Vec<Vec<Basket>>,
    popularity: WeightedIndex<f64>,
    catalog: usize,
    rng: ChaCha8Rng,
}

impl FineTuner {
    pub fn new(corpus: &Corpus, init: Initialization<'_>, config: FineTuneConfig) -> Result<Self> {
        config.validate()?;
        if !corpus.is_split() {
            return Err(Error::Contract("fine-tuning needs a split corpus".into()));
        }
        let (encoder, mut store) = match init {
            Initialization::Random(ec) => {
                let encoder = Encoder::new(ec)?;
                let mut store = ParameterStore::new();
                encoder.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
                (encoder, store)
            }
            Initialization::Pretrained(ck) => {
                let encoder = Encoder::new(EncoderConfig::from_header(&ck.header)?)?;
                let mut store = ParameterStore::new();
                for (name, t) in &ck.tensors {
                    if name.starts_with("encoder.") || (name == MIP_BIAS && config.aux_mip_weight > 0.0) {
                        store.register(name.clone(), t.clone())?;
                    }
                }
                (encoder, store)
            }
        };
        if encoder.config.vocab_size != corpus.vocabulary.size() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} != corpus vocabulary size {}",
                encoder.config.vocab_size,
                corpus.vocabulary.size()
            )));
        }
        let mut head_rng = ChaCha8Rng::seed_from_u64(config.seed);
        head_rng.set_stream(2);
        init_head(&mut store, encoder.config.hidden_size, corpus.num_users(), encoder.config.init_std, &mut head_rng)?;
        if config.user_init_mean != 0.0 {
            let q = store.id(USER_TABLE)?;
            for v in store.value_mut(q).data_mut() {
                *v += config.user_init_mean;
            }
        }
        if config.aux_mip_weight > 0.0 && !store.contains(MIP_BIAS) {
            store.register(MIP_BIAS, Tensor::zeros(&[corpus.vocabulary.catalog_size()]))?;
        }

        let train: Vec<Vec<Basket>> = corpus.split.iter().map(|s| s.train.clone()).collect();
        let slots: Vec<(usize, usize)> = train
            .iter()
            .enumerate()
            .flat_map(|(u, b)| (1..b.len()).map(move |t| (u, t)))
            .collect();
        if slots.is_empty() {
            return Err(Error::Sampling("no user has two training baskets to fine-tune on".into()));
        }
        let counts = train_item_counts(corpus);
        let weights: Vec<f64> = corpus.vocabulary.real_indices().map(|i| counts[i] as f64 + 1.0).collect();
        let popularity = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("popularity weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(3);
        Ok(FineTuner {
            adam: AdamState::new(config.learning_rate),
            model: Recommender { encoder, store },
            catalog: corpus.vocabulary.catalog_size(),
            config,
            step: 0,
            epoch: 0,
            slots,
            train,
            popularity,
            rng,
        })
    }

    fn negative(&mut self, target: &Basket) -> Result<usize> {
        if target.len() >= self.catalog {
            return Err(Error::Sampling("next basket covers the whole catalog; no negatives".into()));
        }
        loop {
            let i = match self.config.negative_sampling {
                NegativeSampling::Uniform => self.rng.gen_range(0..self.catalog),
                NegativeSampling::Popularity => self.popularity.sample(&mut self.rng),
            } + NUM_SPECIAL;
            if !target.contains(i) {
                return Ok(i);
            }
        }
    }

    /// Shuffled instances for one pass over all slots.
    pub fn epoch_instances(&mut self) -> Result<Vec<RecommendationInstance>> {
        let mut slots = self.slots.clone();
        slots.shuffle(&mut self.rng);
        let mut out = Vec::new();
        for (u, t) in slots {
            let history = self.train[u][..t].to_vec();
            let target = self.train[u][t].clone();
            for &item in &target.items {
                out.push(RecommendationInstance {
                    user_index: u,
                    history: history.clone(),
                    candidate: item,
                    label: true,
                });
                for _ in 0..self.config.neg_per_pos {
                    let candidate = self.negative(&target)?;
                    out.push(RecommendationInstance {
                        user_index: u,
                        history: history.clone(),
                        candidate,
                        label: false,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn train_step(&mut self, batch: &[RecommendationInstance]) -> Result<f64> {
        let seeds: Vec<u64> = (0..batch.len()).map(|_| self.rng.next_u64()).collect();
        let dropout = (self.model.encoder.config.dropout_rate > 0.0).then_some(seeds.as_slice());
        let (loss, grads) = finetune_loss(
            &self.model.encoder,
            &self.model.store,
            batch,
            self.config.pos_weight,
            self.config.neg_weight,
            self.config.aux_mip_weight,
            dropout,
        )?;
        let store = &mut self.model.store;
        store.zero_grads();
        store.accumulate(&grads);
        adam_step(store, &mut self.adam)?;
        self.step += 1;
        Ok(loss)
    }

    /// Runs the configured epochs, logging `step<TAB>epoch<TAB>loss`.
    pub fn run<W: Write>(&mut self, log: &mut W) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while self.epoch < self.config.epochs {
            let instances = self.epoch_instances()?;
            for batch in instances.chunks(self.config.batch_size) {
                let loss = self.train_step(batch)?;
                writeln!(log, "{}\t{}\t{}", self.step, self.epoch, loss).map_err(|e| Error::io("loss log", e))?;
                losses.push(loss);
            }
            self.epoch += 1;
        }
        Ok(losses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MASK, PAD};

    fn b(items: &[usize]) -> Basket {
        Basket::new(0, items.to_vec())
    }

    #[test]
    fn layout() {
        let p = pack_history(&[b(&[4, 5])], 6, 16, false).unwrap();
        assert_eq!(p.input.token_ids, vec![CLS, 4, 5, SEP, 6, SEP]);
        assert_eq!(p.input.segment_ids, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(p.candidate_position, 4);
        assert_eq!(p.history_positions, vec![1, 2]);
    }

    #[test]
    fn oldest_first_truncation() {
        let history: Vec<Basket> = (0..20).map(|t| Basket::new(t, (0..10).map(|i| 4 + t * 10 + i).collect())).collect();
        let p = pack_history(&history, 7, 128, false).unwrap();
        assert_eq!(p.input.len(), 128);
        assert_eq!(p.dropped, 76);
        assert_eq!(p.input.token_ids[1], 4 + 76);
        assert_eq!(p.input.token_ids[p.candidate_position], 7);
    }

    #[test]
    fn special_candidate_and_empty_history_rejected() {
        assert!(pack_history(&[b(&[4])], MASK, 16, false).is_err());
        assert!(pack_history(&[b(&[4])], PAD, 16, false).is_err());
        assert!(pack_history(&[], 4, 16, false).is_err());
    }

    #[test]
    fn sampling_modes_parse() {
        assert_eq!("popularity".parse::<NegativeSampling>().unwrap(), NegativeSampling::Popularity);
        assert!("random".parse::<NegativeSampling>().is_err());
    }
}
