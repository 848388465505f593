//! Offline stage: basket-pair examples, item masking and the joint
//! masked-item + next-basket objective.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::corpus::{Basket, Corpus, CLS, MASK, NUM_SPECIAL, SEP};
use crate::encoder::{AttentionScope, Encoder, EncoderConfig, InputSequence, NoDropout, SequenceBuilder};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::params::{truncated_normal, Gradients, ParameterStore};
use crate::tensor::Tensor;

pub const MIP_BIAS: &str = "pretrain.mip.output_bias";
pub const NBP_WEIGHT: &str = "pretrain.nbp.weight";
pub const NBP_BIAS: &str = "pretrain.nbp.bias";

/// Where "apart" negatives come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeMode {
    /// A non-adjacent basket of the same user, or another user's basket when
    /// the user has none.
    SameUser,
    /// Always another user's basket.
    CrossUser,
}

impl FromStr for NegativeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same_user" => Ok(NegativeMode::SameUser),
            "cross_user" => Ok(NegativeMode::CrossUser),
            other => Err(Error::Config(format!("negative_mode must be same_user or cross_user, got `{other}`"))),
        }
    }
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::SameUser => "same_user",
            NegativeMode::CrossUser => "cross_user",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingConfig {
    pub mask_rate: f64,
    /// Of the selected positions: share replaced by MASK ...
    pub mask_token_prob: f64,
    /// ... share replaced by a random real item; the rest stay unchanged.
    pub random_token_prob: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            mask_rate: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate <= 1.0) {
            return Err(Error::Config(format!("mask_rate must lie in (0, 1], got {}", self.mask_rate)));
        }
        if self.mask_token_prob < 0.0 || self.random_token_prob < 0.0 || self.mask_token_prob + self.random_token_prob > 1.0 {
            return Err(Error::Config("mask replacement probabilities must be non-negative and sum to at most 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub masking: MaskingConfig,
    pub negative_mode: NegativeMode,
    /// Run the masked-item pass with attention confined to each basket.
    pub mip_same_basket_only: bool,
    pub seed: u64,
    /// Write `checkpoints/step-N` every N steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            batch_size: 32,
            steps: 40_000,
            learning_rate: crate::optim::DEFAULT_LEARNING_RATE,
            masking: MaskingConfig::default(),
            negative_mode: NegativeMode::SameUser,
            mip_same_basket_only: false,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// A sampled (A, B) pair; `is_next` iff B directly follows A in one user's
/// training history.
#[derive(Clone, Debug, PartialEq)]
pub struct BasketPair {
    pub first: Basket,
    pub second: Basket,
    pub is_next: bool,
    pub first_at: (usize, usize),
    pub second_at: (usize, usize),
}

/// Uniform sampler over eligible (user, position) anchors of the train split.
#[derive(Clone, Debug)]
pub struct PairSampler {
    train: Vec<Vec<Basket>>,
    anchors: Vec<(usize, usize)>,
    mode: NegativeMode,
}

impl PairSampler {
    pub fn new(corpus: &Corpus, mode: NegativeMode) -> Result<Self> {
        if !corpus.is_split() {
            return Err(Error::Contract("pair sampling needs a split corpus".into()));
        }
        let train: Vec<Vec<Basket>> = corpus.split.iter().map(|s| s.train.clone()).collect();
        Self::from_histories(train, mode)
    }

    pub fn from_histories(train: Vec<Vec<Basket>>, mode: NegativeMode) -> Result<Self> {
        let anchors: Vec<(usize, usize)> = train
            .iter()
            .enumerate()
            .flat_map(|(u, b)| (0..b.len().saturating_sub(1)).map(move |p| (u, p)))
            .collect();
        if anchors.is_empty() {
            return Err(Error::Sampling("no user has two consecutive training baskets".into()));
        }
        Ok(PairSampler { train, anchors, mode })
    }

    pub fn histories(&self) -> &[Vec<Basket>] {
        &self.train
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<BasketPair> {
        let (u, p) = self.anchors[rng.gen_range(0..self.anchors.len())];
        let first = self.train[u][p].clone();
        if rng.gen::<f64>() < 0.5 {
            return Ok(BasketPair {
                first,
                second: self.train[u][p + 1].clone(),
                is_next: true,
                first_at: (u, p),
                second_at: (u, p + 1),
            });
        }
        let (v, q) = self.negative(u, p, rng)?;
        Ok(BasketPair {
            first,
            second: self.train[v][q].clone(),
            is_next: false,
            first_at: (u, p),
            second_at: (v, q),
        })
    }

    fn negative<R: Rng>(&self, u: usize, p: usize, rng: &mut R) -> Result<(usize, usize)> {
        if self.mode == NegativeMode::SameUser {
            let apart: Vec<usize> = (0..self.train[u].len()).filter(|&j| j.abs_diff(p) > 1).collect();
            if let Some(&j) = apart.choose(rng) {
                return Ok((u, j));
            }
        }
        let others: Vec<usize> = (0..self.train.len())
            .filter(|&v| v != u && !self.train[v].is_empty())
            .collect();
        let v = *others
            .choose(rng)
            .ok_or_else(|| Error::Sampling(format!("no negative basket available for user {u}")))?;
        Ok((v, rng.gen_range(0..self.train[v].len())))
    }
}

/// `[CLS] A [SEP] B [SEP]`, segment 0 up to the first SEP, 1 after. When
/// longer than `max_len`, items are dropped from the tail of the longer
/// basket (B on ties).
pub fn pack_pair(first: &[usize], second: &[usize], max_len: usize, per_basket_positions: bool) -> Result<InputSequence> {
    if max_len < 5 {
        return Err(Error::Config("max_sequence_length too short for a basket pair".into()));
    }
    let (mut a, mut b) = (first.len(), second.len());
    while a + b + 3 > max_len {
        if a > b {
            a -= 1;
        } else {
            b -= 1;
        }
    }
    let mut builder = SequenceBuilder::new(per_basket_positions);
    builder.special(CLS, 0);
    builder.basket(&first[..a], 0);
    builder.special(SEP, 0);
    builder.basket(&second[..b], 1);
    builder.special(SEP, 1);
    Ok(builder.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainExample {
    pub input: InputSequence,
    pub mask_positions: Vec<usize>,
    pub mask_targets: Vec<usize>,
    pub is_next: bool,
}

/// Selects each real-item position with probability `mask_rate` (redrawing
/// until at least one is chosen) and applies the MASK / random / keep
/// replacement.
pub fn apply_masking<R: Rng>(
    input: &InputSequence,
    is_next: bool,
    masking: &MaskingConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<PretrainExample> {
    masking.validate()?;
    let eligible: Vec<usize> = (0..input.len())
        .filter(|&i| input.attention_mask[i] && input.token_ids[i] >= NUM_SPECIAL)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Contract("masking needs at least one real item".into()));
    }
    let mut chosen = Vec::new();
    while chosen.is_empty() {
        chosen = eligible
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < masking.mask_rate)
            .collect();
    }
    let mut masked = input.clone();
    let mut targets = Vec::with_capacity(chosen.len());
    for &pos in &chosen {
        targets.push(input.token_ids[pos]);
        let r: f64 = rng.gen();
        if r < masking.mask_token_prob {
            masked.token_ids[pos] = MASK;
        } else if r < masking.mask_token_prob + masking.random_token_prob {
            masked.token_ids[pos] = rng.gen_range(NUM_SPECIAL..vocab_size);
        }
    }
    Ok(PretrainExample {
        input: masked,
        mask_positions: chosen,
        mask_targets: targets,
        is_next,
    })
}

/// Registers the two pre-training heads. The masked-item decoder reuses the
/// token embedding table; only its output bias is new.
pub fn init_heads<R: Rng>(store: &mut ParameterStore, config: &EncoderConfig, rng: &mut R) -> Result<()> {
    let catalog = config.vocab_size - NUM_SPECIAL;
    store.register(MIP_BIAS, Tensor::zeros(&[catalog]))?;
    store.register(NBP_WEIGHT, truncated_normal(&[1, config.hidden_size], config.init_std, rng))?;
    store.register(NBP_BIAS, Tensor::zeros(&[1]))?;
    Ok(())
}

/// Logits over real items for the given rows of `hidden`:
/// `rows · token_tableᵀ[4..] + bias`.
pub fn item_logits(tape: &mut Tape<'_>, hidden: Var, positions: &[usize]) -> Result<Var> {
    let rows = tape.index_rows(hidden, positions, "hidden states")?;
    let table = tape.param_by_name("encoder.embeddings.token")?;
    let vocab = tape.shape(table)[0];
    let real: Vec<usize> = (NUM_SPECIAL..vocab).collect();
    let items = tape.index_rows(table, &real, "token embedding")?;
    let logits = tape.matmul_nt(rows, items)?;
    let bias = tape.param_by_name(MIP_BIAS)?;
    tape.add(logits, bias)
}

/// Mean negative log-likelihood of the original items at masked positions.
pub fn masked_item_loss(tape: &mut Tape<'_>, hidden: Var, example: &PretrainExample) -> Result<Var> {
    let logits = item_logits(tape, hidden, &example.mask_positions)?;
    let classes = tape.shape(logits)[1];
    let mut targets = Vec::with_capacity(example.mask_targets.len());
    for &t in &example.mask_targets {
        if t < NUM_SPECIAL || t - NUM_SPECIAL >= classes {
            return Err(Error::Contract(format!("mask target {t} is not a real item")));
        }
        targets.push(t - NUM_SPECIAL);
    }
    tape.cross_entropy(logits, &targets)
}

pub fn next_basket_logit(tape: &mut Tape<'_>, hidden: Var) -> Result<Var> {
    let cls = tape.slice_rows(hidden, 0, 1)?;
    let w = tape.param_by_name(NBP_WEIGHT)?;
    let b = tape.param_by_name(NBP_BIAS)?;
    let logit = tape.matmul_nt(cls, w)?;
    tape.add(logit, b)
}

/// Binary negative log-likelihood of δ from the CLS state.
pub fn next_basket_loss(tape: &mut Tape<'_>, hidden: Var, is_next: bool) -> Result<Var> {
    let logit = next_basket_logit(tape, hidden)?;
    tape.weighted_bce(logit, is_next, 1.0, 1.0, false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainLosses {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

/// Per-example loss `(l1, l2)` and gradient of `(l1 + l2) * scale`.
pub fn example_loss_and_grad<R: Rng>(
    encoder: &Encoder,
    store: &ParameterStore,
    example: &PretrainExample,
    mip_same_basket_only: bool,
    scale: f64,
    mut dropout: Option<&mut R>,
) -> Result<(f64, f64, Gradients)> {
    let mut tape = Tape::new(store);
    let full = encoder.encode(&mut tape, &example.input, AttentionScope::Full, dropout.as_deref_mut())?;
    let mip_hidden = if mip_same_basket_only {
        encoder
            .encode(&mut tape, &example.input, AttentionScope::SameSegment, dropout)?
            .hidden
    } else {
        full.hidden
    };
    let l1 = masked_item_loss(&mut tape, mip_hidden, example)?;
    let l2 = next_basket_loss(&mut tape, full.hidden, example.is_next)?;
    let total = tape.add(l1, l2)?;
    let total = tape.scale(total, scale);
    let grads = tape.backward(total)?;
    Ok((tape.value(l1).item(), tape.value(l2).item(), grads))
}

/// One optimisation step on `l3 = mean(l1) + mean(l2)`; returns the
/// pre-update losses. Each example runs with its own dropout stream seeded
/// from `dropout_seeds`.
pub fn pretrain_step(
    encoder: &Encoder,
    store: &mut ParameterStore,
    adam: &mut AdamState,
    batch: &[PretrainExample],
    dropout_seeds: Option<&[u64]>,
    mip_same_basket_only: bool,
) -> Result<PretrainLosses> {
    if batch.is_empty() {
        return Err(Error::Contract("empty pre-training batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = Gradients::empty(store.len());
    let (mut l1, mut l2) = (0.0, 0.0);
    for (i, example) in batch.iter().enumerate() {
        let mut rng = dropout_seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
        let (a, b, g) = example_loss_and_grad(encoder, store, example, mip_same_basket_only, scale, rng.as_mut())?;
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                detail: format!("l1={a} l2={b}"),
            });
        }
        l1 += a;
        l2 += b;
        total.merge(g);
    }
    store.zero_grads();
    store.accumulate(&total);
    adam_step(store, adam)?;
    let l1 = l1 * scale;
    let l2 = l2 * scale;
    Ok(PretrainLosses { l1, l2, l3: l1 + l2 })
}

/// Stateful pre-training run: sampler, parameters, optimizer and the RNG
/// whose stream position is saved with every checkpoint.
pub struct Pretrainer {
    pub encoder: Encoder,
    pub config: PretrainConfig,
    pub store: ParameterStore,
    pub adam: AdamState,
    pub step: usize,
    sampler: PairSampler,
    rng: ChaCha8Rng,
}

impl Pretrainer {
    pub fn new(corpus: &Corpus, encoder_config: EncoderConfig, config: PretrainConfig) -> Result<Self> {
        config.masking.validate()?;
        if encoder_config.vocab_size != corpus.vocabulary.size() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} != corpus vocabulary size {}",
                encoder_config.vocab_size,
                corpus.vocabulary.size()
            )));
        }
        let encoder = Encoder::new(encoder_config)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        encoder.init_params(&mut store, &mut init_rng)?;
        init_heads(&mut store, &encoder.config, &mut init_rng)?;
        let sampler = PairSampler::new(corpus, config.negative_mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Pretrainer {
            adam: AdamState::new(config.learning_rate),
            encoder,
            config,
            store,
            step: 0,
            sampler,
            rng,
        })
    }

    /// Continues from a checkpoint written by [`Pretrainer::save`], restoring
    /// parameters, optimizer moments and the sampling RNG position.
    pub fn resume(corpus: &Corpus, checkpoint_dir: &Path, config: PretrainConfig) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint_dir)?;
        let encoder = Encoder::new(EncoderConfig::from_header(&ck.header)?)?;
        let store = ck.to_store()?;
        let adam = ck.adam_state(&store, config.learning_rate)?;
        let get = |k: &str| -> Result<&String> {
            ck.header
                .get(k)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{k}`; not a pre-training checkpoint")))
        };
        let step: usize = get("pretrain.step")?.parse().map_err(|_| Error::Config("bad pretrain.step".into()))?;
        let word_pos: u128 = get("pretrain.rng_word_pos")?
            .parse()
            .map_err(|_| Error::Config("bad pretrain.rng_word_pos".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        rng.set_word_pos(word_pos);
        Ok(Pretrainer {
            sampler: PairSampler::new(corpus, config.negative_mode)?,
            encoder,
            config,
            store,
            adam,
            step,
            rng,
        })
    }

    pub fn sample_batch(&mut self) -> Result<Vec<PretrainExample>> {
        let max_len = self.encoder.config.max_sequence_length;
        let per_basket = self.encoder.config.positions_per_basket;
        let vocab = self.encoder.config.vocab_size;
        (0..self.config.batch_size)
            .map(|_| {
                let pair = self.sampler.sample(&mut self.rng)?;
                let input = pack_pair(&pair.first.items, &pair.second.items, max_len, per_basket)?;
                apply_masking(&input, pair.is_next, &self.config.masking, vocab, &mut self.rng)
            })
            .collect()
    }

    pub fn train_step(&mut self) -> Result<PretrainLosses> {
        let batch = self.sample_batch()?;
        let seeds: Vec<u64> = (0..batch.len()).map(|_| self.rng.next_u64()).collect();
        let dropout = (self.encoder.config.dropout_rate > 0.0).then_some(seeds.as_slice());
        let losses = pretrain_step(
            &self.encoder,
            &mut self.store,
            &mut self.adam,
            &batch,
            dropout,
            self.config.mip_same_basket_only,
        )?;
        self.step += 1;
        Ok(losses)
    }

    /// Trains until `config.steps`, appending `step<TAB>l1<TAB>l2<TAB>l3` to
    /// `log` and writing periodic checkpoints under `out/checkpoints`.
    pub fn run<W: Write>(&mut self, log: &mut W, out: Option<&Path>) -> Result<Vec<PretrainLosses>> {
        let mut history = Vec::new();
        while self.step < self.config.steps {
            let losses = self.train_step()?;
            writeln!(log, "{}\t{}\t{}\t{}", self.step, losses.l1, losses.l2, losses.l3)
                .map_err(|e| Error::io("loss log", e))?;
            history.push(losses);
            if let Some(dir) = out {
                if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                    self.save(&dir.join("checkpoints").join(format!("step-{}", self.step)))?;
                }
            }
        }
        Ok(history)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_store(&self.store).with_optimizer(&self.store, &self.adam);
        ck.header.extend(self.encoder.config.to_header());
        let mut extra = BTreeMap::new();
        extra.insert("pretrain.step".to_string(), self.step.to_string());
        extra.insert("pretrain.rng_word_pos".to_string(), self.rng.get_word_pos().to_string());
        extra.insert("pretrain.seed".to_string(), self.config.seed.to_string());
        ck.header.extend(extra);
        ck
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.checkpoint().save(dir)
    }
}

/// Held-out accuracy of both pre-training heads.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PretrainEval {
    pub masked_item_accuracy: f64,
    pub masked_item_cases: usize,
    pub next_basket_accuracy: f64,
    pub next_basket_cases: usize,
}

/// Predicted item (vocabulary index) at each masked position, no dropout.
pub fn predict_masked(encoder: &Encoder, store: &ParameterStore, example: &PretrainExample, scope: AttentionScope) -> Result<Vec<usize>> {
    let mut tape = Tape::new(store);
    let out = encoder.encode::<NoDropout>(&mut tape, &example.input, scope, None)?;
    let logits = item_logits(&mut tape, out.hidden, &example.mask_positions)?;
    let v = tape.value(logits);
    Ok((0..example.mask_positions.len())
        .map(|r| {
            let row = v.row(r);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
            best + NUM_SPECIAL
        })
        .collect())
}

pub fn predict_next(encoder: &Encoder, store: &ParameterStore, input: &InputSequence) -> Result<f64> {
    let mut tape = Tape::new(store);
    let out = encoder.encode::<NoDropout>(&mut tape, input, AttentionScope::Full, None)?;
    let logit = next_basket_logit(&mut tape, out.hidden)?;
    Ok(tape.value(logit).item())
}

/// Masked-item cases on each user's (validation, test) pair: one case per
/// planted-pair member whose partner sits in the same basket; only that
/// member is replaced by MASK.
pub fn heldout_mask_cases(corpus: &Corpus, pairs: &[(usize, usize)], max_len: usize, per_basket: bool) -> Result<Vec<PretrainExample>> {
    let mut cases = Vec::new();
    for s in &corpus.split {
        let input = pack_pair(&s.validation.items, &s.test.items, max_len, per_basket)?;
        for pos in 0..input.len() {
            let tok = input.token_ids[pos];
            let partner = pairs.iter().find_map(|&(a, b)| {
                if a == tok {
                    Some(b)
                } else if b == tok {
                    Some(a)
                } else {
                    None
                }
            });
            let Some(partner) = partner else { continue };
            let same_segment = (0..input.len()).any(|j| input.token_ids[j] == partner && input.segment_ids[j] == input.segment_ids[pos]);
            if same_segment {
                let mut masked = input.clone();
                masked.token_ids[pos] = MASK;
                cases.push(PretrainExample {
                    input: masked,
                    mask_positions: vec![pos],
                    mask_targets: vec![tok],
                    is_next: true,
                });
            }
        }
    }
    Ok(cases)
}

/// Next-basket cases involving each user's unseen test basket: the positive
/// is (validation, test); the negative pairs a uniformly drawn training
/// basket (never adjacent to test) with test.
pub fn heldout_pair_cases(corpus: &Corpus, max_len: usize, per_basket: bool, seed: u64) -> Result<Vec<(InputSequence, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for s in &corpus.split {
        cases.push((pack_pair(&s.validation.items, &s.test.items, max_len, per_basket)?, true));
        if let Some(a) = s.train.choose(&mut rng) {
            cases.push((pack_pair(&a.items, &s.test.items, max_len, per_basket)?, false));
        }
    }
    Ok(cases)
}

pub fn evaluate_pretraining(
    encoder: &Encoder,
    store: &ParameterStore,
    mask_cases: &[PretrainExample],
    pair_cases: &[(InputSequence, bool)],
) -> Result<PretrainEval> {
    let mut correct = 0;
    for case in mask_cases {
        let pred = predict_masked(encoder, store, case, AttentionScope::Full)?;
        correct += usize::from(pred[0] == case.mask_targets[0]);
    }
    let mut pair_correct = 0;
    for (input, label) in pair_cases {
        let logit = predict_next(encoder, store, input)?;
        pair_correct += usize::from((logit > 0.0) == *label);
    }
    let ratio = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(PretrainEval {
        masked_item_accuracy: ratio(correct, mask_cases.len()),
        masked_item_cases: mask_cases.len(),
        next_basket_accuracy: ratio(pair_correct, pair_cases.len()),
        next_basket_cases: pair_cases.len(),
    })
}

/// Vocabulary indices of planted pairs given as raw catalog positions.
pub fn pairs_to_vocab(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().map(|&(a, b)| (a + NUM_SPECIAL, b + NUM_SPECIAL)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(t: usize, items: &[usize]) -> Basket {
        Basket::new(t, items.to_vec())
    }

    #[test]
    fn single_user_two_baskets() {
        let s = PairSampler::from_histories(vec![vec![b(0, &[4]), b(1, &[5])]], NegativeMode::SameUser).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut saw_positive = false;
        for _ in 0..50 {
            match s.sample(&mut rng) {
                Ok(p) => {
                    assert!(p.is_next);
                    assert_eq!((p.first.items[0], p.second.items[0]), (4, 5));
                    saw_positive = true;
                }
                Err(e) => assert!(matches!(e, Error::Sampling(_))),
            }
        }
        assert!(saw_positive);
    }

    #[test]
    fn no_anchor_is_sampling_error() {
        let err = PairSampler::from_histories(vec![vec![b(0, &[4])]], NegativeMode::SameUser).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn pack_pair_layout_and_truncation() {
        let s = pack_pair(&[4, 5], &[6], 16, false).unwrap();
        assert_eq!(s.token_ids, vec![CLS, 4, 5, SEP, 6, SEP]);
        assert_eq!(s.segment_ids, vec![0, 0, 0, 0, 1, 1]);
        let s = pack_pair(&[4, 5, 6, 7], &[8, 9], 7, false).unwrap();
        assert_eq!(s.token_ids, vec![CLS, 4, 5, SEP, 8, 9, SEP]);
    }

    #[test]
    fn full_masking() {
        let input = pack_pair(&[4, 5], &[6], 16, false).unwrap();
        let cfg = MaskingConfig {
            mask_rate: 1.0,
            mask_token_prob: 1.0,
            random_token_prob: 0.0,
        };
        let ex = apply_masking(&input, true, &cfg, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ex.input.token_ids, vec![CLS, MASK, MASK, SEP, MASK, SEP]);
        assert_eq!(ex.mask_targets, vec![4, 5, 6]);
        assert_eq!(ex.mask_positions, vec![1, 2, 4]);
    }

    #[test]
    fn zero_mask_rate_rejected() {
        let input = pack_pair(&[4], &[5], 16, false).unwrap();
        let cfg = MaskingConfig {
            mask_rate: 0.0,
            ..Default::default()
        };
        assert!(apply_masking(&input, true, &cfg, 10, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn negative_mode_parses() {
        assert_eq!("cross_user".parse::<NegativeMode>().unwrap(), NegativeMode::CrossUser);
        assert!("sideways".parse::<NegativeMode>().is_err());
    }
}
