//! Attention encoder–decoder that rewrites a sentence into a meme caption.
//!
//! The encoder embeds each input token and feeds it through a GRU, keeping
//! every hidden state. Each decoder step scores the `max_len` encoder slots
//! from the previous token's embedding and the current hidden state, mixes
//! the encoder states with those weights, merges the mix with the embedding
//! (`attn_combine`), advances a GRU and emits log-probabilities over the
//! vocabulary.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{gru_cell, linear, GruParams, LinearParams};
use crate::par;
use crate::tensor::{sgd_step, Gradients, Graph, ParamId, ParamStore, SgdConfig, Tensor, Var};
use crate::textproc::{self, build_vocab, decode_tokens, normalize, Vocabulary, EOS, SOS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionConfig {
    pub hidden: usize,
    /// Encoder slots attended over; also the decoding length cap.
    pub max_len: usize,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        CaptionConfig {
            hidden: 256,
            max_len: 20,
        }
    }
}

impl CaptionConfig {
    pub fn validated(self) -> Result<Self> {
        if self.hidden == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "hidden ({}) and max_len ({}) must be positive",
                self.hidden, self.max_len
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct CaptionModel {
    vocab: Vocabulary,
    config: CaptionConfig,
    params: ParamStore,
    enc_embedding: ParamId,
    enc_gru: GruParams,
    dec_embedding: ParamId,
    attn: LinearParams,
    attn_combine: LinearParams,
    dec_gru: GruParams,
    out: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[max_len×hidden]`, rows past the input length are zero.
    pub outputs: Var,
    pub final_hidden: Var,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    pub logp: Var,
    pub hidden: Var,
    pub attn_weights: Var,
    pub context: Var,
}

/// Greedy decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub text: String,
    /// Emitted indices, without the terminating `<EOS>`.
    pub tokens: Vec<usize>,
    /// One attention vector (length `max_len`) per decoder step.
    pub attention: Vec<Vec<f64>>,
    /// True when decoding stopped on `<EOS>` rather than the length cap.
    pub terminated: bool,
}

pub(crate) struct PairLoss {
    pub loss: Var,
    pub decoder_inputs: Vec<usize>,
}

impl CaptionModel {
    /// Fresh model with weights drawn from a seeded generator. Embedding
    /// rows are `U(-1, 1)`; every other tensor is `U(±1/√fan_in)`.
    pub fn new(vocab: Vocabulary, config: CaptionConfig, seed: u64) -> Result<Self> {
        let config = config.validated()?;
        let (v, h, l) = (vocab.len(), config.hidden, config.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let enc_embedding = params.add("encoder.embedding", Tensor::uniform(&[v, h], 1.0, &mut rng));
        let enc_gru = GruParams::new(&mut params, "encoder.gru", h, h, &mut rng);
        let dec_embedding = params.add("decoder.embedding", Tensor::uniform(&[v, h], 1.0, &mut rng));
        let attn = LinearParams::new(&mut params, "decoder.attn", 2 * h, l, &mut rng);
        let attn_combine = LinearParams::new(&mut params, "decoder.attn_combine", 2 * h, h, &mut rng);
        let dec_gru = GruParams::new(&mut params, "decoder.gru", h, h, &mut rng);
        let out = LinearParams::new(&mut params, "decoder.out", h, v, &mut rng);
        Ok(CaptionModel {
            vocab,
            config,
            params,
            enc_embedding,
            enc_gru,
            dec_embedding,
            attn,
            attn_combine,
            dec_gru,
            out,
        })
    }

    /// Builds the vocabulary from both sides of `pairs`, then a fresh model.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)], config: CaptionConfig, seed: u64) -> Result<Self> {
        let corpus: Vec<Vec<String>> = pairs
            .iter()
            .flat_map(|(a, b)| [normalize(a.as_ref()), normalize(b.as_ref())])
            .collect();
        CaptionModel::new(build_vocab(&corpus, 1)?, config, seed)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> CaptionConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Normalizes and indexes `text`, appending `<EOS>`.
    pub fn input_indices(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = normalize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(textproc::encode(&self.vocab, &tokens, true))
    }

    /// Target indices for training: normalized caption plus `<EOS>`.
    pub fn target_indices(&self, text: &str) -> Result<Vec<usize>> {
        self.input_indices(text)
    }

    pub fn encode(&self, g: &mut Graph<'_>, input: &[usize]) -> Result<EncoderOutput> {
        if input.is_empty() {
            return Err(Error::EmptyInput);
        }
        let (h, max_len) = (self.config.hidden, self.config.max_len);
        let input = if input.len() > max_len {
            warn!("input of {} tokens truncated to {max_len}", input.len());
            &input[..max_len]
        } else {
            input
        };
        let table = g.param(self.enc_embedding);
        let mut hidden = g.zeros(&[h]);
        let mut rows = Vec::with_capacity(max_len);
        for &tok in input {
            let x = g.embedding(table, tok)?;
            hidden = gru_cell(g, x, hidden, &self.enc_gru)?;
            rows.push(hidden);
        }
        let mut outputs = g.stack(&rows)?;
        if rows.len() < max_len {
            let pad = g.zeros(&[max_len - rows.len(), h]);
            outputs = g.concat(&[outputs, pad], 0)?;
        }
        Ok(EncoderOutput {
            outputs,
            final_hidden: hidden,
            len: input.len(),
        })
    }

    pub fn decode_step(
        &self,
        g: &mut Graph<'_>,
        prev_token: usize,
        hidden: Var,
        encoder_outputs: Var,
    ) -> Result<DecoderStep> {
        let table = g.param(self.dec_embedding);
        let embedded = g.embedding(table, prev_token)?;
        let query = g.concat(&[embedded, hidden], 0)?;
        let scores = linear(g, query, &self.attn)?;
        let attn_weights = g.softmax(scores)?;
        let context = g.matmul(attn_weights, encoder_outputs)?;
        let merged = g.concat(&[embedded, context], 0)?;
        let combined = linear(g, merged, &self.attn_combine)?;
        let combined = g.relu(combined);
        let hidden = gru_cell(g, combined, hidden, &self.dec_gru)?;
        let logits = linear(g, hidden, &self.out)?;
        let logp = g.log_softmax(logits)?;
        Ok(DecoderStep {
            logp,
            hidden,
            attn_weights,
            context,
        })
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.is_empty() {
            return Err(Error::EmptyInput);
        }
        if target.last() != Some(&EOS) {
            return Err(Error::Config("caption target must end with <EOS>".into()));
        }
        if target.len() > self.config.max_len {
            return Err(Error::Config(format!(
                "caption target of {} tokens exceeds max_len {}",
                target.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(Error::IndexOutOfRange {
                what: "vocabulary",
                index: bad,
                size: self.vocab.len(),
            });
        }
        Ok(())
    }

    /// Mean per-token NLL of `target` given `input`. The next decoder input
    /// is the gold token with probability `teacher_forcing`, otherwise the
    /// model's own argmax.
    pub(crate) fn pair_loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        input: &[usize],
        target: &[usize],
        teacher_forcing: f64,
        rng: &mut R,
    ) -> Result<PairLoss> {
        self.check_target(target)?;
        let enc = self.encode(g, input)?;
        let mut hidden = enc.final_hidden;
        let mut prev = SOS;
        let mut losses = Vec::with_capacity(target.len());
        let mut decoder_inputs = Vec::with_capacity(target.len());
        for &gold in target {
            decoder_inputs.push(prev);
            let step = self.decode_step(g, prev, hidden, enc.outputs)?;
            losses.push(g.nll_loss(step.logp, gold)?);
            hidden = step.hidden;
            let forced = teacher_forcing >= 1.0 || (teacher_forcing > 0.0 && rng.gen::<f64>() < teacher_forcing);
            prev = if forced { gold } else { argmax(g.value(step.logp)) };
        }
        let total = g.add_all(&losses)?;
        let loss = g.scale(total, 1.0 / target.len() as f64);
        Ok(PairLoss { loss, decoder_inputs })
    }
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One SGD update on a single (input, target) pair. Returns the mean
/// per-token loss measured before the update.
pub fn train_pair<R: Rng + ?Sized>(
    model: &mut CaptionModel,
    input: &[usize],
    target: &[usize],
    teacher_forcing: f64,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut grads = Gradients::new(&model.params);
    train_pair_with(model, input, target, teacher_forcing, cfg, rng, &mut grads)
}

fn train_pair_with<R: Rng + ?Sized>(
    model: &mut CaptionModel,
    input: &[usize],
    target: &[usize],
    teacher_forcing: f64,
    cfg: &SgdConfig,
    rng: &mut R,
    grads: &mut Gradients,
) -> Result<f64> {
    let loss = {
        let mut g = Graph::new(&model.params);
        let pair = model.pair_loss(&mut g, input, target, teacher_forcing, rng)?;
        log::trace!("decoder inputs {:?}", pair.decoder_inputs);
        let loss = g.scalar(pair.loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite("caption training step".into()));
        }
        g.backward(pair.loss, grads)?;
        loss
    };
    sgd_step(&mut model.params, grads, cfg);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptionTrainOptions {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub teacher_forcing: f64,
    pub seed: u64,
    /// Stop after the first epoch whose mean loss falls below this value.
    pub target_loss: Option<f64>,
}

impl Default for CaptionTrainOptions {
    fn default() -> Self {
        CaptionTrainOptions {
            epochs: 1000,
            sgd: SgdConfig::default(),
            teacher_forcing: 1.0,
            seed: 0,
            target_loss: None,
        }
    }
}

/// Trains on `pairs`, visiting them in a seeded shuffled order each epoch.
/// Returns the per-iteration loss series.
pub fn train_caption_model<S: AsRef<str>>(
    model: &mut CaptionModel,
    pairs: &[(S, S)],
    opts: &CaptionTrainOptions,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..=1.0).contains(&opts.teacher_forcing) {
        return Err(Error::Config(format!(
            "teacher forcing ratio {} outside [0, 1]",
            opts.teacher_forcing
        )));
    }
    let sgd = opts.sgd.validated()?;
    let encoded = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let input = model.input_indices(a.as_ref())?;
            let target = model.target_indices(b.as_ref())?;
            model
                .check_target(&target)
                .map_err(|e| Error::Config(format!("pair {}: {e}", i + 1)))?;
            Ok((input, target))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut grads = Gradients::new(&model.params);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut curve = Vec::with_capacity(opts.epochs * encoded.len());
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let (input, target) = &encoded[i];
            let loss = train_pair_with(model, input, target, opts.teacher_forcing, &sgd, &mut rng, &mut grads)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFinite(format!("epoch {epoch} step {step}")),
                    other => other,
                })?;
            epoch_loss += loss;
            curve.push(loss);
        }
        let mean = epoch_loss / encoded.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        if opts.target_loss.is_some_and(|t| mean < t) {
            break;
        }
    }
    Ok(curve)
}

/// Decodes by feeding back the argmax token until `<EOS>` or `max_len`
/// steps.
pub fn greedy_decode(model: &CaptionModel, text: &str) -> Result<Caption> {
    let input = model.input_indices(text)?;
    let mut g = Graph::new(&model.params);
    let enc = model.encode(&mut g, &input)?;
    let mut hidden = enc.final_hidden;
    let mut prev = SOS;
    let mut tokens = Vec::new();
    let mut attention = Vec::new();
    let mut terminated = false;
    for _ in 0..model.config.max_len {
        let step = model.decode_step(&mut g, prev, hidden, enc.outputs)?;
        attention.push(g.value(step.attn_weights).to_vec());
        hidden = step.hidden;
        let next = argmax(g.value(step.logp));
        if next == EOS {
            terminated = true;
            break;
        }
        tokens.push(next);
        prev = next;
    }
    let text = decode_tokens(&model.vocab, &tokens)?;
    Ok(Caption {
        text,
        tokens,
        attention,
        terminated,
    })
}

/// [`greedy_decode`] over many inputs, in parallel when enabled.
pub fn greedy_decode_batch<S: AsRef<str> + Sync>(model: &CaptionModel, texts: &[S]) -> Vec<Result<Caption>> {
    par::map_items(texts, |t| greedy_decode(model, t.as_ref()))
}

/// Fraction of `text`'s tokens missing from the model vocabulary.
pub fn oov_count(model: &CaptionModel, text: &str) -> (usize, usize) {
    let tokens = normalize(text);
    let unknown = textproc::encode(&model.vocab, &tokens, false)
        .iter()
        .filter(|&&i| i == UNK)
        .count();
    (unknown, tokens.len())
}

/// Mean over consecutive windows of `window` values; the last partial window
/// is dropped.
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    curve
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn tiny_model(hidden: usize, max_len: usize, seed: u64) -> CaptionModel {
        CaptionModel::from_pairs(
            &[("i love nlp", "love nlp"), ("you are sad", "sad ? you")],
            CaptionConfig { hidden, max_len },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn encode_single_token_has_one_nonzero_row() {
        let m = tiny_model(4, 5, 1);
        let mut g = Graph::new(m.params());
        let enc = m.encode(&mut g, &[3]).unwrap();
        assert_eq!(g.shape(enc.outputs), &[5, 4]);
        let out = g.value(enc.outputs);
        assert_eq!(&out[..4], g.value(enc.final_hidden));
        assert!(out[..4].iter().any(|v| *v != 0.0));
        assert!(out[4..].iter().all(|v| *v == 0.0));
        assert!(matches!(m.encode(&mut g, &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn encode_with_zero_params_stays_at_zero() {
        let mut m = tiny_model(4, 6, 2);
        let ids: Vec<_> = m.params.ids().collect();
        for id in ids {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new(m.params());
        let enc = m.encode(&mut g, &[3, 4, 5]).unwrap();
        assert!(g.value(enc.outputs).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn encode_truncates_long_inputs() {
        let m = tiny_model(3, 4, 3);
        let mut g = Graph::new(m.params());
        let enc = m.encode(&mut g, &[3, 4, 5, 3, 4, 5, 1]).unwrap();
        assert_eq!(enc.len, 4);
        assert_eq!(g.shape(enc.outputs), &[4, 3]);
    }

    #[test]
    fn attention_is_a_distribution_of_max_len() {
        let m = tiny_model(5, 7, 4);
        let mut g = Graph::new(m.params());
        let enc = m.encode(&mut g, &[3, 4, 1]).unwrap();
        let step = m.decode_step(&mut g, SOS, enc.final_hidden, enc.outputs).unwrap();
        let w = g.value(step.attn_weights);
        assert_eq!(w.len(), 7);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(g.value(step.logp).len(), m.vocab().len());
        assert!(m.decode_step(&mut g, 999, enc.final_hidden, enc.outputs).is_err());
    }

    #[test]
    fn zero_attention_layer_gives_mean_context() {
        let mut m = tiny_model(4, 5, 5);
        let (w, b) = (m.attn.weight, m.attn.bias);
        m.params.get_mut(w).data_mut().fill(0.0);
        m.params.get_mut(b).data_mut().fill(0.0);
        let mut g = Graph::new(m.params());
        let enc = m.encode(&mut g, &[3, 4, 5]).unwrap();
        let step = m.decode_step(&mut g, SOS, enc.final_hidden, enc.outputs).unwrap();
        let rows = g.value(enc.outputs);
        for j in 0..4 {
            let mean: f64 = (0..5).map(|r| rows[r * 4 + j]).sum::<f64>() / 5.0;
            assert!((g.value(step.context)[j] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_check_encoder() {
        for seed in 0..3 {
            let m = tiny_model(3, 4, 10 + seed);
            let report = grad_check(m.params(), 1e-5, |g| {
                let enc = m.encode(g, &[3, 4, 5])?;
                let flat = g.reshape(enc.outputs, &[12])?;
                g.cross_entropy(flat, 5)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn gradient_check_single_decode_step() {
        for seed in 0..3 {
            let m = tiny_model(3, 4, 20 + seed);
            let report = grad_check(m.params(), 1e-5, |g| {
                let enc = m.encode(g, &[4, 3])?;
                let step = m.decode_step(g, SOS, enc.final_hidden, enc.outputs)?;
                g.nll_loss(step.logp, 4)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn gradient_check_encoder_and_two_decode_steps() {
        for seed in 0..3 {
            let m = tiny_model(3, 4, 30 + seed);
            let report = grad_check(m.params(), 1e-5, |g| {
                let enc = m.encode(g, &[3, 5, 1])?;
                let s1 = m.decode_step(g, SOS, enc.final_hidden, enc.outputs)?;
                let s2 = m.decode_step(g, 4, s1.hidden, enc.outputs)?;
                let l1 = g.nll_loss(s1.logp, 4)?;
                let l2 = g.nll_loss(s2.logp, EOS)?;
                g.add(l1, l2)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn teacher_forcing_feeds_gold_tokens() {
        let a = tiny_model(4, 6, 40);
        let mut b = tiny_model(4, 6, 40);
        // different output layers, same everything else
        let w = b.out.weight;
        for v in b.params.get_mut(w).data_mut() {
            *v = -*v * 3.0;
        }
        let input = a.input_indices("i love nlp").unwrap();
        let target = a.target_indices("love nlp").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seen = |m: &CaptionModel, rng: &mut ChaCha8Rng| {
            let mut g = Graph::new(m.params());
            m.pair_loss(&mut g, &input, &target, 1.0, rng).unwrap().decoder_inputs
        };
        let ia = seen(&a, &mut rng);
        let ib = seen(&b, &mut rng);
        assert_eq!(ia, ib);
        let mut expected = vec![SOS];
        expected.extend_from_slice(&target[..target.len() - 1]);
        assert_eq!(ia, expected);
    }

    #[test]
    fn train_pair_rejects_bad_targets() {
        let mut m = tiny_model(4, 3, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SgdConfig::default();
        let input = m.input_indices("i love nlp").unwrap();
        assert!(matches!(
            train_pair(&mut m, &input, &[], 1.0, &cfg, &mut rng),
            Err(Error::EmptyInput)
        ));
        assert!(train_pair(&mut m, &input, &[3, 4], 1.0, &cfg, &mut rng).is_err());
        assert!(train_pair(&mut m, &input, &[3, 4, 5, EOS], 1.0, &cfg, &mut rng).is_err());
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let mut m = tiny_model(4, 6, 42);
        let before = m.params.clone();
        let opts = CaptionTrainOptions {
            epochs: 0,
            ..Default::default()
        };
        let curve = train_caption_model(&mut m, &[("i love nlp", "love nlp")], &opts).unwrap();
        assert!(curve.is_empty());
        for id in before.ids() {
            assert_eq!(before.get(id), m.params.get(id));
        }
    }

    #[test]
    fn same_seed_same_curve() {
        let pairs = [("i love nlp", "love nlp"), ("you are sad", "sad ? you")];
        let run = || {
            let mut m = CaptionModel::from_pairs(&pairs, CaptionConfig { hidden: 8, max_len: 6 }, 3).unwrap();
            let opts = CaptionTrainOptions {
                epochs: 5,
                teacher_forcing: 0.5,
                seed: 9,
                ..Default::default()
            };
            train_caption_model(&mut m, &pairs, &opts).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn greedy_decode_respects_cap_and_normalizes_attention() {
        let m = tiny_model(6, 4, 43);
        for text in ["i love nlp", "zzz qqq", "sad ? you are"] {
            let c = greedy_decode(&m, text).unwrap();
            assert!(c.tokens.len() <= 4);
            assert_eq!(c.attention.len(), c.tokens.len() + usize::from(c.terminated));
            for w in &c.attention {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert_eq!(greedy_decode(&m, text).unwrap(), c);
        }
        assert!(matches!(greedy_decode(&m, "   "), Err(Error::EmptyInput)));
    }

    #[test]
    fn smoothing_windows() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
        assert!(smooth(&[1.0], 2).is_empty());
    }
}
