//! Text-emotion classifiers used to pick a meme template: a BiLSTM and a
//! TextCNN over word embeddings, and a feedforward net over precomputed
//! sentence vectors.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::GloveTable;
use crate::error::{Error, Result};
use crate::neural::{bilstm_encode, linear, LinearParams, LstmParams};
use crate::par;
use crate::tensor::{sgd_step, Gradients, Graph, ParamId, ParamStore, SgdConfig, Tensor, Var};
use crate::textproc::{self, build_vocab, normalize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joy,
    Sad,
    Anger,
    Fear,
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Joy,
        EmotionLabel::Sad,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown emotion label {s:?}")))
    }
}

/// Display name of class `index`; classes past the five canonical labels
/// are named `class<index>`.
pub fn class_name(index: usize) -> String {
    EmotionLabel::from_index(index).map_or_else(|| format!("class{index}"), |l| l.name().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Bilstm,
    Textcnn,
    Ffn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Bilstm => "bilstm",
            Architecture::Textcnn => "textcnn",
            Architecture::Ffn => "ffn",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Architecture::Ffn
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "bilstm" => Ok(Architecture::Bilstm),
            "textcnn" => Ok(Architecture::Textcnn),
            "ffn" => Ok(Architecture::Ffn),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstmConfig {
    pub embedding_dim: usize,
    /// Per direction; the encoding is twice this wide.
    pub hidden: usize,
    pub fc1_out: usize,
    pub num_classes: usize,
}

impl BiLstmConfig {
    pub fn new(embedding_dim: usize) -> Self {
        BiLstmConfig {
            embedding_dim,
            hidden: 128,
            fc1_out: 128,
            num_classes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCnnConfig {
    pub kernel_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub embedding_dim: usize,
    pub fc1_out: usize,
    pub num_classes: usize,
}

impl TextCnnConfig {
    pub fn new(embedding_dim: usize) -> Self {
        TextCnnConfig {
            kernel_sizes: vec![4, 5, 7, 8],
            filters_per_size: 256,
            embedding_dim,
            fc1_out: 128,
            num_classes: 5,
        }
    }

    /// Width of the concatenated max-pooled features.
    pub fn pooled_width(&self) -> usize {
        self.kernel_sizes.len() * self.filters_per_size
    }

    pub fn max_kernel(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FfnConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
}

impl Default for FfnConfig {
    fn default() -> Self {
        FfnConfig {
            input_dim: 768,
            hidden: vec![512, 128, 64],
            num_classes: 5,
        }
    }
}

/// Everything needed to rebuild a classifier's parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ClassifierConfig {
    Bilstm(BiLstmConfig),
    Textcnn(TextCnnConfig),
    Ffn(FfnConfig),
}

impl ClassifierConfig {
    pub fn architecture(&self) -> Architecture {
        match self {
            ClassifierConfig::Bilstm(_) => Architecture::Bilstm,
            ClassifierConfig::Textcnn(_) => Architecture::Textcnn,
            ClassifierConfig::Ffn(_) => Architecture::Ffn,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierConfig::Bilstm(c) => c.num_classes,
            ClassifierConfig::Textcnn(c) => c.num_classes,
            ClassifierConfig::Ffn(c) => c.num_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match self {
            ClassifierConfig::Bilstm(c) => {
                positive("embedding_dim", c.embedding_dim)?;
                positive("hidden", c.hidden)?;
                positive("fc1_out", c.fc1_out)?;
                positive("num_classes", c.num_classes)
            }
            ClassifierConfig::Textcnn(c) => {
                if c.kernel_sizes.is_empty() {
                    return Err(Error::Config("kernel_sizes must not be empty".into()));
                }
                for &k in &c.kernel_sizes {
                    positive("kernel size", k)?;
                }
                positive("filters_per_size", c.filters_per_size)?;
                positive("embedding_dim", c.embedding_dim)?;
                positive("fc1_out", c.fc1_out)?;
                positive("num_classes", c.num_classes)
            }
            ClassifierConfig::Ffn(c) => {
                positive("input_dim", c.input_dim)?;
                for &h in &c.hidden {
                    positive("hidden width", h)?;
                }
                positive("num_classes", c.num_classes)
            }
        }
    }
}

/// One classifier input: raw text for the embedding models, a sentence
/// vector for the feedforward model.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Text(String),
    Vector(Vec<f64>),
}

impl From<&str> for Sample {
    fn from(s: &str) -> Self {
        Sample::Text(s.to_string())
    }
}

impl From<String> for Sample {
    fn from(s: String) -> Self {
        Sample::Text(s)
    }
}

impl From<Vec<f64>> for Sample {
    fn from(v: Vec<f64>) -> Self {
        Sample::Vector(v)
    }
}

enum Prepared {
    Indices(Vec<usize>),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone)]
struct ConvLayer {
    kernel: usize,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
enum Layers {
    Bilstm {
        embedding: ParamId,
        fwd: LstmParams,
        bwd: LstmParams,
        fc1: LinearParams,
        out: LinearParams,
    },
    Textcnn {
        embedding: ParamId,
        convs: Vec<ConvLayer>,
        fc1: LinearParams,
        out: LinearParams,
    },
    Ffn {
        layers: Vec<LinearParams>,
    },
}

#[derive(Debug, Clone)]
pub struct EmotionClassifier {
    config: ClassifierConfig,
    vocab: Option<Vocabulary>,
    params: ParamStore,
    layers: Layers,
}

/// How to fill a fresh embedding table.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingInit<'a> {
    /// `U(-1, 1)` rows.
    Random { dim: usize },
    /// Pretrained rows; tokens missing from the table get a zero vector.
    Glove(&'a GloveTable),
}

/// Vocabulary over the normalized tokens of `texts`.
pub fn text_vocab<S: AsRef<str>>(texts: &[S]) -> Result<Vocabulary> {
    let corpus: Vec<Vec<String>> = texts.iter().map(|t| normalize(t.as_ref())).collect();
    build_vocab(&corpus, 1)
}

/// A `[V×d]` table aligned with `vocab`.
pub fn embedding_table(vocab: &Vocabulary, init: EmbeddingInit<'_>, seed: u64) -> Tensor {
    match init {
        EmbeddingInit::Random { dim } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::uniform(&[vocab.len(), dim], 1.0, &mut rng)
        }
        EmbeddingInit::Glove(glove) => {
            let dim = glove.dim();
            let mut t = Tensor::zeros(&[vocab.len(), dim]);
            for (i, token) in vocab.tokens().iter().enumerate() {
                if let Some(v) = glove.get(token) {
                    t.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(v);
                }
            }
            t
        }
    }
}

fn check_embedding(vocab: &Vocabulary, table: &Tensor, dim: usize) -> Result<()> {
    if table.shape() != [vocab.len(), dim] {
        return Err(Error::shape("embedding table", table.shape(), &[vocab.len(), dim]));
    }
    Ok(())
}

pub fn build_bilstm_classifier(
    vocab: Vocabulary,
    embedding: Tensor,
    cfg: BiLstmConfig,
    seed: u64,
) -> Result<EmotionClassifier> {
    check_embedding(&vocab, &embedding, cfg.embedding_dim)?;
    EmotionClassifier::build(ClassifierConfig::Bilstm(cfg), Some(vocab), Some(embedding), seed)
}

pub fn build_textcnn_classifier(
    vocab: Vocabulary,
    embedding: Tensor,
    cfg: TextCnnConfig,
    seed: u64,
) -> Result<EmotionClassifier> {
    check_embedding(&vocab, &embedding, cfg.embedding_dim)?;
    EmotionClassifier::build(ClassifierConfig::Textcnn(cfg), Some(vocab), Some(embedding), seed)
}

pub fn build_ffn_classifier(cfg: FfnConfig, seed: u64) -> Result<EmotionClassifier> {
    EmotionClassifier::build(ClassifierConfig::Ffn(cfg), None, None, seed)
}

impl EmotionClassifier {
    /// Fresh classifier for `config`. Text models need `vocab`; their
    /// embedding table is `U(-1, 1)` unless one is supplied.
    pub fn from_config(config: ClassifierConfig, vocab: Option<Vocabulary>, seed: u64) -> Result<Self> {
        Self::build(config, vocab, None, seed)
    }

    fn build(
        config: ClassifierConfig,
        vocab: Option<Vocabulary>,
        embedding: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let vocab = match (config.architecture().uses_text(), vocab) {
            (true, Some(v)) => Some(v),
            (true, None) => return Err(Error::Config("text classifier needs a vocabulary".into())),
            (false, _) => None,
        };
        let add_embedding = |params: &mut ParamStore, dim: usize, rng: &mut ChaCha8Rng| {
            let v = vocab.as_ref().map_or(0, Vocabulary::len);
            let table = embedding.clone().unwrap_or_else(|| Tensor::uniform(&[v, dim], 1.0, rng));
            params.add("embedding", table)
        };
        let layers = match &config {
            ClassifierConfig::Bilstm(c) => {
                let embedding = add_embedding(&mut params, c.embedding_dim, &mut rng);
                let fwd = LstmParams::new(&mut params, "lstm_fwd", c.embedding_dim, c.hidden, &mut rng);
                let bwd = LstmParams::new(&mut params, "lstm_bwd", c.embedding_dim, c.hidden, &mut rng);
                let fc1 = LinearParams::new(&mut params, "fc1", 2 * c.hidden, c.fc1_out, &mut rng);
                let out = LinearParams::new(&mut params, "out", c.fc1_out, c.num_classes, &mut rng);
                Layers::Bilstm {
                    embedding,
                    fwd,
                    bwd,
                    fc1,
                    out,
                }
            }
            ClassifierConfig::Textcnn(c) => {
                let embedding = add_embedding(&mut params, c.embedding_dim, &mut rng);
                let convs = c
                    .kernel_sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| {
                        let bound = 1.0 / ((k * c.embedding_dim) as f64).sqrt();
                        let shape = [c.filters_per_size, k, c.embedding_dim];
                        let weight = params.add(format!("conv{i}.weight"), Tensor::uniform(&shape, bound, &mut rng));
                        let bias = params.add(
                            format!("conv{i}.bias"),
                            Tensor::uniform(&[c.filters_per_size], bound, &mut rng),
                        );
                        ConvLayer { kernel: k, weight, bias }
                    })
                    .collect();
                let fc1 = LinearParams::new(&mut params, "fc1", c.pooled_width(), c.fc1_out, &mut rng);
                let out = LinearParams::new(&mut params, "out", c.fc1_out, c.num_classes, &mut rng);
                Layers::Textcnn {
                    embedding,
                    convs,
                    fc1,
                    out,
                }
            }
            ClassifierConfig::Ffn(c) => {
                let mut widths = vec![c.input_dim];
                widths.extend(&c.hidden);
                widths.push(c.num_classes);
                let n = widths.len() - 1;
                let layers = widths
                    .windows(2)
                    .enumerate()
                    .map(|(i, w)| {
                        let name = if i + 1 == n { "out".to_string() } else { format!("fc{}", i + 1) };
                        LinearParams::new(&mut params, &name, w[0], w[1], &mut rng)
                    })
                    .collect();
                Layers::Ffn { layers }
            }
        };
        Ok(EmotionClassifier {
            config,
            vocab,
            params,
            layers,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture()
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    /// Class names in output order.
    pub fn labels(&self) -> Vec<String> {
        (0..self.num_classes()).map(class_name).collect()
    }

    pub fn vocab(&self) -> Option<&Vocabulary> {
        self.vocab.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Excludes the embedding table from SGD updates.
    pub fn set_embeddings_frozen(&mut self, frozen: bool) {
        if let Layers::Bilstm { embedding, .. } | Layers::Textcnn { embedding, .. } = &self.layers {
            self.params.set_frozen(*embedding, frozen);
        }
    }

    /// Input and output widths of the dense stack, e.g. `[768, 512, 128, 64, 5]`
    /// for the default feedforward model.
    pub fn dense_widths(&self) -> Vec<usize> {
        let linears: Vec<&LinearParams> = match &self.layers {
            Layers::Bilstm { fc1, out, .. } | Layers::Textcnn { fc1, out, .. } => vec![fc1, out],
            Layers::Ffn { layers } => layers.iter().collect(),
        };
        let mut widths = vec![self.params.get(linears[0].weight).shape()[1]];
        widths.extend(linears.iter().map(|l| self.params.get(l.weight).shape()[0]));
        widths
    }

    fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        match (&self.vocab, sample) {
            (Some(vocab), Sample::Text(text)) => {
                let tokens = normalize(text);
                if tokens.is_empty() {
                    return Err(Error::EmptyInput);
                }
                Ok(Prepared::Indices(textproc::encode(vocab, &tokens, false)))
            }
            (None, Sample::Vector(v)) => {
                let ClassifierConfig::Ffn(c) = &self.config else {
                    unreachable!("only the feedforward model has no vocabulary")
                };
                if v.len() != c.input_dim {
                    return Err(Error::shape("sentence vector", &[v.len()], &[c.input_dim]));
                }
                Ok(Prepared::Vector(v.clone()))
            }
            (Some(_), Sample::Vector(_)) => Err(Error::Config(format!(
                "{} classifier expects text, got a sentence vector",
                self.architecture()
            ))),
            (None, Sample::Text(_)) => Err(Error::Config(
                "ffn classifier expects a sentence vector, got text".into(),
            )),
        }
    }

    /// Penultimate representation: the BiLSTM encoding, the TextCNN pooled
    /// features, or the raw sentence vector.
    pub fn features(&self, g: &mut Graph<'_>, sample: &Sample) -> Result<Var> {
        let prepared = self.prepare(sample)?;
        self.features_prepared(g, &prepared, 0)
    }

    fn features_prepared(&self, g: &mut Graph<'_>, input: &Prepared, extra_pad: usize) -> Result<Var> {
        match (&self.layers, input) {
            (Layers::Bilstm { embedding, fwd, bwd, .. }, Prepared::Indices(idx)) => {
                let table = g.param(*embedding);
                let seq = idx.iter().map(|&i| g.embedding(table, i)).collect::<Result<Vec<_>>>()?;
                bilstm_encode(g, &seq, fwd, bwd)
            }
            (Layers::Textcnn { embedding, convs, .. }, Prepared::Indices(idx)) => {
                let ClassifierConfig::Textcnn(c) = &self.config else {
                    unreachable!("layers follow config")
                };
                let table = g.param(*embedding);
                let mut seq = g.embedding_rows(table, idx)?;
                let padded = idx.len().max(c.max_kernel()) + extra_pad;
                if padded > idx.len() {
                    let pad = g.zeros(&[padded - idx.len(), c.embedding_dim]);
                    seq = g.concat(&[seq, pad], 0)?;
                }
                let mut pooled = Vec::with_capacity(convs.len());
                for conv in convs {
                    let kernels = g.param(conv.weight);
                    let bias = g.param(conv.bias);
                    let maps = g.conv1d_bank(seq, kernels, bias)?;
                    let valid = (idx.len() + 1).saturating_sub(conv.kernel).max(1);
                    pooled.push(g.max_over_time_masked(maps, valid)?);
                }
                g.concat(&pooled, 0)
            }
            (Layers::Ffn { .. }, Prepared::Vector(v)) => Ok(g.constant(Tensor::vector(v.clone()))),
            _ => unreachable!("prepare matches input kind to architecture"),
        }
    }

    fn logits_prepared(&self, g: &mut Graph<'_>, input: &Prepared, extra_pad: usize) -> Result<Var> {
        let features = self.features_prepared(g, input, extra_pad)?;
        match &self.layers {
            Layers::Bilstm { fc1, out, .. } | Layers::Textcnn { fc1, out, .. } => {
                let h = linear(g, features, fc1)?;
                let h = g.relu(h);
                linear(g, h, out)
            }
            Layers::Ffn { layers } => {
                let (last, hidden) = layers.split_last().expect("at least one layer");
                let mut h = features;
                for layer in hidden {
                    let z = linear(g, h, layer)?;
                    h = g.relu(z);
                }
                linear(g, h, last)
            }
        }
    }

    /// Unnormalized class scores.
    pub fn logits(&self, g: &mut Graph<'_>, sample: &Sample) -> Result<Var> {
        let prepared = self.prepare(sample)?;
        self.logits_prepared(g, &prepared, 0)
    }

    fn predict_prepared(&self, input: &Prepared, extra_pad: usize) -> Result<Prediction> {
        let mut g = Graph::new(&self.params);
        let logits = self.logits_prepared(&mut g, input, extra_pad)?;
        let probs = g.softmax(logits)?;
        let probabilities = g.value(probs).to_vec();
        Ok(Prediction {
            class: crate::caption::argmax(&probabilities),
            probabilities,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Argmax of `probabilities`, lowest index on ties.
    pub class: usize,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn label(&self) -> Option<EmotionLabel> {
        EmotionLabel::from_index(self.class)
    }
}

pub fn predict_emotion(model: &EmotionClassifier, sample: &Sample) -> Result<Prediction> {
    let prepared = model.prepare(sample)?;
    model.predict_prepared(&prepared, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    /// Fraction of examples whose prediction was correct just before their
    /// update.
    pub accuracy: f64,
}

fn check_label(model: &EmotionClassifier, label: EmotionLabel) -> Result<usize> {
    let c = label.index();
    if c >= model.num_classes() {
        return Err(Error::IndexOutOfRange {
            what: "classifier output",
            index: c,
            size: model.num_classes(),
        });
    }
    Ok(c)
}

/// Per-example SGD over a seeded shuffle of `data` each epoch.
pub fn train_classifier(
    model: &mut EmotionClassifier,
    data: &[(Sample, EmotionLabel)],
    opts: &TrainOptions,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sgd = opts.sgd.validated()?;
    let prepared = data
        .iter()
        .map(|(s, l)| Ok((model.prepare(s)?, check_label(model, *l)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut grads = Gradients::new(&model.params);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut correct) = (0.0, 0usize);
        for (step, &i) in order.iter().enumerate() {
            let (input, class) = &prepared[i];
            let loss = {
                let mut g = Graph::new(&model.params);
                let logits = model.logits_prepared(&mut g, input, 0)?;
                if crate::caption::argmax(g.value(logits)) == *class {
                    correct += 1;
                }
                let loss = g.cross_entropy(logits, *class)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("epoch {epoch} step {step}")));
                }
                g.backward(loss, &mut grads)?;
                value
            };
            sgd_step(&mut model.params, &mut grads, &sgd);
            total += loss;
        }
        let stats = EpochStats {
            loss: total / prepared.len() as f64,
            accuracy: correct as f64 / prepared.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.5} accuracy {:.4}", stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

/// Accuracy and macro-F1 of a square confusion matrix (rows gold, columns
/// predicted). Classes with neither gold nor predicted examples are left
/// out of the macro average.
pub fn metrics_from_confusion(confusion: &[Vec<u64>]) -> Result<(f64, f64)> {
    let n = confusion.len();
    if confusion.iter().any(|row| row.len() != n) {
        return Err(Error::Config("confusion matrix must be square".into()));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
    let mut f1_sum = 0.0;
    let mut counted = 0usize;
    for c in 0..n {
        let gold: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if gold == 0 && predicted == 0 {
            continue;
        }
        f1_sum += 2.0 * confusion[c][c] as f64 / (gold + predicted) as f64;
        counted += 1;
    }
    Ok((trace as f64 / total as f64, f1_sum / counted as f64))
}

pub fn evaluate_classifier(model: &EmotionClassifier, data: &[(Sample, EmotionLabel)]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let predictions = par::map_items(data, |(s, l)| {
        let gold = check_label(model, *l)?;
        Ok::<_, Error>((gold, predict_emotion(model, s)?.class))
    });
    let n = model.num_classes();
    let mut confusion = vec![vec![0u64; n]; n];
    for p in predictions {
        let (gold, predicted) = p?;
        confusion[gold][predicted] += 1;
    }
    let (accuracy, macro_f1) = metrics_from_confusion(&confusion)?;
    Ok(Evaluation {
        accuracy,
        macro_f1,
        confusion,
    })
}
