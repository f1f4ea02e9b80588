use memegen_core::caption::{CaptionConfig, CaptionModel};
use memegen_core::emotion::{
    build_bilstm_classifier, build_ffn_classifier, build_textcnn_classifier, embedding_table, text_vocab,
    BiLstmConfig, EmbeddingInit, FfnConfig, Sample, TextCnnConfig,
};
use memegen_core::neural::{bilstm_encode, gru_cell, linear, lstm_cell, GruParams, LinearParams, LstmParams};
use memegen_core::tensor::{grad_check, Graph, ParamId, ParamStore, Tensor, Var};
use memegen_core::textproc::{EOS, SOS};
use memegen_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub name: String,
    /// Max relative error per seed.
    pub errors: Vec<f64>,
}

impl ComponentCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < TOLERANCE
    }
}

/// `Σ wᵢ yᵢ` with fixed random weights, so every output element gets its
/// own upstream gradient.
fn weighted_sum(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(y).to_vec();
    let w = Tensor::uniform(&shape, 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type OpCase = fn(&mut Graph<'_>, &[Var], usize) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("matmul", |g, v, _| g.matmul(v[0], v[1])),
        ("matvec", |g, v, _| g.matmul(v[0], v[2])),
        ("vecmat", |g, v, _| g.matmul(v[3], v[0])),
        ("add", |g, v, _| g.add(v[3], v[4])),
        ("sub", |g, v, _| g.sub(v[3], v[4])),
        ("mul", |g, v, _| g.mul(v[3], v[4])),
        ("affine", |g, v, _| Ok(g.affine(v[3], -1.5, 0.25))),
        ("sigmoid", |g, v, _| Ok(g.sigmoid(v[3]))),
        ("tanh", |g, v, _| Ok(g.tanh(v[3]))),
        ("relu", |g, v, _| Ok(g.relu(v[3]))),
        ("softmax", |g, v, _| g.softmax(v[3])),
        ("log_softmax", |g, v, _| g.log_softmax(v[3])),
        ("nll_loss", |g, v, t| {
            let lp = g.log_softmax(v[3])?;
            g.nll_loss(lp, t)
        }),
        ("cross_entropy", |g, v, t| g.cross_entropy(v[4], t)),
        ("sum", |g, v, _| Ok(g.sum(v[0]))),
        ("mean", |g, v, _| Ok(g.mean(v[0]))),
        ("concat", |g, v, _| g.concat(&[v[3], v[2], v[4]], 0)),
        ("slice", |g, v, _| g.slice(v[1], 1, 1, 1)),
        ("stack", |g, v, _| g.stack(&[v[3], v[4]])),
        ("reshape", |g, v, _| {
            let n: usize = g.shape(v[0]).iter().product();
            g.reshape(v[0], &[n])
        }),
        ("embedding", |g, v, _| g.embedding(v[0], 1)),
        ("embedding_rows", |g, v, _| g.embedding_rows(v[0], &[1, 0, 1])),
        ("conv1d", |g, v, _| g.conv1d_bank(v[5], v[6], v[7])),
        ("max_over_time", |g, v, _| {
            let c = g.conv1d_bank(v[5], v[6], v[7])?;
            g.max_over_time(c)
        }),
    ]
}

fn check_ops(eps: f64, seed: u64, out: &mut Vec<(String, f64)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (m, k, n) = (rng.gen_range(2..5), rng.gen_range(2..6), rng.gen_range(2..5));
    let mut store = ParamStore::new();
    let shapes: [&[usize]; 8] = [&[m, k], &[k, n], &[k], &[m], &[m], &[k + 3, n], &[3, 2, n], &[3]];
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), Tensor::uniform(s, 1.0, &mut rng)))
        .collect();
    let target = rng.gen_range(0..m);
    for (name, case) in op_cases() {
        let report = grad_check(&store, eps, |g| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let y = case(g, &vars, target)?;
            weighted_sum(g, y, seed)
        })?;
        out.push((name.to_string(), report.max_rel_error));
    }
    Ok(())
}

fn random_input(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> ParamId {
    store.add(name, Tensor::uniform(&[dim], 1.0, rng))
}

fn check_layers(eps: f64, seed: u64, out: &mut Vec<(String, f64)>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let (din, h) = (3, 4);

    let mut store = ParamStore::new();
    let lin = LinearParams::new(&mut store, "lin", din, h, &mut rng);
    let x = random_input(&mut store, "x", din, &mut rng);
    let r = grad_check(&store, eps, |g| {
        let xv = g.param(x);
        let y = linear(g, xv, &lin)?;
        g.cross_entropy(y, 1)
    })?;
    out.push(("linear".into(), r.max_rel_error));

    let mut store = ParamStore::new();
    let gru = GruParams::new(&mut store, "gru", din, h, &mut rng);
    let x = random_input(&mut store, "x", din, &mut rng);
    let h0 = random_input(&mut store, "h0", h, &mut rng);
    let r = grad_check(&store, eps, |g| {
        let (xv, hv) = (g.param(x), g.param(h0));
        let h1 = gru_cell(g, xv, hv, &gru)?;
        let h2 = gru_cell(g, xv, h1, &gru)?;
        weighted_sum(g, h2, seed)
    })?;
    out.push(("gru_cell".into(), r.max_rel_error));

    let mut store = ParamStore::new();
    let lstm = LstmParams::new(&mut store, "lstm", din, h, &mut rng);
    let x = random_input(&mut store, "x", din, &mut rng);
    let h0 = random_input(&mut store, "h0", h, &mut rng);
    let c0 = random_input(&mut store, "c0", h, &mut rng);
    let r = grad_check(&store, eps, |g| {
        let (xv, hv, cv) = (g.param(x), g.param(h0), g.param(c0));
        let (h1, c1) = lstm_cell(g, xv, hv, cv, &lstm)?;
        let both = g.concat(&[h1, c1], 0)?;
        weighted_sum(g, both, seed)
    })?;
    out.push(("lstm_cell".into(), r.max_rel_error));

    let mut store = ParamStore::new();
    let fwd = LstmParams::new(&mut store, "fwd", din, h, &mut rng);
    let bwd = LstmParams::new(&mut store, "bwd", din, h, &mut rng);
    let xs: Vec<_> = (0..3).map(|i| random_input(&mut store, &format!("x{i}"), din, &mut rng)).collect();
    let r = grad_check(&store, eps, |g| {
        let seq: Vec<Var> = xs.iter().map(|&id| g.param(id)).collect();
        let enc = bilstm_encode(g, &seq, &fwd, &bwd)?;
        weighted_sum(g, enc, seed)
    })?;
    out.push(("bilstm".into(), r.max_rel_error));
    Ok(())
}

fn check_classifiers(eps: f64, seed: u64, out: &mut Vec<(String, f64)>) -> Result<()> {
    let vocab = text_vocab(&["we win the party", "so sad and alone"])?;

    let table = embedding_table(&vocab, EmbeddingInit::Random { dim: 4 }, seed);
    let cnn_cfg = TextCnnConfig {
        kernel_sizes: vec![2, 3],
        filters_per_size: 3,
        embedding_dim: 4,
        fc1_out: 5,
        num_classes: 5,
    };
    let cnn = build_textcnn_classifier(vocab.clone(), table, cnn_cfg, seed)?;
    let sample: Sample = "we win party".into();
    let r = grad_check(cnn.params(), eps, |g| {
        let l = cnn.logits(g, &sample)?;
        g.cross_entropy(l, 0)
    })?;
    out.push(("textcnn".into(), r.max_rel_error));

    let table = embedding_table(&vocab, EmbeddingInit::Random { dim: 3 }, seed);
    let lstm_cfg = BiLstmConfig {
        embedding_dim: 3,
        hidden: 3,
        fc1_out: 4,
        num_classes: 5,
    };
    let lstm = build_bilstm_classifier(vocab, table, lstm_cfg, seed)?;
    let sample: Sample = "so sad and alone".into();
    let r = grad_check(lstm.params(), eps, |g| {
        let l = lstm.logits(g, &sample)?;
        g.cross_entropy(l, 1)
    })?;
    out.push(("bilstm_classifier".into(), r.max_rel_error));

    let ffn_cfg = FfnConfig {
        input_dim: 8,
        hidden: vec![4, 3],
        num_classes: 2,
    };
    let ffn = build_ffn_classifier(ffn_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let sample = Sample::Vector((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let r = grad_check(ffn.params(), eps, |g| {
        let l = ffn.logits(g, &sample)?;
        g.cross_entropy(l, 1)
    })?;
    out.push(("ffn_classifier".into(), r.max_rel_error));
    Ok(())
}

fn check_captioner(eps: f64, seed: u64, out: &mut Vec<(String, f64)>) -> Result<()> {
    let model = CaptionModel::from_pairs(
        &[("i love nlp", "love nlp"), ("you are sad", "sad ? you")],
        CaptionConfig { hidden: 3, max_len: 5 },
        400 + seed,
    )?;
    let input = model.input_indices("i love nlp")?;
    let target = model.target_indices("love nlp")?;

    let r = grad_check(model.params(), eps, |g| {
        let enc = model.encode(g, &input)?;
        weighted_sum(g, enc.outputs, seed)
    })?;
    out.push(("encoder".into(), r.max_rel_error));

    let r = grad_check(model.params(), eps, |g| {
        let enc = model.encode(g, &input)?;
        let step = model.decode_step(g, SOS, enc.final_hidden, enc.outputs)?;
        g.nll_loss(step.logp, target[0])
    })?;
    out.push(("attention_decode_step".into(), r.max_rel_error));

    let r = grad_check(model.params(), eps, |g| {
        let enc = model.encode(g, &input)?;
        let s1 = model.decode_step(g, SOS, enc.final_hidden, enc.outputs)?;
        let s2 = model.decode_step(g, target[0], s1.hidden, enc.outputs)?;
        let l1 = g.nll_loss(s1.logp, target[0])?;
        let l2 = g.nll_loss(s2.logp, EOS)?;
        g.add(l1, l2)
    })?;
    out.push(("encoder_plus_two_decode_steps".into(), r.max_rel_error));
    Ok(())
}

/// Finite-difference checks of every op and model component on three
/// seeded random configurations each.
pub fn run_gradcheck(eps: f64) -> Result<Vec<ComponentCheck>> {
    let mut checks: Vec<ComponentCheck> = Vec::new();
    for seed in SEEDS {
        let mut results = Vec::new();
        check_ops(eps, seed, &mut results)?;
        check_layers(eps, seed, &mut results)?;
        check_classifiers(eps, seed, &mut results)?;
        check_captioner(eps, seed, &mut results)?;
        for (name, err) in results {
            match checks.iter_mut().find(|c| c.name == name) {
                Some(c) => c.errors.push(err),
                None => checks.push(ComponentCheck { name, errors: vec![err] }),
            }
        }
    }
    Ok(checks)
}
