use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use memegen::gradcheck::{run_gradcheck, TOLERANCE};
use memegen::pipeline::{write_atomic, MemePipeline, PipelineConfig};
use memegen::report::run_similar_different_eval;
use memegen::server;
use memegen_core::assets::{load_eval_cases, load_glove, load_labeled, load_model, load_pairs, load_vectors, save_model};
use memegen_core::caption::{greedy_decode, train_caption_model, CaptionConfig, CaptionModel, CaptionTrainOptions};
use memegen_core::emotion::{
    build_bilstm_classifier, build_ffn_classifier, build_textcnn_classifier, embedding_table, evaluate_classifier,
    text_vocab, train_classifier, Architecture, BiLstmConfig, EmbeddingInit, EmotionClassifier, EmotionLabel,
    FfnConfig, Sample, TextCnnConfig, TrainOptions,
};
use memegen_core::tensor::SgdConfig;
use memegen_core::textproc::normalize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "memegen", version, about = "Emotion-aware meme caption generator")]
struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the normalized tokens of a sentence.
    Tokenize {
        #[arg(long)]
        text: String,
    },
    TrainEmotion(TrainEmotionArgs),
    /// Accuracy, macro-F1 and confusion matrix on a labeled file.
    EvalEmotion {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    TrainCaption(TrainCaptionArgs),
    /// Greedy caption for one sentence.
    Caption {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        show_attention: bool,
    },
    Generate(GenerateArgs),
    /// Similar/different proxy report.
    EvalCaption {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tests: PathBuf,
    },
    /// Finite-difference check of every op and model component.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Bilstm,
    Textcnn,
    Ffn,
}

#[derive(Args)]
struct TrainEmotionArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    /// `label<TAB>text` lines (bilstm, textcnn).
    #[arg(long)]
    data: Option<PathBuf>,
    /// GloVe text file; random embeddings otherwise.
    #[arg(long)]
    glove: Option<PathBuf>,
    /// `label<TAB>v1,v2,…` lines (ffn).
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Width of random embeddings when no GloVe file is given.
    #[arg(long, default_value_t = 50)]
    embed_dim: usize,
    /// FFN hidden widths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![512, 128, 64])]
    hidden: Vec<usize>,
    #[arg(long)]
    freeze_embeddings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainCaptionArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    teacher_forcing: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    clip: Option<f64>,
    /// Stop once an epoch's mean per-token loss drops below this.
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    text: String,
    #[arg(long)]
    emotion_model: PathBuf,
    #[arg(long)]
    caption_model: PathBuf,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metadata_json: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    emotion_model: PathBuf,
    #[arg(long)]
    caption_model: PathBuf,
    #[arg(long)]
    templates: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

fn sgd(lr: f64, clip: Option<f64>) -> Result<SgdConfig> {
    let cfg = SgdConfig::new(lr)?;
    Ok(match clip {
        Some(c) => cfg.with_clip(c)?,
        None => cfg,
    })
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train_emotion(a: TrainEmotionArgs) -> Result<()> {
    let opts = TrainOptions {
        epochs: a.epochs,
        sgd: sgd(a.lr, a.clip)?,
        seed: a.seed,
    };
    let (mut model, data): (EmotionClassifier, Vec<(Sample, EmotionLabel)>) = match a.arch {
        Arch::Ffn => {
            let path = a.vectors.as_ref().context("--vectors is required for ffn")?;
            let rows = load_vectors(path)?;
            let input_dim = rows.first().map(|(v, _)| v.len()).context("vector file is empty")?;
            let cfg = FfnConfig {
                input_dim,
                hidden: a.hidden.clone(),
                num_classes: EmotionLabel::ALL.len(),
            };
            let data = rows.into_iter().map(|(v, l)| (Sample::Vector(v), l)).collect();
            (build_ffn_classifier(cfg, a.seed)?, data)
        }
        Arch::Bilstm | Arch::Textcnn => {
            let path = a.data.as_ref().context("--data is required for bilstm and textcnn")?;
            let rows = load_labeled(path)?;
            let texts: Vec<&str> = rows.iter().map(|(t, _)| t.as_str()).collect();
            let vocab = text_vocab(&texts)?;
            let glove = a.glove.as_ref().map(load_glove).transpose()?;
            let (init, dim) = match &glove {
                Some(table) => (EmbeddingInit::Glove(table), table.dim()),
                None => (EmbeddingInit::Random { dim: a.embed_dim }, a.embed_dim),
            };
            let table = embedding_table(&vocab, init, a.seed);
            let model = if matches!(a.arch, Arch::Bilstm) {
                build_bilstm_classifier(vocab, table, BiLstmConfig::new(dim), a.seed)?
            } else {
                build_textcnn_classifier(vocab, table, TextCnnConfig::new(dim), a.seed)?
            };
            let data = rows.into_iter().map(|(t, l)| (Sample::Text(t), l)).collect();
            (model, data)
        }
    };
    if a.freeze_embeddings {
        model.set_embeddings_frozen(true);
    }
    let history = train_classifier(&mut model, &data, &opts)?;
    for (i, e) in history.iter().enumerate() {
        log::info!("epoch {} loss {:.6} accuracy {:.4}", i + 1, e.loss, e.accuracy);
    }
    save_model(&model, &a.out)?;
    let last = history.last();
    print_json(&json!({
        "arch": model.architecture().to_string(),
        "epochs": history.len(),
        "final_loss": last.map(|e| e.loss),
        "final_train_accuracy": last.map(|e| e.accuracy),
        "model": a.out,
    }))
}

fn eval_emotion(model: PathBuf, data: PathBuf) -> Result<()> {
    let model: EmotionClassifier = load_model(&model)?;
    let samples: Vec<(Sample, EmotionLabel)> = if model.architecture() == Architecture::Ffn {
        load_vectors(&data)?.into_iter().map(|(v, l)| (Sample::Vector(v), l)).collect()
    } else {
        load_labeled(&data)?.into_iter().map(|(t, l)| (Sample::Text(t), l)).collect()
    };
    let e = evaluate_classifier(&model, &samples)?;
    print_json(&json!({
        "accuracy": e.accuracy,
        "macro_f1": e.macro_f1,
        "labels": model.labels(),
        "confusion": e.confusion,
    }))
}

fn train_caption(a: TrainCaptionArgs) -> Result<()> {
    let pairs = load_pairs(&a.pairs)?;
    let mut model = CaptionModel::from_pairs(
        &pairs,
        CaptionConfig {
            hidden: a.hidden,
            max_len: a.max_len,
        },
        a.seed,
    )?;
    let opts = CaptionTrainOptions {
        epochs: a.epochs,
        sgd: sgd(a.lr, a.clip)?,
        teacher_forcing: a.teacher_forcing,
        seed: a.seed,
        target_loss: a.target_loss,
    };
    let curve = train_caption_model(&mut model, &pairs, &opts)?;
    save_model(&model, &a.out)?;
    if let Some(path) = &a.loss_csv {
        let mut csv = String::from("step,loss\n");
        for (i, l) in curve.iter().enumerate() {
            writeln!(csv, "{},{l}", i + 1)?;
        }
        write_atomic(path, csv.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&json!({
        "pairs": pairs.len(),
        "steps": curve.len(),
        "epochs": curve.len() / pairs.len().max(1),
        "final_loss": curve.last(),
        "model": a.out,
    }))
}

fn caption(model: PathBuf, text: String, show_attention: bool) -> Result<()> {
    let model: CaptionModel = load_model(&model)?;
    let c = greedy_decode(&model, &text)?;
    println!("{}", c.text);
    if show_attention {
        let input = normalize(&text);
        let out: Vec<&str> = c.text.split(' ').filter(|w| !w.is_empty()).chain(["<EOS>"]).collect();
        for (step, weights) in c.attention.iter().enumerate() {
            let word = out.get(step).copied().unwrap_or("?");
            let cells: Vec<String> = weights
                .iter()
                .take(input.len() + 1)
                .zip(input.iter().map(String::as_str).chain(["<EOS>"]))
                .map(|(w, tok)| format!("{tok}={w:.3}"))
                .collect();
            println!("{word}\t{}", cells.join(" "));
        }
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let pipeline = MemePipeline::load(&PipelineConfig {
        emotion_model: a.emotion_model,
        caption_model: a.caption_model,
        registry: a.templates,
        seed: a.seed,
    })?;
    let meme = pipeline.generate(&a.text)?;
    let metadata = serde_json::to_string_pretty(&meme.metadata)?;
    write_atomic(&a.out, &meme.png).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.metadata_json {
        write_atomic(path, metadata.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{metadata}");
    Ok(())
}

fn eval_caption(model: PathBuf, tests: PathBuf) -> Result<()> {
    let model: CaptionModel = load_model(&model)?;
    let cases = load_eval_cases(&tests)?;
    let report = run_similar_different_eval(&model, &cases)?;
    print_json(&serde_json::to_value(&report)?)
}

fn gradcheck(eps: f64) -> Result<()> {
    let checks = run_gradcheck(eps)?;
    let mut failed = Vec::new();
    for c in &checks {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<32} {:.3e}  {status}", c.name, c.max_error());
        if !c.passed() {
            failed.push(c.name.as_str());
        }
    }
    if !failed.is_empty() {
        bail!("gradcheck above {TOLERANCE:e}: {}", failed.join(", "));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let pipeline = MemePipeline::load(&PipelineConfig {
        emotion_model: a.emotion_model,
        caption_model: a.caption_model,
        registry: a.templates,
        seed: a.seed,
    })?;
    let addr = format!("{}:{}", a.host, a.port);
    let srv = server::bind(&addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{addr}/generate");
    server::run(Arc::new(srv), Arc::new(pipeline), a.workers);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.sequential {
        memegen_core::par::set_enabled(false);
    }
    match cli.command {
        Command::Tokenize { text } => {
            println!("{}", normalize(&text).join(" "));
            Ok(())
        }
        Command::TrainEmotion(a) => train_emotion(a),
        Command::EvalEmotion { model, data } => eval_emotion(model, data),
        Command::TrainCaption(a) => train_caption(a),
        Command::Caption {
            model,
            text,
            show_attention,
        } => caption(model, text, show_attention),
        Command::Generate(a) => generate(a),
        Command::EvalCaption { model, tests } => eval_caption(model, tests),
        Command::Gradcheck { eps } => gradcheck(eps),
        Command::Serve(a) => serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("memegen-error: {msg}");
            ExitCode::FAILURE
        }
    }
}
