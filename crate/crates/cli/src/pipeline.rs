use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use memegen_core::assets::load_model;
use memegen_core::caption::{greedy_decode, CaptionModel};
use memegen_core::compose::{load_registry, render_meme, select_template, TemplateRegistry};
use memegen_core::emotion::{class_name, predict_emotion, EmotionClassifier, Sample};
use memegen_core::textproc::normalize;
use memegen_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub emotion_model: PathBuf,
    pub caption_model: PathBuf,
    pub registry: PathBuf,
    pub seed: u64,
}

/// A pipeline failure tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

fn stage(stage: &'static str) -> impl FnOnce(Error) -> StageError {
    move |error| StageError { stage, error }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub label: String,
    pub probability: f64,
}

/// Every intermediate decision behind one meme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemeMetadata {
    pub input: String,
    pub emotion: String,
    pub probabilities: Vec<ClassProbability>,
    pub template_id: String,
    pub seed: u64,
    /// Decoder output, lower case.
    pub caption: String,
    /// Text drawn in each template box, uppercased and wrapped.
    pub rendered: Vec<Vec<String>>,
    pub attention: Vec<Vec<f64>>,
    pub caption_terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMeme {
    pub png: Vec<u8>,
    pub metadata: MemeMetadata,
}

/// Frozen models plus a template registry; safe to share across threads.
pub struct MemePipeline {
    emotion: EmotionClassifier,
    caption: CaptionModel,
    registry: TemplateRegistry,
    seed: u64,
}

impl MemePipeline {
    pub fn new(emotion: EmotionClassifier, caption: CaptionModel, registry: TemplateRegistry, seed: u64) -> Result<Self, StageError> {
        if !emotion.architecture().uses_text() {
            return Err(StageError {
                stage: "load",
                error: Error::Config(format!("{} classifier cannot classify raw text", emotion.architecture())),
            });
        }
        Ok(MemePipeline {
            emotion,
            caption,
            registry,
            seed,
        })
    }

    pub fn load(cfg: &PipelineConfig) -> Result<Self, StageError> {
        let emotion = load_model(&cfg.emotion_model).map_err(stage("load emotion model"))?;
        let caption = load_model(&cfg.caption_model).map_err(stage("load caption model"))?;
        let registry = load_registry(&cfg.registry).map_err(stage("load templates"))?;
        Self::new(emotion, caption, registry, cfg.seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generate(&self, sentence: &str) -> Result<GeneratedMeme, StageError> {
        self.generate_with_seed(sentence, self.seed)
    }

    /// classify → select template → caption → render.
    pub fn generate_with_seed(&self, sentence: &str, seed: u64) -> Result<GeneratedMeme, StageError> {
        if normalize(sentence).is_empty() {
            return Err(StageError {
                stage: "input",
                error: Error::EmptyInput,
            });
        }
        let prediction = predict_emotion(&self.emotion, &Sample::Text(sentence.to_string())).map_err(stage("classify"))?;
        let emotion = prediction.label().ok_or_else(|| StageError {
            stage: "classify",
            error: Error::Config(format!("class {} has no template emotion", prediction.class)),
        })?;
        let template = select_template(&self.registry, emotion, seed);
        let caption = greedy_decode(&self.caption, sentence).map_err(stage("caption"))?;
        let meme = render_meme(template, &caption.text).map_err(stage("render"))?;
        let metadata = MemeMetadata {
            input: sentence.to_string(),
            emotion: emotion.name().to_string(),
            probabilities: prediction
                .probabilities
                .iter()
                .enumerate()
                .map(|(i, &p)| ClassProbability {
                    label: class_name(i),
                    probability: p,
                })
                .collect(),
            template_id: template.id().to_string(),
            seed,
            caption: caption.text,
            rendered: meme.boxes.iter().map(|b| b.lines.clone()).collect(),
            attention: caption.attention,
            caption_terminated: caption.terminated,
        };
        Ok(GeneratedMeme { png: meme.png, metadata })
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// JSON with every non-ASCII character written as `\uXXXX`, safe for an
/// HTTP header value.
pub fn ascii_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let raw = serde_json::to_string(value)?;
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii() {
            out.push(c);
        } else {
            let mut units = [0u16; 2];
            for u in c.encode_utf16(&mut units) {
                out.push_str(&format!("\\u{u:04x}"));
            }
        }
    }
    Ok(out)
}
