//! Template registry, seeded template choice and caption rendering.
//!
//! A registry manifest is JSON:
//!
//! ```json
//! {"templates": [
//!   {"id": "joy-1", "emotion": "joy", "image": "joy.png",
//!    "boxes": [{"x": 8, "y": 8, "width": 304, "height": 56, "position": "top"}]}
//! ]}
//! ```
//!
//! Image paths are relative to the manifest's directory.

mod image;
mod render;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};

pub use image::RgbaImage;
pub use render::{render_meme, split_caption, RenderedBox, RenderedMeme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxPosition {
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub position: BoxPosition,
}

impl TextBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x - self.x < self.width && y - self.y < self.height
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateDescriptor {
    pub id: String,
    pub emotion: EmotionLabel,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    pub boxes: Vec<TextBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    templates: Vec<TemplateDescriptor>,
}

/// A descriptor with its decoded image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub descriptor: TemplateDescriptor,
    pub image: RgbaImage,
}

impl Template {
    pub fn new(descriptor: TemplateDescriptor, image: RgbaImage) -> Result<Self> {
        let id = &descriptor.id;
        if descriptor.boxes.is_empty() || descriptor.boxes.len() > 2 {
            return Err(Error::Registry(format!(
                "template {id:?}: needs 1 or 2 text boxes, has {}",
                descriptor.boxes.len()
            )));
        }
        for (i, b) in descriptor.boxes.iter().enumerate() {
            let fits = b.width > 0
                && b.height > 0
                && u64::from(b.x) + u64::from(b.width) <= u64::from(image.width())
                && u64::from(b.y) + u64::from(b.height) <= u64::from(image.height());
            if !fits {
                return Err(Error::Registry(format!(
                    "template {id:?}: box {i} ({}x{} at {},{}) is outside the {}x{} image",
                    b.width,
                    b.height,
                    b.x,
                    b.y,
                    image.width(),
                    image.height()
                )));
            }
        }
        Ok(Template { descriptor, image })
    }

    pub fn id(&self) -> &str {
        &self.descriptor.id
    }
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    by_emotion: BTreeMap<EmotionLabel, Vec<Template>>,
}

impl TemplateRegistry {
    /// Validates that ids are unique and every emotion has a template.
    pub fn new(templates: Vec<Template>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut by_emotion: BTreeMap<EmotionLabel, Vec<Template>> = BTreeMap::new();
        for t in templates {
            if !ids.insert(t.descriptor.id.clone()) {
                return Err(Error::Registry(format!("duplicate template id {:?}", t.descriptor.id)));
            }
            by_emotion.entry(t.descriptor.emotion).or_default().push(t);
        }
        for emotion in EmotionLabel::ALL {
            if !by_emotion.contains_key(&emotion) {
                return Err(Error::Registry(format!("no template for emotion {emotion}")));
            }
        }
        Ok(TemplateRegistry { by_emotion })
    }

    pub fn templates(&self, emotion: EmotionLabel) -> &[Template] {
        self.by_emotion.get(&emotion).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_emotion.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Template> {
        self.by_emotion.values().flatten()
    }
}

/// Reads and validates a registry manifest, decoding every image.
pub fn load_registry(manifest_path: impl AsRef<Path>) -> Result<TemplateRegistry> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Registry(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Registry(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let templates = manifest
        .templates
        .into_iter()
        .map(|d| {
            let path = base.join(&d.image_path);
            let bytes = fs::read(&path)
                .map_err(|e| Error::Registry(format!("template {:?}: {}: {e}", d.id, path.display())))?;
            let image = RgbaImage::decode_png(&bytes)
                .map_err(|e| Error::Registry(format!("template {:?}: {}: {e}", d.id, path.display())))?;
            Template::new(d, image)
        })
        .collect::<Result<Vec<_>>>()?;
    TemplateRegistry::new(templates)
}

/// One step of the SplitMix64 generator from state `seed`.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Template `splitmix64(seed) % n` among the emotion's `n` templates, in
/// manifest order.
pub fn select_template(registry: &TemplateRegistry, emotion: EmotionLabel, seed: u64) -> &Template {
    let options = registry.templates(emotion);
    assert!(!options.is_empty(), "registry validation guarantees a template per emotion");
    &options[(splitmix64(seed) % options.len() as u64) as usize]
}
