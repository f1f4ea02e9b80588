use font8x8::legacy::BASIC_LEGACY;

use super::image::RgbaImage;
use super::{BoxPosition, Template, TextBox};
use crate::error::{Error, Result};
use crate::textproc::{is_punctuation_token, normalize};

const GLYPH: u32 = 8;
const WHITE: [u8; 4] = [255, 255, 255, 255];
const BLACK: [u8; 4] = [0, 0, 0, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedBox {
    /// Wrapped lines as drawn.
    pub lines: Vec<String>,
    /// Pixel size of one font dot.
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedMeme {
    pub image: RgbaImage,
    pub png: Vec<u8>,
    /// One entry per template box, in the template's box order.
    pub boxes: Vec<RenderedBox>,
}

impl RenderedMeme {
    /// All drawn text, box by box, joined with single spaces.
    pub fn text(&self) -> String {
        self.boxes
            .iter()
            .flat_map(|b| b.lines.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Splits a caption between a top and a bottom box: after the last
/// `, . ! ?` token at or before the midpoint `ceil(n/2)` (never the final
/// token), otherwise at the midpoint.
pub fn split_caption<S: AsRef<str>>(tokens: &[S]) -> (usize, usize) {
    let n = tokens.len();
    let mid = n.div_ceil(2);
    let cut = (0..=mid.min(n.saturating_sub(2)))
        .rev()
        .find(|&i| is_punctuation_token(tokens[i].as_ref()))
        .map_or(mid, |i| i + 1);
    (cut, n - cut)
}

fn glyph(c: char) -> [u8; 8] {
    let code = if (' '..='~').contains(&c) { c as usize } else { '?' as usize };
    BASIC_LEGACY[code]
}

/// Greedy word wrap into lines of at most `max_chars`; `None` if a word is
/// longer than a line.
fn wrap(words: &[String], max_chars: usize) -> Option<Vec<String>> {
    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    for word in words {
        let len = word.chars().count();
        if len > max_chars {
            return None;
        }
        if current.is_empty() {
            current.push_str(word);
        } else if current.chars().count() + 1 + len <= max_chars {
            current.push(' ');
            current.push_str(word);
        } else {
            lines.push(std::mem::replace(&mut current, word.clone()));
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    Some(lines)
}

fn block_height(lines: usize, scale: u32) -> u32 {
    lines as u32 * GLYPH * scale + (lines as u32).saturating_sub(1) * scale
}

/// Largest integer scale at which `words` wrap inside the box, keeping a
/// 1-pixel margin for the outline.
fn layout(words: &[String], b: &TextBox) -> Result<RenderedBox> {
    let (avail_w, avail_h) = (b.width.saturating_sub(2), b.height.saturating_sub(2));
    let max_scale = (avail_w / GLYPH).min(avail_h / GLYPH);
    for scale in (1..=max_scale).rev() {
        let max_chars = (avail_w / (GLYPH * scale)) as usize;
        if let Some(lines) = wrap(words, max_chars) {
            if block_height(lines.len(), scale) <= avail_h {
                return Ok(RenderedBox { lines, scale });
            }
        }
    }
    Err(Error::CaptionTooLong)
}

/// Glyph mask in box-local coordinates.
fn rasterize(r: &RenderedBox, b: &TextBox) -> Vec<bool> {
    let (w, h) = (b.width as usize, b.height as usize);
    let mut mask = vec![false; w * h];
    let s = r.scale;
    let (avail_w, avail_h) = (b.width - 2, b.height - 2);
    let top = 1 + (avail_h - block_height(r.lines.len(), s)) / 2;
    for (li, line) in r.lines.iter().enumerate() {
        let chars = line.chars().count() as u32;
        let left = 1 + (avail_w - chars * GLYPH * s) / 2;
        let y0 = top + li as u32 * (GLYPH + 1) * s;
        for (ci, c) in line.chars().enumerate() {
            let x0 = left + ci as u32 * GLYPH * s;
            for (row, bits) in glyph(c).iter().enumerate() {
                for col in 0..GLYPH {
                    if bits >> col & 1 == 0 {
                        continue;
                    }
                    for dy in 0..s {
                        for dx in 0..s {
                            let x = (x0 + col * s + dx) as usize;
                            let y = (y0 + row as u32 * s + dy) as usize;
                            mask[y * w + x] = true;
                        }
                    }
                }
            }
        }
    }
    mask
}

fn draw(image: &mut RgbaImage, mask: &[bool], b: &TextBox) {
    let (w, h) = (b.width as i64, b.height as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask[(y * w + x) as usize];
    for y in 0..h {
        for x in 0..w {
            let color = if on(x, y) {
                WHITE
            } else if (-1..=1).any(|dy| (-1..=1).any(|dx| on(x + dx, y + dy))) {
                BLACK
            } else {
                continue;
            };
            image.set_pixel(b.x + x as u32, b.y + y as u32, color);
        }
    }
}

/// Draws the uppercased caption into the template's boxes and encodes the
/// result as PNG.
pub fn render_meme(template: &Template, caption: &str) -> Result<RenderedMeme> {
    let words: Vec<String> = normalize(caption).iter().map(|t| t.to_uppercase()).collect();
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    let boxes = &template.descriptor.boxes;
    let parts: Vec<&[String]> = if boxes.len() == 2 {
        let (top, _) = split_caption(&words);
        let (first, second) = words.split_at(top);
        let first_is_top = match (boxes[0].position, boxes[1].position) {
            (BoxPosition::Top, BoxPosition::Bottom) => true,
            (BoxPosition::Bottom, BoxPosition::Top) => false,
            _ => boxes[0].y <= boxes[1].y,
        };
        if first_is_top {
            vec![first, second]
        } else {
            vec![second, first]
        }
    } else {
        vec![&words[..]]
    };

    let mut image = template.image.clone();
    let mut rendered = Vec::with_capacity(boxes.len());
    for (b, part) in boxes.iter().zip(parts) {
        if part.is_empty() {
            rendered.push(RenderedBox {
                lines: Vec::new(),
                scale: 0,
            });
            continue;
        }
        let r = layout(part, b)?;
        draw(&mut image, &rasterize(&r, b), b);
        rendered.push(r);
    }
    let png = image.encode_png()?;
    Ok(RenderedMeme {
        image,
        png,
        boxes: rendered,
    })
}
