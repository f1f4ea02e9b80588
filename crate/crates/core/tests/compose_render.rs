use std::path::{Path, PathBuf};

use memegen_core::compose::{load_registry, render_meme, RgbaImage, Template, TemplateRegistry};
use memegen_core::emotion::EmotionLabel;
use memegen_core::Error;

fn registry() -> TemplateRegistry {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/templates/templates.json");
    load_registry(manifest).unwrap()
}

fn outside_boxes_unchanged(t: &Template, out: &RgbaImage) -> bool {
    let src = &t.image;
    (0..src.height()).all(|y| {
        (0..src.width()).all(|x| t.descriptor.boxes.iter().any(|b| b.contains(x, y)) || src.pixel(x, y) == out.pixel(x, y))
    })
}

#[test]
fn bundled_registry_covers_every_emotion() {
    let r = registry();
    assert_eq!(r.len(), 5);
    for e in EmotionLabel::ALL {
        assert_eq!(r.templates(e).len(), 1);
    }
}

#[test]
fn one_box_caption_changes_only_the_box() {
    let r = registry();
    let t = &r.templates(EmotionLabel::Sad)[0];
    assert_eq!(t.descriptor.boxes.len(), 1);
    let meme = render_meme(t, "sad ? hug a cactus").unwrap();
    assert_eq!((meme.image.width(), meme.image.height()), (t.image.width(), t.image.height()));
    assert_ne!(meme.image, t.image);
    assert!(outside_boxes_unchanged(t, &meme.image));
    assert_eq!(meme.text(), "SAD ? HUG A CACTUS");
    let decoded = RgbaImage::decode_png(&meme.png).unwrap();
    assert_eq!(decoded, meme.image);
    if let Some(dir) = std::env::var_os("MEMEGEN_RENDER_DIR") {
        std::fs::write(PathBuf::from(dir).join("sad.png"), &meme.png).unwrap();
    }
}

#[test]
fn two_box_caption_splits_after_question_mark() {
    let r = registry();
    let t = &r.templates(EmotionLabel::Joy)[0];
    let meme = render_meme(t, "need to lose weight ? do heroin").unwrap();
    assert_eq!(meme.boxes[0].lines.join(" "), "NEED TO LOSE WEIGHT ?");
    assert_eq!(meme.boxes[1].lines.join(" "), "DO HEROIN");
    assert!(outside_boxes_unchanged(t, &meme.image));
    assert_eq!(render_meme(t, "need to lose weight ? do heroin").unwrap().png, meme.png);
    if let Some(dir) = std::env::var_os("MEMEGEN_RENDER_DIR") {
        std::fs::write(PathBuf::from(dir).join("joy.png"), &meme.png).unwrap();
    }
}

#[test]
fn glyph_pixels_stay_inside_boxes() {
    let r = registry();
    for t in r.iter() {
        let meme = render_meme(t, "i don't always wear outfit but when i do i keep myself warm").unwrap();
        for y in 0..t.image.height() {
            for x in 0..t.image.width() {
                let p = meme.image.pixel(x, y);
                if p == [255, 255, 255, 255] && t.image.pixel(x, y) != p {
                    assert!(t.descriptor.boxes.iter().any(|b| b.contains(x, y)));
                }
            }
        }
        assert!(outside_boxes_unchanged(t, &meme.image));
    }
}

#[test]
fn overlong_and_empty_captions() {
    let r = registry();
    let t = &r.templates(EmotionLabel::Neutral)[0];
    let long = "supercalifragilisticexpialidocious".repeat(3);
    assert!(matches!(render_meme(t, &long), Err(Error::CaptionTooLong)));
    let many = vec!["word"; 200].join(" ");
    assert!(matches!(render_meme(t, &many), Err(Error::CaptionTooLong)));
    assert!(matches!(render_meme(t, "  "), Err(Error::EmptyInput)));
}
