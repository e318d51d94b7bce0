//! Bitmap-font text rendering.

use font8x8::UnicodeFonts;

use crate::error::{Error, Result};
use crate::layout::TextBox;
use crate::raster::{pixel_span, RasterImage, Rgb};

/// Font ids known to the registry.
pub const FONTS: &[&str] = &["regular", "bold", "italic"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Font {
    Regular,
    Bold,
    Italic,
}

impl Font {
    pub fn from_id(id: &str) -> Result<Font> {
        match id {
            "regular" => Ok(Font::Regular),
            "bold" => Ok(Font::Bold),
            "italic" => Ok(Font::Italic),
            other => Err(Error::missing(format!("font:{other}"), "font id is not in the registry")),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Font::Regular => "regular",
            Font::Bold => "bold",
            Font::Italic => "italic",
        }
    }

    /// Whether the glyph cell bit at `(col, row)` of an 8x8 cell is ink.
    fn ink(self, glyph: &[u8; 8], u: f64, v: f64) -> bool {
        let row = ((v * 8.0) as usize).min(7);
        let bit = |col: isize| -> bool { (0..8).contains(&col) && glyph[row] >> col & 1 == 1 };
        match self {
            Font::Regular => bit((u * 8.0).floor() as isize),
            Font::Bold => {
                let col = (u * 8.0).floor() as isize;
                bit(col) || bit(col - 1)
            }
            Font::Italic => bit(((u + 0.25 * (v - 0.75)) * 8.0).floor() as isize),
        }
    }
}

pub fn font_exists(id: &str) -> bool {
    FONTS.contains(&id)
}

fn glyph(c: char) -> [u8; 8] {
    font8x8::BASIC_FONTS
        .get(c)
        .or_else(|| font8x8::LATIN_FONTS.get(c))
        .or_else(|| font8x8::BASIC_FONTS.get('?'))
        .unwrap_or([0; 8])
}

/// Draws `text` left-aligned inside `bx`, with the glyph height equal to the
/// box height and glyph width shrunk so the whole string fits. Every touched
/// pixel has its centre inside the box.
pub fn draw_text(image: &mut RasterImage, text: &str, bx: &TextBox, color: Rgb, font: Font) {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return;
    }
    let (w, h) = (image.width(), image.height());
    let (c0, c1) = pixel_span(bx.x, bx.right(), w);
    let (r0, r1) = pixel_span(bx.y, bx.bottom(), h);
    if c0 == c1 || r0 == r1 {
        return;
    }
    let box_h = bx.height * h as f64;
    let cell_w = (bx.width * w as f64 / chars.len() as f64).min(box_h);
    let (left, top) = (bx.x * w as f64, bx.y * h as f64);
    let glyphs: Vec<[u8; 8]> = chars.iter().map(|c| glyph(*c)).collect();
    for y in r0..r1 {
        let v = ((y as f64 + 0.5 - top) / box_h).clamp(0.0, 0.999_999);
        for x in c0..c1 {
            let offset = x as f64 + 0.5 - left;
            let index = (offset / cell_w).floor();
            if index < 0.0 || index as usize >= glyphs.len() {
                continue;
            }
            let u = offset / cell_w - index;
            if font.ink(&glyphs[index as usize], u, v) {
                image.set_pixel(x, y, color);
            }
        }
    }
}
