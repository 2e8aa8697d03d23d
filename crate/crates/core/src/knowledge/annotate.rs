//! Draws labelled element rectangles onto page rasters.

use std::io::Cursor;

use image::{ImageFormat, Rgba, RgbaImage};
use thiserror::Error;

use crate::document::{BoundingBox, Element, Page};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("element {element_id:?} is on page {element_page}, not page {page}")]
    WrongPage {
        element_id: String,
        element_page: u32,
        page: u32,
    },
    #[error("element {element_id:?} bbox lies outside the {width}x{height} raster")]
    OffPage {
        element_id: String,
        width: u32,
        height: u32,
    },
    #[error("raster: {0}")]
    Image(#[from] image::ImageError),
}

const BORDER: u32 = 2;
const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;
const TAG_PAD: u32 = 1;
const TAG_H: u32 = GLYPH_H + 2 * TAG_PAD;

const PALETTE: [[u8; 3]; 5] = [
    [220, 20, 60],
    [30, 90, 230],
    [20, 160, 60],
    [200, 0, 200],
    [240, 130, 0],
];

/// 5x7 glyphs, one byte per row, low five bits used (MSB of the five is the left column).
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        ' ' => [0x00; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

/// Rectangle `(x1, y1, x2, y2)` (exclusive ends) occupied by the label tag of
/// a highlight, clipped to the raster. The tag sits just above the box when
/// there is room, otherwise just inside its top-left corner.
pub fn label_rect(bbox: &BoundingBox, label: &str, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let chars = label.chars().count() as u32;
    let tag_w = chars * (GLYPH_W + 1) + 2 * TAG_PAD;
    let y1 = if bbox.y1 >= TAG_H { bbox.y1 - TAG_H } else { bbox.y1 };
    let x1 = bbox.x1;
    (
        x1.min(width),
        y1.min(height),
        (x1 + tag_w).min(width),
        (y1 + TAG_H).min(height),
    )
}

fn draw_rect(img: &mut RgbaImage, b: &BoundingBox, color: Rgba<u8>) {
    let (w, h) = img.dimensions();
    let x2 = b.x2.min(w);
    let y2 = b.y2.min(h);
    for y in b.y1..y2 {
        for x in b.x1..x2 {
            let on_border = x < b.x1 + BORDER || x + BORDER >= x2 || y < b.y1 + BORDER || y + BORDER >= y2;
            if on_border {
                img.put_pixel(x, y, color);
            }
        }
    }
}

fn draw_label(img: &mut RgbaImage, b: &BoundingBox, label: &str, color: Rgba<u8>) {
    let (w, h) = img.dimensions();
    let (tx1, ty1, tx2, ty2) = label_rect(b, label, w, h);
    for y in ty1..ty2 {
        for x in tx1..tx2 {
            img.put_pixel(x, y, color);
        }
    }
    let ink = Rgba([255, 255, 255, 255]);
    for (i, c) in label.chars().enumerate() {
        let gx = tx1 + TAG_PAD + i as u32 * (GLYPH_W + 1);
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                    let (x, y) = (gx + col, ty1 + TAG_PAD + row as u32);
                    if x < tx2 && y < ty2 {
                        img.put_pixel(x, y, ink);
                    }
                }
            }
        }
    }
}

/// Returns a PNG copy of `raster` with one labelled rectangle per highlighted
/// element (label = element id). With nothing to highlight the input bytes
/// are returned unchanged.
pub fn annotate_page(page: &Page, raster: &[u8], highlight: &[&Element]) -> Result<Vec<u8>, AnnotateError> {
    for e in highlight {
        if e.page_index != page.index {
            return Err(AnnotateError::WrongPage {
                element_id: e.element_id.clone(),
                element_page: e.page_index,
                page: page.index,
            });
        }
    }
    if highlight.is_empty() {
        return Ok(raster.to_vec());
    }
    let mut img = image::load_from_memory(raster)?.to_rgba8();
    let (w, h) = img.dimensions();
    for e in highlight {
        if !e.bbox.fits_within(w, h) || e.bbox.is_degenerate() {
            return Err(AnnotateError::OffPage {
                element_id: e.element_id.clone(),
                width: w,
                height: h,
            });
        }
    }
    for (i, e) in highlight.iter().enumerate() {
        let [r, g, b] = PALETTE[i % PALETTE.len()];
        let color = Rgba([r, g, b, 255]);
        draw_rect(&mut img, &e.bbox, color);
        draw_label(&mut img, &e.bbox, &e.element_id, color);
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::ElementType;

    fn blank_png(w: u32, h: u32) -> Vec<u8> {
        let img = RgbaImage::from_pixel(w, h, Rgba([255, 255, 255, 255]));
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    fn page(w: u32, h: u32) -> Page {
        Page {
            index: 1,
            raster: "p.png".into(),
            width: w,
            height: h,
            elements: vec![],
        }
    }

    fn el(id: &str, b: [u32; 4]) -> Element {
        Element::new(id, 1, ElementType::Chart, b.into(), "")
    }

    fn diff(a: &[u8], b: &[u8]) -> Vec<(u32, u32)> {
        let a = image::load_from_memory(a).unwrap().to_rgba8();
        let b = image::load_from_memory(b).unwrap().to_rgba8();
        assert_eq!(a.dimensions(), b.dimensions());
        a.enumerate_pixels()
            .filter(|(x, y, p)| b.get_pixel(*x, *y) != *p)
            .map(|(x, y, _)| (x, y))
            .collect()
    }

    #[test]
    fn empty_highlight_is_identity() {
        let raster = blank_png(20, 10);
        assert_eq!(annotate_page(&page(20, 10), &raster, &[]).unwrap(), raster);
    }

    #[test]
    fn one_rectangle_confined_to_border_and_label() {
        let raster = blank_png(80, 60);
        let e = el("c1", [20, 20, 50, 40]);
        let out = annotate_page(&page(80, 60), &raster, &[&e]).unwrap();
        let changed = diff(&raster, &out);
        let (lx1, ly1, lx2, ly2) = label_rect(&e.bbox, "c1", 80, 60);
        let in_border = |x: u32, y: u32| {
            (20..50).contains(&x) && (20..40).contains(&y) && !((22..48).contains(&x) && (22..38).contains(&y))
        };
        let in_label = |x: u32, y: u32| x >= lx1 && x < lx2 && y >= ly1 && y < ly2;
        assert!(!changed.is_empty());
        for &(x, y) in &changed {
            assert!(in_border(x, y) || in_label(x, y), "stray pixel at ({x}, {y})");
        }
        // every border pixel is painted
        for y in 20..40 {
            for x in 20..50 {
                if in_border(x, y) {
                    assert!(changed.contains(&(x, y)), "border gap at ({x}, {y})");
                }
            }
        }
        let decoded = image::load_from_memory(&out).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (80, 60));
    }

    #[test]
    fn overlapping_elements_get_distinct_labels() {
        let raster = blank_png(100, 80);
        let a = el("a1", [10, 30, 60, 70]);
        let b = el("b2", [30, 40, 90, 75]);
        let both = annotate_page(&page(100, 80), &raster, &[&a, &b]).unwrap();
        let only_a = annotate_page(&page(100, 80), &raster, &[&a]).unwrap();
        let img = image::load_from_memory(&both).unwrap().to_rgba8();
        let (bx1, by1, bx2, by2) = label_rect(&b.bbox, "b2", 100, 80);
        let tag_pixels: Vec<_> = (by1..by2)
            .flat_map(|y| (bx1..bx2).map(move |x| (x, y)))
            .map(|(x, y)| *img.get_pixel(x, y))
            .collect();
        // second label uses the second palette colour plus white ink
        assert!(tag_pixels.contains(&Rgba([30, 90, 230, 255])));
        assert!(tag_pixels.contains(&Rgba([255, 255, 255, 255])));
        assert_ne!(both, only_a);
    }

    #[test]
    fn wrong_page_rejected() {
        let mut e = el("x", [0, 0, 5, 5]);
        e.page_index = 2;
        assert!(matches!(
            annotate_page(&page(10, 10), &blank_png(10, 10), &[&e]),
            Err(AnnotateError::WrongPage { .. })
        ));
    }

    #[test]
    fn off_page_rejected() {
        let e = el("x", [0, 0, 50, 5]);
        assert!(matches!(
            annotate_page(&page(10, 10), &blank_png(10, 10), &[&e]),
            Err(AnnotateError::OffPage { .. })
        ));
    }

    #[test]
    fn input_raster_untouched() {
        let raster = blank_png(30, 30);
        let copy = raster.clone();
        let e = el("z", [5, 12, 20, 25]);
        annotate_page(&page(30, 30), &raster, &[&e]).unwrap();
        assert_eq!(raster, copy);
    }
}
