use anyhow::{ensure, Result};
use filmedgan::film::ImageTensor;

const GAP: usize = 2;

pub struct GridRow {
    pub source: ImageTensor,
    pub edits: Vec<ImageTensor>,
}

/// Tile rows of equally sized images on a white background with a wider gap
/// after the source column.
pub fn compose_grid(rows: &[GridRow]) -> Result<ImageTensor> {
    ensure!(!rows.is_empty(), "empty grid");
    let (h, w) = (rows[0].source.h, rows[0].source.w);
    let cols = rows.iter().map(|r| r.edits.len() + 1).max().unwrap_or(1);
    let width = cols * w + (cols + 2) * GAP;
    let height = rows.len() * h + (rows.len() + 1) * GAP;
    let mut out = ImageTensor { c: 3, h: height, w: width, values: vec![1.0; 3 * height * width] };
    for (r, row) in rows.iter().enumerate() {
        let y0 = GAP + r * (h + GAP);
        for (c, img) in std::iter::once(&row.source).chain(&row.edits).enumerate() {
            ensure!((img.c, img.h, img.w) == (3, h, w), "grid images differ in size");
            let x0 = GAP + c * (w + GAP) + if c > 0 { GAP } else { 0 };
            for k in 0..3 {
                for i in 0..h {
                    let src = &img.values[(k * h + i) * w..(k * h + i + 1) * w];
                    let at = (k * height + y0 + i) * width + x0;
                    out.values[at..at + w].copy_from_slice(src);
                }
            }
        }
    }
    Ok(out)
}
