//! Minimal static PNG charts. No axes labels or text; the CSV written next to
//! each image carries the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 20;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([90, 90, 90]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

pub const BLUE: Rgb<u8> = Rgb([31, 119, 180]);
pub const ORANGE: Rgb<u8> = Rgb([255, 127, 14]);
pub const GREEN: Rgb<u8> = Rgb([44, 160, 44]);

fn canvas() -> RgbImage {
    RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        put(img, x, y + 1, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0.min(y1)..y0.max(y1) {
        for x in x0.min(x1)..x0.max(x1) {
            put(img, x as i64, y as i64, c);
        }
    }
}

/// Maps `v` in `[lo, hi]` to a plot row.
fn row_of(v: f64, lo: f64, hi: f64) -> i64 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (HEIGHT - MARGIN) as i64 - (t * (HEIGHT - 2 * MARGIN) as f64).round() as i64
}

fn frame(img: &mut RgbImage, lo: f64, hi: f64) {
    for k in 0..=4 {
        let y = row_of(lo + (hi - lo) * k as f64 / 4.0, lo, hi);
        line(img, (MARGIN as i64, y), ((WIDTH - MARGIN) as i64, y), GRID);
    }
    if lo < 0.0 && hi > 0.0 {
        let y = row_of(0.0, lo, hi);
        line(img, (MARGIN as i64, y), ((WIDTH - MARGIN) as i64, y), AXIS);
    }
    let bottom = (HEIGHT - MARGIN) as i64;
    line(
        img,
        (MARGIN as i64, MARGIN as i64),
        (MARGIN as i64, bottom),
        AXIS,
    );
    line(
        img,
        (MARGIN as i64, bottom),
        ((WIDTH - MARGIN) as i64, bottom),
        AXIS,
    );
}

/// Bars of `(mean, std)` on a `[0, 1]` scale with one-std whiskers.
pub fn bar_chart(bars: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut img = canvas();
    frame(&mut img, 0.0, 1.0);
    let n = bars.len().max(1) as u32;
    let slot = (WIDTH - 2 * MARGIN) / n;
    let palette = [
        BLUE,
        ORANGE,
        GREEN,
        Rgb([214, 39, 40]),
        Rgb([148, 103, 189]),
        Rgb([140, 86, 75]),
        Rgb([227, 119, 194]),
    ];
    for (i, &(mean, std)) in bars.iter().enumerate() {
        let x0 = MARGIN + i as u32 * slot + slot / 6;
        let x1 = MARGIN + (i as u32 + 1) * slot - slot / 6;
        let top = row_of(mean, 0.0, 1.0) as u32;
        fill(
            &mut img,
            x0,
            top,
            x1,
            HEIGHT - MARGIN,
            palette[i % palette.len()],
        );
        let mid = ((x0 + x1) / 2) as i64;
        let (hi, lo) = (row_of(mean + std, 0.0, 1.0), row_of(mean - std, 0.0, 1.0));
        line(&mut img, (mid, hi), (mid, lo), AXIS);
        line(&mut img, (mid - 6, hi), (mid + 6, hi), AXIS);
        line(&mut img, (mid - 6, lo), (mid + 6, lo), AXIS);
    }
    save(&img, path)
}

fn lerp(a: Rgb<u8>, b: Rgb<u8>, t: f64) -> Rgb<u8> {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    Rgb([mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])])
}

/// Row-major matrix as colored cells, dark for the minimum, bright for the
/// maximum.
pub fn heat_map(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(
            "heat map needs a non-empty rectangular matrix".into(),
        ));
    }
    let values = matrix.iter().flatten().copied();
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    let (dark, bright) = (Rgb([68, 1, 84]), Rgb([253, 231, 37]));
    let mut img = canvas();
    let cw = (WIDTH - 2 * MARGIN) / cols as u32;
    let ch = (HEIGHT - 2 * MARGIN) / rows as u32;
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let (x0, y0) = (MARGIN + j as u32 * cw, MARGIN + i as u32 * ch);
            fill(
                &mut img,
                x0 + 1,
                y0 + 1,
                x0 + cw - 1,
                y0 + ch - 1,
                lerp(dark, bright, t),
            );
        }
    }
    save(&img, path)
}

/// Polylines over a shared x axis. Missing points break the line.
pub fn line_chart(
    series: &[(&[Option<f64>], Rgb<u8>)],
    lo: f64,
    hi: f64,
    path: &Path,
) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "empty y range [{lo}, {hi}]"
        )));
    }
    let mut img = canvas();
    frame(&mut img, lo, hi);
    let n = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    let col = |i: usize| -> i64 {
        let span = (WIDTH - 2 * MARGIN) as f64;
        MARGIN as i64
            + if n > 1 {
                (span * i as f64 / (n - 1) as f64).round() as i64
            } else {
                0
            }
    };
    for &(values, color) in series {
        let mut prev: Option<(i64, i64)> = None;
        for (i, v) in values.iter().enumerate() {
            let Some(v) = v.filter(|v| v.is_finite()) else {
                prev = None;
                continue;
            };
            let p = (col(i), row_of(v, lo, hi));
            match prev {
                Some(q) => line(&mut img, q, p, color),
                None => put(&mut img, p.0, p.1, color),
            }
            prev = Some(p);
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_written_as_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bars.png");
        bar_chart(&[(0.5, 0.1), (0.7, 0.0)], &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (WIDTH, HEIGHT));

        let h = dir.path().join("heat.png");
        heat_map(&[vec![0.1, 0.2], vec![0.3, 0.4]], &h).unwrap();
        assert!(heat_map(&[vec![0.1], vec![0.3, 0.4]], &h).is_err());

        let l = dir.path().join("lines.png");
        let a = [Some(0.1), None, Some(0.5)];
        line_chart(&[(&a, BLUE)], -1.0, 1.0, &l).unwrap();
        assert!(line_chart(&[(&a, BLUE)], 1.0, 1.0, &l).is_err());
    }
}
