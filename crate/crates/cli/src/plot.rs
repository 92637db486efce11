//! Minimal line plots rendered straight into an RGB buffer.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 800;
const HEIGHT: u32 = 480;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [0, 0, 0],
];

/// Plot every numeric column against the first one; empty cells are gaps.
pub fn plot_csv(input: &Path, output: &Path) -> Result<()> {
    let mut rdr = csv::Reader::from_path(input).with_context(|| format!("reading {}", input.display()))?;
    let ncols = rdr.headers()?.len();
    if ncols < 2 {
        bail!("{} needs an x column and at least one series", input.display());
    }
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); ncols - 1];
    for rec in rdr.records() {
        let rec = rec?;
        let Some(x) = rec.get(0).and_then(|s| s.parse::<f64>().ok()) else {
            continue;
        };
        for (k, s) in series.iter_mut().enumerate() {
            if let Some(y) = rec.get(k + 1).and_then(|v| v.parse::<f64>().ok()).filter(|y| y.is_finite()) {
                s.push((x, y));
            }
        }
    }
    render(&series)?.save(output).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

fn render(series: &[Vec<(f64, f64)>]) -> Result<RgbImage> {
    let pts = series.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        bail!("nothing to plot");
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (pw, ph) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        (
            MARGIN as f64 + (x - x0) / (x1 - x0) * pw,
            (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * ph,
        )
    };
    let axis = Rgb([120, 120, 120]);
    line(&mut img, to_px(x0, y0), to_px(x1, y0), axis);
    line(&mut img, to_px(x0, y0), to_px(x0, y1), axis);
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        for w in s.windows(2) {
            line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color);
        }
    }
    Ok(img)
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_with_gaps() {
        let img = render(&[vec![(1.0, 3.0), (2.0, 1.0)], vec![]]).unwrap();
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
        assert!(render(&[vec![]]).is_err());
    }
}
