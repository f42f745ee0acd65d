// SPDX-License-Identifier: Apache-2.0

//! Dependency-free SVG output: point scatters and log-scale loss curves.

use std::fmt::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_POINTS: usize = 20_000;
const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
}

/// Affine map of `[lo, hi]` onto the drawable span, flipping when `flip`.
fn scale(lo: f64, hi: f64, flip: bool) -> impl Fn(f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let inner = SIZE - 2.0 * MARGIN;
    move |v| {
        let u = (v - lo) / span;
        MARGIN + inner * if flip { 1.0 - u } else { u }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Indices kept for plotting: all of them up to [`MAX_POINTS`], otherwise a
/// uniform subsample drawn with `seed`, in ascending order.
pub fn subsample(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_POINTS {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, n, MAX_POINTS).into_vec();
    keep.sort_unstable();
    keep
}

/// One circle per kept point. Uses the first two coordinates; 1-D data is
/// drawn on a horizontal line.
pub fn scatter(points: &[Vec<f64>], seed: u64) -> String {
    let keep = subsample(points.len(), seed);
    let xy: Vec<(f64, f64)> = keep
        .iter()
        .map(|&i| {
            let p = &points[i];
            (p[0], p.get(1).copied().unwrap_or(0.0))
        })
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (x0, x1) = bounds(xy.iter().map(|p| p.0));
    let (y0, y1) = bounds(xy.iter().map(|p| p.1));
    // Equal aspect ratio.
    let half = 0.5 * (x1 - x0).max(y1 - y0);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let sx = scale(cx - half, cx + half, false);
    let sy = scale(cy - half, cy + half, true);

    let mut out = String::new();
    header(&mut out);
    let _ = writeln!(out, r#"<g fill="steelblue" fill-opacity="0.5">"#);
    for (x, y) in xy {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1"/>"#, sx(x), sy(y));
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Loss against iteration with a base-10 logarithmic loss axis. Points with
/// non-positive or non-finite loss are skipped.
pub fn loss_curve(series: &[(u64, f64)]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, l)| *l > 0.0 && l.is_finite())
        .map(|&(i, l)| (i as f64, l.log10()))
        .collect();
    let mut out = String::new();
    header(&mut out);
    if pts.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1));
    let (ylo, yhi) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let sx = scale(x0, x1, false);
    let sy = scale(ylo, yhi, true);

    let _ = writeln!(out, r#"<g stroke="lightgray" font-size="10" font-family="sans-serif">"#);
    for decade in (ylo as i32)..=(yhi as i32) {
        let y = sy(decade as f64);
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}"/><text x="2" y="{:.2}" fill="black" stroke="none">1e{decade}</text>"#,
            SIZE - MARGIN,
            y + 3.0
        );
    }
    out.push_str("</g>\n");
    let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="firebrick" stroke-width="1.5" points="{}"/>"#,
        line.join(" ")
    );
    out.push_str("</svg>\n");
    out
}
