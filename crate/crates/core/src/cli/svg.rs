//! Scatter plots of real and generated points as standalone SVG.

use std::fmt::Write as _;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 24.0;
const REAL_COLOR: &str = "#1f77b4";
const FAKE_COLOR: &str = "#d62728";

/// Vertical offset in `[0, 1)` used to spread 1-D points; deterministic so
/// snapshots are reproducible.
fn jitter(i: usize) -> f64 {
    (i as f64 * 0.618_033_988_749_894_9).fract()
}

fn coords(points: &[Vec<f64>], band: Option<(f64, f64)>) -> Vec<(f64, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| match band {
            Some((lo, hi)) => (p[0], lo + (hi - lo) * jitter(i)),
            None => (p[0], p.get(1).copied().unwrap_or(0.0)),
        })
        .collect()
}

/// Real points in blue, generated in red. One-dimensional points are spread
/// vertically, real above and generated below; otherwise the first two
/// coordinates are drawn.
pub fn scatter(real: &[Vec<f64>], generated: &[Vec<f64>], title: &str) -> String {
    let one_d = real.first().or(generated.first()).is_some_and(|p| p.len() == 1);
    let (r, g) = if one_d {
        (coords(real, Some((0.55, 0.95))), coords(generated, Some((0.05, 0.45))))
    } else {
        (coords(real, None), coords(generated, None))
    };
    let finite: Vec<&(f64, f64)> = r.iter().chain(&g).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = finite.iter().map(|p| f(p)).fold(f64::INFINITY, f64::min);
        let hi = finite.iter().map(|p| f(p)).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = if one_d { (0.0, 1.0) } else { span(|p| p.1) };
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{}</text>"#, escape(title)).unwrap();
    for (points, color) in [(&r, REAL_COLOR), (&g, FAKE_COLOR)] {
        writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#).unwrap();
        for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, sx(x), sy(y)).unwrap();
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_per_circle() {
        let real = vec![vec![0.0], vec![1.0]];
        let fake = vec![vec![0.5], vec![f64::NAN], vec![2.0]];
        let svg = scatter(&real, &fake, "a<b");
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn deterministic() {
        let pts = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        assert_eq!(scatter(&pts, &pts, "t"), scatter(&pts, &pts, "t"));
    }
}
