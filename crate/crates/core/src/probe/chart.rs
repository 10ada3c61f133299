use std::fmt::Write;

use super::Curve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean loss against noise level, one line per checkpoint,
/// with a one-standard-deviation band.
pub fn render_svg(curve: &Curve) -> String {
    let names: Vec<&str> = {
        let mut v: Vec<&str> = Vec::new();
        for r in &curve.rows {
            if !v.contains(&r.checkpoint.as_str()) {
                v.push(&r.checkpoint);
            }
        }
        v
    };
    let x_lo = curve.levels.iter().copied().fold(f64::INFINITY, f64::min);
    let x_hi = curve.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y_hi = curve.rows.iter().map(|r| r.mean + r.std).fold(0.0, f64::max).max(1e-6) * 1.05;
    let y_lo = curve.rows.iter().map(|r| (r.mean - r.std).max(0.0)).fold(y_hi, f64::min) * 0.95;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let xs = |x: f64| LEFT + if x_hi > x_lo { (x - x_lo) / (x_hi - x_lo) * pw } else { pw / 2.0 };
    let ys = |y: f64| TOP + ph - (y - y_lo) / (y_hi - y_lo).max(1e-12) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for &x in &curve.levels {
        let px = xs(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 20.0
        );
    }
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let py = ys(y);
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="black"/><line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.3}</text>"##,
            LEFT - 5.0,
            LEFT + pw,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">fraction of occluded voxels relabeled</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">discriminator BCE vs. real target (mean ± std over scenes)</text>"#,
        TOP + ph / 2.0
    );
    for (n, name) in names.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let rows: Vec<_> = curve.rows.iter().filter(|r| r.checkpoint == *name).collect();
        let mut band = String::new();
        for r in &rows {
            let _ = write!(band, "{:.1},{:.1} ", xs(r.p), ys(r.mean + r.std));
        }
        for r in rows.iter().rev() {
            let _ = write!(band, "{:.1},{:.1} ", xs(r.p), ys((r.mean - r.std).max(y_lo)));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", xs(r.p), ys(r.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for r in &rows {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, xs(r.p), ys(r.mean));
        }
        let ly = TOP + 10.0 + 36.0 * n as f64;
        let lx = LEFT + pw + 12.0;
        let variant = rows.first().map(|r| r.variant.as_str()).unwrap_or("");
        let _ = writeln!(
            s,
            r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}" fill="#555">{}</text>"##,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(variant),
            lx + 26.0,
            ly + 18.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
