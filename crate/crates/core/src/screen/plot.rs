use std::fmt::Write;

use super::{DoseResponse, HillFit};

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Dose-response plot on a log concentration axis: measured points, the fitted
/// curve and a dashed EC50 marker. Output is plain text and deterministic.
pub fn dose_response_svg(dr: &DoseResponse, fit: Option<&HillFit>, readout: &str) -> String {
    let xs: Vec<f64> = dr.points.iter().map(|p| p.concentration.log10()).collect();
    let mut ys: Vec<f64> = dr.points.iter().map(|p| p.response).collect();
    let mut xlo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut xhi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(f) = fit {
        ys.extend([f.s0, f.s_inf]);
        let l = f.ec50.log10();
        if l.is_finite() {
            xlo = xlo.min(l);
            xhi = xhi.max(l);
        }
    }
    if !xlo.is_finite() {
        (xlo, xhi) = (-9.0, -3.0);
    }
    if xhi - xlo < 1e-9 {
        (xlo, xhi) = (xlo - 0.5, xhi + 0.5);
    }
    let mut ylo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut yhi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !ylo.is_finite() {
        (ylo, yhi) = (0.0, 1.0);
    }
    if yhi - ylo < 1e-12 {
        (ylo, yhi) = (ylo - 0.5, yhi + 0.5);
    }
    let pad = 0.05 * (yhi - ylo);
    let (ylo, yhi) = (ylo - pad, yhi + pad);
    let px = |x: f64| MARGIN + (x - xlo) / (xhi - xlo) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - ylo) / (yhi - ylo) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        W / 2.0,
        escape(&dr.compound_id)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m:.1},{t:.1} V{b:.1} H{r:.1}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">log10 concentration [M]</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(readout)
    );
    for (x, y) in xs.iter().zip(dr.points.iter().map(|p| p.response)) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="steelblue"/>"#,
            px(*x),
            py(y)
        );
    }
    if let Some(f) = fit {
        let mut d = String::new();
        for i in 0..=100 {
            let x = xlo + (xhi - xlo) * i as f64 / 100.0;
            let y = f.predict(10f64.powf(x));
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, px(x), py(y));
        }
        let _ = writeln!(s, r#"<path d="{d}" stroke="darkred" fill="none" stroke-width="1.5"/>"#);
        let l = f.ec50.log10();
        if l.is_finite() {
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{t:.1}" x2="{x:.2}" y2="{b:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                x = px(l),
                t = MARGIN,
                b = H - MARGIN
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.1}" font-family="sans-serif" font-size="11">EC50 = {:.3e} M</text>"#,
                px(l) + 4.0,
                MARGIN + 12.0,
                f.ec50
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
