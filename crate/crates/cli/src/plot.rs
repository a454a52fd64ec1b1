//! Static SVG loss curves with a log-scaled y axis, one panel per metrics
//! file.

use std::fmt::Write as _;

use arrayssl::training::EpochRecord;

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 44.0;
const FLOOR: f64 = 1e-12;

fn log10_clamped(v: f64) -> f64 {
    v.max(FLOOR).log10()
}

fn points(records: &[EpochRecord], value: impl Fn(&EpochRecord) -> f64, x: impl Fn(f64) -> f64, y: impl Fn(f64) -> f64) -> String {
    records
        .iter()
        .map(|r| format!("{:.2},{:.2}", x(r.epoch as f64), y(log10_clamped(value(r)))))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders `(title, records)` panels side by side. Output depends only on
/// the inputs.
pub fn render_svg(panels: &[(String, Vec<EpochRecord>)]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (i, (title, recs)) in panels.iter().enumerate() {
        let ox = PANEL_W * i as f64;
        let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (y0, y1) = (PANEL_H - MARGIN_B, MARGIN_T);

        let logs: Vec<f64> = recs
            .iter()
            .flat_map(|r| [log10_clamped(r.train_loss), log10_clamped(r.val_loss)])
            .collect();
        let (mut lo, mut hi) = logs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        lo = lo.floor();
        hi = hi.ceil().max(lo + 1.0);
        let first = recs.first().map_or(0.0, |r| r.epoch as f64);
        let last = recs.last().map_or(1.0, |r| r.epoch as f64);
        let span = (last - first).max(1.0);
        let x = |e: f64| x0 + (e - first) / span * (x1 - x0);
        let y = |l: f64| y0 - (l - lo) / (hi - lo) * (y0 - y1);

        writeln!(s, r#"<g class="panel">"#).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#, (x0 + x1) / 2.0, escape(title)).unwrap();
        writeln!(
            s,
            r#"<path d="M{x0:.2},{y1:.2} V{y0:.2} H{x1:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        let mut decade = lo as i32;
        while decade as f64 <= hi {
            let yy = y(decade as f64);
            writeln!(
                s,
                r##"<line x1="{x0:.2}" y1="{yy:.2}" x2="{x1:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"##,
                x0 - 4.0,
                yy + 4.0
            )
            .unwrap();
            decade += 1;
        }
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch ({first:.0} to {last:.0})</text>"#,
            (x0 + x1) / 2.0,
            PANEL_H - 10.0
        )
        .unwrap();
        writeln!(
            s,
            r##"<polyline class="train" fill="none" stroke="#1f77b4" points="{}"/>"##,
            points(recs, |r| r.train_loss, x, y)
        )
        .unwrap();
        writeln!(
            s,
            r##"<polyline class="val" fill="none" stroke="#d62728" points="{}"/>"##,
            points(recs, |r| r.val_loss, x, y)
        )
        .unwrap();
        writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" fill="#1f77b4">train</text><text x="{:.2}" y="{:.2}" fill="#d62728">validation</text>"##,
            x1 - 110.0,
            y1 + 12.0,
            x1 - 70.0,
            y1 + 12.0
        )
        .unwrap();
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
