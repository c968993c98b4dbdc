//! Human-readable renderings of reports.

use std::fmt::Write as _;

use shortfall_core::explain::Waterfall;
use shortfall_core::qa::{normalized_confusion, QaReport};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

/// Tab-separated waterfall: one header line, a base row, the contribution
/// rows and a prediction row.
pub fn waterfall_text(w: &Waterfall) -> String {
    let mut s = String::from("label\tvalue\tstart\tend\n");
    let _ = writeln!(s, "base\t{}\t\t{}", w.base, w.base);
    for r in &w.rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.label, r.value, r.start, r.end);
    }
    let _ = writeln!(s, "prediction\t{}\t\t{}", w.prediction, w.prediction);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal waterfall chart: each row is a bar from its running start to
/// its running end, red when it raises the explained value, blue otherwise.
pub fn waterfall_svg(w: &Waterfall, title: &str) -> String {
    const ROW: f64 = 26.0;
    const LABEL_W: f64 = 300.0;
    const PLOT_W: f64 = 460.0;
    const TOP: f64 = 50.0;
    let mut lo = w.base.min(w.prediction);
    let mut hi = w.base.max(w.prediction);
    for r in &w.rows {
        lo = lo.min(r.start).min(r.end);
        hi = hi.max(r.start).max(r.end);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * PLOT_W;
    let height = TOP + ROW * (w.rows.len() as f64 + 1.0) + 40.0;
    let width = LABEL_W + PLOT_W + 120.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="15">{}</text>"#, escape(title));
    for (i, r) in w.rows.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let (a, b) = (x(r.start.min(r.end)), x(r.start.max(r.end)));
        let colour = if r.value >= 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 8.0,
            y + 16.0,
            escape(&r.label)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{a:.2}" y="{}" width="{:.2}" height="{}" fill="{colour}"/>"#,
            y + 4.0,
            (b - a).max(1.0),
            ROW - 8.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}">{:+.4}</text>"#, b + 4.0, y + 16.0, r.value);
    }
    let bottom = TOP + ROW * w.rows.len() as f64;
    for (label, v) in [("base", w.base), ("prediction", w.prediction)] {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#555" stroke-dasharray="4 3"/>"##,
            x(v),
            TOP - 4.0,
            bottom + 4.0
        );
        let y = if label == "base" { bottom + 20.0 } else { bottom + 36.0 };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y}" text-anchor="middle">{label} = {v:.4}</text>"#, x(v));
    }
    s.push_str("</svg>\n");
    s
}

/// Tab-separated rolling QA table with an average row, preceded by the
/// evaluation settings as comment lines.
pub fn qa_text(report: &QaReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# horizon_days\t{}", report.eval.horizon);
    let _ = writeln!(s, "# tolerance_days\t{}", report.eval.tolerance);
    s.push_str("iteration\torigin\ttrain_samples\tcases\ttp\tfp\ttn\tfn\texcluded\tprecision\trecall\n");
    for r in &report.iterations {
        let c = &r.confusion;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.iteration,
            r.origin,
            r.train_samples,
            r.cases,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.excluded,
            fmt_opt(r.precision),
            fmt_opt(r.recall)
        );
    }
    let cells = report
        .mean_confusion
        .map(|m| m.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("\t"))
        .unwrap_or_else(|| ["undefined"; 4].join("\t"));
    let _ =
        writeln!(s, "average\t\t\t\t{cells}\t\t{}\t{}", fmt_opt(report.mean_precision), fmt_opt(report.mean_recall));
    s
}

/// Normalized confusion cells as `(name, share)` pairs, or `None` when no
/// case was counted.
pub fn confusion_cells(c: &shortfall_core::qa::AdaptedConfusion) -> Option<[(&'static str, f64); 4]> {
    normalized_confusion(c).ok().map(|n| [("tp", n[0]), ("fp", n[1]), ("tn", n[2]), ("fn", n[3])])
}
