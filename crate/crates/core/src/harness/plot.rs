use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trace::{format_cost, RunTrace};
use crate::error::{Error, Result};

/// Highlighted point on one series.
#[derive(Clone, Debug, PartialEq)]
pub struct Marker {
    pub series: String,
    pub step: u64,
    pub loss: f64,
}

const W: f64 = 800.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Points plotted for a trace: validation loss where recorded, else the
/// training loss.
fn points(t: &RunTrace) -> Vec<(f64, f64)> {
    let val: Vec<(f64, f64)> = t.rows.iter().filter_map(|r| r.val_loss.map(|v| (r.step as f64, v))).collect();
    if val.len() >= 2 {
        return val;
    }
    t.rows.iter().filter_map(|r| r.train_loss.map(|v| (r.step as f64, v))).collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(series: &[(String, RunTrace)], markers: &[Marker]) -> String {
    let pts: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, t)| points(t)).collect();
    let finite = pts.iter().flatten().copied().chain(markers.iter().map(|m| (m.step as f64, m.loss))).filter(|p| p.1.is_finite());
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in finite {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + x / x1 * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black"><line x1="{m}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}"/></g>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="12"><text x="{}" y="{}" text-anchor="middle">step</text><text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">loss</text>"#,
        W / 2.0,
        H - 20.0,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1}</text>"#, W - MARGIN, H - MARGIN + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, MARGIN - 4.0, H - MARGIN);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text></g>"#, MARGIN - 4.0, MARGIN + 4.0);

    for (i, ((name, _), p)) in series.iter().zip(&pts).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = p.iter().filter(|q| q.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{n}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" "),
            n = xml_escape(name)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 16.0 * i as f64,
            xml_escape(name)
        );
    }
    for m in markers {
        let i = series.iter().position(|(n, _)| *n == m.series).unwrap_or(0);
        let _ = writeln!(
            s,
            r#"<circle data-series="{}" data-step="{}" cx="{:.2}" cy="{:.2}" r="6" fill="{}"/>"#,
            xml_escape(&m.series),
            m.step,
            sx(m.step as f64),
            sy(m.loss),
            COLORS[i % COLORS.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Every row of every series, tagged with the series name.
pub fn combined_csv(series: &[(String, RunTrace)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "step", "tokens", "cum_cost", "mode", "train_loss", "val_loss"])
        .expect("in-memory write");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (name, t) in series {
        for r in &t.rows {
            w.write_record([
                name.clone(),
                r.step.to_string(),
                r.tokens.to_string(),
                format_cost(r.cum_cost),
                r.mode.clone(),
                f(r.train_loss),
                f(r.val_loss),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Writes `<stem>.csv` first and `<stem>.svg` second, so a rendering
/// problem can never leave the data file incomplete.
pub fn emit_plots(series: &[(String, RunTrace)], markers: &[Marker], stem: &Path) -> Result<(PathBuf, PathBuf)> {
    if series.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");
    fs::write(&csv_path, combined_csv(series)).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&svg_path, render_svg(series, markers)).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Rational;
    use crate::harness::trace::TraceRow;

    fn t(n: u64) -> RunTrace {
        RunTrace {
            rows: (1..=n)
                .map(|k| TraceRow {
                    step: k,
                    tokens: k,
                    cum_cost: Rational::from_integer(k as i128),
                    mode: "base".into(),
                    train_loss: Some(5.0 / k as f64),
                    val_loss: (k % 2 == 0).then(|| 5.5 / k as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn structure_matches_inputs() {
        let series = vec![("baseline".to_string(), t(10)), ("s4".to_string(), t(14))];
        let marker = Marker {
            series: "s4".into(),
            step: 12,
            loss: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let (csv_path, svg_path) = emit_plots(&series, std::slice::from_ref(&marker), &dir.path().join("loss")).unwrap();
        let svg = fs::read_to_string(svg_path).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains(r#"data-step="12""#));
        let csv = fs::read_to_string(csv_path).unwrap();
        assert_eq!(csv.lines().count() - 1, 24);
    }
}
