//! Minimal SVG line charts for the CSV schemas the other commands write.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::{CliError, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    /// Markers only, no connecting line.
    scatter: bool,
}

pub fn render_csv(text: &str, title: &str, log_y: bool) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::Usage(format!("csv: {e}")))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Usage(format!("csv: {e}")))?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| CliError::Usage(format!("csv: {e}")))?);
    }
    let (x_label, series) = match header.join(",").as_str() {
        "t,node,option,value" => {
            let mut by_key: BTreeMap<(u64, u64), Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                by_key.entry((r[1] as u64, r[2] as u64)).or_default().push((r[0], r[3]));
            }
            let series = by_key
                .into_iter()
                .map(|((i, j), points)| Series { label: format!("x[{i},{j}]"), points, scatter: false })
                .collect();
            ("t", series)
        }
        "t,dirichlet,diameter" | "epoch,loss,accuracy" => {
            let series = (1..3)
                .map(|c| Series {
                    label: header[c].clone(),
                    points: rows.iter().map(|r| (r[0], r[c])).collect(),
                    scatter: false,
                })
                .collect();
            (header[0].as_str(), series)
        }
        "u,y,stable" => {
            let series = [(1.0, "stable"), (0.0, "unstable")]
                .into_iter()
                .map(|(flag, label)| Series {
                    label: label.to_string(),
                    points: rows.iter().filter(|r| r[2] == flag).map(|r| (r[0], r[1])).collect(),
                    scatter: true,
                })
                .collect();
            ("u", series)
        }
        other => return Err(CliError::Usage(format!("unrecognised CSV header '{other}'"))),
    };
    Ok(render(title, x_label, series, log_y))
}

fn render(title: &str, x_label: &str, mut series: Vec<Series>, log_y: bool) -> String {
    if log_y {
        for s in &mut series {
            s.points = s.points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.log10())).collect();
        }
    }
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = padded_range(all().map(|p| p.0));
    let (y0, y1) = padded_range(all().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, tick(xv));
        let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
        let label = if log_y { format!("1e{}", tick(yv)) } else { tick(yv) };
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, py + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if ser.scatter {
            for &(x, y) in &ser.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(x), sy(y));
            }
        } else if !ser.points.is_empty() {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = TOP + 12.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="14" height="4" fill="{color}"/>"#, ly - 6.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 20.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_csv_gives_one_line_per_entry() {
        let csv = "t,node,option,value\n0,0,0,1\n0,0,1,2\n1,0,0,0.5\n1,0,1,1.5\n";
        let svg = render_csv(csv, "run", false).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("x[0,1]"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn bifurcation_csv_is_scattered() {
        let svg = render_csv("u,y,stable\n0.1,0,1\n0.5,0,0\n0.5,0.9,1\n0.5,-0.9,1\n", "b", false).unwrap();
        assert_eq!(svg.matches("<circle").count(), 4);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn log_scale_drops_nonpositive_values() {
        let svg = render_csv("t,dirichlet,diameter\n0,1,1\n1,0.01,0\n", "e", true).unwrap();
        assert!(svg.contains("1e"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        assert!(render_csv("a,b\n1,2\n", "x", false).is_err());
    }

    #[test]
    fn title_is_escaped() {
        assert!(render_csv("epoch,loss,accuracy\n0,1,0.5\n", "a<b", false).unwrap().contains("a&lt;b"));
    }
}
