use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::PointResult;

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub topology: String,
    pub policy: String,
    pub availability: f64,
    pub excess: f64,
    pub memory_avg_bytes: f64,
    pub memory_max_bytes: usize,
    pub availability_after_warmup: Option<f64>,
    pub transfers: u64,
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "topology",
        "policy",
        "availability",
        "excess",
        "memory_avg_bytes",
        "memory_max_bytes",
        "availability_after_warmup",
        "transfers",
    ])?;
    for r in rows {
        w.write_record([
            r.topology.clone(),
            r.policy.clone(),
            f6(r.availability),
            f6(r.excess),
            format!("{:.1}", r.memory_avg_bytes),
            r.memory_max_bytes.to_string(),
            r.availability_after_warmup.map(f6).unwrap_or_default(),
            r.transfers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Per-client breakdown of every sweep point.
pub fn write_clients_csv<W: Write>(results: &[PointResult], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "topology",
        "policy",
        "client_id",
        "active_s",
        "available_s",
        "excess_s",
        "availability",
        "excess",
        "memory_bytes",
        "transfers",
    ])?;
    for r in results {
        for c in &r.report.clients {
            w.write_record([
                r.topology.clone(),
                r.policy.clone(),
                c.client_id.clone(),
                c.active_s.to_string(),
                c.available_s.to_string(),
                c.excess_s().to_string(),
                c.availability().map(f6).unwrap_or_default(),
                c.excess_ratio().map(f6).unwrap_or_default(),
                c.memory_bytes.to_string(),
                c.transfers.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Merges result files into a Markdown comparison table, one row per
/// (topology, policy) in input order. Availability and excess are shown in
/// percent, with the availability gain over the topology's `baseline` row
/// when there is one.
pub fn merge_results<R: Read>(inputs: Vec<(String, R)>) -> Result<String, csv::Error> {
    let mut rows: Vec<(String, ResultRow)> = Vec::new();
    for (source, input) in inputs {
        for row in read_results_csv(input)? {
            rows.push((source.clone(), row));
        }
    }
    let baselines: BTreeMap<(String, String), f64> = rows
        .iter()
        .filter(|(_, r)| r.policy == "baseline")
        .map(|(s, r)| ((s.clone(), r.topology.clone()), r.availability))
        .collect();
    let mut out = String::new();
    out.push_str("| source | topology | policy | availability % | Δ baseline (pts) | excess % | memory avg (B) | memory max (B) |\n");
    out.push_str("|---|---|---|---:|---:|---:|---:|---:|\n");
    for (source, r) in &rows {
        let delta = baselines
            .get(&(source.clone(), r.topology.clone()))
            .map(|b| format!("{:+.2}", (r.availability - b) * 100.0))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "| {source} | {} | {} | {:.2} | {delta} | {:.2} | {:.0} | {} |",
            r.topology,
            r.policy,
            r.availability * 100.0,
            r.excess * 100.0,
            r.memory_avg_bytes,
            r.memory_max_bytes
        );
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Availability (y) against excess data (x) for every row.
pub fn render_pareto_svg(title: &str, rows: &[ResultRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const M: f64 = 60.0;
    let max_x = rows.iter().map(|r| r.excess).fold(0.0f64, f64::max).max(0.01) * 1.1;
    let (min_y, max_y) = rows.iter().fold((1.0f64, 0.0f64), |(lo, hi), r| {
        (lo.min(r.availability), hi.max(r.availability))
    });
    let (min_y, max_y) = if rows.is_empty() {
        (0.0, 1.0)
    } else {
        ((min_y - 0.05).max(0.0), (max_y + 0.05).min(1.0))
    };
    let span_y = (max_y - min_y).max(1e-6);
    let px = |x: f64| M + x / max_x * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - min_y) / span_y * (H - 2.0 * M);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{M}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{0}" stroke="black"/>"#,
        H - M,
        W - M
    );
    for i in 0..=4 {
        let fx = max_x * i as f64 / 4.0;
        let fy = min_y + span_y * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}%</text>"#,
            px(fx),
            H - M + 16.0,
            fx * 100.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}%</text>"#,
            M - 6.0,
            py(fy) + 4.0,
            fy * 100.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">excess data</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">availability</text>"#,
        H / 2.0
    );
    for r in rows {
        let (x, y) = (px(r.excess), py(r.availability));
        let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}">{} / {}</text>"#,
            x + 6.0,
            y - 6.0,
            escape(&r.topology),
            escape(&r.policy)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
