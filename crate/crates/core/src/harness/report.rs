use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::train::METRICS_HEADER;
use super::{HarnessError, RunConfig};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Final-row averages for one group of runs sharing algorithm and scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub runs: usize,
    pub env_steps: f64,
    pub reward: f64,
    /// Captures plus occupied landmarks; only one is ever non-zero.
    pub success: f64,
    pub collisions: f64,
    pub comm_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub summaries: Vec<RunSummary>,
    pub table: String,
    pub files: Vec<PathBuf>,
}

struct Run {
    label: String,
    rows: Vec<Vec<f64>>,
}

fn col(name: &str) -> usize {
    METRICS_HEADER.split(',').position(|c| c == name).expect("known column")
}

fn read_run(dir: &Path) -> Result<Run, HarnessError> {
    let path = dir.join("metrics.csv");
    let bad = |message: String| HarnessError::Format {
        path: path.clone(),
        message,
    };
    let mut reader = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(bad("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    let cfg_path = dir.join("config.txt");
    let label = match fs::read_to_string(&cfg_path) {
        Ok(text) => {
            let cfg = RunConfig::from_text(&text).map_err(|e| HarnessError::Format {
                path: cfg_path.clone(),
                message: e.to_string(),
            })?;
            format!("{} {}", cfg.algo, cfg.scenario.label())
        }
        Err(_) => dir.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned()),
    };
    Ok(Run { label, rows })
}

fn find_runs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if dir.join("metrics.csv").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    runs.sort();
    Ok(runs)
}

/// Mean, min and max across runs at each row, cut to the shortest run.
fn band(runs: &[&Run], c: usize) -> Vec<(f64, f64, f64, f64)> {
    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let x = col("env_steps");
    (0..len)
        .map(|i| {
            let ys = runs.iter().map(|r| r.rows[i][c]);
            let mean = ys.clone().sum::<f64>() / runs.len() as f64;
            let lo = ys.clone().fold(f64::INFINITY, f64::min);
            let hi = ys.fold(f64::NEG_INFINITY, f64::max);
            (runs[0].rows[i][x], mean, lo, hi)
        })
        .collect()
}

fn svg_chart(title: &str, y_label: &str, series: &[(String, Vec<(f64, f64, f64, f64)>)]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _, lo, hi) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#, ml + pw / 2.0);
    let _ = writeln!(
        s,
        r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            mt + ph + 18.0,
            xv.round()
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            yv
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">env steps</text>"#,
        ml + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if pts.iter().any(|p| p.2 < p.3) {
            let upper = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
            let lower = pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = mt + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            w - mr + 12.0,
            w - mr + 32.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{label}</text>"#, w - mr + 38.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Renders reward and communication-rate curves plus a summary table for
/// every run under `dir`. `dir` may itself be a run directory or contain run
/// directories; runs with the same algorithm and scenario are aggregated.
pub fn report(dir: &Path) -> Result<ReportOutput, HarnessError> {
    let paths = find_runs(dir)?;
    if paths.is_empty() {
        return Err(HarnessError::NoRuns(dir.to_path_buf()));
    }
    let runs = paths.iter().map(|p| read_run(p)).collect::<Result<Vec<_>, _>>()?;
    let mut groups: BTreeMap<&str, Vec<&Run>> = BTreeMap::new();
    for r in &runs {
        groups.entry(&r.label).or_default().push(r);
    }

    let mut files = Vec::new();
    for (name, column, title) in [
        ("reward_vs_steps.svg", "mean_episode_reward", "Mean episode reward"),
        ("comm_rate_vs_steps.svg", "comm_rate", "Communication rate"),
    ] {
        let series: Vec<_> = groups
            .iter()
            .map(|(label, rs)| (label.to_string(), band(rs, col(column))))
            .collect();
        let path = dir.join(name);
        fs::write(&path, svg_chart(title, column, &series)).map_err(|e| HarnessError::io(&path, e))?;
        files.push(path);
    }

    let mut summaries = Vec::new();
    for (label, rs) in &groups {
        let last: Vec<&Vec<f64>> = rs.iter().filter_map(|r| r.rows.last()).collect();
        let avg = |f: &dyn Fn(&Vec<f64>) -> f64| {
            if last.is_empty() {
                f64::NAN
            } else {
                last.iter().map(|r| f(r)).sum::<f64>() / last.len() as f64
            }
        };
        summaries.push(RunSummary {
            label: label.to_string(),
            runs: rs.len(),
            env_steps: avg(&|r| r[col("env_steps")]),
            reward: avg(&|r| r[col("mean_episode_reward")]),
            success: avg(&|r| r[col("capture_events")] + r[col("occupied_landmarks")]),
            collisions: avg(&|r| r[col("collision_events")]),
            comm_rate: avg(&|r| r[col("comm_rate")]),
        });
    }
    let mut table = format!(
        "{:<20} {:>4} {:>10} {:>10} {:>8} {:>8} {:>9}\n",
        "run", "n", "env_steps", "R", "S", "C", "comm_rate"
    );
    for s in &summaries {
        let _ = writeln!(
            table,
            "{:<20} {:>4} {:>10.0} {:>10.2} {:>8.2} {:>8.2} {:>9.3}",
            s.label, s.runs, s.env_steps, s.reward, s.success, s.collisions, s.comm_rate
        );
    }
    let path = dir.join("summary.txt");
    fs::write(&path, &table).map_err(|e| HarnessError::io(&path, e))?;
    files.push(path);
    Ok(ReportOutput {
        summaries,
        table,
        files,
    })
}
