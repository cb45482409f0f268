//! Run summaries rendered as CSV tables and standalone SVG charts.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{average_accuracy, backward_transfer, forgetting, AccuracyMatrix};

/// Everything `render_report` needs to know about one finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub strategy: String,
    pub order_code: String,
    pub seed: u64,
    /// Replay ratio used by the run (0 for strategies that do not replay).
    pub gamma: f64,
    /// Bytes held by the run's auxiliary memory after the final task.
    pub memory_bytes: u64,
    pub matrix: AccuracyMatrix,
    /// `A_1..A_N`.
    pub average: Vec<f64>,
    /// `F_2..F_N` (empty for single-task runs).
    pub forgetting: Vec<f64>,
    /// `B_2..B_N` (empty for single-task runs).
    pub backward: Vec<f64>,
}

impl MetricReport {
    /// Derives the metric curves from a filled accuracy matrix.
    pub fn from_matrix(
        strategy: impl Into<String>,
        order_code: impl Into<String>,
        seed: u64,
        gamma: f64,
        memory_bytes: u64,
        matrix: AccuracyMatrix,
    ) -> Result<MetricReport> {
        let n = matrix.n_rows();
        if n == 0 {
            return Err(Error::data("cannot report on an empty accuracy matrix"));
        }
        let average = (1..=n)
            .map(|k| average_accuracy(&matrix, k))
            .collect::<Result<Vec<_>>>()?;
        let forgetting = (2..=n)
            .map(|k| forgetting(&matrix, k))
            .collect::<Result<Vec<_>>>()?;
        let backward = (2..=n)
            .map(|k| backward_transfer(&matrix, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport {
            strategy: strategy.into(),
            order_code: order_code.into(),
            seed,
            gamma,
            memory_bytes,
            matrix,
            average,
            forgetting,
            backward,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn final_average(&self) -> f64 {
        *self.average.last().expect("non-empty by construction")
    }
}

/// Writes the full report bundle into `dir`: per-run long-form summary,
/// strategy-by-order table, accuracy-over-time curves, and — when the runs
/// carry them — replay-ratio and memory-footprint charts. Every table is
/// written both as CSV and as a standalone SVG.
pub fn render_report(runs: &[MetricReport], dir: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::config("report needs at least one run"));
    }
    let n = runs[0].n_tasks();
    if let Some(bad) = runs.iter().find(|r| r.n_tasks() != n) {
        return Err(Error::data(format!(
            "run {}/{} covers {} tasks, others cover {n}",
            bad.strategy,
            bad.order_code,
            bad.n_tasks()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };

    write("summary.csv", summary_csv(runs))?;

    let (strategies, orders, cells) = by_order_table(runs);
    write("summary_by_order.csv", by_order_csv(&strategies, &orders, &cells))?;
    write("summary_by_order.svg", by_order_svg(&strategies, &orders, &cells))?;

    write("curves.csv", curves_csv(runs))?;
    write("curves.svg", curves_svg(runs, n))?;

    let sweep = gamma_sweep(runs);
    if !sweep.is_empty() {
        write("gamma_sweep.csv", gamma_csv(&sweep))?;
        write("gamma_sweep.svg", gamma_svg(&sweep))?;
    }

    let memory = memory_by_strategy(runs);
    write("memory.csv", memory_csv(&memory))?;
    write("memory.svg", memory_svg(&memory))?;
    Ok(())
}

fn summary_csv(runs: &[MetricReport]) -> String {
    let mut out = String::from(
        "strategy,order,seed,gamma,memory_bytes,final_average,final_forgetting,final_backward\n",
    );
    for r in runs {
        let f = r.forgetting.last().map(|v| format!("{v}")).unwrap_or_default();
        let b = r.backward.last().map(|v| format!("{v}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{f},{b}",
            r.strategy,
            r.order_code,
            r.seed,
            r.gamma,
            r.memory_bytes,
            r.final_average()
        );
    }
    out
}

/// Final average accuracy per strategy (rows) and task order (columns),
/// averaged over seeds. Returns (strategies, orders, cells) with cells in
/// row-major order; missing combinations are `None`.
fn by_order_table(runs: &[MetricReport]) -> (Vec<String>, Vec<String>, Vec<Option<f64>>) {
    let mut strategies: Vec<String> = Vec::new();
    let mut orders: Vec<String> = Vec::new();
    for r in runs {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy.clone());
        }
        if !orders.contains(&r.order_code) {
            orders.push(r.order_code.clone());
        }
    }
    let mut cells = Vec::with_capacity(strategies.len() * orders.len());
    for s in &strategies {
        for o in &orders {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| &r.strategy == s && &r.order_code == o)
                .map(|r| r.final_average())
                .collect();
            cells.push(if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            });
        }
    }
    (strategies, orders, cells)
}

fn by_order_csv(strategies: &[String], orders: &[String], cells: &[Option<f64>]) -> String {
    let mut out = String::from("strategy");
    for o in orders {
        let _ = write!(out, ",{o}");
    }
    out.push_str(",avg\n");
    for (i, s) in strategies.iter().enumerate() {
        let _ = write!(out, "{s}");
        let row = &cells[i * orders.len()..(i + 1) * orders.len()];
        for c in row {
            match c {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        if present.is_empty() {
            out.push_str(",\n");
        } else {
            let _ = writeln!(out, ",{}", present.iter().sum::<f64>() / present.len() as f64);
        }
    }
    out
}

/// Mean final accuracy per replay ratio, taken over runs that replay.
fn gamma_sweep(runs: &[MetricReport]) -> Vec<(f64, f64)> {
    let gammas: BTreeSet<u64> = runs
        .iter()
        .filter(|r| r.gamma > 0.0)
        .map(|r| r.gamma.to_bits())
        .collect();
    gammas
        .into_iter()
        .map(|bits| {
            let g = f64::from_bits(bits);
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.gamma.to_bits() == bits)
                .map(|r| r.final_average())
                .collect();
            (g, vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

fn gamma_csv(sweep: &[(f64, f64)]) -> String {
    let mut out = String::from("gamma,final_average\n");
    for (g, a) in sweep {
        let _ = writeln!(out, "{g},{a}");
    }
    out
}

fn memory_by_strategy(runs: &[MetricReport]) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    for r in runs {
        if !order.contains(&r.strategy) {
            order.push(r.strategy.clone());
        }
    }
    order
        .into_iter()
        .map(|s| {
            let vals: Vec<f64> = runs
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| r.memory_bytes as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (s, mean)
        })
        .collect()
}

fn memory_csv(memory: &[(String, f64)]) -> String {
    let mut out = String::from("strategy,memory_bytes\n");
    for (s, b) in memory {
        let _ = writeln!(out, "{s},{b}");
    }
    out
}

fn curves_csv(runs: &[MetricReport]) -> String {
    let mut out = String::from("strategy,order,seed,k,average_accuracy\n");
    for r in runs {
        for (i, a) in r.average.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{a}", r.strategy, r.order_code, r.seed, i + 1);
        }
    }
    out
}

// ---- SVG rendering ------------------------------------------------------
//
// Charts are plain hand-written SVG so reports open in any browser without
// a plotting dependency. Layout constants are shared by all charts.

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
         viewBox=\"0 0 {CHART_W} {CHART_H}\" font-family=\"sans-serif\">\n\
         <rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        CHART_W / 2.0
    )
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = CHART_W - MARGIN_R;
    let y0 = CHART_H - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">{y_label}</text>",
        (x0 + x1) / 2.0,
        CHART_H - 12.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

/// Maps data coordinates into the plot rectangle.
fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    out_lo + (v - lo) / span * (out_hi - out_lo)
}

fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = svg_open(title);
    axes(&mut out, x_label, "average accuracy");
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for (x, _) in pts {
            x_lo = x_lo.min(*x);
            x_hi = x_hi.max(*x);
        }
    }
    let (x0, x1) = (MARGIN_L, CHART_W - MARGIN_R);
    let (y0, y1) = (CHART_H - MARGIN_B, MARGIN_T);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = scale(v, 0.0, 1.0, y0, y1);
        let _ = writeln!(
            out,
            "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#ddd\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>",
            x0 - 6.0,
            y + 3.0
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                format!("{:.2},{:.2}", scale(*x, x_lo, x_hi, x0, x1), scale(*y, 0.0, 1.0, y0, y1))
            })
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for p in &path {
            let (px, py) = p.split_once(',').expect("formatted above");
            let _ = writeln!(out, "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\"/>");
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\">{name}</text>",
            x1 + 10.0,
            ly,
            x1 + 24.0,
            ly + 9.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn curves_svg(runs: &[MetricReport], n: usize) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|r| {
            let name = format!("{} {} s{}", r.strategy, r.order_code, r.seed);
            let pts = (0..n).map(|i| ((i + 1) as f64, r.average[i])).collect();
            (name, pts)
        })
        .collect();
    line_chart("Average accuracy over the sequence", "tasks seen", &series)
}

fn gamma_svg(sweep: &[(f64, f64)]) -> String {
    let series = vec![("replayed runs".to_string(), sweep.to_vec())];
    line_chart("Final average accuracy by replay ratio", "gamma", &series)
}

fn memory_svg(memory: &[(String, f64)]) -> String {
    let mut out = svg_open("Auxiliary memory footprint");
    axes(&mut out, "strategy", "bytes");
    let (x0, x1) = (MARGIN_L, CHART_W - MARGIN_R);
    let (y0, y1) = (CHART_H - MARGIN_B, MARGIN_T);
    let hi = memory.iter().map(|(_, b)| *b).fold(1.0_f64, f64::max);
    let slot = (x1 - x0) / memory.len() as f64;
    for (i, (name, bytes)) in memory.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let bx = x0 + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let top = scale(*bytes, 0.0, hi, y0, y1);
        let _ = writeln!(
            out,
            "<rect x=\"{bx:.2}\" y=\"{top:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{name}</text>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{bytes:.0}</text>",
            y0 - top,
            bx + bw / 2.0,
            y0 + 16.0,
            bx + bw / 2.0,
            top - 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn by_order_svg(strategies: &[String], orders: &[String], cells: &[Option<f64>]) -> String {
    let mut out = svg_open("Final average accuracy by task order");
    let row_h = 24.0;
    let col_w = (CHART_W - MARGIN_L - 20.0) / (orders.len() + 2) as f64;
    let top = MARGIN_T + 20.0;
    let cell = |out: &mut String, row: usize, col: usize, text: &str, bold: bool| {
        let x = MARGIN_L + col_w * col as f64 + col_w / 2.0;
        let y = top + row_h * row as f64;
        let weight = if bold { " font-weight=\"bold\"" } else { "" };
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"12\" text-anchor=\"middle\"{weight}>{text}</text>"
        );
    };
    cell(&mut out, 0, 0, "strategy", true);
    for (c, o) in orders.iter().enumerate() {
        cell(&mut out, 0, c + 1, o, true);
    }
    cell(&mut out, 0, orders.len() + 1, "avg", true);
    for (r, s) in strategies.iter().enumerate() {
        cell(&mut out, r + 1, 0, s, false);
        let row = &cells[r * orders.len()..(r + 1) * orders.len()];
        for (c, v) in row.iter().enumerate() {
            let text = v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            cell(&mut out, r + 1, c + 1, &text, false);
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        let avg = if present.is_empty() {
            "-".into()
        } else {
            format!("{:.3}", present.iter().sum::<f64>() / present.len() as f64)
        };
        cell(&mut out, r + 1, orders.len() + 1, &avg, false);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(strategy: &str, order: &str, seed: u64, gamma: f64, rows: &[&[f64]]) -> MetricReport {
        let labels = (0..rows.len()).map(|i| format!("t{i}")).collect();
        let mut m = AccuracyMatrix::new(labels);
        for r in rows {
            m.push_row(r.to_vec()).unwrap();
        }
        MetricReport::from_matrix(strategy, order, seed, gamma, 1000 + seed, m).unwrap()
    }

    #[test]
    fn from_matrix_populates_the_metric_curves() {
        let r = run("sgp", "oarlks", 7, 1.0, &[&[0.5], &[0.4, 0.6]]);
        assert_eq!(r.average.len(), 2);
        assert_eq!(r.forgetting.len(), 1);
        assert_eq!(r.backward.len(), 1);
        assert!((r.final_average() - 0.5).abs() < 1e-15);
        assert!((r.forgetting[0] - 0.1).abs() < 1e-15);
        assert!((r.backward[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn report_bundle_lands_on_disk_and_tables_agree() {
        let runs = vec![
            run("finetune", "oarlks", 1, 0.0, &[&[0.8], &[0.3, 0.7]]),
            run("finetune", "oarlks", 2, 0.0, &[&[0.6], &[0.5, 0.7]]),
            run("finetune", "abcdef", 1, 0.0, &[&[0.9], &[0.4, 0.6]]),
            run("sgp", "oarlks", 1, 1.0, &[&[0.8], &[0.7, 0.7]]),
            run("sgp", "oarlks", 2, 1.5, &[&[0.8], &[0.6, 0.8]]),
        ];
        let dir = tempfile::tempdir().unwrap();
        render_report(&runs, dir.path()).unwrap();

        for name in [
            "summary.csv",
            "summary_by_order.csv",
            "summary_by_order.svg",
            "curves.csv",
            "curves.svg",
            "gamma_sweep.csv",
            "gamma_sweep.svg",
            "memory.csv",
            "memory.svg",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }

        let by_order = std::fs::read_to_string(dir.path().join("summary_by_order.csv")).unwrap();
        let mut lines = by_order.lines();
        assert_eq!(lines.next().unwrap(), "strategy,oarlks,abcdef,avg");
        // finetune/oarlks final averages are 0.5 and 0.6 -> 0.55; abcdef is 0.5.
        assert_eq!(lines.next().unwrap(), "finetune,0.55,0.5,0.525");
        // sgp never ran on abcdef, so that cell is blank.
        let sgp = lines.next().unwrap();
        assert!(sgp.starts_with("sgp,0.7,,"), "got {sgp}");

        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves.lines().count(), 1 + runs.len() * 2);

        let sweep = std::fs::read_to_string(dir.path().join("gamma_sweep.csv")).unwrap();
        assert_eq!(sweep, "gamma,final_average\n1,0.7\n1.5,0.7\n");
    }

    #[test]
    fn mismatched_task_counts_are_rejected() {
        let runs = vec![
            run("finetune", "oarlks", 1, 0.0, &[&[0.8], &[0.3, 0.7]]),
            run("sgp", "oarlks", 1, 1.0, &[&[0.8]]),
        ];
        let dir = tempfile::tempdir().unwrap();
        let err = render_report(&runs, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(render_report(&[], dir.path()).unwrap_err().exit_code() == 2);
    }
}
