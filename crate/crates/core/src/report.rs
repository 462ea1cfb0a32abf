//! CSV results and SVG figures.
//!
//! CSV is canonical. Every figure is rendered from CSV-shaped rows only, so
//! plots can be regenerated from the files on disk.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dissemination::StrategyKind;
use crate::engine::{Metrics, RunReport};
use crate::losmap::{LosMap, LosTrace};
use crate::scene::Scene;
use crate::{Error, Result};

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub strategy: StrategyKind,
    pub interarrival_ms: f64,
    pub run: usize,
    pub seed: u64,
    pub n_generated: u64,
    pub n_delivered: u64,
    pub drop_blockage: f64,
    pub drop_rate: f64,
    /// Empty when the run delivered nothing.
    pub mean_delay_ms: Option<f64>,
}

impl RunRow {
    pub fn new(strategy: StrategyKind, interarrival_s: f64, run: usize, seed: u64, m: &Metrics) -> Self {
        Self {
            strategy,
            interarrival_ms: interarrival_s * 1e3,
            run,
            seed,
            n_generated: m.n_generated,
            n_delivered: m.n_delivered,
            drop_blockage: m.drop_blockage(),
            drop_rate: m.drop_rate(),
            mean_delay_ms: m.mean_delay().map(|d| d * 1e3),
        }
    }
}

/// One row of `aggregate.csv`: means and 95% CI half-widths over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: StrategyKind,
    pub interarrival_ms: f64,
    pub n_runs: usize,
    pub drop_blockage: f64,
    pub drop_blockage_ci: f64,
    pub drop_rate: f64,
    pub drop_rate_ci: f64,
    pub drop_total: f64,
    pub drop_total_ci: f64,
    pub mean_delay_ms: Option<f64>,
    pub mean_delay_ci_ms: Option<f64>,
    /// Contents still in flight at the end of a run, summed over runs.
    pub n_censored: u64,
}

impl AggregateRow {
    pub fn new(strategy: StrategyKind, interarrival_s: f64, report: &RunReport) -> Self {
        let delay = report.mean_delay_s;
        let has_delay = delay.n > 0;
        Self {
            strategy,
            interarrival_ms: interarrival_s * 1e3,
            n_runs: report.runs.len(),
            drop_blockage: report.drop_blockage.mean,
            drop_blockage_ci: report.drop_blockage.ci_half_width,
            drop_rate: report.drop_rate.mean,
            drop_rate_ci: report.drop_rate.ci_half_width,
            drop_total: report.drop_total.mean,
            drop_total_ci: report.drop_total.ci_half_width,
            mean_delay_ms: has_delay.then_some(delay.mean * 1e3),
            mean_delay_ci_ms: has_delay.then_some(delay.ci_half_width * 1e3),
            n_censored: report.runs.iter().map(|m| m.n_censored).sum(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// One CSV row per grid row, south first. The header holds cell-center x
/// coordinates; the first column is the row's cell-center y.
pub fn write_losmap_csv(path: impl AsRef<Path>, map: &LosMap) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y_m".to_string()];
    header.extend((0..map.nx).map(|ix| map.cell_center(ix, 0).x.to_string()));
    w.write_record(&header)?;
    for (iy, row) in map.rows().enumerate() {
        let mut rec = vec![map.cell_center(0, iy).y.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &LosTrace) -> Result<()> {
    #[derive(Serialize)]
    struct Sample {
        t: f64,
        p: f64,
    }
    let rows: Vec<Sample> = trace
        .samples
        .iter()
        .enumerate()
        .map(|(k, &p)| Sample {
            t: k as f64 * trace.dt,
            p,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(io_err(path))
}

const PALETTE: [&str; 6] = ["#d62728", "#ff7f0e", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b"];

fn strategy_color(s: StrategyKind) -> &'static str {
    match s {
        StrategyKind::Direct => PALETTE[0],
        StrategyKind::DirectWithStorage => PALETTE[1],
        StrategyKind::Predictive => PALETTE[2],
    }
}

fn strategy_label(s: StrategyKind) -> &'static str {
    match s {
        StrategyKind::Direct => "Direct",
        StrategyKind::DirectWithStorage => "Direct with storage",
        StrategyKind::Predictive => "Predictive",
    }
}

/// Rounded axis step giving roughly `n` intervals over `span`.
fn nice_step(span: f64, n: f64) -> f64 {
    let raw = (span / n).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    mag * if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    }
}

struct Frame {
    w: f64,
    h: f64,
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * (self.w - self.left - self.right)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - self.bottom - (y - self.y.0) / (self.y.1 - self.y.0) * (self.h - self.top - self.bottom)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, x1) = (self.left, self.w - self.right);
        let (y0, y1) = (self.h - self.bottom, self.top);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y0 - y1
        );
        let xs = nice_step(self.x.1 - self.x.0, 6.0);
        let mut v = (self.x.0 / xs).ceil() * xs;
        while v <= self.x.1 + 1e-9 * xs {
            let p = self.px(v);
            let _ = writeln!(
                out,
                r##"<line x1="{p:.1}" y1="{y0}" x2="{p:.1}" y2="{}" stroke="#333"/><text x="{p:.1}" y="{}" text-anchor="middle">{}</text>"##,
                y0 + 5.0,
                y0 + 18.0,
                fmt_tick(v, xs)
            );
            v += xs;
        }
        let ys = nice_step(self.y.1 - self.y.0, 5.0);
        let mut v = (self.y.0 / ys).ceil() * ys;
        while v <= self.y.1 + 1e-9 * ys {
            let p = self.py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{}" y1="{p:.1}" x2="{x1}" y2="{p:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0,
                x0 - 6.0,
                p + 4.0,
                fmt_tick(v, ys)
            );
            v += ys;
        }
        if !title.is_empty() {
            let _ = writeln!(
                out,
                r##"<text x="{}" y="18" text-anchor="middle" font-weight="bold">{title}</text>"##,
                self.w / 2.0
            );
        }
        if !xlabel.is_empty() {
            let _ = writeln!(
                out,
                r##"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"##,
                (x0 + x1) / 2.0,
                self.h - 6.0
            );
        }
        if !ylabel.is_empty() {
            let _ = writeln!(
                out,
                r##"<text transform="translate(14,{}) rotate(-90)" text-anchor="middle">{ylabel}</text>"##,
                (y0 + y1) / 2.0
            );
        }
    }
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.decimals$}")
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Which aggregate observable to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    DropBlockage,
    DropRate,
    MeanDelay,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::DropBlockage, Panel::DropRate, Panel::MeanDelay];

    pub fn file_stem(&self) -> &'static str {
        match self {
            Panel::DropBlockage => "drop_blockage",
            Panel::DropRate => "drop_rate",
            Panel::MeanDelay => "mean_delay",
        }
    }

    fn value(&self, r: &AggregateRow) -> Option<(f64, f64)> {
        match self {
            Panel::DropBlockage => Some((r.drop_blockage, r.drop_blockage_ci)),
            Panel::DropRate => Some((r.drop_rate, r.drop_rate_ci)),
            Panel::MeanDelay => r.mean_delay_ms.zip(r.mean_delay_ci_ms),
        }
    }

    fn labels(&self) -> (&'static str, &'static str) {
        match self {
            Panel::DropBlockage => ("Contents dropped by blockage", "proportion"),
            Panel::DropRate => ("Contents dropped by insufficient rate", "proportion"),
            Panel::MeanDelay => ("Mean acquisition delay", "delay, ms"),
        }
    }
}

/// Metric vs interarrival time, one curve per strategy with CI whiskers.
pub fn metric_svg(rows: &[AggregateRow], panel: Panel) -> String {
    let (w, h) = (560.0, 380.0);
    let points: Vec<(StrategyKind, f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| panel.value(r).map(|(m, ci)| (r.strategy, r.interarrival_ms, m, ci)))
        .collect();
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ymax: f64 = 0.0;
    for &(_, x, m, ci) in &points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymax = ymax.max(m + ci);
    }
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    if xmax <= xmin {
        (xmin, xmax) = (xmin - 1.0, xmax + 1.0);
    }
    if ymax <= 0.0 {
        ymax = if panel == Panel::MeanDelay { 1.0 } else { 0.01 };
    }
    let frame = Frame {
        w,
        h,
        left: 64.0,
        right: 150.0,
        top: 30.0,
        bottom: 44.0,
        x: (xmin, xmax),
        y: (0.0, ymax * 1.08),
    };
    let (title, ylabel) = panel.labels();
    let mut out = svg_open(w, h);
    frame.axes(&mut out, title, "interarrival time, ms", ylabel);

    let mut legend_y = frame.top + 10.0;
    for s in StrategyKind::ALL {
        let mut curve: Vec<_> = points.iter().filter(|p| p.0 == s).collect();
        if curve.is_empty() {
            continue;
        }
        curve.sort_by(|a, b| a.1.total_cmp(&b.1));
        let color = strategy_color(s);
        let path: Vec<String> = curve
            .iter()
            .map(|p| format!("{:.1},{:.1}", frame.px(p.1), frame.py(p.2)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##,
            path.join(" ")
        );
        for p in &curve {
            let (x, y) = (frame.px(p.1), frame.py(p.2));
            let (lo, hi) = (frame.py((p.2 - p.3).max(0.0)), frame.py(p.2 + p.3));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="{color}"/><line x1="{:.1}" y1="{lo:.1}" x2="{:.1}" y2="{lo:.1}" stroke="{color}"/><line x1="{:.1}" y1="{hi:.1}" x2="{:.1}" y2="{hi:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"##,
                x - 4.0,
                x + 4.0,
                x - 4.0,
                x + 4.0
            );
        }
        let lx = w - frame.right + 12.0;
        let _ = writeln!(
            out,
            r##"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"##,
            lx + 18.0,
            lx + 24.0,
            legend_y + 4.0,
            strategy_label(s)
        );
        legend_y += 18.0;
    }
    out.push_str("</svg>\n");
    out
}

/// Writes one plot per observable.
pub fn write_metric_plots(dir: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    for panel in Panel::ALL {
        let path = dir.as_ref().join(format!("{}.svg", panel.file_stem()));
        write_svg(path, &metric_svg(rows, panel))?;
    }
    Ok(())
}

/// Renders the observable plots from an aggregate CSV alone.
pub fn plots_from_aggregate_csv(csv_path: impl AsRef<Path>, dir: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<AggregateRow> = read_rows(csv_path)?;
    write_metric_plots(dir, &rows)
}

/// Grey-scale LoS probability over the floor with obstacle outlines.
pub fn losmap_svg(map: &LosMap, scene: &Scene) -> String {
    let scale = 40.0;
    let (pad, bar) = (30.0, 70.0);
    let (fw, fd) = (scene.floor_w_m, scene.floor_d_m);
    let (w, h) = (fw * scale + 2.0 * pad + bar, fd * scale + 2.0 * pad);
    let x = |v: f64| pad + v * scale;
    let y = |v: f64| pad + (fd - v) * scale;
    let mut out = svg_open(w, h);
    let cell = map.grid_res * scale;
    for iy in 0..map.ny {
        for ix in 0..map.nx {
            let c = map.cell_center(ix, iy);
            let g = (map.get(ix, iy).clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},{g})"/>"##,
                x(c.x) - cell / 2.0,
                y(c.y) - cell / 2.0,
                cell + 0.3,
                cell + 0.3
            );
        }
    }
    for o in &scene.obstacles {
        let f = o.footprint;
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            x(f.min_x),
            y(f.max_y),
            f.width() * scale,
            f.depth() * scale
        );
    }
    for t in scene.trajectories.values() {
        let pts: Vec<String> = t
            .waypoints
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.x), y(p.y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-dasharray="4 3"/>"##,
            pts.join(" ")
        );
    }
    let bs = scene.base_station;
    let _ = writeln!(
        out,
        r##"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="#2ca02c"/>"##,
        x(bs.x),
        y(bs.y) - 12.0,
        x(bs.x) - 8.0,
        y(bs.y),
        x(bs.x) + 8.0,
        y(bs.y)
    );
    let bx = w - bar + 20.0;
    for k in 0..=20 {
        let g = (k as f64 / 20.0 * 255.0).round() as u8;
        let _ = writeln!(
            out,
            r##"<rect x="{bx}" y="{:.1}" width="16" height="{:.1}" fill="rgb({g},{g},{g})"/>"##,
            pad + (20 - k) as f64 * (fd * scale / 21.0),
            fd * scale / 21.0 + 0.5
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}">1</text><text x="{}" y="{}">0</text><text x="{}" y="{}" transform="rotate(90 {} {})">P(LoS)</text>"##,
        bx + 20.0,
        pad + 10.0,
        bx + 20.0,
        pad + fd * scale,
        bx + 40.0,
        pad + fd * scale / 2.0,
        bx + 40.0,
        pad + fd * scale / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// One strip per trace, stacked: LoS probability over time.
pub fn traces_svg(traces: &[(String, &LosTrace)]) -> String {
    let (w, strip, gap) = (720.0, 90.0, 44.0);
    let h = 30.0 + traces.len() as f64 * (strip + gap) + 20.0;
    let mut out = svg_open(w, h);
    let t_end = traces
        .iter()
        .map(|(_, t)| t.samples.len() as f64 * t.dt)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for (i, (label, trace)) in traces.iter().enumerate() {
        let top = 20.0 + i as f64 * (strip + gap);
        let frame = Frame {
            w,
            h: top + strip + gap,
            left: 64.0,
            right: 20.0,
            top,
            bottom: gap,
            x: (0.0, t_end),
            y: (0.0, 1.0),
        };
        frame.axes(&mut out, "", "", "");
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for (k, &p) in trace.samples.iter().enumerate() {
            let _ = write!(
                pts,
                "{:.1},{:.1} {:.1},{:.1} ",
                frame.px(k as f64 * trace.dt),
                frame.py(p),
                frame.px((k + 1) as f64 * trace.dt),
                frame.py(p)
            );
        }
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/><text x="{}" y="{}" font-weight="bold">{label}</text>"##,
            pts.trim_end(),
            frame.left,
            top - 4.0
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" text-anchor="middle">time, s</text>"##,
        w / 2.0,
        h - 4.0
    );
    out.push_str("</svg>\n");
    out
}
