//! Long-format plot data (`x,series,y`) derived from a metrics CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::metrics::{fmt_f64, read_metrics, MetricsRecord, Phase};

pub const PLOT_HEADER: [&str; 3] = ["x", "series", "y"];

pub const EAR_VS_EPS: &str = "ear_vs_eps.csv";
pub const MSE_VS_EPS: &str = "mse_vs_eps.csv";
pub const TRADEOFF_SURFACE: &str = "tradeoff_surface.csv";
pub const DEFENSE_SCATTER: &str = "defense_scatter.csv";

/// One plot point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub series: String,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub ear_vs_eps: Vec<Point>,
    pub mse_vs_eps: Vec<Point>,
    pub tradeoff_surface: Vec<Point>,
    pub defense_scatter: Vec<Point>,
}

fn model_label(r: &MetricsRecord) -> String {
    let stage = if r.phase.is_defended() { "defended" } else { "undefended" };
    format!("{}/{}/dp_eps={}/{}", r.scenario_id, r.case.name(), fmt_f64(r.dp_epsilon), stage)
}

/// Builds all four plot tables. Duplicate rows (the non-private rows that
/// a tradeoff sweep repeats per σ) contribute once.
pub fn build_report(rows: &[MetricsRecord]) -> Report {
    let mut seen = std::collections::HashSet::new();
    let rows: Vec<&MetricsRecord> = rows
        .iter()
        .filter(|r| {
            seen.insert((
                r.scenario_id.clone(),
                r.case,
                r.phase,
                r.attack.clone(),
                r.eps.to_bits(),
                r.dp_epsilon.to_bits(),
            ))
        })
        .collect();

    let mut report = Report::default();
    for r in &rows {
        // The clean row anchors every attack curve at ε = 0.
        let attacks: Vec<String> = if r.phase.is_attacked() {
            vec![r.attack.clone()]
        } else {
            let mut a: Vec<String> = rows
                .iter()
                .filter(|o| o.phase.is_attacked() && model_label(o) == model_label(r))
                .map(|o| o.attack.clone())
                .collect();
            a.sort();
            a.dedup();
            a
        };
        for attack in attacks {
            let series = format!("{}/{}", model_label(r), attack);
            report.ear_vs_eps.push(Point {
                x: r.eps,
                series: series.clone(),
                y: r.ear_mean,
            });
            report.mse_vs_eps.push(Point {
                x: r.eps,
                series,
                y: r.mse,
            });
        }
        let stage = if r.phase.is_defended() { "defended" } else { "undefended" };
        report.tradeoff_surface.push(Point {
            x: r.dp_epsilon,
            series: format!("{}/{}/{}/{}/eps={}", r.scenario_id, r.case.name(), stage, r.attack, fmt_f64(r.eps)),
            y: r.mse,
        });
    }

    // Mean attacked MSE before (x) and after (y) adversarial training.
    let mut scatter: BTreeMap<(String, &'static str), ([f64; 2], [usize; 2])> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.phase.is_attacked()) {
        let e = scatter.entry((r.scenario_id.clone(), r.case.name())).or_default();
        let i = usize::from(r.phase == Phase::DefendedAttacked);
        e.0[i] += r.mse;
        e.1[i] += 1;
    }
    for ((scenario, case), (sum, n)) in scatter {
        if n[0] > 0 && n[1] > 0 {
            report.defense_scatter.push(Point {
                x: sum[0] / n[0] as f64,
                series: format!("{scenario}/{case}"),
                y: sum[1] / n[1] as f64,
            });
        }
    }
    report
}

pub fn write_points<W: Write>(out: W, points: &[Point]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLOT_HEADER)?;
    for p in points {
        w.write_record([fmt_f64(p.x), p.series.clone(), fmt_f64(p.y)])?;
    }
    w.flush().map_err(|e| Error::io("plot CSV", e))
}

/// Writes the four plot files into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, points) in [
        (EAR_VS_EPS, &report.ear_vs_eps),
        (MSE_VS_EPS, &report.mse_vs_eps),
        (TRADEOFF_SURFACE, &report.tradeoff_surface),
        (DEFENSE_SCATTER, &report.defense_scatter),
    ] {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_points(std::io::BufWriter::new(file), points)?;
    }
    Ok(())
}

/// `report`: reads a metrics CSV and writes the plot files into `dir`.
pub fn report_to(metrics: &Path, dir: &Path) -> Result<Report> {
    let file = std::fs::File::open(metrics).map_err(|e| Error::io(metrics, e))?;
    let rows = read_metrics(std::io::BufReader::new(file))?;
    let report = build_report(&rows);
    write_report(&report, dir)?;
    Ok(report)
}
