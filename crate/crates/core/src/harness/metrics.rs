//! Tidy metrics rows and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::config::Case;

pub const METRICS_HEADER: [&str; 12] = [
    "scenario_id",
    "case",
    "phase",
    "attack",
    "eps",
    "dp_epsilon",
    "mse",
    "top1_acc",
    "ear_mean",
    "n_samples",
    "seed",
    "wall_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Clean,
    Attacked,
    Defended,
    DefendedAttacked,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Clean => "clean",
            Phase::Attacked => "attacked",
            Phase::Defended => "defended",
            Phase::DefendedAttacked => "defended_attacked",
        }
    }

    pub fn is_attacked(self) -> bool {
        matches!(self, Phase::Attacked | Phase::DefendedAttacked)
    }

    pub fn is_defended(self) -> bool {
        matches!(self, Phase::Defended | Phase::DefendedAttacked)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clean" => Phase::Clean,
            "attacked" => Phase::Attacked,
            "defended" => Phase::Defended,
            "defended_attacked" => Phase::DefendedAttacked,
            _ => return Err(Error::format("metrics CSV", format!("unknown phase `{s}`"))),
        })
    }
}

/// One evaluation of one model under one attack setting.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scenario_id: String,
    pub case: Case,
    pub phase: Phase,
    /// Attack name, `none` for clean rows.
    pub attack: String,
    pub eps: f64,
    /// Accountant ε*; infinite for the non-private case.
    pub dp_epsilon: f64,
    pub mse: f64,
    pub top1_acc: f64,
    pub ear_mean: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format("metrics row", m));
        if !(self.mse >= 0.0) {
            return bad(format!("mse = {}", self.mse));
        }
        if !(0.0..=1.0).contains(&self.top1_acc) {
            return bad(format!("top1_acc = {}", self.top1_acc));
        }
        if !(self.ear_mean >= 0.0) {
            return bad(format!("ear_mean = {}", self.ear_mean));
        }
        Ok(())
    }

    fn fields(&self) -> [String; 12] {
        [
            self.scenario_id.clone(),
            self.case.name().to_string(),
            self.phase.name().to_string(),
            self.attack.clone(),
            fmt_f64(self.eps),
            fmt_f64(self.dp_epsilon),
            fmt_f64(self.mse),
            fmt_f64(self.top1_acc),
            fmt_f64(self.ear_mean),
            self.n_samples.to_string(),
            self.seed.to_string(),
            fmt_f64(self.wall_time_s),
        ]
    }
}

/// Shortest round-trip decimal; infinity is written as `inf`.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::format("metrics CSV", format!("column {field}: `{s}` is not a number")))
}

fn parse_int<T: FromStr>(field: &str, s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::format("metrics CSV", format!("column {field}: `{s}` is not an integer")))
}

pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io("metrics CSV", e))?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::format(
            "metrics CSV",
            format!("header must be `{}`", METRICS_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| &rec[i];
        let case = match f(1) {
            "C1" => Case::C1,
            "C2" => Case::C2,
            s => return Err(Error::format("metrics CSV", format!("unknown case `{s}`"))),
        };
        let row = MetricsRecord {
            scenario_id: f(0).to_string(),
            case,
            phase: f(2).parse()?,
            attack: f(3).to_string(),
            eps: parse_f64("eps", f(4))?,
            dp_epsilon: parse_f64("dp_epsilon", f(5))?,
            mse: parse_f64("mse", f(6))?,
            top1_acc: parse_f64("top1_acc", f(7))?,
            ear_mean: parse_f64("ear_mean", f(8))?,
            n_samples: parse_int("n_samples", f(9))?,
            seed: parse_int("seed", f(10))?,
            wall_time_s: parse_f64("wall_time_s", f(11))?,
        };
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}
