//! Text, CSV and JSON renderings of analysis, plan, cost and sweep results.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::alloc::{ArchitecturePlan, LayerAllocation};
use crate::cost::{CostReport, ResourceVector, SweepRow};
use crate::error::{Error, Result};
use crate::netspec::{validate_network, NetworkSpec};
use crate::rate::{Flow, LayerRateInfo};
use crate::sim::{measure_utilization, SimStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// A rectangular table of preformatted cells.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Lines printed under the table in text form.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn row<S: ToString>(&mut self, cells: impl IntoIterator<Item = S>) {
        let row: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Cell by row index and header name.
    pub fn cell(&self, row: usize, header: &str) -> Option<&str> {
        let c = self.headers.iter().position(|h| h == header)?;
        self.rows.get(row).map(|r| r[c].as_str())
    }

    /// Aligned columns: the first left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut out = line(&self.headers);
        let total: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
        }
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let esc = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        let mut out = String::new();
        for r in std::iter::once(&self.headers).chain(&self.rows) {
            out.push_str(&r.iter().map(esc).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Serialize `value` as pretty JSON or render `table`.
pub fn render<T: Serialize>(format: Format, table: &Table, value: &T) -> String {
    match format {
        Format::Text => table.to_text(),
        Format::Csv => table.to_csv(),
        Format::Json => serde_json::to_string_pretty(value).expect("report serializes") + "\n",
    }
}

fn flow_tag(f: Flow) -> &'static str {
    match f {
        Flow::Continuous => "continuous",
        Flow::RestoredByInterleaving => "interleaved",
        Flow::Stalled => "stalled",
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeRow {
    pub name: String,
    pub kind: crate::netspec::LayerKind,
    pub f: u64,
    pub k: u64,
    pub s: u64,
    pub p: u64,
    pub d_in: u64,
    pub d_out: u64,
    pub configs: u64,
    #[serde(flatten)]
    pub rate: LayerRateInfo,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub layers: Vec<AnalyzeRow>,
    pub warnings: Vec<String>,
}

/// Per-layer geometry, configurations and rates, with stall and validation
/// warnings.
pub fn analyze(spec: &NetworkSpec, plan: &ArchitecturePlan) -> (Table, AnalyzeReport) {
    let mut t = Table::new(["layer", "kind", "f", "k", "s", "p", "d_in", "d_out", "C", "r_in", "r_out", "flow", "util"]);
    let mut rows = Vec::new();
    let mut warnings: Vec<String> = validate_network(spec).iter().map(|d| d.to_string()).collect();
    for lp in &plan.layers {
        let l = &lp.layer;
        let r = &lp.rate;
        t.row([
            lp.name.clone(),
            l.kind.tag().to_string(),
            l.f.to_string(),
            l.k.to_string(),
            l.s.to_string(),
            l.p.to_string(),
            l.d_in.to_string(),
            l.d_out.to_string(),
            lp.alloc.configs().to_string(),
            r.r_in.display_rounded(),
            r.r_out.display_rounded(),
            flow_tag(r.flow).to_string(),
            ratio_text(r.utilization),
        ]);
        if r.flow == Flow::Stalled {
            warnings.push(format!(
                "{}: stalled, utilization {} (configurations capped at {})",
                lp.name,
                ratio_text(r.utilization),
                lp.alloc.configs()
            ));
        }
        warnings.extend(lp.warnings.iter().map(|w| format!("{}: {w}", lp.name)));
        rows.push(AnalyzeRow {
            name: lp.name.clone(),
            kind: l.kind,
            f: l.f,
            k: l.k,
            s: l.s,
            p: l.p,
            d_in: l.d_in,
            d_out: l.d_out,
            configs: lp.alloc.configs(),
            rate: r.clone(),
        });
    }
    t.notes = warnings.iter().map(|w| format!("warning: {w}")).collect();
    (t, AnalyzeReport { layers: rows, warnings })
}

fn ratio_text(r: num_rational::Ratio<u64>) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Unit allocation per layer.
pub fn plan_table(plan: &ArchitecturePlan) -> Table {
    let mut t = Table::new(["layer", "unit", "count", "C", "I", "lanes", "j", "h", "a", "acc_bits", "cycles/map"]);
    for lp in &plan.layers {
        let dash = || "-".to_string();
        let (unit, count, i, lanes, j, h, a) = match &lp.alloc {
            LayerAllocation::Conv(c) | LayerAllocation::Depthwise(c) => (
                "KPU",
                c.n_kpu,
                c.interleave.to_string(),
                c.lanes.to_string(),
                dash(),
                dash(),
                dash(),
            ),
            LayerAllocation::Pool(p) => ("PPU", p.n_ppu, dash(), p.n_ppu.to_string(), dash(), dash(), dash()),
            LayerAllocation::Fcu(f) => (
                "FCU",
                f.n_fcu,
                dash(),
                f.lanes.to_string(),
                f.j.to_string(),
                f.h.to_string(),
                f.a.to_string(),
            ),
            LayerAllocation::Residual { lanes } => ("ADD", *lanes, dash(), lanes.to_string(), dash(), dash(), dash()),
        };
        t.row([
            lp.name.clone(),
            unit.to_string(),
            count.to_string(),
            lp.alloc.configs().to_string(),
            i,
            lanes,
            j,
            h,
            a,
            lp.widths.accumulator_bits.to_string(),
            ratio_text(lp.cycles_per_map),
        ]);
    }
    let u = plan.totals();
    t.notes.push(format!(
        "total: {} KPU, {} FCU, {} PPU; {} cycles per inference",
        u.kpu,
        u.fcu,
        u.ppu,
        ratio_text(plan.cycles_per_inference)
    ));
    t
}

fn resource_cells(v: &ResourceVector) -> [String; 6] {
    [v.weights, v.adders, v.multipliers, v.registers, v.mux2, v.max_units].map(|n| n.to_string())
}

/// Per-layer resources with a sum row; `r` is the layer's output rate.
pub fn cost_table(report: &CostReport) -> Table {
    let mut t = Table::new([
        "layer", "r", "C", "weights", "add", "mul", "reg", "mux", "MAX", "KPU", "FCU", "PPU",
    ]);
    for l in &report.layers {
        let mut row = vec![l.name.clone(), l.r_out.display_rounded(), l.configs.to_string()];
        row.extend(resource_cells(&l.resources));
        row.extend([l.kpu, l.fcu, l.ppu].map(|n| n.to_string()));
        t.row(row);
    }
    let mut sum = vec!["Sum".to_string(), String::new(), String::new()];
    sum.extend(resource_cells(&report.total));
    sum.extend([report.kpu, report.fcu, report.ppu].map(|n| n.to_string()));
    t.row(sum);
    t
}

/// One row per rate; stalled rates are marked with `*`.
pub fn sweep_table(rows: &[SweepRow], with_fcus: bool) -> Table {
    let mut headers = vec!["r", "add", "mul", "reg", "mux", "KPUs"];
    if with_fcus {
        headers.push("FCUs");
    }
    let mut t = Table::new(headers);
    for r in rows {
        let v = &r.resources;
        let mut cells = vec![
            format!("{}{}", r.rate, if r.stalled { "*" } else { "" }),
            v.adders.to_string(),
            v.multipliers.to_string(),
            v.registers.to_string(),
            v.mux2.to_string(),
            r.kpus.to_string(),
        ];
        if with_fcus {
            cells.push(r.fcus.to_string());
        }
        t.row(cells);
    }
    if rows.iter().any(|r| r.stalled) {
        t.notes.push("* stalled: utilization below 1".into());
    }
    t
}

/// Per-layer simulation statistics.
pub fn sim_table(stats: &SimStats) -> Table {
    let mut t = Table::new(["layer", "beats", "beats/map", "first_out", "fifo_max", "util"]);
    for (l, u) in stats.layers.iter().zip(measure_utilization(stats)) {
        t.row([
            l.name.clone(),
            l.beats.to_string(),
            l.beats_per_map.to_string(),
            l.first_output.map_or("-".into(), |c| c.to_string()),
            l.fifo_max_occupancy.to_string(),
            u.map_or("-".into(), ratio_text),
        ]);
    }
    t.notes.push(format!(
        "{} maps in {} cycles; first output at {}; {} cycles per inference",
        stats.maps,
        stats.total_cycles,
        stats.first_output_latency.map_or("-".into(), |c| c.to_string()),
        ratio_text(stats.cycles_per_inference)
    ));
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_is_aligned() {
        let mut t = Table::new(["a", "bb"]);
        t.row(["xyz", "1"]);
        assert_eq!(t.to_text(), "a    bb\n-------\nxyz   1\n");
    }

    #[test]
    fn csv_quotes_commas() {
        let mut t = Table::new(["a"]);
        t.row(["1,2"]);
        assert_eq!(t.to_csv(), "a\n\"1,2\"\n");
    }

    #[test]
    fn format_parses() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
