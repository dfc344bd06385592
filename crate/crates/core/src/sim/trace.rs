//! Per-cycle signal traces and single-unit timing drivers.

use std::fmt;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::rate::{output_valid, pad_tuple};
use crate::sim::fcu::{Aggregator, FcuUnit};
use crate::sim::kpu::KpuUnit;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum TraceValue {
    Int(i64),
    Tuple(Vec<Option<i64>>),
}

impl TraceValue {
    pub fn tuple(values: impl IntoIterator<Item = i64>) -> Self {
        TraceValue::Tuple(values.into_iter().map(Some).collect())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            TraceValue::Int(v) => Some(*v),
            TraceValue::Tuple(_) => None,
        }
    }
}

impl fmt::Display for TraceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceValue::Int(v) => write!(f, "{v}"),
            TraceValue::Tuple(vs) => {
                write!(f, "(")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    match v {
                        Some(v) => write!(f, "{v}")?,
                        None => write!(f, "-")?,
                    }
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub cycle: u64,
    /// One entry per column; `None` means the signal is invalid.
    pub values: Vec<Option<TraceValue>>,
}

/// Signal values per clock cycle. Absent entries are invalid and render as
/// `-`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CycleTrace {
    pub columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub signal: String,
    pub value: Option<TraceValue>,
    pub valid: bool,
}

impl CycleTrace {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        CycleTrace {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cycle: u64, values: Vec<Option<TraceValue>>) {
        assert_eq!(values.len(), self.columns.len(), "one value per column");
        self.rows.push(TraceRow { cycle, values });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, cycle: u64, name: &str) -> Option<&TraceValue> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .find(|r| r.cycle == cycle)
            .and_then(|r| r.values[c].as_ref())
    }

    /// Cycles at which `name` is valid.
    pub fn valid_cycles(&self, name: &str) -> Vec<u64> {
        match self.column(name) {
            Some(c) => self
                .rows
                .iter()
                .filter(|r| r.values[c].is_some())
                .map(|r| r.cycle)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Keep only the named columns (and the cycle).
    pub fn select(&self, names: &[&str]) -> Result<CycleTrace> {
        let idx = names
            .iter()
            .map(|n| {
                self.column(n)
                    .ok_or_else(|| Error::Config(format!("unknown trace signal {n:?}; have {:?}", self.columns)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = CycleTrace::new(names.iter().copied());
        for r in &self.rows {
            out.push(r.cycle, idx.iter().map(|&i| r.values[i].clone()).collect());
        }
        Ok(out)
    }

    /// Aligned columns with `t` first, like the timing tables.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut head = vec!["t".to_string()];
        head.extend(self.columns.iter().cloned());
        cells.push(head);
        for r in &self.rows {
            let mut line = vec![r.cycle.to_string()];
            line.extend(
                r.values
                    .iter()
                    .map(|v| v.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())),
            );
            cells.push(line);
        }
        let widths: Vec<usize> = (0..=self.columns.len())
            .map(|c| cells.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in cells {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.rows
            .iter()
            .flat_map(|r| {
                self.columns.iter().zip(&r.values).map(move |(c, v)| TraceEvent {
                    cycle: r.cycle,
                    signal: c.clone(),
                    value: v.clone(),
                    valid: v.is_some(),
                })
            })
            .collect()
    }

    /// JSON array of `{cycle, signal, value, valid}` events.
    pub fn to_json(&self) -> String {
        let events: Vec<_> = self
            .events()
            .into_iter()
            .map(|e| json!({"cycle": e.cycle, "signal": e.signal, "value": e.value, "valid": e.valid}))
            .collect();
        serde_json::to_string_pretty(&events).expect("trace serializes")
    }
}

/// Geometry and data for a single-KPU trace.
#[derive(Clone, Debug)]
pub struct KpuTraceSetup {
    pub f: usize,
    pub k: usize,
    pub p: usize,
    /// `k·k` row-major weights.
    pub weights: Vec<i64>,
    /// Pixels of each map, row-major.
    pub maps: Vec<Vec<i64>>,
}

/// Names of the traced tap columns: first and last tap of every row, plus
/// the first tap of the last row (`a11, a13, a21, a23, a31` for `k=3`).
pub fn kpu_tap_names(k: usize) -> Vec<(String, usize, usize)> {
    let mut v = Vec::new();
    for i in 0..k {
        v.push((format!("a{}{}", i + 1, 1), i, 0));
        if i + 1 < k && k > 1 {
            v.push((format!("a{}{}", i + 1, k), i, k - 1));
        }
    }
    v
}

/// Run one KPU over one or more maps with implicit padding, recording `x`,
/// `pad` (only for `p > 0`), the taps and `y`. Tap and output entries are
/// valid only when the window they belong to is.
pub fn trace_kpu(setup: &KpuTraceSetup) -> Result<CycleTrace> {
    let KpuTraceSetup { f, k, p, .. } = *setup;
    if setup.weights.len() != k * k {
        return Err(Error::Shape(format!("{} weights for a {k}x{k} kernel", setup.weights.len())));
    }
    if 2 * p > k.saturating_sub(1) {
        return Err(Error::Config(format!("padding {p} too large for kernel {k}")));
    }
    let fu = f as u64;
    let gap = p * f + p;
    let period = f * f + gap;
    let maps = setup.maps.len();
    let total = maps * period + gap;
    let taps = kpu_tap_names(k);
    let mut cols = vec!["x".to_string()];
    if p > 0 {
        cols.push("pad".into());
    }
    cols.extend(taps.iter().map(|t| t.0.clone()));
    cols.push("y".into());
    let mut trace = CycleTrace::new(cols);
    let mut kpu = KpuUnit::new(f, k, p, 1, setup.weights.clone());
    let window_valid = |w: isize| -> Result<bool> {
        if w < 0 {
            return Ok(false);
        }
        let (m, n) = (w as usize / period, w as usize % period);
        Ok(m < maps && n < f * f && output_valid(n as u64, fu, k as u64, 1, p as u64)?)
    };
    for t in 0..total {
        let (m, n) = (t / period, t % period);
        let pixel = (m < maps && n >= gap).then(|| n - gap);
        let (x, col) = match pixel {
            Some(px) => {
                let map = &setup.maps[m];
                if map.len() != f * f {
                    return Err(Error::Shape(format!("map {m} has {} pixels, expected {}", map.len(), f * f)));
                }
                (map[px], Some(px % f))
            }
            None => (0, None),
        };
        let y = kpu.step(x, col, 0);
        let mut row = vec![Some(TraceValue::Int(x))];
        if p > 0 {
            row.push(col.map(|c| TraceValue::tuple(pad_tuple(c as u64, fu, k as u64, p as u64).into_iter().map(i64::from))));
        }
        for (_, i, j) in &taps {
            let w = t as isize - (i * f + j) as isize;
            row.push(window_valid(w)?.then(|| TraceValue::Int(kpu.tap(*i, *j))));
        }
        let w = t as isize - ((k - 1) * (f + 1)) as isize;
        row.push(window_valid(w)?.then_some(TraceValue::Int(y)));
        trace.push(t as u64, row);
    }
    Ok(trace)
}

/// Run one FCU with batches presented at the given cycles. Records the index
/// of the first held input `n`, the configuration `i`, the buffer read `q`
/// and the output `y`.
pub fn trace_fcu(j: usize, h: usize, inputs: &[i64], weights: Vec<i64>, load_cycles: &[u64]) -> Result<CycleTrace> {
    if !inputs.len().is_multiple_of(j) || load_cycles.len() != inputs.len() / j {
        return Err(Error::Config("one load cycle per batch of j inputs".into()));
    }
    let mut fcu = FcuUnit::new(j, h, inputs.len(), weights);
    let mut trace = CycleTrace::new(["n", "i", "q", "y"]);
    let end = load_cycles.last().copied().unwrap_or(0) + h as u64;
    let mut next = 0;
    let mut held_from = None;
    for t in 0..end {
        let load = if next < load_cycles.len() && load_cycles[next] == t {
            if !fcu.idle() {
                return Err(Error::Config(format!("batch {next} presented at {t} while the FCU is busy")));
            }
            held_from = Some(next * j);
            next += 1;
            Some(&inputs[(next - 1) * j..next * j])
        } else {
            None
        };
        let beat = fcu.step(load);
        trace.push(
            t,
            vec![
                beat.and(held_from).map(|n| TraceValue::Int(n as i64)),
                beat.map(|b| TraceValue::Int(b.cfg as i64)),
                beat.map(|b| TraceValue::Int(b.read.unwrap_or(0))),
                beat.and_then(|b| b.y).map(TraceValue::Int),
            ],
        );
    }
    Ok(trace)
}

/// One input per cycle through an aggregator of width `j` (or straight into
/// the FCU when `j = 1`). Records the aggregator register `x`, the
/// configuration `i`, the buffer read `q` and `y`.
pub fn trace_fcu_serial(j: usize, h: usize, inputs: &[i64], weights: Vec<i64>) -> Result<CycleTrace> {
    if !inputs.len().is_multiple_of(j) {
        return Err(Error::Config(format!("j={j} does not divide {} inputs", inputs.len())));
    }
    let mut fcu = FcuUnit::new(j, h, inputs.len(), weights);
    let mut agg = Aggregator::new(j);
    let mut trace = CycleTrace::new(["x", "i", "q", "y"]);
    let mut fed = 0;
    let mut done = 0;
    let outputs = h;
    let mut t = 0u64;
    while done < outputs {
        let mut load = None;
        if j == 1 {
            if fed < inputs.len() && fcu.idle() {
                load = Some(vec![inputs[fed]]);
                fed += 1;
            }
        } else if agg.full() && fcu.idle() {
            load = Some(agg.take());
        }
        let waiting = agg.contents();
        let beat = fcu.step(load.as_deref());
        // the held batch once the FCU runs, the aggregator register before
        let shown = match (beat, j) {
            (Some(_), 1) => Some(TraceValue::Int(fcu.held()[0])),
            (Some(_), _) => Some(TraceValue::tuple(fcu.held().iter().copied())),
            (None, 1) => None,
            (None, _) => Some(TraceValue::Tuple(waiting)),
        };
        if j > 1 && fed < inputs.len() && !agg.full() {
            agg.push(inputs[fed]);
            fed += 1;
        }
        if beat.and_then(|b| b.y).is_some() {
            done += 1;
        }
        trace.push(
            t,
            vec![
                shown,
                beat.map(|b| TraceValue::Int(b.cfg as i64)),
                beat.map(|b| TraceValue::Int(b.read.unwrap_or(0))),
                beat.and_then(|b| b.y).map(TraceValue::Int),
            ],
        );
        t += 1;
        if t > 1_000_000 {
            return Err(Error::Deadlock(t));
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_names_for_k3() {
        let names: Vec<String> = kpu_tap_names(3).into_iter().map(|t| t.0).collect();
        assert_eq!(names, ["a11", "a13", "a21", "a23", "a31"]);
    }

    #[test]
    fn text_renders_invalid_as_dash() {
        let mut t = CycleTrace::new(["y"]);
        t.push(0, vec![None]);
        t.push(1, vec![Some(TraceValue::Int(4))]);
        assert_eq!(t.to_text(), "t  y\n0  -\n1  4\n");
        assert_eq!(t.valid_cycles("y"), vec![1]);
    }

    #[test]
    fn tuple_display() {
        let v = TraceValue::Tuple(vec![None, Some(0), Some(1)]);
        assert_eq!(v.to_string(), "(-,0,1)");
    }

    #[test]
    fn events_carry_validity() {
        let mut t = CycleTrace::new(["a", "b"]);
        t.push(3, vec![Some(TraceValue::Int(1)), None]);
        let ev = t.events();
        assert_eq!(ev.len(), 2);
        assert!(ev[0].valid && !ev[1].valid);
        assert!(t.to_json().contains("\"valid\": false"));
    }
}
