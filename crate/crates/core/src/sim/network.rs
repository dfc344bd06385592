//! Whole-network simulation.
//!
//! Every layer is a stage with a controller and its units. Stages exchange
//! tokens keyed by `(map, pixel, channel)` through FIFOs with one cycle of
//! latency. A controller fires a beat only when every token that beat needs
//! has arrived; units are clock-enabled and hold their state otherwise.
//!
//! KPU and PPU layers walk a stream of `f² + Z` positions per map, where the
//! `Z = p·f + p` leading positions carry implicit zero padding shared with
//! the previous map. Each position takes `G·I` beats: `G` channels per lane
//! times `I` filter slots.

use std::collections::HashMap;

use num_rational::Ratio;
use serde::Serialize;

use crate::alloc::{padding_gap, ArchitecturePlan, LayerAllocation, LayerPlan};
use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerSpec, QuantFormat};
use crate::oracle::{finish_value, value_range, LayerWeights, NetworkWeights, Tensor3};
use crate::rate::output_valid;
use crate::sim::fcu::{Aggregator, FcuUnit};
use crate::sim::kpu::{KpuUnit, PpuUnit};
use crate::sim::trace::{CycleTrace, TraceValue};

type Key = (u32, u32, u32);

/// Tokens waiting between two stages.
#[derive(Clone, Debug, Default)]
struct Fifo {
    /// Value and the first cycle it may be consumed.
    slots: HashMap<Key, (i64, u64)>,
    max_occupancy: usize,
}

impl Fifo {
    fn put(&mut self, key: Key, value: i64, ready_at: u64) {
        self.slots.insert(key, (value, ready_at));
        self.max_occupancy = self.max_occupancy.max(self.slots.len());
    }

    fn ready(&self, key: &Key, t: u64) -> bool {
        self.slots.get(key).is_some_and(|&(_, c)| c <= t)
    }

    fn take(&mut self, key: &Key) -> i64 {
        self.slots.remove(key).expect("token checked ready").0
    }
}

#[derive(Clone, Copy, Debug)]
struct Token {
    key: Key,
    value: i64,
}

/// Per-layer simulation statistics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LayerStats {
    pub name: String,
    /// Clock-enabled beats (KPU/PPU) or busy cycles (FCU, residual).
    pub beats: u64,
    /// Work of one map in the same unit as `beats`.
    pub beats_per_map: u64,
    /// Cycle at which each map's first beat fired.
    pub map_starts: Vec<u64>,
    pub fifo_max_occupancy: usize,
    pub first_output: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SimStats {
    pub maps: usize,
    pub total_cycles: u64,
    pub first_output_latency: Option<u64>,
    /// Cycles between the last two inferences at the output; the total when
    /// only one map was run.
    pub cycles_per_inference: Ratio<u64>,
    pub layers: Vec<LayerStats>,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub outputs: Vec<Tensor3>,
    pub trace: CycleTrace,
    pub stats: SimStats,
}

#[derive(Clone, Debug, Default)]
pub struct SimOptions {
    /// Signals to record, e.g. `C1.y`; `y` or `*.y` records every layer.
    pub trace: Vec<String>,
    /// Give up after this many cycles.
    pub max_cycles: u64,
}

impl SimOptions {
    pub fn new() -> Self {
        SimOptions {
            trace: Vec::new(),
            max_cycles: 50_000_000,
        }
    }

    pub fn with_trace<S: Into<String>>(mut self, signals: impl IntoIterator<Item = S>) -> Self {
        self.trace = signals.into_iter().map(Into::into).collect();
        self
    }
}

/// What one stage did in a cycle.
#[derive(Default)]
struct StepOut {
    tokens: Vec<Token>,
    worked: bool,
    x: Vec<i64>,
}

struct WidthCheck {
    lo: i64,
    hi: i64,
    bits: u32,
    signal: String,
}

impl WidthCheck {
    fn new(name: &str, bits: u32) -> Self {
        let (lo, hi) = if bits >= 64 { (i64::MIN, i64::MAX) } else { value_range(bits, true) };
        WidthCheck {
            lo,
            hi,
            bits,
            signal: format!("{name}.acc"),
        }
    }

    fn check(&self, v: i64) -> Result<()> {
        if v < self.lo || v > self.hi {
            return Err(Error::WidthOverflow {
                signal: self.signal.clone(),
                value: v,
                bits: self.bits,
            });
        }
        Ok(())
    }
}

enum Units {
    Conv { kpus: Vec<KpuUnit>, groups: usize, acc: Vec<i64> },
    Depthwise { kpus: Vec<KpuUnit> },
    Pool { ppus: Vec<PpuUnit> },
}

/// KPU/PPU stage.
struct WindowStage {
    layer: LayerSpec,
    units: Units,
    bias: Vec<i64>,
    lanes: usize,
    /// Channels per lane.
    g: usize,
    /// Filter slots per channel.
    i_slots: usize,
    gap: usize,
    period: usize,
    maps: usize,
    pos: usize,
    ch_local: usize,
    slot: usize,
    x: Vec<i64>,
    width: WidthCheck,
}

impl WindowStage {
    fn new(lp: &LayerPlan, w: &LayerWeights, maps: usize) -> Result<Self> {
        let l = lp.layer.clone();
        let (f, k, p) = (l.f as usize, l.k as usize, l.p as usize);
        if 2 * p > k - 1 {
            return Err(Error::Config(format!(
                "{}: padding {p} wider than (k-1)/2 is not supported by the stream model",
                l.name
            )));
        }
        let d_in = l.d_in as usize;
        let d_out = l.d_out as usize;
        let (lanes, i_slots) = match &lp.alloc {
            LayerAllocation::Conv(a) | LayerAllocation::Depthwise(a) => (a.lanes as usize, a.interleave as usize),
            LayerAllocation::Pool(a) => (a.n_ppu as usize, 1),
            other => return Err(Error::Config(format!("{}: {other:?} is not a window layer", l.name))),
        };
        let g = d_in.div_ceil(lanes);
        let configs = g * i_slots;
        let kk = k * k;
        let units = match l.kind {
            LayerKind::Conv => {
                let groups = d_out.div_ceil(i_slots);
                let mut kpus = Vec::with_capacity(lanes * groups);
                for lane in 0..lanes {
                    for q in 0..groups {
                        let mut wk = vec![0; configs * kk];
                        for cl in 0..g {
                            for slot in 0..i_slots {
                                let (ch, o) = (lane * g + cl, q * i_slots + slot);
                                if ch < d_in && o < d_out {
                                    let src = (o * d_in + ch) * kk;
                                    let dst = (cl * i_slots + slot) * kk;
                                    wk[dst..dst + kk].copy_from_slice(&w.kernel[src..src + kk]);
                                }
                            }
                        }
                        kpus.push(KpuUnit::new(f, k, p, configs, wk));
                    }
                }
                Units::Conv {
                    kpus,
                    groups,
                    acc: vec![0; groups * i_slots],
                }
            }
            LayerKind::DepthwiseConv => {
                let kpus = (0..lanes)
                    .map(|lane| {
                        let mut wk = vec![0; configs * kk];
                        for cl in 0..g {
                            let ch = lane * g + cl;
                            if ch < d_in {
                                let dst = cl * kk;
                                match l.avg {
                                    Some(c) => wk[dst..dst + kk].fill(c.multiplier),
                                    None => wk[dst..dst + kk].copy_from_slice(&w.kernel[ch * kk..(ch + 1) * kk]),
                                }
                            }
                        }
                        KpuUnit::new(f, k, p, configs, wk)
                    })
                    .collect();
                Units::Depthwise { kpus }
            }
            LayerKind::MaxPool => {
                if p != 0 {
                    return Err(Error::Config(format!("{}: max pooling with padding", l.name)));
                }
                Units::Pool {
                    ppus: (0..lanes).map(|_| PpuUnit::new(f, k, configs)).collect(),
                }
            }
            other => return Err(Error::Config(format!("{}: {other:?} is not a window layer", l.name))),
        };
        let gap = padding_gap(&l) as usize;
        Ok(WindowStage {
            width: WidthCheck::new(&l.name, lp.widths.accumulator_bits),
            bias: w.bias.clone(),
            units,
            lanes,
            g,
            i_slots,
            gap,
            period: f * f + gap,
            maps,
            pos: 0,
            ch_local: 0,
            slot: 0,
            x: vec![0; lanes],
            layer: l,
        })
    }

    fn beats_per_map(&self) -> u64 {
        (self.period * self.g * self.i_slots) as u64
    }

    fn done(&self) -> bool {
        self.pos >= self.maps * self.period + self.gap
    }

    fn map_start(&self) -> Option<usize> {
        (self.pos.is_multiple_of(self.period) && self.ch_local == 0 && self.slot == 0 && self.pos / self.period < self.maps)
            .then_some(self.pos / self.period)
    }

    fn step(&mut self, t: u64, fifo: &mut Fifo, quant: &QuantFormat) -> Result<StepOut> {
        let mut out = StepOut::default();
        if self.done() {
            return Ok(out);
        }
        let l = &self.layer;
        let (f, k, s, p) = (l.f as usize, l.k as usize, l.s as usize, l.p as usize);
        let d_in = l.d_in as usize;
        let d_out = l.d_out as usize;
        let (m, n) = (self.pos / self.period, self.pos % self.period);
        let pixel = (m < self.maps && n >= self.gap).then(|| n - self.gap);
        if self.slot == 0 {
            match pixel {
                Some(px) => {
                    let keys: Vec<Option<Key>> = (0..self.lanes)
                        .map(|lane| {
                            let ch = lane * self.g + self.ch_local;
                            (ch < d_in).then_some((m as u32, px as u32, ch as u32))
                        })
                        .collect();
                    if keys.iter().flatten().any(|key| !fifo.ready(key, t)) {
                        return Ok(out);
                    }
                    for (lane, key) in keys.iter().enumerate() {
                        self.x[lane] = key.map_or(0, |key| fifo.take(&key));
                    }
                }
                None => self.x.fill(0),
            }
        }
        out.worked = true;
        out.x = self.x.clone();
        let col = pixel.map(|px| px % f);
        let cfg = self.ch_local * self.i_slots + self.slot;

        // window completed by this beat
        let lat = (k - 1) * (f + 1);
        let window = self.pos.checked_sub(lat).and_then(|w| {
            let (wm, wn) = (w / self.period, w % self.period);
            let valid = wm < self.maps
                && wn < f * f
                && output_valid(wn as u64, l.f, l.k, l.s, l.p).unwrap_or(false);
            valid.then(|| {
                let (r, c) = (wn / f, wn % f);
                (wm as u32, ((r / s) * l.f_out() as usize + c / s) as u32)
            })
        });
        let _ = p;
        let last_channel = self.ch_local + 1 == self.g;
        match &mut self.units {
            Units::Conv { kpus, groups, acc } => {
                for q in 0..*groups {
                    let mut v = 0i64;
                    for lane in 0..self.lanes {
                        let y = kpus[lane * *groups + q].step(self.x[lane], col, cfg);
                        if window.is_some() {
                            self.width.check(y)?;
                        }
                        v += y;
                    }
                    let a = &mut acc[q * self.i_slots + self.slot];
                    *a = if self.ch_local == 0 { v } else { *a + v };
                    let o = q * self.i_slots + self.slot;
                    if last_channel && o < d_out {
                        if let Some((wm, px)) = window {
                            let total = *a + self.bias.get(o).copied().unwrap_or(0);
                            self.width.check(total)?;
                            out.tokens.push(Token {
                                key: (wm, px, o as u32),
                                value: finish_value(l, quant, total),
                            });
                        }
                    }
                }
            }
            Units::Depthwise { kpus } => {
                for (lane, kpu) in kpus.iter_mut().enumerate() {
                    let y = kpu.step(self.x[lane], col, cfg);
                    let ch = lane * self.g + self.ch_local;
                    if let (Some((wm, px)), true) = (window, ch < d_in) {
                        let total = y + self.bias.get(ch).copied().unwrap_or(0);
                        self.width.check(total)?;
                        out.tokens.push(Token {
                            key: (wm, px, ch as u32),
                            value: finish_value(l, quant, total),
                        });
                    }
                }
            }
            Units::Pool { ppus } => {
                for (lane, ppu) in ppus.iter_mut().enumerate() {
                    let y = ppu.step(self.x[lane], cfg);
                    let ch = lane * self.g + self.ch_local;
                    if let (Some((wm, px)), true) = (window, ch < d_in) {
                        out.tokens.push(Token {
                            key: (wm, px, ch as u32),
                            value: finish_value(l, quant, y),
                        });
                    }
                }
            }
        }

        self.slot += 1;
        if self.slot == self.i_slots {
            self.slot = 0;
            self.ch_local += 1;
            if self.ch_local == self.g {
                self.ch_local = 0;
                self.pos += 1;
            }
        }
        Ok(out)
    }
}

/// FCU stage for fully connected and pointwise layers.
struct FcuStage {
    layer: LayerSpec,
    units: Vec<FcuUnit>,
    bias: Vec<i64>,
    agg: Aggregator,
    /// Inputs are collected straight into the FCU when `j ≤ lanes`.
    direct: bool,
    j: usize,
    h: usize,
    lanes: usize,
    /// Length of one input vector and vectors per map.
    n: usize,
    samples: usize,
    maps: usize,
    /// Next flat input index to collect (over all maps).
    next_in: usize,
    /// Sample of the batch each unit is working on.
    busy_sample: usize,
    width: WidthCheck,
}

impl FcuStage {
    fn new(lp: &LayerPlan, w: &LayerWeights, maps: usize) -> Result<Self> {
        let l = lp.layer.clone();
        let LayerAllocation::Fcu(a) = &lp.alloc else {
            return Err(Error::Config(format!("{}: not an FCU layer", l.name)));
        };
        let (j, h) = (a.j as usize, a.h as usize);
        let n = l.fc_inputs() as usize;
        let samples = match l.kind {
            LayerKind::FullyConnected => 1,
            _ => (l.f * l.f) as usize,
        };
        let batches = n / j;
        let units = (0..a.n_fcu as usize)
            .map(|u| {
                let mut wk = vec![0; batches * h * j];
                for b in 0..batches {
                    for q in 0..h {
                        let o = u * h + q;
                        let dst = (b * h + q) * j;
                        let src = o * n + b * j;
                        wk[dst..dst + j].copy_from_slice(&w.kernel[src..src + j]);
                    }
                }
                FcuUnit::new(j, h, n, wk)
            })
            .collect();
        let lanes = a.lanes as usize;
        Ok(FcuStage {
            width: WidthCheck::new(&l.name, lp.widths.accumulator_bits),
            bias: w.bias.clone(),
            units,
            agg: Aggregator::new(j),
            direct: j <= lanes,
            j,
            h,
            lanes,
            n,
            samples,
            maps,
            next_in: 0,
            busy_sample: 0,
            layer: l,
        })
    }

    fn total_inputs(&self) -> usize {
        self.maps * self.samples * self.n
    }

    fn key_of(&self, idx: usize) -> Key {
        let per_map = self.samples * self.n;
        let (m, rest) = (idx / per_map, idx % per_map);
        let d = self.layer.d_in as usize;
        (m as u32, (rest / d) as u32, (rest % d) as u32)
    }

    fn beats_per_map(&self) -> u64 {
        (self.samples * self.n / self.j * self.h) as u64
    }

    fn idle(&self) -> bool {
        self.units.iter().all(FcuUnit::idle)
    }

    fn step(&mut self, t: u64, fifo: &mut Fifo, quant: &QuantFormat) -> Result<StepOut> {
        let mut out = StepOut::default();
        let mut load = None;
        let total = self.total_inputs();
        if self.direct {
            if self.idle() && self.next_in < total {
                let keys: Vec<Key> = (self.next_in..self.next_in + self.j).map(|i| self.key_of(i)).collect();
                if keys.iter().all(|key| fifo.ready(key, t)) {
                    load = Some((self.next_in, keys.iter().map(|key| fifo.take(key)).collect::<Vec<_>>()));
                    self.next_in += self.j;
                }
            }
        } else if self.agg.full() && self.idle() {
            let first = self.next_in - self.j;
            load = Some((first, self.agg.take()));
        }
        if let Some((first, x)) = &load {
            self.busy_sample = first / self.n;
            out.x = x.clone();
        }
        let per_map = self.samples;
        for (u, unit) in self.units.iter_mut().enumerate() {
            let beat = unit.step(load.as_ref().map(|(_, x)| x.as_slice()));
            if let Some(b) = beat {
                out.worked = true;
                if let Some(y) = b.y {
                    let o = u * self.h + b.q;
                    let total = y + self.bias.get(o).copied().unwrap_or(0);
                    self.width.check(total)?;
                    let (m, px) = (self.busy_sample / per_map, self.busy_sample % per_map);
                    out.tokens.push(Token {
                        key: (m as u32, px as u32, o as u32),
                        value: finish_value(&self.layer, quant, total),
                    });
                } else if let Some(r) = b.read {
                    self.width.check(r)?;
                }
            }
        }
        if !self.direct {
            for _ in 0..self.lanes {
                if self.agg.full() || self.next_in >= total {
                    break;
                }
                let key = self.key_of(self.next_in);
                if !fifo.ready(&key, t) {
                    break;
                }
                self.agg.push(fifo.take(&key));
                self.next_in += 1;
            }
        }
        Ok(out)
    }

    fn done(&self) -> bool {
        self.next_in >= self.total_inputs() && self.idle() && !self.agg.full()
    }
}

/// Element-wise join of two streams.
struct ResidualStage {
    layer: LayerSpec,
    lanes: usize,
    per_map: usize,
    maps: usize,
    next: usize,
}

impl ResidualStage {
    fn key_of(&self, idx: usize) -> Key {
        let (m, rest) = (idx / self.per_map, idx % self.per_map);
        let d = self.layer.d_in as usize;
        (m as u32, (rest / d) as u32, (rest % d) as u32)
    }

    fn step(&mut self, t: u64, main: &mut Fifo, other: &mut Fifo, quant: &QuantFormat) -> StepOut {
        let mut out = StepOut::default();
        for _ in 0..self.lanes {
            if self.next >= self.maps * self.per_map {
                break;
            }
            let key = self.key_of(self.next);
            if !(main.ready(&key, t) && other.ready(&key, t)) {
                break;
            }
            let v = main.take(&key) + other.take(&key);
            out.x.push(v);
            out.tokens.push(Token {
                key,
                value: finish_value(&self.layer, quant, v),
            });
            out.worked = true;
            self.next += 1;
        }
        out
    }

    fn beats_per_map(&self) -> u64 {
        self.per_map.div_ceil(self.lanes) as u64
    }

    fn done(&self) -> bool {
        self.next >= self.maps * self.per_map
    }
}

enum Stage {
    Window(Box<WindowStage>),
    Fcu(Box<FcuStage>),
    Residual(ResidualStage),
}

impl Stage {
    fn done(&self) -> bool {
        match self {
            Stage::Window(s) => s.done(),
            Stage::Fcu(s) => s.done(),
            Stage::Residual(s) => s.done(),
        }
    }

    fn beats_per_map(&self) -> u64 {
        match self {
            Stage::Window(s) => s.beats_per_map(),
            Stage::Fcu(s) => s.beats_per_map(),
            Stage::Residual(s) => s.beats_per_map(),
        }
    }
}

/// Emits input features at the plan's input rate over the first layer's
/// stream; padding positions take their slots but carry no tokens.
struct Source {
    num: u64,
    den: u64,
    channels: usize,
    gap: usize,
    period: usize,
    pixels: usize,
    next: u64,
    total: u64,
}

impl Source {
    fn step(&mut self, t: u64, inputs: &[Tensor3]) -> Vec<Token> {
        let mut out = Vec::new();
        // slot i is due at cycle ⌊i·den/num⌋
        while self.next < self.total && self.next * self.den / self.num <= t {
            let slot = self.next as usize;
            self.next += 1;
            let (pos, ch) = (slot / self.channels, slot % self.channels);
            let (m, n) = (pos / self.period, pos % self.period);
            if n < self.gap || m >= inputs.len() {
                continue;
            }
            let px = n - self.gap;
            debug_assert!(px < self.pixels);
            out.push(Token {
                key: (m as u32, px as u32, ch as u32),
                value: inputs[m].data[px * self.channels + ch],
            });
        }
        out
    }

    fn done(&self) -> bool {
        self.next >= self.total
    }
}

fn trace_wanted(filters: &[String], name: &str, signal: &str) -> bool {
    let full = format!("{name}.{signal}");
    filters
        .iter()
        .any(|f| *f == full || f == signal || *f == format!("*.{signal}") || f == "*")
}

/// Simulate the plan on one or more input maps fed back to back.
pub fn simulate_network(
    plan: &ArchitecturePlan,
    weights: &NetworkWeights,
    inputs: &[Tensor3],
    options: &SimOptions,
) -> Result<SimResult> {
    let Some(first) = plan.layers.first() else {
        return Err(Error::Config("plan has no layers".into()));
    };
    if inputs.is_empty() {
        return Err(Error::Config("no input maps".into()));
    }
    if weights.layers.len() != plan.layers.len() {
        return Err(Error::Config(format!(
            "{} weight sets for {} planned layers",
            weights.layers.len(),
            plan.layers.len()
        )));
    }
    let f0 = first.layer.f as usize;
    let d0 = first.layer.d_in as usize;
    for (i, x) in inputs.iter().enumerate() {
        if x.shape() != (f0, f0, d0) {
            return Err(Error::Shape(format!("input {i} is {:?}, plan expects {f0}x{f0}x{d0}", x.shape())));
        }
    }
    let maps = inputs.len();
    let quant = plan.quant;

    let mut stages = Vec::with_capacity(plan.layers.len());
    for (lp, w) in plan.layers.iter().zip(&weights.layers) {
        let stage = match lp.kind {
            LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::MaxPool => {
                Stage::Window(Box::new(WindowStage::new(lp, w, maps)?))
            }
            LayerKind::PointwiseConv | LayerKind::FullyConnected => Stage::Fcu(Box::new(FcuStage::new(lp, w, maps)?)),
            LayerKind::ResidualAdd => Stage::Residual(ResidualStage {
                layer: lp.layer.clone(),
                lanes: match lp.alloc {
                    LayerAllocation::Residual { lanes } => lanes as usize,
                    _ => 1,
                },
                per_map: (lp.layer.f * lp.layer.f * lp.layer.d_in) as usize,
                maps,
                next: 0,
            }),
            other => {
                return Err(Error::Config(format!(
                    "{}: {other:?} must be lowered before simulation",
                    lp.name
                )))
            }
        };
        stages.push(stage);
    }

    // consumers[i] lists (stage, port) fed by layer i
    let n = plan.layers.len();
    let mut consumers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for i in 0..n {
        if i + 1 < n {
            consumers[i].push((i + 1, 0));
        }
    }
    for (i, lp) in plan.layers.iter().enumerate() {
        if let Some(src) = lp.layer.residual_source {
            if src >= i {
                return Err(Error::Config(format!("{}: residual source {src} is not upstream", lp.name)));
            }
            consumers[src].push((i, 1));
        }
    }
    let mut fifos: Vec<[Fifo; 2]> = (0..n).map(|_| Default::default()).collect();

    let gap0 = padding_gap(&first.layer) as usize;
    let pixels0 = f0 * f0;
    let mut source = Source {
        num: plan.input_rate.numer(),
        den: plan.input_rate.denom(),
        channels: d0,
        gap: gap0,
        period: pixels0 + gap0,
        pixels: pixels0,
        next: 0,
        total: ((pixels0 + gap0) * maps * d0) as u64,
    };

    let last = plan.layers.last().expect("non-empty");
    let fo = last.layer.f_out() as usize;
    let dout = last.layer.d_out as usize;
    let mut outputs = vec![Tensor3::zeros(fo, fo, dout); maps];
    let expected = maps * fo * fo * dout;
    let mut received = 0usize;
    let mut completion = vec![0u64; maps];
    let mut per_map_count = vec![0usize; maps];

    let mut stats: Vec<LayerStats> = plan
        .layers
        .iter()
        .zip(&stages)
        .map(|(lp, s)| LayerStats {
            name: lp.name.clone(),
            beats_per_map: s.beats_per_map(),
            ..Default::default()
        })
        .collect();

    let mut columns = Vec::new();
    let mut traced: Vec<(usize, bool, bool)> = Vec::new();
    for lp in &plan.layers {
        let tx = trace_wanted(&options.trace, &lp.name, "x");
        let ty = trace_wanted(&options.trace, &lp.name, "y");
        if tx {
            columns.push(format!("{}.x", lp.name));
        }
        if ty {
            columns.push(format!("{}.y", lp.name));
        }
        traced.push((columns.len(), tx, ty));
    }
    let mut trace = CycleTrace::new(columns);
    let tracing = !trace.columns.is_empty();

    let mut first_output = None;
    let mut idle_cycles = 0u32;
    let mut t = 0u64;
    while received < expected {
        if t >= options.max_cycles {
            return Err(Error::Deadlock(t));
        }
        let mut progress = false;
        for tok in source.step(t, inputs) {
            // the input stream reaches the first layer in the cycle it is sent
            fifos[0][0].put(tok.key, tok.value, t);
            progress = true;
        }
        progress |= !source.done();
        let mut row: Vec<Option<TraceValue>> = if tracing { vec![None; trace.columns.len()] } else { Vec::new() };
        for i in 0..n {
            let starting = match &stages[i] {
                Stage::Window(s) => s.map_start(),
                Stage::Fcu(s) => (s.direct || s.agg.full())
                    .then(|| s.next_in.saturating_sub(if s.direct { 0 } else { s.j }))
                    .filter(|&idx| idx % (s.samples * s.n) == 0 && s.idle() && idx < s.total_inputs())
                    .map(|idx| idx / (s.samples * s.n)),
                Stage::Residual(s) => (s.next % s.per_map == 0 && !s.done()).then(|| s.next / s.per_map),
            };
            let [main, other] = &mut fifos[i];
            let out = match &mut stages[i] {
                Stage::Window(s) => s.step(t, main, &quant)?,
                Stage::Fcu(s) => s.step(t, main, &quant)?,
                Stage::Residual(s) => s.step(t, main, other, &quant),
            };
            if out.worked {
                progress = true;
                let st = &mut stats[i];
                st.beats += 1;
                if let Some(m) = starting {
                    if st.map_starts.len() == m {
                        st.map_starts.push(t);
                    }
                }
            }
            if tracing {
                let (end, tx, ty) = traced[i];
                let mut col = end - usize::from(tx) - usize::from(ty);
                if tx {
                    if out.worked && !out.x.is_empty() {
                        row[col] = Some(if out.x.len() == 1 {
                            TraceValue::Int(out.x[0])
                        } else {
                            TraceValue::tuple(out.x.iter().copied())
                        });
                    }
                    col += 1;
                }
                if ty && !out.tokens.is_empty() {
                    let mut toks = out.tokens.clone();
                    toks.sort_by_key(|t| t.key);
                    row[col] = Some(if toks.len() == 1 {
                        TraceValue::Int(toks[0].value)
                    } else {
                        TraceValue::tuple(toks.iter().map(|t| t.value))
                    });
                }
            }
            if !out.tokens.is_empty() {
                stats[i].first_output.get_or_insert(t);
            }
            for tok in out.tokens {
                if i + 1 == n {
                    let (m, px, ch) = (tok.key.0 as usize, tok.key.1 as usize, tok.key.2 as usize);
                    outputs[m].data[px * dout + ch] = tok.value;
                    received += 1;
                    per_map_count[m] += 1;
                    if per_map_count[m] == fo * fo * dout {
                        completion[m] = t;
                    }
                    first_output.get_or_insert(t);
                }
                for &(c, port) in &consumers[i] {
                    fifos[c][port].put(tok.key, tok.value, t + 1);
                }
            }
        }
        if tracing {
            trace.push(t, row);
        }
        if progress {
            idle_cycles = 0;
        } else {
            idle_cycles += 1;
            if idle_cycles > 4 {
                return Err(Error::Deadlock(t));
            }
        }
        t += 1;
    }
    for (st, f) in stats.iter_mut().zip(&fifos) {
        st.fifo_max_occupancy = f[0].max_occupancy.max(f[1].max_occupancy);
    }
    debug_assert!(stages.iter().all(|s| s.done() || matches!(s, Stage::Window(_))));

    let cycles_per_inference = if maps >= 2 {
        Ratio::from_integer(completion[maps - 1] - completion[maps - 2])
    } else {
        Ratio::from_integer(t)
    };
    Ok(SimResult {
        outputs,
        trace,
        stats: SimStats {
            maps,
            total_cycles: t,
            first_output_latency: first_output,
            cycles_per_inference,
            layers: stats,
        },
    })
}

/// Steady-state utilization per layer: work of one map over the cycles
/// between the starts of two consecutive maps. Uses the last two maps, so at
/// least two are needed; `None` otherwise.
pub fn measure_utilization(stats: &SimStats) -> Vec<Option<Ratio<u64>>> {
    stats
        .layers
        .iter()
        .map(|l| {
            let s = &l.map_starts;
            if s.len() < 2 {
                return None;
            }
            let gap = s[s.len() - 1] - s[s.len() - 2];
            (gap > 0).then(|| Ratio::new(l.beats_per_map.min(gap), gap))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{plan, PlanOptions};
    use crate::netspec::parse_network;
    use crate::oracle::{gen_input, gen_weights, ref_network};

    fn running_example() -> crate::netspec::NetworkSpec {
        parse_network(include_str!("../../data/running_example.json")).unwrap()
    }

    #[test]
    fn running_example_matches_oracle() {
        let spec = running_example();
        let p = plan(&spec, &PlanOptions::default()).unwrap();
        let w = gen_weights(&spec, 0);
        let xs: Vec<_> = (0..3).map(|i| gen_input(&spec, i)).collect();
        let r = simulate_network(&p, &w, &xs, &SimOptions::new()).unwrap();
        for (x, y) in xs.iter().zip(&r.outputs) {
            assert_eq!(*y, ref_network(&spec, &w, x).unwrap());
        }
        assert_eq!(r.stats.cycles_per_inference, Ratio::from_integer(680));
        let u = measure_utilization(&r.stats);
        let c2 = spec.layers.iter().position(|l| l.name == "C2").unwrap();
        assert_eq!(u[c2], Some(Ratio::from_integer(1)));
    }

    #[test]
    fn random_networks_match_oracle() {
        for seed in 0..40 {
            let spec = crate::oracle::gen_network(seed, &Default::default());
            let p = plan(&spec, &PlanOptions::default()).unwrap();
            let w = gen_weights(&spec, seed);
            let xs: Vec<_> = (0..2).map(|i| gen_input(&spec, seed * 10 + i)).collect();
            let r = simulate_network(&p, &w, &xs, &SimOptions::new())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", crate::netspec::serialize_network(&spec)));
            for (x, y) in xs.iter().zip(&r.outputs) {
                assert_eq!(*y, ref_network(&spec, &w, x).unwrap(), "seed {seed}");
            }
        }
    }

    fn single_kpu(p: u64) -> crate::netspec::NetworkSpec {
        parse_network(&format!(
            r#"{{"input": {{"height": 5, "width": 5, "channels": 1, "rate": "1"}},
                "quant": {{"weight_bits": 8, "activation_bits": 8}},
                "layers": [{{"kind": "conv", "name": "C1", "f": 5, "k": 3, "s": 1, "p": {p}, "d_out": 1}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn network_trace_follows_unit_timing() {
        let spec = single_kpu(0);
        let p = plan(&spec, &PlanOptions::default()).unwrap();
        let w = gen_weights(&spec, 1);
        let x = gen_input(&spec, 1);
        let r = simulate_network(&p, &w, &[x], &SimOptions::new().with_trace(["y"])).unwrap();
        assert_eq!(r.trace.valid_cycles("C1.y"), vec![12, 13, 14, 17, 18, 19, 22, 23, 24]);

        let spec = single_kpu(1);
        let p = plan(&spec, &PlanOptions::default()).unwrap();
        let xs = vec![gen_input(&spec, 2), gen_input(&spec, 3)];
        let r = simulate_network(&p, &w, &xs, &SimOptions::new().with_trace(["C1.x", "C1.y"])).unwrap();
        let ys = r.trace.valid_cycles("C1.y");
        assert_eq!((ys[0], ys[24], ys[25]), (12, 36, 43));
        assert_eq!(r.trace.value(6, "C1.x").and_then(|v| v.as_int()), Some(xs[0].data[0]));
    }
}
