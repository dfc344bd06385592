//! Hardware unit allocation: KPUs, PPUs and FCUs per layer.

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netspec::{ceil_log2, LayerKind, LayerSpec, NetworkSpec, QuantFormat};
use crate::rate::{LayerRateInfo, Rate};

/// Allocation of a KPU-based layer (standard or depthwise convolution).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConvAllocation {
    pub n_kpu: u64,
    /// Configurations each KPU cycles through.
    pub configs: u64,
    /// Output channels interleaved on one output stream.
    pub interleave: u64,
    pub n_streams_out: u64,
    pub accumulators: u64,
    pub has_bias: bool,
    /// Parallel input streams, `⌈r_in⌉`.
    pub lanes: u64,
    /// `n_kpu` had to be rounded up.
    pub rounded: bool,
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FcuAllocation {
    /// Inputs consumed per batch.
    pub j: u64,
    /// Neurons per FCU.
    pub h: u64,
    /// Aggregation factor.
    pub a: u64,
    pub n_fcu: u64,
    pub configs: u64,
    pub j_max: u64,
    pub h_max: u64,
    /// Parallel input streams, `⌈r_in⌉`.
    pub lanes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PoolAllocation {
    pub n_ppu: u64,
    pub configs: u64,
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "unit", rename_all = "snake_case")]
pub enum LayerAllocation {
    Conv(ConvAllocation),
    Depthwise(ConvAllocation),
    Pool(PoolAllocation),
    Fcu(FcuAllocation),
    Residual { lanes: u64 },
}

impl LayerAllocation {
    pub fn kpus(&self) -> u64 {
        match self {
            LayerAllocation::Conv(c) | LayerAllocation::Depthwise(c) => c.n_kpu,
            _ => 0,
        }
    }

    pub fn fcus(&self) -> u64 {
        match self {
            LayerAllocation::Fcu(f) => f.n_fcu,
            _ => 0,
        }
    }

    pub fn ppus(&self) -> u64 {
        match self {
            LayerAllocation::Pool(p) => p.n_ppu,
            _ => 0,
        }
    }

    pub fn configs(&self) -> u64 {
        match self {
            LayerAllocation::Conv(c) | LayerAllocation::Depthwise(c) => c.configs,
            LayerAllocation::Pool(p) => p.configs,
            LayerAllocation::Fcu(f) => f.configs,
            LayerAllocation::Residual { .. } => 1,
        }
    }
}

/// `C = min(⌈d_in/r⌉, d_in·d_out)`, `I = ⌈C/d_in⌉`, `#KPU = ⌈r⌉·d_out/I`.
pub fn alloc_conv(d_in: u64, d_out: u64, r_in: Rate) -> ConvAllocation {
    let want = r_in.ceil_div_into(d_in);
    let cap = d_in * d_out;
    let configs = want.min(cap);
    let interleave = configs.div_ceil(d_in);
    let lanes = r_in.ceil();
    let n_kpu = (lanes * d_out).div_ceil(interleave);
    let rounded = !(lanes * d_out).is_multiple_of(interleave);
    let n_streams_out = d_out.div_ceil(interleave);
    ConvAllocation {
        n_kpu,
        configs,
        interleave,
        n_streams_out,
        accumulators: if d_in == 1 { 0 } else { n_streams_out },
        has_bias: true,
        lanes,
        rounded,
        stalled: want > cap,
    }
}

/// `#KPU = ⌈r⌉`, `C = min(⌈d_in/r⌉, d_in)`.
pub fn alloc_depthwise(d_in: u64, r_in: Rate) -> ConvAllocation {
    let want = r_in.ceil_div_into(d_in);
    let lanes = r_in.ceil();
    ConvAllocation {
        n_kpu: lanes,
        configs: want.min(d_in),
        interleave: 1,
        n_streams_out: d_in,
        accumulators: 0,
        has_bias: true,
        lanes,
        rounded: false,
        stalled: want > d_in,
    }
}

/// Size an FCU group for `d_in` inputs feeding `d_out` neurons at rate
/// `r_in = j_max/h_max` (lowest terms). The aggregation factor `a` is the
/// smallest one that gives `h ≥ min_h` with `j = a·j_max` dividing `d_in`.
pub fn size_fcu(d_in: u64, d_out: u64, r_in: Rate, min_h: u64) -> Result<FcuAllocation> {
    let (j_max, h_max) = (r_in.numer(), r_in.denom());
    if j_max == 0 {
        return Err(Error::Config("FCU input rate must be positive".into()));
    }
    if min_h > d_out {
        return Err(Error::Config(format!(
            "pipeline depth {min_h} exceeds the {d_out} neurons available"
        )));
    }
    let mut a = 1;
    loop {
        let j = a * j_max;
        if j > d_in {
            return Err(Error::Config(format!(
                "no aggregation of j_max={j_max} divides {d_in} inputs with h >= {min_h}; \
                 the feature vector would need padding"
            )));
        }
        let h = greatest_divisor_at_most(d_out, a * h_max);
        if h >= min_h && d_in.is_multiple_of(j) {
            return Ok(FcuAllocation {
                j,
                h,
                a,
                n_fcu: d_out / h,
                configs: h * d_in / j,
                j_max,
                h_max,
                lanes: r_in.ceil(),
            });
        }
        a += 1;
    }
}

fn greatest_divisor_at_most(n: u64, bound: u64) -> u64 {
    (1..=bound.min(n)).rev().find(|h| n.is_multiple_of(*h)).unwrap_or(1)
}

/// How pointwise stages of depthwise-separable layers are sized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseSizing {
    /// FCUs sized from the input rate alone (one neuron per FCU at `r ≥ 1`).
    #[default]
    RateMatched,
    /// Each FCU serves at least two neurons through aggregation, halving
    /// the FCU count at `r ≥ 1`.
    SharedNeurons,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PlanOptions {
    /// Pipeline depth of the FCU accumulation adder; `h` must reach it.
    pub min_h: u64,
    pub pointwise: PointwiseSizing,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            min_h: 1,
            pointwise: PointwiseSizing::RateMatched,
        }
    }
}

/// Pointwise convolution as an FCU layer applied per pixel.
pub fn alloc_pointwise(d_in: u64, d_out: u64, r_in: Rate, options: &PlanOptions) -> Result<FcuAllocation> {
    let min_h = match options.pointwise {
        PointwiseSizing::RateMatched => options.min_h,
        PointwiseSizing::SharedNeurons => options.min_h.max(2).min(d_out),
    };
    size_fcu(d_in, d_out, r_in, min_h)
}

/// `#PPU = ⌈r⌉`, `C = d_in / #PPU`.
pub fn alloc_pool(d_in: u64, r_in: Rate) -> PoolAllocation {
    let n_ppu = r_in.ceil();
    PoolAllocation {
        n_ppu,
        configs: d_in.div_ceil(n_ppu),
        stalled: r_in < Rate::integer(1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerWidths {
    pub input_bits: u32,
    pub weight_bits: u32,
    /// Products summed into one output.
    pub terms: u64,
    pub accumulator_bits: u32,
    pub output_bits: u32,
}

/// Two's-complement width that holds any sum of `terms` products of an
/// `input_bits` and a `weight_bits` operand.
pub fn accumulator_width(input_bits: u32, weight_bits: u32, terms: u64) -> u32 {
    input_bits + weight_bits + ceil_log2(terms)
}

fn signed_bits(bits: u32, signed: bool) -> u32 {
    if signed {
        bits
    } else {
        bits + 1
    }
}

fn bits_for_constant(v: i64) -> u32 {
    65 - v.unsigned_abs().leading_zeros().min(64)
}

/// Per-layer worst-case adder and accumulator widths.
pub fn worst_case_widths(spec: &NetworkSpec, quant: &QuantFormat) -> Vec<LayerWidths> {
    let act = signed_bits(quant.activation_bits, quant.signed);
    let wb = signed_bits(quant.weight_bits, quant.signed);
    let mut out: Vec<LayerWidths> = Vec::with_capacity(spec.layers.len());
    let mut in_bits = act;
    for l in &spec.layers {
        let (weight_bits, terms) = match l.kind {
            LayerKind::Conv => (wb, l.k * l.k * l.d_in),
            LayerKind::DepthwiseConv => match l.avg {
                Some(c) => (bits_for_constant(c.multiplier), l.k * l.k),
                None => (wb, l.k * l.k),
            },
            LayerKind::PointwiseConv | LayerKind::DepthwiseSeparableConv => (wb, l.d_in),
            LayerKind::FullyConnected => (wb, l.f * l.f * l.d_in),
            LayerKind::MaxPool | LayerKind::AvgPool => (0, 1),
            LayerKind::ResidualAdd => (0, 2),
        };
        let accumulator_bits = match l.kind {
            LayerKind::MaxPool | LayerKind::AvgPool => in_bits,
            LayerKind::ResidualAdd => {
                let other = l
                    .residual_source
                    .and_then(|s| out.get(s))
                    .map_or(in_bits, |w| w.output_bits);
                in_bits.max(other) + 1
            }
            // a bias stays within the weight range, so it counts as one more term
            _ => accumulator_width(in_bits, weight_bits, terms + u64::from(l.has_bias())),
        };
        let output_bits = if l.requant_shift.is_some() {
            act
        } else if l.avg.is_some() {
            in_bits + 1
        } else {
            accumulator_bits
        };
        out.push(LayerWidths {
            input_bits: in_bits,
            weight_bits,
            terms,
            accumulator_bits,
            output_bits,
        });
        in_bits = output_bits;
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerPlan {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub layer: LayerSpec,
    pub rate: LayerRateInfo,
    pub alloc: LayerAllocation,
    pub widths: LayerWidths,
    /// Cycles this layer needs per feature map in steady state.
    pub cycles_per_map: Ratio<u64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArchitecturePlan {
    pub options: PlanOptions,
    pub input_rate: Rate,
    pub quant: QuantFormat,
    pub layers: Vec<LayerPlan>,
    /// Cycles between consecutive inferences in steady state.
    pub cycles_per_inference: Ratio<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct UnitTotals {
    pub kpu: u64,
    pub fcu: u64,
    pub ppu: u64,
}

impl ArchitecturePlan {
    pub fn totals(&self) -> UnitTotals {
        self.layers.iter().fold(UnitTotals::default(), |t, l| UnitTotals {
            kpu: t.kpu + l.alloc.kpus(),
            fcu: t.fcu + l.alloc.fcus(),
            ppu: t.ppu + l.alloc.ppus(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Zero-padding pixels fed per map by a KPU layer, `p·f + p`.
pub fn padding_gap(l: &LayerSpec) -> u64 {
    match l.kind {
        LayerKind::Conv | LayerKind::DepthwiseConv => l.p * l.f + l.p,
        _ => 0,
    }
}

/// Allocate one layer at input rate `r_in`.
pub fn alloc_layer(index: usize, l: &LayerSpec, r_in: Rate, options: &PlanOptions) -> Result<LayerAllocation> {
    let wrap = |e: Error| Error::Allocation {
        layer: index,
        message: e.to_string(),
    };
    Ok(match l.kind {
        LayerKind::Conv => LayerAllocation::Conv(alloc_conv(l.d_in, l.d_out, r_in)),
        LayerKind::DepthwiseConv | LayerKind::DepthwiseSeparableConv => {
            LayerAllocation::Depthwise(alloc_depthwise(l.d_in, r_in))
        }
        LayerKind::MaxPool | LayerKind::AvgPool => LayerAllocation::Pool(alloc_pool(l.d_in, r_in)),
        LayerKind::PointwiseConv => {
            LayerAllocation::Fcu(alloc_pointwise(l.d_in, l.d_out, r_in, options).map_err(wrap)?)
        }
        LayerKind::FullyConnected => {
            LayerAllocation::Fcu(size_fcu(l.fc_inputs(), l.d_out, r_in, options.min_h).map_err(wrap)?)
        }
        LayerKind::ResidualAdd => LayerAllocation::Residual { lanes: r_in.ceil() },
    })
}

fn layer_cycles(l: &LayerSpec, alloc: &LayerAllocation) -> Ratio<u64> {
    let pixels = l.f * l.f;
    let c = match alloc {
        LayerAllocation::Conv(a) | LayerAllocation::Depthwise(a) => {
            (pixels + padding_gap(l)) * l.d_in.div_ceil(a.lanes) * a.interleave
        }
        LayerAllocation::Pool(a) => pixels * a.configs,
        LayerAllocation::Fcu(a) => match l.kind {
            LayerKind::FullyConnected => a.configs,
            _ => pixels * a.configs,
        },
        LayerAllocation::Residual { lanes } => pixels * l.d_in.div_ceil(*lanes),
    };
    Ratio::from_integer(c)
}

/// Build the architecture plan from a validated spec and its rates.
pub fn plan_network(spec: &NetworkSpec, rates: &[LayerRateInfo], options: &PlanOptions) -> Result<ArchitecturePlan> {
    if rates.len() != spec.layers.len() {
        return Err(Error::Config(format!(
            "{} rate entries for {} layers",
            rates.len(),
            spec.layers.len()
        )));
    }
    let widths = worst_case_widths(spec, &spec.quant);
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut upstream = spec.input_rate;
    for (i, (l, info)) in spec.layers.iter().zip(rates).enumerate() {
        let mut expected = upstream;
        if let Some(src) = l.residual_source {
            expected = expected.min(rates[src].r_out);
        }
        if info.r_in != expected {
            return Err(Error::Allocation {
                layer: i,
                message: format!(
                    "stream wiring mismatch: upstream delivers {expected}, layer expects {}",
                    info.r_in
                ),
            });
        }
        let alloc = alloc_layer(i, l, info.r_in, options)?;
        let mut warnings = Vec::new();
        match &alloc {
            LayerAllocation::Conv(a) | LayerAllocation::Depthwise(a) => {
                if a.rounded {
                    warnings.push(format!(
                        "{}: KPU count rounded up to {} (d_out={} not divisible by I={}); continuous flow breaks",
                        l.name, a.n_kpu, l.d_out, a.interleave
                    ));
                }
                if a.stalled {
                    warnings.push(format!(
                        "{}: input rate {} too low, interleaving cannot restore continuous flow (stall)",
                        l.name, info.r_in
                    ));
                }
                if l.d_in % a.lanes != 0 {
                    warnings.push(format!(
                        "{}: {} input streams do not divide {} channels",
                        l.name, a.lanes, l.d_in
                    ));
                }
            }
            LayerAllocation::Pool(a)
                if a.stalled => {
                    warnings.push(format!("{}: input rate {} below one pixel stream (stall)", l.name, info.r_in));
                }
            _ => {}
        }
        layers.push(LayerPlan {
            index: i,
            name: l.name.clone(),
            kind: l.kind,
            layer: l.clone(),
            rate: info.clone(),
            cycles_per_map: layer_cycles(l, &alloc),
            alloc,
            widths: widths[i],
            warnings,
        });
        upstream = info.r_out;
    }
    let source = match spec.layers.first() {
        Some(first) => {
            let slots = (spec.height * spec.width + padding_gap(first)) * spec.channels;
            Ratio::from_integer(slots) / spec.input_rate.ratio()
        }
        None => Ratio::from_integer(0),
    };
    let cycles_per_inference = layers
        .iter()
        .map(|l: &LayerPlan| l.cycles_per_map)
        .fold(source, |a, b| a.max(b));
    Ok(ArchitecturePlan {
        options: *options,
        input_rate: spec.input_rate,
        quant: spec.quant,
        layers,
        cycles_per_inference,
    })
}

/// Parse-free convenience: rates and plan in one call.
pub fn plan(spec: &NetworkSpec, options: &PlanOptions) -> Result<ArchitecturePlan> {
    let rates = crate::rate::propagate_rates(spec);
    plan_network(spec, &rates, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Rate {
        Rate::new(n, d)
    }

    #[test]
    fn conv_examples() {
        let a = alloc_conv(8, 16, r(2, 1));
        assert_eq!((a.configs, a.interleave, a.n_kpu), (4, 1, 32));
        let a = alloc_conv(8, 16, r(1, 2));
        assert_eq!((a.configs, a.interleave, a.n_kpu), (16, 2, 8));
        let a = alloc_conv(1, 8, r(1, 1));
        assert_eq!((a.configs, a.interleave, a.n_kpu, a.accumulators), (1, 1, 8, 0));
        let a = alloc_conv(8, 16, r(1, 32));
        assert!(a.stalled);
        assert_eq!((a.configs, a.interleave, a.n_kpu), (128, 16, 1));
    }

    #[test]
    fn conv_rounding_flagged() {
        // 24 output channels with I = 16 cannot be split evenly
        let a = alloc_conv(8, 24, r(1, 16));
        assert!(a.rounded);
        assert_eq!(a.n_kpu, 2);
    }

    #[test]
    fn depthwise_examples() {
        let a = alloc_depthwise(8, r(2, 1));
        assert_eq!((a.n_kpu, a.configs, a.stalled), (2, 4, false));
        let a = alloc_depthwise(8, r(8, 1));
        assert_eq!((a.n_kpu, a.configs), (8, 1));
        let a = alloc_depthwise(8, r(1, 2));
        assert_eq!((a.n_kpu, a.configs, a.stalled), (1, 8, true));
    }

    #[test]
    fn fcu_examples() {
        let a = size_fcu(256, 10, r(4, 9), 1).unwrap();
        assert_eq!((a.j, a.h, a.n_fcu, a.configs), (4, 5, 2, 320));
        let a = size_fcu(8, 16, r(8, 1), 1).unwrap();
        assert_eq!((a.j, a.h, a.n_fcu), (8, 1, 16));
        let a = size_fcu(8, 4, r(1, 1), 4).unwrap();
        assert_eq!((a.a, a.j, a.h, a.n_fcu, a.configs), (4, 4, 4, 1, 8));
    }

    #[test]
    fn fcu_errors() {
        assert!(size_fcu(8, 4, r(1, 1), 5).is_err());
        // j = 3 never divides 8 inputs
        assert!(size_fcu(8, 4, r(3, 1), 1).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let opt = PlanOptions::default();
        let a = alloc_pointwise(8, 16, r(8, 1), &opt).unwrap();
        assert_eq!((a.n_fcu, a.j, a.h), (16, 8, 1));
        let a = alloc_pointwise(8, 16, r(1, 2), &opt).unwrap();
        assert_eq!((a.j, a.h, a.n_fcu), (1, 2, 8));
        let a = alloc_pointwise(8, 16, r(2, 1), &opt).unwrap();
        assert_eq!(a.n_fcu, 16);
        let shared = PlanOptions {
            pointwise: PointwiseSizing::SharedNeurons,
            ..opt
        };
        let a = alloc_pointwise(8, 16, r(2, 1), &shared).unwrap();
        assert_eq!((a.n_fcu, a.j, a.h, a.a), (8, 4, 2, 2));
    }

    #[test]
    fn pool_examples() {
        let a = alloc_pool(8, r(8, 1));
        assert_eq!((a.n_ppu, a.configs), (8, 1));
        let a = alloc_pool(16, r(4, 1));
        assert_eq!((a.n_ppu, a.configs), (4, 4));
        let a = alloc_pool(4, r(1, 1));
        assert_eq!((a.n_ppu, a.configs), (1, 4));
    }

    #[test]
    fn width_examples() {
        assert_eq!(accumulator_width(8, 8, 9), 20);
        assert_eq!(accumulator_width(8, 8, 1), 16);
        assert_eq!(accumulator_width(8, 8, 200), 24);
    }

}
