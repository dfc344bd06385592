//! Closed-form resource model for an [`ArchitecturePlan`].
//!
//! Every unit is priced in adders, multipliers, registers, 2:1 multiplexers
//! and MAX units. An `N:1` multiplexer counts as `N − 1` 2:1 multiplexers.
//! ReLU and per-layer control counters are free.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use serde::Serialize;

use crate::alloc::{
    alloc_layer, plan_network, ArchitecturePlan, LayerAllocation, LayerPlan, PlanOptions,
};
use crate::error::{Error, Result};
use crate::netspec::{LayerKind, LayerSpec, NetworkSpec};
use crate::rate::{classify_flow, layer_output_rate, LayerRateInfo, Rate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ResourceVector {
    pub adders: u64,
    pub multipliers: u64,
    pub registers: u64,
    pub mux2: u64,
    pub max_units: u64,
    pub weights: u64,
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, o: ResourceVector) -> ResourceVector {
        ResourceVector {
            adders: self.adders + o.adders,
            multipliers: self.multipliers + o.multipliers,
            registers: self.registers + o.registers,
            mux2: self.mux2 + o.mux2,
            max_units: self.max_units + o.max_units,
            weights: self.weights + o.weights,
        }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, o: ResourceVector) {
        *self = *self + o;
    }
}

impl Mul<u64> for ResourceVector {
    type Output = ResourceVector;
    fn mul(self, n: u64) -> ResourceVector {
        ResourceVector {
            adders: self.adders * n,
            multipliers: self.multipliers * n,
            registers: self.registers * n,
            mux2: self.mux2 * n,
            max_units: self.max_units * n,
            weights: self.weights * n,
        }
    }
}

impl Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::default(), Add::add)
    }
}

/// Which optional parts of a layer are priced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostScope {
    pub include_bias: bool,
    pub include_interleaver: bool,
    pub include_fifos: bool,
}

impl CostScope {
    /// Whole-network accounting: bias, input interleaving and FIFOs.
    pub fn full() -> Self {
        CostScope {
            include_bias: true,
            include_interleaver: true,
            include_fifos: true,
        }
    }

    /// Single-layer accounting that leaves out everything depending on the
    /// neighbouring layers.
    pub fn layer_only() -> Self {
        CostScope {
            include_bias: false,
            include_interleaver: false,
            include_fifos: false,
        }
    }
}

/// Transposed-form KPU with `C` configurations.
pub fn kpu_cost(k: u64, f: u64, configs: u64) -> ResourceVector {
    ResourceVector {
        adders: k * k - 1,
        multipliers: k * k,
        registers: kernel_registers(k, f) * configs,
        mux2: k * k * (configs - 1),
        ..Default::default()
    }
}

/// `k(k−1)` partial-sum registers plus `k−1` line buffers of `f−k+1`.
fn kernel_registers(k: u64, f: u64) -> u64 {
    k * (k - 1) + (k - 1) * (f + 1).saturating_sub(k)
}

/// Channel accumulation behind the KPUs of a convolutional layer.
pub fn accumulator_cost(d_out: u64, interleave: u64, n_kpu: u64) -> ResourceVector {
    ResourceVector {
        registers: d_out,
        adders: d_out.div_ceil(interleave) * n_kpu.div_ceil(d_out),
        ..Default::default()
    }
}

pub fn bias_cost(d_out: u64, interleave: u64) -> ResourceVector {
    let streams = d_out.div_ceil(interleave);
    ResourceVector {
        adders: streams,
        mux2: d_out - streams,
        ..Default::default()
    }
}

/// Input interleaving of `d_in/I` signals into `⌈r_in⌉` streams plus the
/// `d_out` FIFO registers.
pub fn interleaver_cost(d_in: u64, interleave: u64, r_in: Rate, d_out: u64) -> ResourceVector {
    ResourceVector {
        mux2: (d_in / interleave).saturating_sub(r_in.ceil()),
        registers: d_out,
        ..Default::default()
    }
}

pub fn ppu_cost(k: u64, f: u64, configs: u64) -> ResourceVector {
    ResourceVector {
        max_units: k * k - 1,
        registers: kernel_registers(k, f) * configs,
        ..Default::default()
    }
}

pub fn fcu_cost(j: u64, h: u64, configs: u64, n_fcu: u64) -> ResourceVector {
    ResourceVector {
        adders: j,
        multipliers: j,
        registers: h,
        mux2: j * (configs - 1),
        ..Default::default()
    }
        * n_fcu
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub r_in: Rate,
    pub r_out: Rate,
    pub configs: u64,
    pub resources: ResourceVector,
    pub kpu: u64,
    pub fcu: u64,
    pub ppu: u64,
    pub stalled: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub scope: CostScope,
    pub layers: Vec<LayerCost>,
    pub total: ResourceVector,
    pub kpu: u64,
    pub fcu: u64,
    pub ppu: u64,
}

impl CostReport {
    fn from_layers(scope: CostScope, layers: Vec<LayerCost>) -> Self {
        CostReport {
            scope,
            total: layers.iter().map(|l| l.resources).sum(),
            kpu: layers.iter().map(|l| l.kpu).sum(),
            fcu: layers.iter().map(|l| l.fcu).sum(),
            ppu: layers.iter().map(|l| l.ppu).sum(),
            layers,
        }
    }
}

/// Resources of one allocated layer.
pub fn layer_cost(layer: &LayerSpec, r_in: Rate, alloc: &LayerAllocation, scope: &CostScope) -> ResourceVector {
    let mut v = ResourceVector {
        weights: layer.weight_count(),
        ..Default::default()
    };
    let (k, f) = (layer.k, layer.f);
    match alloc {
        LayerAllocation::Conv(a) | LayerAllocation::Depthwise(a) => {
            v += kpu_cost(k, f, a.configs) * a.n_kpu;
            if a.accumulators > 0 {
                v += accumulator_cost(layer.d_out, a.interleave, a.n_kpu);
            }
            let depthwise = layer.kind == LayerKind::DepthwiseConv;
            if scope.include_bias && layer.has_bias() {
                v += bias_cost(layer.d_out, a.interleave);
            }
            let il = interleaver_cost(layer.d_in, a.interleave, r_in, layer.d_out);
            if scope.include_interleaver {
                v.mux2 += il.mux2;
            }
            if scope.include_fifos && (il.mux2 > 0 || depthwise) {
                v.registers += il.registers;
            }
            if a.rounded {
                // output hold registers once the channel split is uneven
                v.registers += layer.d_out;
            }
        }
        LayerAllocation::Pool(a) => {
            v += ppu_cost(k, f, a.configs) * a.n_ppu;
            if scope.include_interleaver {
                v.mux2 += interleaver_cost(layer.d_in, 1, r_in, layer.d_out).mux2;
            }
        }
        LayerAllocation::Fcu(a) => {
            v += fcu_cost(a.j, a.h, a.configs, a.n_fcu);
            if layer.kind == LayerKind::PointwiseConv
                && layer.lowered_from == Some(LayerKind::DepthwiseSeparableConv)
            {
                // depthwise → pointwise hand-over registers
                v.registers += layer.d_in;
            }
        }
        LayerAllocation::Residual { lanes } => {
            v.adders += lanes;
        }
    }
    v
}

fn cost_layers(plan: &ArchitecturePlan, scope: &CostScope) -> Vec<LayerCost> {
    plan.layers
        .iter()
        .map(|lp: &LayerPlan| LayerCost {
            name: lp.name.clone(),
            kind: lp.kind,
            r_in: lp.rate.r_in,
            r_out: lp.rate.r_out,
            configs: lp.alloc.configs(),
            resources: layer_cost(&lp.layer, lp.rate.r_in, &lp.alloc, scope),
            kpu: lp.alloc.kpus(),
            fcu: lp.alloc.fcus(),
            ppu: lp.alloc.ppus(),
            stalled: lp.rate.flow == crate::rate::Flow::Stalled,
        })
        .collect()
}

pub fn network_cost(plan: &ArchitecturePlan, scope: &CostScope) -> CostReport {
    CostReport::from_layers(*scope, cost_layers(plan, scope))
}

/// One neuron per unit: every layer runs at `r_in = d_in`, `C = 1`.
pub fn fully_parallel_reference_cost(spec: &NetworkSpec) -> Result<CostReport> {
    let rates: Vec<LayerRateInfo> = spec
        .layers
        .iter()
        .map(|l| {
            let r_in = Rate::integer(l.fc_inputs());
            let mut info = classify_flow(l, r_in);
            info.r_out = layer_output_rate(l, r_in);
            info
        })
        .collect();
    // wiring is intentionally not chained here, so build the plan directly
    let options = PlanOptions::default();
    let scope = CostScope::full();
    let layers = spec
        .layers
        .iter()
        .zip(&rates)
        .enumerate()
        .map(|(i, (l, info))| {
            let alloc = alloc_layer(i, l, info.r_in, &options)?;
            Ok(LayerCost {
                name: l.name.clone(),
                kind: l.kind,
                r_in: info.r_in,
                r_out: info.r_out,
                configs: alloc.configs(),
                resources: layer_cost(l, info.r_in, &alloc, &scope),
                kpu: alloc.kpus(),
                fcu: alloc.fcus(),
                ppu: alloc.ppus(),
                stalled: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostReport::from_layers(scope, layers))
}

/// Geometry of a single layer swept over input rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepGeometry {
    pub separable: bool,
    pub f: u64,
    pub k: u64,
    pub s: u64,
    pub p: u64,
    pub d_in: u64,
    pub d_out: u64,
}

impl SweepGeometry {
    /// Geometry of the named layer. A depthwise-separable layer is found
    /// under its own name; `None` picks the first convolution.
    pub fn from_spec(spec: &NetworkSpec, name: Option<&str>) -> Result<Self> {
        let found = spec.layers.iter().find(|l| {
            let sep = l.lowered_from == Some(LayerKind::DepthwiseSeparableConv) && l.kind == LayerKind::DepthwiseConv;
            let conv = l.kind == LayerKind::Conv || sep;
            match name {
                Some(n) => conv && (l.name == n || (sep && l.name.strip_suffix(".dw") == Some(n))),
                None => conv,
            }
        });
        let Some(l) = found else {
            return Err(Error::Config(match name {
                Some(n) => format!("no convolution layer named {n:?}"),
                None => "network has no convolution layer".into(),
            }));
        };
        let separable = l.kind == LayerKind::DepthwiseConv;
        let d_out = if separable {
            let i = spec.layers.iter().position(|x| std::ptr::eq(x, l)).expect("layer from spec");
            spec.layers[i + 1].d_out
        } else {
            l.d_out
        };
        Ok(SweepGeometry {
            separable,
            f: l.f,
            k: l.k,
            s: l.s,
            p: l.p,
            d_in: l.d_in,
            d_out,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub rate: Rate,
    pub resources: ResourceVector,
    pub kpus: u64,
    pub fcus: u64,
    pub stalled: bool,
}

/// One [`SweepRow`] per rate, priced without bias, interleaving or FIFOs.
pub fn sweep_rates(g: &SweepGeometry, rates: &[Rate]) -> Result<Vec<SweepRow>> {
    let scope = CostScope::layer_only();
    let options = PlanOptions::default();
    let layers = sweep_layers(g);
    rates
        .iter()
        .map(|&r| {
            let mut r_in = r;
            let mut row = SweepRow {
                rate: r,
                resources: ResourceVector::default(),
                kpus: 0,
                fcus: 0,
                stalled: false,
            };
            for (i, l) in layers.iter().enumerate() {
                let alloc = alloc_layer(i, l, r_in, &options)?;
                row.resources += layer_cost(l, r_in, &alloc, &scope);
                row.kpus += alloc.kpus();
                row.fcus += alloc.fcus();
                row.stalled |= classify_flow(l, r_in).flow == crate::rate::Flow::Stalled;
                r_in = layer_output_rate(l, r_in);
            }
            Ok(row)
        })
        .collect()
}

fn sweep_layers(g: &SweepGeometry) -> Vec<LayerSpec> {
    let base = LayerSpec {
        name: "L".into(),
        kind: LayerKind::Conv,
        f: g.f,
        k: g.k,
        s: g.s,
        p: g.p,
        d_in: g.d_in,
        d_out: g.d_out,
        residual_source: None,
        requant_shift: None,
        avg: None,
        lowered_from: None,
        bias: true,
    };
    if !g.separable {
        return vec![base];
    }
    let dw = LayerSpec {
        name: "L.dw".into(),
        kind: LayerKind::DepthwiseConv,
        d_out: g.d_in,
        lowered_from: Some(LayerKind::DepthwiseSeparableConv),
        ..base.clone()
    };
    let pw = LayerSpec {
        name: "L.pw".into(),
        kind: LayerKind::PointwiseConv,
        f: dw.f_out(),
        k: 1,
        s: 1,
        p: 0,
        lowered_from: Some(LayerKind::DepthwiseSeparableConv),
        ..base
    };
    vec![dw, pw]
}

/// Plan and price in one call.
pub fn plan_and_cost(spec: &NetworkSpec, options: &PlanOptions, scope: &CostScope) -> Result<(ArchitecturePlan, CostReport)> {
    let rates = crate::rate::propagate_rates(spec);
    let plan = plan_network(spec, &rates, options)?;
    let report = network_cost(&plan, scope);
    Ok((plan, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kpu_examples() {
        let v = kpu_cost(7, 28, 1);
        assert_eq!((v.adders, v.multipliers, v.registers, v.mux2), (48, 49, 174, 0));
        assert_eq!(kpu_cost(5, 24, 1).registers * 8, 800);
        let v = kpu_cost(1, 13, 1);
        assert_eq!((v.adders, v.multipliers, v.registers, v.mux2), (0, 1, 0, 0));
    }

    #[test]
    fn accumulator_examples() {
        let v = accumulator_cost(16, 1, 32);
        assert_eq!((v.registers, v.adders), (16, 32));
        assert_eq!(accumulator_cost(16, 1, 128).adders, 128);
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias_cost(16, 1), ResourceVector { adders: 16, ..Default::default() });
        assert_eq!(bias_cost(8, 1).adders, 8);
        let v = bias_cost(12, 12);
        assert_eq!((v.adders, v.mux2), (1, 11));
    }

    #[test]
    fn interleaver_examples() {
        assert_eq!(interleaver_cost(8, 1, Rate::integer(2), 16).mux2, 6);
        assert_eq!(interleaver_cost(8, 1, Rate::integer(8), 16).mux2, 0);
        let v = interleaver_cost(16, 1, Rate::integer(4), 16);
        assert_eq!((v.mux2, v.registers), (12, 16));
    }

    #[test]
    fn ppu_examples() {
        let v = ppu_cost(2, 24, 1) * 8;
        assert_eq!((v.max_units, v.registers), (24, 200));
        let v = ppu_cost(3, 12, 4) * 4;
        assert_eq!((v.max_units, v.registers), (32, 416));
        assert_eq!(ppu_cost(1, 9, 3).max_units, 0);
    }

    #[test]
    fn fcu_examples() {
        let v = fcu_cost(4, 5, 320, 2);
        assert_eq!((v.adders, v.multipliers, v.registers, v.mux2), (8, 8, 10, 2552));
        let v = fcu_cost(8, 1, 1, 16);
        assert_eq!((v.adders, v.multipliers), (128, 128));
        assert_eq!(fcu_cost(3, 2, 1, 1).mux2, 0);
    }

    #[test]
    fn empty_sweep() {
        let g = SweepGeometry { separable: false, f: 28, k: 7, s: 1, p: 3, d_in: 8, d_out: 16 };
        assert!(sweep_rates(&g, &[]).unwrap().is_empty());
    }
}
