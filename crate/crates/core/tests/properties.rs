//! Property tests over random geometries, rates and networks.

use cfcnn::alloc::{plan, PlanOptions};
use cfcnn::cost::{fully_parallel_reference_cost, plan_and_cost, sweep_rates, CostScope, SweepGeometry};
use cfcnn::netspec::{parse_network, serialize_network, LayerKind};
use cfcnn::oracle::{gen_input, gen_network, gen_weights, ref_conv2d, ref_network, GenLimits, Tensor3};
use cfcnn::rate::{output_rate, output_side, output_valid, propagate_rates, Flow};
use cfcnn::sim::trace::{trace_kpu, KpuTraceSetup};
use cfcnn::sim::{simulate_network, SimOptions};
use cfcnn::Rate;
use num_rational::Ratio;
use proptest::prelude::*;

fn small_limits() -> GenLimits {
    GenLimits {
        max_layers: 4,
        max_f: 8,
        max_d: 6,
        allow_stall: true,
    }
}

/// Standard convolution with power-of-two depths.
fn conv_geometry() -> impl Strategy<Value = SweepGeometry> {
    (3u64..=16, prop::sample::select(vec![1u64, 3, 5, 7]), 0u32..=4, 0u32..=4).prop_flat_map(|(f, k, di, do_)| {
        let k = k.min(f);
        (0..=(k - 1) / 2).prop_map(move |p| SweepGeometry {
            separable: false,
            f,
            k,
            s: 1,
            p,
            d_in: 1 << di,
            d_out: 1 << do_,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_conservation(seed in any::<u64>()) {
        let spec = gen_network(seed, &small_limits());
        let rates = propagate_rates(&spec);
        let mut r = spec.input_rate;
        for (l, info) in spec.layers.iter().zip(&rates) {
            if l.kind != LayerKind::ResidualAdd {
                prop_assert_eq!(info.r_in, r);
                let want = Ratio::new(l.d_out, l.d_in * l.s * l.s) * info.r_in.ratio();
                prop_assert_eq!(info.r_out.ratio(), want);
                prop_assert_eq!(info.r_out, output_rate(l.d_in, l.d_out, info.r_in, l.s));
            }
            r = info.r_out;
        }
    }

    #[test]
    fn register_invariance_under_rate(g in conv_geometry(), m in 0u32..6) {
        // r and r/2, both at or below d_in and above the stall bound
        let r = Rate::new(g.d_in, 1 << m);
        let half = Rate::new(g.d_in, 2 << m);
        let rows = sweep_rates(&g, &[r, half]).unwrap();
        prop_assume!(!rows[1].stalled);
        prop_assert_eq!(rows[0].resources.registers, rows[1].resources.registers);
    }

    #[test]
    fn monotone_kpu_halving(g in conv_geometry(), m in 0u32..8) {
        let r = Rate::new(g.d_in, 1 << m);
        let rows = sweep_rates(&g, &[r, Rate::new(g.d_in, 2 << m)]).unwrap();
        let (a, b) = (&rows[0], &rows[1]);
        prop_assert!(b.kpus <= a.kpus);
        prop_assert_eq!(b.kpus, (a.kpus / 2).max(1));
        prop_assert_eq!(a.resources.multipliers, g.k * g.k * a.kpus);
    }

    #[test]
    fn fully_parallel_limit(seed in any::<u64>()) {
        let spec = gen_network(seed, &small_limits());
        let reference = fully_parallel_reference_cost(&spec).unwrap();
        let (_, ours) = plan_and_cost(&spec, &PlanOptions::default(), &CostScope::full()).unwrap();
        prop_assert_eq!(reference.total.mux2, 0);
        for (l, c) in spec.layers.iter().zip(&reference.layers) {
            prop_assert_eq!(c.configs, 1, "{}", l.name);
            if l.kind == LayerKind::Conv {
                prop_assert_eq!(c.kpu, l.d_in * l.d_out);
            }
        }
        prop_assert!(ours.total.multipliers <= reference.total.multipliers);
    }

    #[test]
    fn parallel_equals_ours_at_full_rate(g in conv_geometry()) {
        let rows = sweep_rates(&g, &[Rate::integer(g.d_in), Rate::new(g.d_in, 2)]).unwrap();
        prop_assert_eq!(rows[0].kpus, g.d_in * g.d_out);
        prop_assert_eq!(rows[0].resources.mux2, 0);
        prop_assert!(rows[1].resources.multipliers < rows[0].resources.multipliers || g.d_in * g.d_out == 1);
    }

    #[test]
    fn padding_equivalence(
        f in 3usize..=9,
        k in prop::sample::select(vec![1usize, 3, 5]),
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= f);
        let p = (k - 1) / 2;
        let w = cfcnn::oracle::gen_values(k * k, seed, 6, true);
        let map = cfcnn::oracle::gen_values(f * f, seed ^ 1, 6, true);
        let t = trace_kpu(&KpuTraceSetup { f, k, p, weights: w.clone(), maps: vec![map.clone()] }).unwrap();
        let got: Vec<i64> = t.valid_cycles("y").iter().map(|&c| t.value(c, "y").unwrap().as_int().unwrap()).collect();

        // explicit zero border, no padding
        let fp = f + 2 * p;
        let mut padded = Tensor3::zeros(fp, fp, 1);
        for r in 0..f {
            for c in 0..f {
                padded.set(r + p, c + p, 0, map[r * f + c]);
            }
        }
        let want = ref_conv2d(&padded, &w, &[0], 1, k, 1, 0).unwrap();
        prop_assert_eq!(got, want.data);
    }

    #[test]
    fn valid_count_formula(f in 1u64..=20, k in 1u64..=7, s in 1u64..=3, p in 0u64..=3) {
        prop_assume!(k <= f && 2 * p < k);
        let valid = (0..f * f).filter(|&n| output_valid(n, f, k, s, p).unwrap()).count() as u64;
        let side = output_side(f, k, s, p);
        prop_assert_eq!(valid, side * side);
    }

    #[test]
    fn parse_serialize_roundtrip(seed in any::<u64>()) {
        let spec = gen_network(seed, &small_limits());
        let text = serialize_network(&spec);
        prop_assert_eq!(parse_network(&text).unwrap(), spec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn determinism(seed in any::<u64>()) {
        let spec = gen_network(seed, &small_limits());
        let p = plan(&spec, &PlanOptions::default()).unwrap();
        let w = gen_weights(&spec, seed);
        let x = vec![gen_input(&spec, seed)];
        let options = SimOptions::new().with_trace(["*"]);
        let a = simulate_network(&p, &w, &x, &options).unwrap();
        let b = simulate_network(&p, &w, &x, &options).unwrap();
        prop_assert_eq!(&a.outputs, &b.outputs);
        prop_assert_eq!(a.trace.to_json(), b.trace.to_json());
        prop_assert_eq!(serde_json::to_string(&a.stats).unwrap(), serde_json::to_string(&b.stats).unwrap());
        prop_assert_eq!(p.to_json(), plan(&spec, &PlanOptions::default()).unwrap().to_json());
    }

    #[test]
    fn oracle_equivalence(seed in any::<u64>(), min_h in 1u64..=3) {
        let spec = gen_network(seed, &small_limits());
        let options = PlanOptions { min_h, ..Default::default() };
        prop_assume!(plan(&spec, &options).is_ok());
        let p = plan(&spec, &options).unwrap();
        let w = gen_weights(&spec, seed);
        let xs: Vec<_> = (0..3).map(|m| gen_input(&spec, seed.wrapping_add(m))).collect();
        let r = simulate_network(&p, &w, &xs, &SimOptions::new()).unwrap();
        for (x, y) in xs.iter().zip(&r.outputs) {
            prop_assert_eq!(y, &ref_network(&spec, &w, x).unwrap());
        }
    }

    #[test]
    fn steady_state_matches_plan(seed in any::<u64>()) {
        // non-stalling networks reach the planned period
        let spec = gen_network(seed, &GenLimits { allow_stall: false, ..small_limits() });
        let p = plan(&spec, &PlanOptions::default()).unwrap();
        prop_assume!(propagate_rates(&spec).iter().all(|r| r.flow != Flow::Stalled));
        let w = gen_weights(&spec, seed);
        let xs: Vec<_> = (0..4).map(|m| gen_input(&spec, m)).collect();
        let r = simulate_network(&p, &w, &xs, &SimOptions::new()).unwrap();
        prop_assert!(r.stats.cycles_per_inference <= p.cycles_per_inference.ceil());
    }
}
