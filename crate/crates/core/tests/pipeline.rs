//! Parse, plan, cost and simulate together on shipped and small networks.

use std::path::{Path, PathBuf};

use cfcnn::alloc::{plan, PlanOptions};
use cfcnn::cost::{fully_parallel_reference_cost, plan_and_cost, CostScope};
use cfcnn::netspec::{parse_network, parse_network_file, NetworkSpec};
use cfcnn::oracle::{gen_input, gen_weights, read_fixture, ref_network, write_fixture};
use cfcnn::rate::Flow;
use cfcnn::sim::{measure_utilization, simulate_network, SimOptions};
use cfcnn::Error;
use num_rational::Ratio;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn one_conv(rate: &str, p: u64) -> NetworkSpec {
    parse_network(&format!(
        r#"{{"input": {{"height": 6, "width": 6, "channels": 2, "rate": "{rate}"}},
            "quant": {{"weight_bits": 8, "activation_bits": 8}},
            "layers": [{{"kind": "conv", "name": "C", "f": 6, "k": 3, "s": 1, "p": {p}, "d_out": 2}}]}}"#
    ))
    .unwrap()
}

fn utilization(spec: &NetworkSpec) -> Option<Ratio<u64>> {
    let p = plan(spec, &PlanOptions::default()).unwrap();
    let w = gen_weights(spec, 1);
    let xs: Vec<_> = (0..3).map(|m| gen_input(spec, m)).collect();
    let r = simulate_network(&p, &w, &xs, &SimOptions::new()).unwrap();
    for (x, y) in xs.iter().zip(&r.outputs) {
        assert_eq!(*y, ref_network(spec, &w, x).unwrap());
    }
    measure_utilization(&r.stats)[0]
}

#[test]
fn seed0_fixture_regenerates() {
    let spec = parse_network_file(&data("running_example.json")).unwrap();
    let x = gen_input(&spec, 0);
    let y = ref_network(&spec, &gen_weights(&spec, 0), &x).unwrap();
    assert_eq!(std::fs::read(data("running_example_seed0_input.bin")).unwrap(), write_fixture(&x).unwrap());
    assert_eq!(std::fs::read(data("running_example_seed0_output.bin")).unwrap(), write_fixture(&y).unwrap());
    assert_eq!(read_fixture(&write_fixture(&y).unwrap()).unwrap(), y);
}

#[test]
fn measured_utilization_follows_the_rate_model() {
    // full rate: one KPU per kernel, busy every cycle
    assert_eq!(utilization(&one_conv("2", 1)), Some(Ratio::from_integer(1)));
    // interleaving restores continuous flow
    assert_eq!(utilization(&one_conv("1/2", 1)), Some(Ratio::from_integer(1)));
    // configurations capped at d_in·d_out = 4: half the cycles idle
    let stalled = one_conv("1/4", 0);
    let p = plan(&stalled, &PlanOptions::default()).unwrap();
    assert_eq!(p.layers[0].rate.flow, Flow::Stalled);
    assert_eq!(p.layers[0].rate.utilization, Ratio::new(1, 2));
    assert_eq!(utilization(&stalled), Some(Ratio::new(1, 2)));
}

#[test]
fn running_example_period() {
    let spec = parse_network_file(&data("running_example.json")).unwrap();
    let p = plan(&spec, &PlanOptions::default()).unwrap();
    assert_eq!(p.cycles_per_inference, Ratio::from_integer(680));
    let w = gen_weights(&spec, 2);
    let xs: Vec<_> = (0..3).map(|m| gen_input(&spec, m)).collect();
    let r = simulate_network(&p, &w, &xs, &SimOptions::new()).unwrap();
    assert_eq!(r.stats.cycles_per_inference, Ratio::from_integer(680));
    let u = measure_utilization(&r.stats);
    // C2 runs every cycle once interleaved
    assert_eq!(u[2], Some(Ratio::from_integer(1)));
}

#[test]
fn mobilenet_unit_and_resource_totals() {
    // (file, KPU, FCU, adders, multipliers, registers)
    let want = [
        ("mobilenet_v1_a025.json", 44, 632, 1096, 1116, 75600),
        ("mobilenet_v1_a050.json", 80, 2228, 3436, 3468, 150200),
        ("mobilenet_v1_a075.json", 122, 1880, 7160, 7210, 247840),
        ("mobilenet_v1_a100.json", 158, 5465, 12177, 12239, 299400),
    ];
    for (file, kpu, fcu, add, mul, reg) in want {
        let spec = parse_network_file(&data(file)).unwrap();
        let (p, c) = plan_and_cost(&spec, &PlanOptions::default(), &CostScope::full()).unwrap();
        let t = p.totals();
        assert_eq!((t.kpu, t.fcu), (kpu, fcu), "{file}");
        assert_eq!((c.total.adders, c.total.multipliers, c.total.registers), (add, mul, reg), "{file}");
        let reference = fully_parallel_reference_cost(&spec).unwrap();
        assert_eq!(reference.total.mux2, 0);
        assert!(reference.total.multipliers > c.total.multipliers);
    }
}

#[test]
fn simulator_rejects_wide_padding() {
    let spec = parse_network(
        r#"{"input": {"height": 6, "width": 6, "channels": 1, "rate": "1"},
            "quant": {"weight_bits": 8, "activation_bits": 8},
            "layers": [{"kind": "conv", "f": 6, "k": 3, "s": 1, "p": 2, "d_out": 1}]}"#,
    )
    .unwrap();
    let p = plan(&spec, &PlanOptions::default()).unwrap();
    let w = gen_weights(&spec, 0);
    let err = simulate_network(&p, &w, &[gen_input(&spec, 0)], &SimOptions::new()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn wrong_input_shape_is_an_error() {
    let spec = one_conv("1", 1);
    let p = plan(&spec, &PlanOptions::default()).unwrap();
    let w = gen_weights(&spec, 0);
    let x = cfcnn::oracle::Tensor3::zeros(5, 5, 2);
    assert!(matches!(
        simulate_network(&p, &w, &[x], &SimOptions::new()),
        Err(Error::Shape(_))
    ));
}
