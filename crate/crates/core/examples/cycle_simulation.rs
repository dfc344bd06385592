// Cycle-accurate run of the running example, checked against the oracle.

use std::path::Path;

use cfcnn::alloc::{plan, PlanOptions};
use cfcnn::netspec::parse_network_file;
use cfcnn::oracle::{gen_input, gen_weights, ref_network};
use cfcnn::report;
use cfcnn::sim::{measure_utilization, simulate_network, SimOptions};

pub fn run_example() -> cfcnn::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/running_example.json");
    let spec = parse_network_file(&path)?;
    let p = plan(&spec, &PlanOptions::default())?;
    let weights = gen_weights(&spec, 7);

    // three maps back to back so the steady state is visible
    let inputs: Vec<_> = (0..3).map(|m| gen_input(&spec, 100 + m)).collect();
    let r = simulate_network(&p, &weights, &inputs, &SimOptions::new().with_trace(["F1.y"]))?;
    println!("{}", report::sim_table(&r.stats).to_text());

    for (x, y) in inputs.iter().zip(&r.outputs) {
        assert_eq!(*y, ref_network(&spec, &weights, x)?);
    }
    println!("outputs match the reference for {} maps", inputs.len());
    println!("steady-state period: {} cycles", r.stats.cycles_per_inference);
    for (l, u) in r.stats.layers.iter().zip(measure_utilization(&r.stats)) {
        println!("  {:3} utilization {}", l.name, u.map_or("-".into(), |u| u.to_string()));
    }
    println!("F1 emits at cycles {:?}", &r.trace.valid_cycles("F1.y")[..10]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
