// Exact per-layer data rates and flow classes for the bundled networks.

use std::path::Path;

use cfcnn::alloc::{plan, PlanOptions};
use cfcnn::netspec::parse_network_file;
use cfcnn::rate::{propagate_rates, Flow};
use cfcnn::report;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn run_example() -> cfcnn::Result<()> {
    let spec = parse_network_file(&data("running_example.json"))?;
    let p = plan(&spec, &PlanOptions::default())?;
    let (table, _) = report::analyze(&spec, &p);
    println!("{}", table.to_text());

    // rates are exact rationals all the way down
    let rates = propagate_rates(&spec);
    let f1 = rates.last().expect("layers");
    assert_eq!(f1.r_in.to_string(), "4/9");
    assert!(rates.iter().all(|r| r.flow != Flow::Stalled));

    let mobilenet = parse_network_file(&data("mobilenet_v1_a025.json"))?;
    let rates = propagate_rates(&mobilenet);
    println!("MobileNet a=0.25: {} lowered layers", mobilenet.layers.len());
    for (l, r) in mobilenet.layers.iter().zip(&rates).take(6) {
        println!("  {:8} r_in {:>6}  r_out {:>6}  {:?}", l.name, r.r_in.to_string(), r.r_out.to_string(), r.flow);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
