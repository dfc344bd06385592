// Closed-form resource cost of the running example in each scope.

use std::path::Path;

use cfcnn::cost::{fully_parallel_reference_cost, plan_and_cost, CostScope};
use cfcnn::netspec::parse_network_file;
use cfcnn::report;

pub fn run_example() -> cfcnn::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/running_example.json");
    let spec = parse_network_file(&path)?;

    let (_, full) = plan_and_cost(&spec, &Default::default(), &CostScope::full())?;
    println!("with bias, interleavers and FIFOs\n{}", report::cost_table(&full).to_text());
    let t = full.total;
    assert_eq!((t.adders, t.multipliers, t.registers, t.max_units), (1024, 1008, 8114, 56));

    let (_, bare) = plan_and_cost(&spec, &Default::default(), &CostScope::layer_only())?;
    println!("layer units only\n{}", report::cost_table(&bare).to_text());

    let reference = fully_parallel_reference_cost(&spec)?;
    println!("fully parallel\n{}", report::cost_table(&reference).to_text());
    assert_eq!(reference.total.mux2, 0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
