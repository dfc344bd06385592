// KPU/PPU/FCU allocation, with the fully parallel reference for contrast.

use std::path::Path;

use cfcnn::alloc::{plan, PlanOptions, PointwiseSizing};
use cfcnn::cost::fully_parallel_reference_cost;
use cfcnn::netspec::parse_network_file;
use cfcnn::report;

pub fn run_example() -> cfcnn::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = parse_network_file(&dir.join("running_example.json"))?;

    let p = plan(&spec, &PlanOptions::default())?;
    println!("{}", report::plan_table(&p).to_text());
    let ours = p.totals();
    let reference = fully_parallel_reference_cost(&spec)?;
    println!("ours: {} KPU, {} FCU; fully parallel: {} KPU, {} FCU", ours.kpu, ours.fcu, reference.kpu, reference.fcu);
    assert_eq!((ours.kpu, ours.fcu), (40, 2));
    assert_eq!((reference.kpu, reference.fcu), (136, 10));

    // a deeper adder pipeline forces FCUs to share inputs over more neurons
    let deep = plan(&spec, &PlanOptions { min_h: 8, ..Default::default() })?;
    let f1 = deep.layers.last().expect("layers");
    println!("min_h=8: F1 gets {:?}", f1.alloc);

    for file in ["mobilenet_v1_a025.json", "mobilenet_v1_a100.json"] {
        let spec = parse_network_file(&dir.join(file))?;
        for pointwise in [PointwiseSizing::RateMatched, PointwiseSizing::SharedNeurons] {
            let t = plan(&spec, &PlanOptions { pointwise, ..Default::default() })?.totals();
            println!("{file} {pointwise:?}: {} KPU, {} FCU, {} PPU", t.kpu, t.fcu, t.ppu);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
