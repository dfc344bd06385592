// Random networks simulated and compared with the reference inference.

use cfcnn::alloc::{plan, PlanOptions};
use cfcnn::netspec::serialize_network;
use cfcnn::oracle::{gen_input, gen_network, gen_weights, ref_network, GenLimits};
use cfcnn::sim::{simulate_network, SimOptions};

pub fn run_example() -> cfcnn::Result<()> {
    let limits = GenLimits::default();
    let spec = gen_network(3, &limits);
    println!("{}", serialize_network(&spec));

    let mut checked = 0;
    for seed in 0..8 {
        let spec = gen_network(seed, &limits);
        let p = plan(&spec, &PlanOptions::default())?;
        let w = gen_weights(&spec, seed);
        let inputs: Vec<_> = (0..4).map(|m| gen_input(&spec, seed * 100 + m)).collect();
        let r = simulate_network(&p, &w, &inputs, &SimOptions::new())?;
        for (x, y) in inputs.iter().zip(&r.outputs) {
            assert_eq!(*y, ref_network(&spec, &w, x)?, "network {seed}");
            checked += 1;
        }
        let kinds: Vec<_> = spec.layers.iter().map(|l| l.kind.tag()).collect();
        println!("network {seed}: {} at rate {}, {} cycles", kinds.join("-"), spec.input_rate, r.stats.total_cycles);
    }
    println!("{checked} inferences bit-exact");
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
