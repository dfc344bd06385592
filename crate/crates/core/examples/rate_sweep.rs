// One layer priced over a range of input rates, standard and separable.

use cfcnn::cost::{sweep_rates, SweepGeometry};
use cfcnn::report;
use cfcnn::Rate;

pub fn run_example() -> cfcnn::Result<()> {
    let rates: Vec<Rate> = ["8", "4", "2", "1", "1/2", "1/4", "1/8", "1/16", "1/32"]
        .iter()
        .map(|r| r.parse())
        .collect::<cfcnn::Result<_>>()?;
    let conv = SweepGeometry {
        separable: false,
        f: 28,
        k: 7,
        s: 1,
        p: 3,
        d_in: 8,
        d_out: 16,
    };
    let rows = sweep_rates(&conv, &rates)?;
    println!("standard convolution\n{}", report::sweep_table(&rows, false).to_text());
    // registers do not depend on the rate
    assert!(rows.iter().all(|r| r.resources.registers == 22288));

    let separable = SweepGeometry { separable: true, ..conv };
    let rows = sweep_rates(&separable, &rates[..6])?;
    println!("depthwise separable\n{}", report::sweep_table(&rows, true).to_text());
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
