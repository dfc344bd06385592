// Per-cycle traces of single KPUs and FCUs.

use cfcnn::sim::trace::{trace_fcu, trace_fcu_serial, trace_kpu, KpuTraceSetup};

pub fn run_example() -> cfcnn::Result<()> {
    let ramp = |n: usize| (0..n as i64).collect::<Vec<_>>();

    // 5x5 map, 3x3 kernel, no padding: nine valid windows
    let plain = trace_kpu(&KpuTraceSetup {
        f: 5,
        k: 3,
        p: 0,
        weights: vec![1; 9],
        maps: vec![ramp(25)],
    })?;
    println!("{}", plain.to_text());
    assert_eq!(plain.valid_cycles("y"), [12, 13, 14, 17, 18, 19, 22, 23, 24]);

    // same geometry with implicit padding; the pad column shows the masks
    let padded = trace_kpu(&KpuTraceSetup {
        f: 5,
        k: 3,
        p: 1,
        weights: vec![1; 9],
        maps: vec![ramp(25), ramp(25)],
    })?;
    println!("{}", padded.select(&["x", "pad", "y"])?.to_text());

    // FCU with j=4, h=5 over 8 inputs, batches at t=0 and t=5
    println!("{}", trace_fcu(4, 5, &ramp(8), vec![1; 40], &[0, 5])?.to_text());
    // the same FCU fed one input per cycle through an aggregator
    println!("{}", trace_fcu_serial(4, 4, &ramp(8), vec![1; 32])?.to_text());
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
