// Binary tensor fixtures and JSON weight files.

use std::path::Path;

use cfcnn::netspec::parse_network_file;
use cfcnn::oracle::{gen_input, gen_weights, read_fixture, ref_network, write_fixture, NetworkWeights};

pub fn run_example() -> cfcnn::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let spec = parse_network_file(&dir.join("running_example.json"))?;

    let weights = gen_weights(&spec, 0);
    let json = weights.to_json(&spec);
    assert_eq!(NetworkWeights::from_json(&spec, &json)?, weights);

    let x = gen_input(&spec, 0);
    let bytes = write_fixture(&x)?;
    println!("input fixture: {} bytes for {:?}", bytes.len(), x.shape());
    assert_eq!(read_fixture(&bytes)?, x);

    // the shipped seed-0 pair
    let shipped_in = read_fixture(&std::fs::read(dir.join("running_example_seed0_input.bin"))?)?;
    let shipped_out = read_fixture(&std::fs::read(dir.join("running_example_seed0_output.bin"))?)?;
    assert_eq!(shipped_in, x);
    assert_eq!(shipped_out, ref_network(&spec, &weights, &x)?);
    println!("seed-0 output: {:?}", shipped_out.data);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cfcnn::Result<()> {
    run_example()
}
