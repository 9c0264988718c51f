//! The NOPK container: named arrays plus JSON metadata behind a checksum.

use neurop::data::{GrfSpec, PoissonDataset};
use neurop::error::ContainerError;
use neurop::io::Container;
use neurop::tensor::Tensor;

fn main() -> neurop::Result<()> {
    let mut c = Container::new();
    c.push("ramp", Tensor::real(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0])?)?;
    c.set_meta("note", serde_json::json!("hello"));
    let bytes = c.to_bytes();
    println!("{} bytes, magic {:?}", bytes.len(), std::str::from_utf8(&bytes[..4]).unwrap());
    let back = Container::from_bytes(&bytes).expect("roundtrip");
    assert_eq!(back, c);

    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] ^= 1;
    match Container::from_bytes(&bad) {
        Err(e @ ContainerError::Checksum { .. }) => println!("flipped bit: {e}"),
        other => panic!("expected a checksum error, got {other:?}"),
    }

    // datasets round-trip through the same format
    let dir = std::env::temp_dir().join("neurop-container-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("poisson.nopk");
    let ds = PoissonDataset::generate(&GrfSpec::default(), 2, 16, 4, 0)?;
    ds.save(&path)?;
    let loaded = PoissonDataset::load(&path)?;
    println!("dataset: {} samples at {}^2, identical: {}", loaded.len(), loaded.native_resolution(), loaded.solution == ds.solution);
    Ok(())
}
