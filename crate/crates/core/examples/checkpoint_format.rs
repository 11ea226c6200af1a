//! Writes a component's parameters in the binary checkpoint format, reads
//! them back and decodes the header by hand.
//!
//!     cargo run --example checkpoint_format

use unicon::components::{Component, DimConfig};
use unicon::numerics::ParamSet;
use unicon::protocol::UniconModel;

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn main() -> anyhow::Result<()> {
    let model = UniconModel::init(&DimConfig::default(), false, 9);
    let params = model.nha.params();
    let bytes = params.to_bytes();
    println!("nha: {} bytes, sha256 {}", bytes.len(), params.digest());

    let mut at = 4;
    println!("{} entries", u32_at(&bytes, 0));
    for _ in 0..u32_at(&bytes, 0) {
        let len = u32_at(&bytes, at) as usize;
        let name = std::str::from_utf8(&bytes[at + 4..at + 4 + len])?;
        at += 4 + len;
        let (rows, cols) = (u32_at(&bytes, at), u32_at(&bytes, at + 4));
        at += 8 + 8 * (rows * cols) as usize;
        println!("  {name:<16} {rows}x{cols}");
    }
    assert_eq!(at, bytes.len());

    let path = std::env::temp_dir().join("nha_example.ckpt");
    std::fs::write(&path, &bytes)?;
    let back = ParamSet::from_bytes(&std::fs::read(&path)?)?;
    // The file carries no trainable flags, so load it into a component
    // whose layout already marks the batch-norm buffers.
    let mut fresh = UniconModel::init(&DimConfig::default(), false, 10).nha;
    fresh.params_mut().copy_values_from(&back)?;
    println!(
        "digest after reload matches: {}",
        fresh.params().digest() == params.digest()
    );
    println!(
        "reloaded parameters identical: {}",
        fresh.params() == params
    );
    Ok(())
}
