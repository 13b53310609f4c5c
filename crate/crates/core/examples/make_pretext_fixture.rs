//! Regenerates `fixtures/tiny-irv2-pretext.fswa`.
//!
//! cargo run --release --example make_pretext_fixture

use std::path::Path;

use fiberseg::models::pretrain_tiny_2d;

fn main() -> anyhow::Result<()> {
    let (archive, val_meanacc) = pretrain_tiny_2d(1200, 12, 2024)?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny-irv2-pretext.fswa");
    archive.save(&path)?;
    println!("pretext validation meanacc {val_meanacc:.4}, wrote {}", path.display());
    Ok(())
}
