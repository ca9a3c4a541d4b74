//! Regenerates the reference fixture.
//!
//!     cargo run -p topicforge --example make_fixture -- crates/topicforge/fixtures/reference

use std::path::PathBuf;

use topicforge::fixture::{generate, write, FixtureSize};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures/reference"));
    let seed = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let fixture = generate(FixtureSize::default(), seed);
    write(&dir, &fixture)?;
    println!(
        "wrote {} click rows, {} catalog pages, {} items to {}",
        fixture.clicks.len(),
        fixture.catalog.len(),
        fixture.items.len(),
        dir.display()
    );
    Ok(())
}
