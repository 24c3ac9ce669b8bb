//! Generates synthetic molecules, writes them as JSONL and reads them back.
//!
//! `cargo run --example synthetic_dataset -- [count] [path]`

use std::collections::BTreeMap;

use mudiff::molecule::{load_dataset, make_synthetic_dataset, write_dataset, AtomTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(32);
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("mudiff_synthetic.jsonl").display().to_string());

    let table = AtomTable::default();
    let data = make_synthetic_dataset(count, 9, 1);
    write_dataset(&path, &data, &table)?;
    let back = load_dataset(&path)?;
    assert_eq!(back, data, "JSONL round trip changed the data");

    let mut sizes = BTreeMap::new();
    let mut elements = BTreeMap::new();
    for m in &data {
        *sizes.entry(m.n_atoms()).or_insert(0) += 1;
        for &a in &m.atoms {
            *elements.entry(table.symbol(a)).or_insert(0) += 1;
        }
    }
    println!("wrote and re-read {} molecules at {path}", back.len());
    println!("atom counts: {sizes:?}");
    println!("elements: {elements:?}");
    let first = std::fs::read_to_string(&path)?;
    println!("first record: {}", first.lines().next().unwrap_or(""));
    Ok(())
}
