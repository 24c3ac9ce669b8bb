//! Scores a handful of hand-built molecules: stability, validity and
//! uniqueness up to relabeling.

use mudiff::metrics::{canonical_hash, evaluate};
use mudiff::molecule::{AtomTable, Molecule};

fn main() {
    let table = AtomTable::default();
    // H=0 C=1 N=2 O=3 F=4
    let water = Molecule::new(vec![3, 0, 0], &[(0, 1, 1), (0, 2, 1)], None);
    let water_relabeled = Molecule::new(vec![0, 3, 0], &[(1, 0, 1), (1, 2, 1)], None);
    let methane = Molecule::new(vec![1, 0, 0, 0, 0], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)], None);
    let formaldehyde_skeleton = Molecule::new(vec![1, 3], &[(0, 1, 2)], None);
    let overbonded = Molecule::new(vec![3, 0, 0, 0], &[(0, 1, 1), (0, 2, 1), (0, 3, 1)], None);
    let fragments = Molecule::new(vec![4, 4, 4, 4], &[(0, 1, 1), (2, 3, 1)], None);
    let samples = vec![water.clone(), water_relabeled.clone(), methane, formaldehyde_skeleton, overbonded, fragments];

    println!("relabeled water hashes equal: {}", canonical_hash(&water) == canonical_hash(&water_relabeled));
    let report = evaluate(&samples, &table);
    for f in &report.flags {
        println!(
            "sample {}: {} atoms, {} stable, molecule stable {}, valid {}",
            f.index, f.n_atoms, f.stable_atoms, f.mol_stable, f.valid
        );
    }
    println!(
        "atom stable {:.3}, molecule stable {:.3}, valid {:.3}, unique among valid {:.3}",
        report.atom_stable_fraction, report.mol_stable_fraction, report.valid_fraction, report.unique_fraction
    );
    println!("validity rule: {}", report.validity_rule);
}
