//! Stability, validity and uniqueness of generated molecules.

mod canonical;

pub use canonical::{canonical_form, canonical_hash, refine};

use std::collections::HashSet;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::molecule::{components, AtomTable, Molecule};

/// Per-atom flags: the bond-order sum equals the table valency.
pub fn atom_stability(m: &Molecule, table: &AtomTable) -> Vec<bool> {
    m.bonds
        .valence_sums()
        .iter()
        .zip(&m.atoms)
        .map(|(&v, &a)| v == table.valency(a))
        .collect()
}

/// Every atom stable. Vacuously true for an empty molecule.
pub fn molecule_stability(m: &Molecule, table: &AtomTable) -> bool {
    atom_stability(m, table).iter().all(|&s| s)
}

/// No atom exceeds its valency (the deficit is assumed to be implicit
/// hydrogens) and the bond graph is one connected piece. Empty molecules are
/// invalid.
pub fn validity(m: &Molecule, table: &AtomTable) -> bool {
    m.n_atoms() > 0
        && m.bonds
            .valence_sums()
            .iter()
            .zip(&m.atoms)
            .all(|(&v, &a)| v <= table.valency(a))
        && components(&m.bonds) == 1
}

/// Distinct canonical hashes divided by the number of molecules, 0 when empty.
pub fn uniqueness(valid: &[Molecule]) -> f64 {
    if valid.is_empty() {
        warn!("uniqueness of an empty set is reported as 0");
        return 0.0;
    }
    let hashes: HashSet<String> = valid.par_iter().map(canonical_hash).collect::<Vec<_>>().into_iter().collect();
    hashes.len() as f64 / valid.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculeFlags {
    pub index: usize,
    pub n_atoms: usize,
    pub stable_atoms: usize,
    pub mol_stable: bool,
    pub valid: bool,
    /// Empty, or without bond structure to judge.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub n_atoms: usize,
    pub atom_stable_fraction: f64,
    pub mol_stable_fraction: f64,
    pub valid_fraction: f64,
    /// Among valid molecules.
    pub unique_fraction: f64,
    pub n_valid: usize,
    pub validity_rule: &'static str,
    pub warnings: Vec<String>,
    pub flags: Vec<MoleculeFlags>,
}

/// Validity here is a valence bound plus connectivity, not a cheminformatics
/// sanitizer.
pub const VALIDITY_RULE: &str = "bond-order sum <= valency for every atom, and a single connected component";

impl EvalReport {
    pub const FLAGS_CSV_HEADER: &'static str = "index,n_atoms,stable_atoms,mol_stable,valid,degenerate";

    pub fn flags_csv(&self) -> String {
        let mut s = String::from(Self::FLAGS_CSV_HEADER);
        s.push('\n');
        for f in &self.flags {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.index, f.n_atoms, f.stable_atoms, f.mol_stable, f.valid, f.degenerate
            ));
        }
        s
    }
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Scores every molecule. Molecules without bond structure count as unstable
/// and invalid, and are flagged degenerate.
pub fn evaluate(samples: &[Molecule], table: &AtomTable) -> EvalReport {
    let flags: Vec<MoleculeFlags> = samples
        .par_iter()
        .enumerate()
        .map(|(index, m)| {
            let n = m.n_atoms();
            if !m.has_2d {
                return MoleculeFlags {
                    index,
                    n_atoms: n,
                    stable_atoms: 0,
                    mol_stable: false,
                    valid: false,
                    degenerate: true,
                };
            }
            let atoms = atom_stability(m, table);
            MoleculeFlags {
                index,
                n_atoms: n,
                stable_atoms: atoms.iter().filter(|&&s| s).count(),
                mol_stable: atoms.iter().all(|&s| s),
                valid: validity(m, table),
                degenerate: n == 0,
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if samples.is_empty() {
        warnings.push("no samples to evaluate".to_string());
    }
    let no_bonds = samples.iter().filter(|m| !m.has_2d).count();
    if no_bonds > 0 {
        warnings.push(format!("{no_bonds} samples carry no bond structure and count as unstable"));
    }
    let empty = flags.iter().filter(|f| f.n_atoms == 0).count();
    if empty > 0 {
        warnings.push(format!("{empty} samples have no atoms"));
    }
    let valid: Vec<Molecule> = samples
        .iter()
        .zip(&flags)
        .filter(|(_, f)| f.valid)
        .map(|(m, _)| m.clone())
        .collect();
    if valid.is_empty() && !samples.is_empty() {
        warnings.push("no valid samples; uniqueness is reported as 0".to_string());
    }
    for w in &warnings {
        warn!("{w}");
    }
    let n_atoms: usize = flags.iter().map(|f| f.n_atoms).sum();
    EvalReport {
        n_samples: samples.len(),
        n_atoms,
        atom_stable_fraction: fraction(flags.iter().map(|f| f.stable_atoms).sum(), n_atoms),
        mol_stable_fraction: fraction(flags.iter().filter(|f| f.mol_stable).count(), samples.len()),
        valid_fraction: fraction(valid.len(), samples.len()),
        unique_fraction: if valid.is_empty() { 0.0 } else { uniqueness(&valid) },
        n_valid: valid.len(),
        validity_rule: VALIDITY_RULE,
        warnings,
        flags,
    }
}
