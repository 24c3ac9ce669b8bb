mod common;

use mudiff::metrics::{atom_stability, canonical_hash, evaluate, molecule_stability, uniqueness, validity};
use mudiff::molecule::{AtomTable, Molecule};

#[test]
fn corpus_flags_match_hand_computed_values() {
    let table = AtomTable::default();
    for e in common::metrics_corpus() {
        assert_eq!(atom_stability(&e.molecule, &table), e.atom_stable, "{}", e.name);
        assert_eq!(molecule_stability(&e.molecule, &table), e.atom_stable.iter().all(|&s| s), "{}", e.name);
        assert_eq!(validity(&e.molecule, &table), e.valid, "{}", e.name);
    }
}

#[test]
fn stability_implies_valence_bound() {
    let table = AtomTable::default();
    for e in common::metrics_corpus() {
        let m = &e.molecule;
        if molecule_stability(m, &table) {
            let ok = m.bonds.valence_sums().iter().zip(&m.atoms).all(|(&v, &a)| v <= table.valency(a));
            assert!(ok, "{}", e.name);
        }
    }
}

#[test]
fn empty_molecule_is_vacuously_stable_and_degenerate() {
    let table = AtomTable::default();
    let empty = Molecule::new(vec![], &[], None);
    assert!(molecule_stability(&empty, &table));
    assert!(!validity(&empty, &table));
    let r = evaluate(&[empty], &table);
    assert!(r.flags[0].degenerate);
    assert!(!r.warnings.is_empty());
}

fn methane() -> Molecule {
    Molecule::new(vec![1, 0, 0, 0, 0], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)], None)
}

#[test]
fn uniqueness_examples() {
    assert_eq!(uniqueness(&[methane(), methane()]), 0.5);
    let relabeled = methane().permuted(&[3, 1, 0, 2, 4]);
    assert_eq!(canonical_hash(&relabeled), canonical_hash(&methane()));
    assert_eq!(uniqueness(&[methane(), relabeled]), 0.5);
    let corpus: Vec<Molecule> = common::metrics_corpus()
        .into_iter()
        .filter(|e| e.valid)
        .map(|e| e.molecule)
        .collect();
    assert_eq!(uniqueness(&corpus), 1.0);
    assert_eq!(uniqueness(&[]), 0.0);
}

#[test]
fn bond_orders_and_charges_separate_hashes() {
    let single = Molecule::new(vec![1, 1], &[(0, 1, 1)], None);
    let double = Molecule::new(vec![1, 1], &[(0, 1, 2)], None);
    assert_ne!(canonical_hash(&single), canonical_hash(&double));
    let mut charged = single.clone();
    charged.charges[0] = 1;
    assert_ne!(canonical_hash(&single), canonical_hash(&charged));
}

#[test]
fn regular_graphs_that_refinement_alone_confuses() {
    // triangular prism vs K3,3: both 3-regular on six carbons
    let prism = Molecule::new(
        vec![1; 6],
        &[(0, 1, 1), (1, 2, 1), (2, 0, 1), (3, 4, 1), (4, 5, 1), (5, 3, 1), (0, 3, 1), (1, 4, 1), (2, 5, 1)],
        None,
    );
    let k33 = Molecule::new(
        vec![1; 6],
        &[(0, 3, 1), (0, 4, 1), (0, 5, 1), (1, 3, 1), (1, 4, 1), (1, 5, 1), (2, 3, 1), (2, 4, 1), (2, 5, 1)],
        None,
    );
    assert_ne!(canonical_hash(&prism), canonical_hash(&k33));
    assert_eq!(canonical_hash(&prism.permuted(&[5, 3, 1, 0, 2, 4])), canonical_hash(&prism));
}

#[test]
fn hash_agrees_with_brute_force_isomorphism() {
    let checked = common::check_hash_against_brute_force(6).unwrap();
    assert!(checked > 200_000);
}

#[test]
fn metrics_are_relabeling_invariant() {
    let table = AtomTable::default();
    for e in common::metrics_corpus() {
        let n = e.molecule.n_atoms();
        let perm: Vec<usize> = (0..n).rev().collect();
        let p = e.molecule.permuted(&perm);
        assert_eq!(validity(&p, &table), e.valid);
        assert_eq!(molecule_stability(&p, &table), molecule_stability(&e.molecule, &table));
        assert_eq!(canonical_hash(&p), canonical_hash(&e.molecule));
    }
}

#[test]
fn report_on_ten_methanes() {
    let table = AtomTable::default();
    let r = evaluate(&vec![methane(); 10], &table);
    assert_eq!(r.n_samples, 10);
    assert_eq!((r.atom_stable_fraction, r.mol_stable_fraction, r.valid_fraction), (1.0, 1.0, 1.0));
    assert!((r.unique_fraction - 0.1).abs() < 1e-15);
    let csv = r.flags_csv();
    assert_eq!(csv.lines().count(), 11);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"unique_fraction\""));
}

#[test]
fn report_on_corpus_respects_bounds() {
    let table = AtomTable::default();
    let corpus: Vec<Molecule> = common::metrics_corpus().into_iter().map(|e| e.molecule).collect();
    let r = evaluate(&corpus, &table);
    for v in [r.atom_stable_fraction, r.mol_stable_fraction, r.valid_fraction, r.unique_fraction] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(r.n_valid, 7);
    assert!((r.mol_stable_fraction - 6.0 / 12.0).abs() < 1e-15);
    for f in &r.flags {
        if f.mol_stable {
            assert_eq!(f.stable_atoms, f.n_atoms);
        }
    }
    let empty = evaluate(&[], &table);
    assert_eq!(empty.n_samples, 0);
    assert!(!empty.warnings.is_empty());
}
