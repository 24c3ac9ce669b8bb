use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{center_coords, AtomTable, BondGraph, Molecule, MoleculeError};

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub atoms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bonds: Option<Vec<(usize, usize, u8)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charges: Option<Vec<i64>>,
}

impl Record {
    pub fn from_molecule(m: &Molecule, table: &AtomTable) -> Self {
        Self {
            atoms: m.atoms.iter().map(|&a| table.symbol(a).to_string()).collect(),
            bonds: m.has_2d.then(|| m.bond_list()),
            coords: m.has_3d.then(|| m.coords.clone()),
            charges: m.charges.iter().any(|&c| c != 0).then(|| m.charges.clone()),
        }
    }

    pub fn into_molecule(self, table: &AtomTable, line: usize) -> Result<Molecule, MoleculeError> {
        let err = |msg: String| MoleculeError::Parse { line, msg };
        let n = self.atoms.len();
        let mut atoms = Vec::with_capacity(n);
        for s in &self.atoms {
            let idx = table.index_of(s).ok_or_else(|| MoleculeError::UnknownAtom {
                line,
                symbol: s.clone(),
            })?;
            atoms.push(idx);
        }
        let has_2d = self.bonds.is_some();
        let mut graph = BondGraph::empty(n);
        for &(i, j, order) in self.bonds.iter().flatten() {
            if i >= n || j >= n {
                return Err(err(format!("bond ({i}, {j}) out of range for {n} atoms")));
            }
            if i == j {
                return Err(err(format!("self-bond on atom {i}")));
            }
            if !(1..=3).contains(&order) {
                return Err(err(format!("bond ({i}, {j}) has order {order}, expected 1..=3")));
            }
            let prev = graph.order(i, j);
            if prev != 0 && prev != order {
                return Err(err(format!("bond ({i}, {j}) listed with orders {prev} and {order}")));
            }
            graph.set(i, j, order);
        }
        let has_3d = self.coords.is_some();
        let mut coords = match self.coords {
            Some(c) => {
                if c.len() != n {
                    return Err(err(format!("{} coordinates for {n} atoms", c.len())));
                }
                if c.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(err("non-finite coordinate".into()));
                }
                c
            }
            None => vec![[0.0; 3]; n],
        };
        center_coords(&mut coords);
        let charges = match self.charges {
            Some(c) if c.len() != n => return Err(err(format!("{} charges for {n} atoms", c.len()))),
            Some(c) => c,
            None => vec![0; n],
        };
        Ok(Molecule {
            atoms,
            charges,
            bonds: graph,
            coords,
            has_2d,
            has_3d,
        })
    }
}

/// Parses JSONL text; blank lines are skipped. Line numbers are 1-based.
pub fn parse_dataset(text: &str, table: &AtomTable) -> Result<Vec<Molecule>, MoleculeError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| MoleculeError::Parse {
            line: k + 1,
            msg: e.to_string(),
        })?;
        out.push(record.into_molecule(table, k + 1)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path, table: &AtomTable) -> Result<Vec<Molecule>, MoleculeError> {
    let text = fs::read_to_string(path).map_err(|source| MoleculeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, table)
}

/// Loads a dataset with the default atom table.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Molecule>, MoleculeError> {
    read_dataset(path.as_ref(), &AtomTable::default())
}

pub fn to_jsonl(molecules: &[Molecule], table: &AtomTable) -> String {
    let mut s = String::new();
    for m in molecules {
        let line = serde_json::to_string(&Record::from_molecule(m, table)).expect("record serializes");
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn write_dataset(path: impl AsRef<Path>, molecules: &[Molecule], table: &AtomTable) -> Result<(), MoleculeError> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(molecules, table)).map_err(|source| MoleculeError::Io {
        path: path.display().to_string(),
        source,
    })
}
