//! Depth-first SMILES writer for molecules read from structure files.

use super::kekule::{kekulize, KekuleAtom};
use super::parser::{organic_valences, parse_smiles};
use super::{AtomOrder, LineError};
use crate::molgraph::{Bond, BondOrder, Molecule};

struct Plan {
    children: Vec<Vec<usize>>,
    /// ring-closure partners per atom
    rings: Vec<Vec<usize>>,
    preorder: Vec<usize>,
}

fn plan(root: usize, adj: &[Vec<usize>]) -> Plan {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut children = vec![Vec::new(); n];
    let mut rings = vec![Vec::new(); n];
    let mut preorder = Vec::new();
    // explicit stack of (atom, parent, next neighbor cursor)
    let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
    visited[root] = true;
    preorder.push(root);
    while let Some(&mut (u, parent, ref mut cursor)) = stack.last_mut() {
        if *cursor >= adj[u].len() {
            stack.pop();
            continue;
        }
        let v = adj[u][*cursor];
        *cursor += 1;
        if Some(v) == parent {
            continue;
        }
        if visited[v] {
            // back edge to an ancestor; record once, from the descendant side
            if !rings[u].contains(&v) {
                rings[u].push(v);
                rings[v].push(u);
            }
            continue;
        }
        visited[v] = true;
        preorder.push(v);
        children[u].push(v);
        stack.push((v, Some(u), 0));
    }
    Plan {
        children,
        rings,
        preorder,
    }
}

fn bond_symbol(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single | BondOrder::Aromatic => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
    }
}

fn ring_label(label: u32) -> String {
    if label < 10 {
        label.to_string()
    } else {
        format!("%{label}")
    }
}

/// Writes a kekulé SMILES for `mol` and returns the permutation from the
/// molecule's atom indices to the parsed line-notation order.
///
/// Hydrogens bonded to exactly one heavy atom become implicit; every other
/// atom is written explicitly, bracketed when the default valence would
/// imply a different hydrogen count.
pub fn write_smiles(mol: &Molecule) -> Result<(String, AtomOrder), LineError> {
    mol.ensure_connected()
        .map_err(|e| LineError::Unwritable(e.to_string()))?;
    let n = mol.atom_count();
    let atoms = mol.atoms();
    let full_adj = mol.adjacency();

    let kek_atoms: Vec<KekuleAtom> = atoms
        .iter()
        .enumerate()
        .map(|(i, a)| KekuleAtom {
            aromatic: false,
            z: a.atomic_number(),
            charge: a.formal_charge,
            explicit_h: Some(0),
            offset: i,
        })
        .collect();
    let pairs: Vec<(usize, usize, BondOrder)> = mol
        .bonds()
        .iter()
        .map(|b| {
            let (a, c) = b.endpoints();
            (a, c, b.order)
        })
        .collect();
    let orders = kekulize(&kek_atoms, &pairs).map_err(|e| LineError::Unwritable(e.to_string()))?;
    let order_of = |a: usize, b: usize| -> BondOrder {
        let key = (a.min(b), a.max(b));
        pairs
            .iter()
            .position(|&(x, y, _)| (x, y) == key)
            .map(|k| orders[k])
            .expect("bond exists")
    };

    let implicit: Vec<bool> = (0..n)
        .map(|i| {
            atoms[i].is_hydrogen()
                && atoms[i].formal_charge == 0
                && full_adj[i].len() == 1
                && !atoms[full_adj[i][0]].is_hydrogen()
                && order_of(i, full_adj[i][0]) == BondOrder::Single
        })
        .collect();
    let heavy_adj: Vec<Vec<usize>> = (0..n)
        .map(|i| full_adj[i].iter().copied().filter(|&j| !implicit[j]).collect())
        .collect();
    let hydrogens: Vec<Vec<usize>> = (0..n)
        .map(|i| full_adj[i].iter().copied().filter(|&j| implicit[j]).collect())
        .collect();

    let root = (0..n)
        .find(|&i| !implicit[i])
        .ok_or_else(|| LineError::Unwritable("no heavy atom".into()))?;
    let plan = plan(root, &heavy_adj);

    let atom_text = |i: usize| -> Result<String, LineError> {
        let atom = &atoms[i];
        let h = hydrogens[i].len() as u32;
        let bond_sum: u32 = heavy_adj[i]
            .iter()
            .map(|&j| order_of(i, j).half_valence() / 2)
            .sum();
        let symbol = atom.symbol();
        if atom.formal_charge == 0 {
            let default_h = organic_valences(atom.atomic_number())
                .iter()
                .find(|&&v| v >= bond_sum)
                .map(|v| v - bond_sum);
            if default_h == Some(h) {
                return Ok(symbol.to_string());
            }
        }
        if h > 9 {
            return Err(LineError::Unwritable(format!("atom {i} carries {h} hydrogens")));
        }
        let mut s = format!("[{symbol}");
        match h {
            0 => {}
            1 => s.push('H'),
            _ => s.push_str(&format!("H{h}")),
        }
        match atom.formal_charge {
            0 => {}
            1 => s.push('+'),
            -1 => s.push('-'),
            q if q.abs() <= 9 => s.push_str(&format!("{q:+}")),
            q => return Err(LineError::Unwritable(format!("charge {q} on atom {i}"))),
        }
        s.push(']');
        Ok(s)
    };

    let mut emitted = vec![false; n];
    let mut open_label: std::collections::HashMap<(usize, usize), u32> = Default::default();
    let mut free_labels: std::collections::BTreeSet<u32> = (1..100).collect();
    let mut out = String::new();
    let mut order = Vec::with_capacity(n);

    // iterative emission: Enter(atom, incoming bond prefix) and literal text
    enum Step {
        Enter(usize, &'static str),
        Text(&'static str),
    }
    let mut work = vec![Step::Enter(root, "")];
    while let Some(step) = work.pop() {
        let u = match step {
            Step::Text(t) => {
                out.push_str(t);
                continue;
            }
            Step::Enter(u, prefix) => {
                out.push_str(prefix);
                u
            }
        };
        out.push_str(&atom_text(u)?);
        emitted[u] = true;
        order.push(u);
        order.extend(hydrogens[u].iter().copied());

        let (closing, opening): (Vec<usize>, Vec<usize>) =
            plan.rings[u].iter().partition(|&&w| emitted[w]);
        for w in closing {
            let label = open_label
                .remove(&(w.min(u), w.max(u)))
                .expect("ring opened before closing");
            out.push_str(&ring_label(label));
            free_labels.insert(label);
        }
        for w in opening {
            let label = free_labels
                .pop_first()
                .ok_or_else(|| LineError::Unwritable("more than 99 open rings".into()))?;
            open_label.insert((w.min(u), w.max(u)), label);
            out.push_str(bond_symbol(order_of(u, w)));
            out.push_str(&ring_label(label));
        }

        let kids = &plan.children[u];
        // push in reverse so the first child is written first
        for (k, &c) in kids.iter().enumerate().rev() {
            let prefix = bond_symbol(order_of(u, c));
            if k + 1 == kids.len() {
                work.push(Step::Enter(c, prefix));
            } else {
                work.push(Step::Text(")"));
                work.push(Step::Enter(c, prefix));
                work.push(Step::Text("("));
            }
        }
    }
    debug_assert_eq!(plan.preorder.len(), order.iter().filter(|&&i| !implicit[i]).count());

    let order = AtomOrder::from_vec(order)?;
    verify(mol, &pairs, &orders, &out, &order)?;
    Ok((out, order))
}

/// The written string must parse back to the same (kekulized) graph.
fn verify(
    mol: &Molecule,
    pairs: &[(usize, usize, BondOrder)],
    orders: &[BondOrder],
    smiles: &str,
    order: &AtomOrder,
) -> Result<(), LineError> {
    let (parsed, _) = parse_smiles(smiles)
        .map_err(|e| LineError::Unwritable(format!("written {smiles:?} does not parse: {e}")))?;
    let kekulized = Molecule::new(
        mol.atoms().to_vec(),
        pairs
            .iter()
            .zip(orders)
            .map(|(&(a, b, _), &o)| Bond::new(a, b, o))
            .collect(),
        None,
    )
    .map_err(|e| LineError::Unwritable(e.to_string()))?;
    let expected = order.apply(&kekulized);
    if parsed.atoms() != expected.atoms() || parsed.sorted_bond_keys() != expected.sorted_bond_keys() {
        return Err(LineError::Unwritable(format!(
            "written {smiles:?} does not reproduce the input graph"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineno::{parse_smiles_with, ParseOptions};
    use crate::molgraph::{infer_bonds, read_xyz};

    #[test]
    fn parsed_molecules_rewrite_to_same_graph() {
        for s in [
            "CCO",
            "CC(=O)O",
            "C1CC1",
            "c1ccccc1",
            "OC1=CC=CC=C1",
            "C1CC2CCC1C2",
            "[NH4+]",
            "C[N+](C)(C)C",
            "N#CC(C)(C)O",
            "C12C3C4C1C5C2C3C45",
        ] {
            let (mol, _) = parse_smiles(s).unwrap();
            let (written, order) = write_smiles(&mol).unwrap();
            let (again, _) = parse_smiles(&written).unwrap();
            assert_eq!(again.atom_count(), mol.atom_count(), "{s} -> {written}");
            assert_eq!(order.apply(&mol).atoms(), again.atoms());
        }
    }

    #[test]
    fn water_from_xyz() {
        let mol = infer_bonds(&read_xyz("3\nwater\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0").unwrap())
            .unwrap();
        let (s, order) = write_smiles(&mol).unwrap();
        assert_eq!(s, "O");
        assert_eq!(order.as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn unusual_hydrogen_counts_are_bracketed() {
        // ethylene read without bond orders: each carbon has 3 single bonds
        let (mol, _) = parse_smiles("C=C").unwrap();
        let singles: Vec<_> = mol
            .bonds()
            .iter()
            .map(|b| {
                let (a, c) = b.endpoints();
                Bond::new(a, c, BondOrder::Single)
            })
            .collect();
        let mol = mol.with_bonds(singles).unwrap();
        let (s, _) = write_smiles(&mol).unwrap();
        assert_eq!(s, "[CH2][CH2]");
    }

    #[test]
    fn heavy_only_graph() {
        let (mol, _) = parse_smiles_with(
            "CC(C)C",
            ParseOptions {
                expand_hydrogens: false,
            },
        )
        .unwrap();
        let (s, _) = write_smiles(&mol).unwrap();
        assert_eq!(s, "[C][C]([C])[C]");
    }
}
