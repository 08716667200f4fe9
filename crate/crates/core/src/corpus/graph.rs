//! Random small organic graphs (C, N, O, F heavy atoms, neutral, no
//! aromatic flags) written out as SMILES.

use rand::Rng;

use crate::lineno::{write_smiles, LineError};
use crate::molgraph::{Atom, Bond, BondOrder, Molecule};

#[derive(Debug, Clone, Copy)]
pub struct GraphConfig {
    pub min_heavy: usize,
    pub max_heavy: usize,
    /// Probability of attempting each of two ring closures.
    pub ring_probability: f64,
    /// Probability of upgrading an eligible bond to a multiple bond.
    pub multiple_bond_probability: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            min_heavy: 3,
            max_heavy: 9,
            ring_probability: 0.35,
            multiple_bond_probability: 0.2,
        }
    }
}

const ELEMENTS: [(u8, u32, f64); 4] = [(6, 4, 0.70), (7, 3, 0.13), (8, 2, 0.14), (9, 1, 0.03)];

fn pick_element<R: Rng>(rng: &mut R) -> (u8, u32) {
    let mut x: f64 = rng.gen();
    for &(z, v, w) in &ELEMENTS {
        if x < w {
            return (z, v);
        }
        x -= w;
    }
    (6, 4)
}

fn bond_distance(adj: &[Vec<usize>], a: usize, b: usize) -> usize {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::from([a]);
    dist[a] = 0;
    while let Some(u) = queue.pop_front() {
        if u == b {
            return dist[u];
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    usize::MAX
}

/// A connected heavy-atom graph with bond orders inside standard valences.
pub fn random_heavy_graph<R: Rng>(rng: &mut R, cfg: &GraphConfig) -> Molecule {
    let n = rng.gen_range(cfg.min_heavy..=cfg.max_heavy);
    let mut z = vec![6u8];
    let mut valence = vec![4u32];
    let mut used = vec![0u32];
    let mut bonds: Vec<(usize, usize, u32)> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new()];

    while z.len() < n {
        let open: Vec<usize> = (0..z.len()).filter(|&i| used[i] < valence[i]).collect();
        if open.is_empty() {
            break;
        }
        let parent = open[rng.gen_range(0..open.len())];
        let (el, v) = pick_element(rng);
        // a terminal fluorine would cap the last open site of a small graph
        if v == 1 && open.len() == 1 && used[parent] + 1 == valence[parent] {
            continue;
        }
        let k = z.len();
        z.push(el);
        valence.push(v);
        used.push(1);
        used[parent] += 1;
        bonds.push((parent, k, 1));
        adj.push(vec![parent]);
        adj[parent].push(k);
    }

    for _ in 0..2 {
        if !rng.gen_bool(cfg.ring_probability) {
            continue;
        }
        let open: Vec<usize> = (0..z.len()).filter(|&i| used[i] < valence[i]).collect();
        let mut candidates = Vec::new();
        for (x, &a) in open.iter().enumerate() {
            for &b in &open[x + 1..] {
                let d = bond_distance(&adj, a, b);
                if (2..=5).contains(&d) {
                    candidates.push((a, b));
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let (a, b) = candidates[rng.gen_range(0..candidates.len())];
        used[a] += 1;
        used[b] += 1;
        bonds.push((a, b, 1));
        adj[a].push(b);
        adj[b].push(a);
    }

    for k in 0..bonds.len() {
        let (a, b, _) = bonds[k];
        let free = (valence[a] - used[a]).min(valence[b] - used[b]);
        if free == 0 || !rng.gen_bool(cfg.multiple_bond_probability) {
            continue;
        }
        let extra = if free >= 2 && rng.gen_bool(0.3) { 2 } else { 1 };
        bonds[k].2 += extra;
        used[a] += extra;
        used[b] += extra;
    }

    let atoms = z.iter().map(|&el| Atom::new(el).expect("valid element")).collect();
    let bonds = bonds
        .iter()
        .map(|&(a, b, o)| {
            let order = match o {
                1 => BondOrder::Single,
                2 => BondOrder::Double,
                _ => BondOrder::Triple,
            };
            Bond::new(a, b, order)
        })
        .collect();
    Molecule::new(atoms, bonds, None).expect("generated graph is valid")
}

/// Adds explicit hydrogens up to each atom's default valence.
pub fn saturate(heavy: &Molecule) -> Molecule {
    let mut atoms = heavy.atoms().to_vec();
    let mut bonds = heavy.bonds().to_vec();
    for i in 0..heavy.atom_count() {
        let z = heavy.atoms()[i].atomic_number();
        let target = ELEMENTS
            .iter()
            .find(|e| e.0 == z)
            .map_or(0, |e| e.1);
        let sum: u32 = heavy
            .bonds()
            .iter()
            .filter(|b| b.other(i).is_some())
            .map(|b| b.order.half_valence() / 2)
            .sum();
        for _ in sum..target {
            let h = atoms.len();
            atoms.push(Atom::new(1).expect("hydrogen"));
            bonds.push(Bond::new(i, h, BondOrder::Single));
        }
    }
    Molecule::new(atoms, bonds, None).expect("saturated graph is valid")
}

/// A random neutral molecule as SMILES.
pub fn random_smiles<R: Rng>(rng: &mut R, cfg: &GraphConfig) -> Result<String, LineError> {
    let heavy = random_heavy_graph(rng, cfg);
    write_smiles(&saturate(&heavy)).map(|(s, _)| s)
}
