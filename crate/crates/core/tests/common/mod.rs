#![allow(dead_code)]

use mstk_core::align::{quaternion_matrix, rigid_transform};
use mstk_core::geom::Vec3;
use mstk_core::{Conformer, Molecule};
use rand::Rng;

/// (symbol, max valence) for organic-subset atoms.
const ORGANIC: [(&str, u32); 15] = [
    ("C", 4),
    ("C", 4),
    ("C", 4),
    ("C", 4),
    ("C", 4),
    ("N", 3),
    ("N", 3),
    ("O", 2),
    ("N", 3),
    ("O", 2),
    ("S", 2),
    ("F", 1),
    ("Cl", 1),
    ("Br", 1),
    ("B", 3),
];

const BRACKETS: [(&str, u32); 6] = [
    ("[NH4+]", 0),
    ("[O-]", 1),
    ("[NH+]", 3),
    ("[CH2]", 2),
    ("[S]", 2),
    ("[Na+]", 0),
];

struct Gen<'a, R: Rng> {
    rng: &'a mut R,
    out: String,
    /// remaining valence per emitted atom
    free: Vec<u32>,
    bonded: Vec<(usize, usize)>,
    /// open ring labels: (label, atom)
    open: Vec<(u32, usize)>,
}

impl<R: Rng> Gen<'_, R> {
    fn new_label(&mut self) -> Option<u32> {
        let used: Vec<u32> = self.open.iter().map(|&(l, _)| l).collect();
        let candidates: Vec<u32> = if self.rng.gen_bool(0.8) {
            (1..10).collect()
        } else {
            (10..100).collect()
        };
        let free: Vec<u32> = candidates.into_iter().filter(|l| !used.contains(l)).collect();
        (!free.is_empty()).then(|| free[self.rng.gen_range(0..free.len())])
    }

    fn label_text(l: u32) -> String {
        if l < 10 {
            l.to_string()
        } else {
            format!("%{l}")
        }
    }

    fn bond_symbol(&mut self, order: u32) {
        match order {
            1 if self.rng.gen_bool(0.15) => self.out.push('-'),
            1 => {}
            2 => self.out.push('='),
            _ => self.out.push('#'),
        }
    }

    fn link(&mut self, a: usize, b: usize, order: u32) {
        self.free[a] -= order;
        self.free[b] -= order;
        self.bonded.push((a.min(b), a.max(b)));
    }

    /// Emits one atom bonded to `prev` and returns the atom to continue from.
    fn atom(&mut self, prev: Option<usize>) -> Option<usize> {
        let need = u32::from(prev.is_some());
        if prev.is_some_and(|p| self.free[p] == 0) {
            return None;
        }
        let idx = self.free.len();
        if self.rng.gen_bool(0.08) && self.open.len() < 90 {
            // phenyl unit
            let label = self.new_label()?;
            self.out.push('c');
            self.out.push_str(&Self::label_text(label));
            self.out.push_str("cccc");
            self.out.push('c');
            self.out.push_str(&Self::label_text(label));
            // first carbon takes the incoming bond, last may take one more
            self.free.extend([need, 0, 0, 0, 0, 1]);
            if let Some(p) = prev {
                self.link(p, idx, 1);
            }
            return Some(idx + 5);
        }
        let (text, max) = if self.rng.gen_bool(0.1) {
            BRACKETS[self.rng.gen_range(0..BRACKETS.len())]
        } else {
            ORGANIC[self.rng.gen_range(0..ORGANIC.len())]
        };
        if max < need {
            return None;
        }
        let order = match prev {
            Some(p) => {
                let cap = self.free[p].min(max).min(3);
                let mut o = 1;
                while o < cap && self.rng.gen_bool(0.2) {
                    o += 1;
                }
                self.bond_symbol(o);
                o
            }
            None => 0,
        };
        self.out.push_str(text);
        self.free.push(max);
        if let Some(p) = prev {
            self.link(p, idx, order);
        }
        // ring bonds
        let mut k = 0;
        while k < self.open.len() {
            let (label, at) = self.open[k];
            let pair = (at.min(idx), at.max(idx));
            if self.free[idx] > 0 && !self.bonded.contains(&pair) && self.rng.gen_bool(0.4) {
                self.open.swap_remove(k);
                self.out.push_str(&Self::label_text(label));
                // the opener's share was reserved when the label was written
                self.free[idx] -= 1;
                self.bonded.push(pair);
            } else {
                k += 1;
            }
        }
        if self.free[idx] > 1 && self.rng.gen_bool(0.25) {
            if let Some(label) = self.new_label() {
                self.out.push_str(&Self::label_text(label));
                self.free[idx] -= 1;
                self.open.push((label, idx));
            }
        }
        Some(idx)
    }

    /// Extends the chain from `cur` by up to `budget` atoms, with branches.
    fn chain(&mut self, mut cur: usize, depth: usize, mut budget: usize) {
        while budget > 0 {
            if depth < 4 && budget > 1 && self.free[cur] > 1 && self.rng.gen_bool(0.25) {
                let mark = self.out.len();
                self.out.push('(');
                match self.atom(Some(cur)) {
                    Some(next) => {
                        let sub = self.rng.gen_range(0..budget.min(4));
                        self.chain(next, depth + 1, sub);
                        self.out.push(')');
                        budget = budget.saturating_sub(sub + 1);
                    }
                    None => self.out.truncate(mark),
                }
            }
            if budget == 0 {
                return;
            }
            match self.atom(Some(cur)) {
                Some(next) => cur = next,
                None => return,
            }
            budget -= 1;
        }
    }
}

/// A random string from the parser grammar, built so that it satisfies
/// valence, ring and aromaticity rules.
pub fn grammar_string<R: Rng>(rng: &mut R) -> String {
    loop {
        let budget = rng.gen_range(0..25);
        let mut g = Gen {
            rng,
            out: String::new(),
            free: Vec::new(),
            bonded: Vec::new(),
            open: Vec::new(),
        };
        let Some(first) = g.atom(None) else { continue };
        g.chain(first, 0, budget);
        // strings with a ring left open are drawn again
        if g.open.is_empty() {
            return g.out;
        }
    }
}

/// A uniformly random rotation (normalized Gaussian quaternion) and a
/// translation in `[-10, 10]^3`.
pub fn random_motion<R: Rng>(rng: &mut R) -> ([[f64; 3]; 3], Vec3<f64>) {
    let normal = rand_distr::StandardNormal;
    let mut q: [f64; 4] = std::array::from_fn(|_| rng.sample(normal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= n);
    let t = Vec3::new(
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
    );
    (quaternion_matrix(q), t)
}

pub fn moved(mol: &Molecule, rot: &[[f64; 3]; 3], t: Vec3<f64>) -> Molecule {
    let pts = mol.coords().expect("conformer");
    mol.clone()
        .with_conformer(Conformer::new(rigid_transform(pts, rot, t)))
        .expect("same atom count")
}
