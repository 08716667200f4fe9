//! Rough 3D embedding: random tree placement relaxed under a small valence
//! force field (bond stretch, angle bend, sp2 planarity, torsions and
//! soft repulsion), minimized with L-BFGS.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geom::Vec3;
use crate::molgraph::{BondOrder, Molecule};

type V = Vec3<f64>;

fn single_radius(z: u8) -> f64 {
    match z {
        1 => 0.33,
        6 => 0.76,
        7 => 0.71,
        8 => 0.66,
        9 => 0.60,
        _ => crate::elements::covalent_radius(z),
    }
}

fn rest_length(za: u8, zb: u8, order: BondOrder) -> f64 {
    let shrink = match order {
        BondOrder::Single => 0.0,
        BondOrder::Aromatic => 0.12,
        BondOrder::Double => 0.20,
        BondOrder::Triple => 0.32,
    };
    single_radius(za) + single_radius(zb) - shrink
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hybrid {
    Sp,
    Sp2,
    Sp3,
}

#[derive(Debug, Clone)]
pub(crate) struct ForceField {
    bonds: Vec<(usize, usize, f64)>,
    angles: Vec<(usize, usize, usize, f64)>,
    planes: Vec<(usize, usize, usize, usize)>,
    /// (a, b, c, d, periodicity, k); energy k (1 + s cos(n w)) with s = +1
    /// for n = 3 and s = -1 for n = 2.
    torsions: Vec<(usize, usize, usize, usize, u32, f64)>,
    repulsions: Vec<(usize, usize, f64)>,
}

const K_BOND: f64 = 300.0;
const K_ANGLE: f64 = 60.0;
const K_PLANE: f64 = 30.0;
const K_TORSION_SINGLE: f64 = 1.5;
const K_TORSION_DOUBLE: f64 = 8.0;
const K_REPULSION: f64 = 30.0;

impl ForceField {
    pub(crate) fn new(mol: &Molecule) -> Self {
        let n = mol.atom_count();
        let adj = mol.adjacency();
        let atoms = mol.atoms();
        let hybrid: Vec<Hybrid> = (0..n)
            .map(|i| {
                let mut doubles = 0;
                let mut triple = false;
                for b in mol.bonds().iter().filter(|b| b.other(i).is_some()) {
                    match b.order {
                        BondOrder::Double | BondOrder::Aromatic => doubles += 1,
                        BondOrder::Triple => triple = true,
                        BondOrder::Single => {}
                    }
                }
                if triple || doubles >= 2 {
                    Hybrid::Sp
                } else if doubles == 1 {
                    Hybrid::Sp2
                } else {
                    Hybrid::Sp3
                }
            })
            .collect();

        let bonds = mol
            .bonds()
            .iter()
            .map(|b| {
                let (i, j) = b.endpoints();
                let r0 = rest_length(atoms[i].atomic_number(), atoms[j].atomic_number(), b.order);
                (i, j, r0)
            })
            .collect();

        let mut angles = Vec::new();
        let mut planes = Vec::new();
        for c in 0..n {
            let target: f64 = match hybrid[c] {
                Hybrid::Sp => std::f64::consts::PI,
                Hybrid::Sp2 => 120f64.to_radians(),
                Hybrid::Sp3 => 109.4712f64.to_radians(),
            };
            let nb = &adj[c];
            for x in 0..nb.len() {
                for y in x + 1..nb.len() {
                    angles.push((nb[x], c, nb[y], target.cos()));
                }
            }
            if hybrid[c] == Hybrid::Sp2 && nb.len() == 3 {
                planes.push((c, nb[0], nb[1], nb[2]));
            }
        }

        let mut torsions = Vec::new();
        for bond in mol.bonds() {
            let (b, c) = bond.endpoints();
            if hybrid[b] == Hybrid::Sp || hybrid[c] == Hybrid::Sp {
                continue;
            }
            let (period, k) = match bond.order {
                BondOrder::Double | BondOrder::Aromatic => (2, K_TORSION_DOUBLE),
                _ if hybrid[b] == Hybrid::Sp3 && hybrid[c] == Hybrid::Sp3 => (3, K_TORSION_SINGLE),
                _ => continue,
            };
            for &a in adj[b].iter().filter(|&&a| a != c) {
                for &d in adj[c].iter().filter(|&&d| d != b && d != a) {
                    torsions.push((a, b, c, d, period, k));
                }
            }
        }

        let mut topo = vec![vec![u8::MAX; n]; n];
        for i in 0..n {
            topo[i][i] = 0;
            for &j in &adj[i] {
                topo[i][j] = 1;
                for &k in &adj[j] {
                    if topo[i][k] > 2 {
                        topo[i][k] = 2;
                    }
                }
            }
        }
        for i in 0..n {
            for &j in &adj[i] {
                for &k in &adj[j] {
                    for &l in &adj[k] {
                        if topo[i][l] > 3 {
                            topo[i][l] = 3;
                        }
                    }
                }
            }
        }
        let rho = |i: usize| if atoms[i].is_hydrogen() { 1.1 } else { 1.5 };
        let mut repulsions = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let sep = topo[i][j];
                if sep <= 2 {
                    continue;
                }
                let scale = if sep == 3 { 0.8 } else { 1.0 };
                repulsions.push((i, j, scale * (rho(i) + rho(j))));
            }
        }

        Self {
            bonds,
            angles,
            planes,
            torsions,
            repulsions,
        }
    }

    /// Energy and gradient; `grad` is overwritten.
    pub(crate) fn evaluate(&self, x: &[V], grad: &mut [V]) -> f64 {
        grad.iter_mut().for_each(|g| *g = V::zero());
        let mut e = 0.0;

        for &(i, j, r0) in &self.bonds {
            let u = x[i] - x[j];
            let r = u.norm().max(1e-12);
            let dr = r - r0;
            e += K_BOND * dr * dr;
            let g = u * (2.0 * K_BOND * dr / r);
            grad[i] += g;
            grad[j] -= g;
        }

        for &(a, c, b, c0) in &self.angles {
            let u = x[a] - x[c];
            let v = x[b] - x[c];
            let (nu, nv) = (u.norm().max(1e-12), v.norm().max(1e-12));
            let cos = u.dot(v) / (nu * nv);
            let diff = cos - c0;
            e += K_ANGLE * diff * diff;
            let s = 2.0 * K_ANGLE * diff;
            let du = (v / (nu * nv) - u * (cos / (nu * nu))) * s;
            let dv = (u / (nu * nv) - v * (cos / (nv * nv))) * s;
            grad[a] += du;
            grad[b] += dv;
            grad[c] -= du + dv;
        }

        for &(c, a, b, d) in &self.planes {
            let u = x[a] - x[c];
            let v = x[b] - x[c];
            let w = x[d] - x[c];
            let t = u.dot(v.cross(w));
            e += K_PLANE * t * t;
            let s = 2.0 * K_PLANE * t;
            let gu = v.cross(w) * s;
            let gv = w.cross(u) * s;
            let gw = u.cross(v) * s;
            grad[a] += gu;
            grad[b] += gv;
            grad[d] += gw;
            grad[c] -= gu + gv + gw;
        }

        for &(a, b, c, d, period, k) in &self.torsions {
            let Some((w, ga, gb, gc, gd)) = dihedral_with_gradient(x[a], x[b], x[c], x[d]) else {
                continue;
            };
            let nf = period as f64;
            let sign = if period == 3 { 1.0 } else { -1.0 };
            e += k * (1.0 + sign * (nf * w).cos());
            let dedw = -k * sign * nf * (nf * w).sin();
            grad[a] += ga * dedw;
            grad[b] += gb * dedw;
            grad[c] += gc * dedw;
            grad[d] += gd * dedw;
        }

        for &(i, j, r0) in &self.repulsions {
            let u = x[i] - x[j];
            let r = u.norm();
            if r >= r0 {
                continue;
            }
            let r = r.max(1e-12);
            let dr = r - r0;
            e += K_REPULSION * dr * dr;
            let g = u * (2.0 * K_REPULSION * dr / r);
            grad[i] += g;
            grad[j] -= g;
        }
        e
    }

    pub(crate) fn bond_deviation(&self, x: &[V]) -> f64 {
        self.bonds
            .iter()
            .map(|&(i, j, r0)| (x[i].distance(x[j]) - r0).abs())
            .fold(0.0, f64::max)
    }
}

/// Dihedral angle a-b-c-d and its gradient with respect to each point.
fn dihedral_with_gradient(a: V, b: V, c: V, d: V) -> Option<(f64, V, V, V, V)> {
    let b1 = b - a;
    let b2 = c - b;
    let b3 = d - c;
    let m = b1.cross(b2);
    let n = b2.cross(b3);
    let (mm, nn) = (m.norm_squared(), n.norm_squared());
    let l2 = b2.norm();
    if mm < 1e-8 || nn < 1e-8 || l2 < 1e-8 {
        return None;
    }
    let w = (l2 * b1.dot(n)).atan2(m.dot(n));
    let ga = m * (-l2 / mm);
    let gd = n * (l2 / nn);
    let p = b1.dot(b2) / (l2 * l2);
    let q = b3.dot(b2) / (l2 * l2);
    let gb = gd * q - ga * (1.0 + p);
    let gc = ga * p - gd * (1.0 + q);
    Some((w, ga, gb, gc, gd))
}

fn flat(v: &[V]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflat(f: &[f64]) -> Vec<V> {
    f.chunks(3).map(|c| V::new(c[0], c[1], c[2])).collect()
}

/// L-BFGS with backtracking line search. Returns the final energy.
pub(crate) fn minimize(ff: &ForceField, x: &mut Vec<V>, max_iter: usize, gtol: f64) -> f64 {
    const M: usize = 8;
    let n = x.len();
    let mut g = vec![V::zero(); n];
    let mut e = ff.evaluate(x, &mut g);
    let mut xf = flat(x);
    let mut gf = flat(&g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    for _ in 0..max_iter {
        let gmax = gf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < gtol {
            break;
        }
        // two-loop recursion
        let mut q = gf.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for t in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[t], &s_hist[t]);
            alpha[t] = rho * dot(&s_hist[t], &q);
            q.iter_mut().zip(&y_hist[t]).for_each(|(qi, yi)| *qi -= alpha[t] * yi);
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 0.1 / gmax.max(1e-12);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for t in 0..k {
            let rho = 1.0 / dot(&y_hist[t], &s_hist[t]);
            let beta = rho * dot(&y_hist[t], &q);
            q.iter_mut().zip(&s_hist[t]).for_each(|(qi, si)| *qi += (alpha[t] - beta) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &gf);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            let scale = 0.1 / gmax.max(1e-12);
            dir = gf.iter().map(|v| -v * scale).collect();
            slope = dot(&dir, &gf);
        }
        // cap the largest atomic step at 0.3 A
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if dmax > 0.3 { 0.3 / dmax } else { 1.0 };
        let mut accepted = false;
        let mut trial_g = vec![V::zero(); n];
        for _ in 0..30 {
            let trial: Vec<f64> = xf.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let tx = unflat(&trial);
            let te = ff.evaluate(&tx, &mut trial_g);
            if te <= e + 1e-4 * step * slope {
                let tg = flat(&trial_g);
                let s: Vec<f64> = trial.iter().zip(&xf).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = tg.iter().zip(&gf).map(|(a, b)| a - b).collect();
                if dot(&s, &y) > 1e-12 {
                    if s_hist.len() == M {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                }
                xf = trial;
                gf = tg;
                e = te;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }
    }
    *x = unflat(&xf);
    e
}

fn random_unit<R: Rng>(rng: &mut R) -> V {
    loop {
        let v = V::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Places atoms one by one next to a bonded, already placed atom, choosing
/// among random directions the one farthest from existing atoms.
fn initial_placement<R: Rng>(mol: &Molecule, ff: &ForceField, rng: &mut R) -> Vec<V> {
    let n = mol.atom_count();
    let adj = mol.adjacency();
    let mut x: Vec<Option<V>> = vec![None; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    x[0] = Some(V::zero());
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if x[v].is_some() {
                continue;
            }
            let r0 = ff
                .bonds
                .iter()
                .find(|&&(i, j, _)| (i, j) == (u.min(v), u.max(v)))
                .map_or(1.2, |b| b.2);
            let origin = x[u].expect("placed");
            let mut best = origin + random_unit(rng) * r0;
            let mut best_score = f64::NEG_INFINITY;
            for _ in 0..12 {
                let cand = origin + random_unit(rng) * r0;
                let score = x
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != u)
                    .filter_map(|(_, p)| p.map(|p| p.distance(cand)))
                    .fold(f64::INFINITY, f64::min);
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
            x[v] = Some(best);
            queue.push_back(v);
        }
    }
    x.into_iter().map(|p| p.unwrap_or_else(V::zero)).collect()
}

/// Relaxed coordinates for `mol`, or `None` if no attempt converged to a
/// clean geometry.
pub fn embed<R: Rng>(mol: &Molecule, rng: &mut R, attempts: usize) -> Option<Vec<V>> {
    let ff = ForceField::new(mol);
    let n = mol.atom_count();
    let mut best: Option<(f64, Vec<V>)> = None;
    for _ in 0..attempts {
        let mut x = initial_placement(mol, &ff, rng);
        let e = minimize(&ff, &mut x, 3000, 1e-5);
        if !e.is_finite() || ff.bond_deviation(&x) > 0.12 {
            continue;
        }
        let mut clash = false;
        'outer: for i in 0..n {
            for j in i + 1..n {
                if x[i].distance(x[j]) < 0.75 {
                    clash = true;
                    break 'outer;
                }
            }
        }
        if clash {
            continue;
        }
        if best.as_ref().map_or(true, |(be, _)| e < *be) {
            best = Some((e, x));
        }
        if e < 1.0 {
            break;
        }
    }
    best.map(|(_, x)| x)
}
