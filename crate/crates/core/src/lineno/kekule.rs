//! Assigns alternating single/double bonds to aromatic systems.

use super::parser::{charged_valence, organic_valences};
use super::LineError;
use crate::molgraph::BondOrder;

#[derive(Debug, Clone, Copy)]
pub(crate) struct KekuleAtom {
    pub aromatic: bool,
    pub z: u8,
    pub charge: i8,
    /// `None` for organic-subset atoms whose hydrogen count is implied.
    pub explicit_h: Option<u32>,
    pub offset: usize,
}

/// Returns the bond orders with every aromatic bond resolved to single or
/// double, such that each aromatic atom that needs a pi bond gets exactly one.
pub(crate) fn kekulize(
    atoms: &[KekuleAtom],
    bonds: &[(usize, usize, BondOrder)],
) -> Result<Vec<BondOrder>, LineError> {
    let n = atoms.len();
    let mut orders: Vec<BondOrder> = bonds.iter().map(|b| b.2).collect();
    if !atoms.iter().any(|a| a.aromatic) && !orders.contains(&BondOrder::Aromatic) {
        return Ok(orders);
    }

    let mut in_system = vec![false; n];
    let mut sigma = vec![0i32; n];
    for (i, a) in atoms.iter().enumerate() {
        in_system[i] = a.aromatic;
    }
    for &(a, b, o) in bonds {
        let v = match o {
            BondOrder::Aromatic => {
                in_system[a] = true;
                in_system[b] = true;
                1
            }
            other => (other.half_valence() / 2) as i32,
        };
        sigma[a] += v;
        sigma[b] += v;
    }
    let needs_pi: Vec<bool> = (0..n)
        .map(|i| {
            if !in_system[i] {
                return false;
            }
            let a = &atoms[i];
            let free = match a.explicit_h {
                Some(h) => charged_valence(a.z, a.charge) - sigma[i] - h as i32,
                None => organic_valences(a.z).first().map_or(0, |&v| v as i32) - sigma[i],
            };
            free >= 1
        })
        .collect();

    // candidate edges: aromatic bonds joining two atoms that both need a pi bond
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(a, b, o)) in bonds.iter().enumerate() {
        if o == BondOrder::Aromatic && needs_pi[a] && needs_pi[b] {
            adj[a].push((b, k));
            adj[b].push((a, k));
        }
    }

    let mut mate: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    for start in 0..n {
        if !needs_pi[start] || visited[start] {
            continue;
        }
        // connected component over candidate edges
        let mut comp = vec![start];
        visited[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for &(v, _) in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    comp.push(v);
                }
            }
        }
        if !match_component(&comp, &adj, &mut mate) {
            let offset = comp.iter().map(|&i| atoms[i].offset).min().unwrap_or(0);
            return Err(LineError::Kekulization { offset });
        }
    }

    for (k, &(a, b, o)) in bonds.iter().enumerate() {
        if o == BondOrder::Aromatic {
            orders[k] = if mate[a] == Some(k) && mate[b] == Some(k) {
                BondOrder::Double
            } else {
                BondOrder::Single
            };
        }
    }
    Ok(orders)
}

/// Perfect matching by backtracking, always branching on the most
/// constrained unmatched atom. Ring systems in scope are small.
fn match_component(
    comp: &[usize],
    adj: &[Vec<(usize, usize)>],
    mate: &mut [Option<usize>],
) -> bool {
    if comp.len() % 2 == 1 {
        return false;
    }
    let mut pick: Option<(usize, usize)> = None;
    for &u in comp {
        if mate[u].is_some() {
            continue;
        }
        let options = adj[u].iter().filter(|(v, _)| mate[*v].is_none()).count();
        if pick.map_or(true, |(_, best)| options < best) {
            pick = Some((u, options));
        }
        if options == 0 {
            break;
        }
    }
    let Some((u, options)) = pick else {
        return true;
    };
    if options == 0 {
        return false;
    }
    for &(v, k) in &adj[u] {
        if mate[v].is_some() {
            continue;
        }
        mate[u] = Some(k);
        mate[v] = Some(k);
        if match_component(comp, adj, mate) {
            return true;
        }
        mate[u] = None;
        mate[v] = None;
    }
    false
}
