//! Corpus-level evaluations shared by the command line and the test suite.
//!
//! Molecules passed in here are expected in line order (atom `k` is line
//! position `k`), as produced by the parser and the corpus generator.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{aligned_rmsd, raw_rmsd};
use crate::descriptors::{
    molecule_descriptors, sanitize, DescriptorError, DescriptorVec, LengthScaling, NormStats, DIM,
};
use crate::frames::{decode_molecule, gauge_positions, FrameError, FrameStrategy, SphericalCoord};
use crate::lineno::{canonical_atom_order, parse_smiles, write_smiles, AtomOrder, LineError, LineSequence};
use crate::molgraph::{MolError, Molecule};
use crate::vq::{train, Quantizer, ReconstructionMetrics, TrainConfig, VqError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("molecule {index}: {source}")]
    Molecule {
        index: usize,
        #[source]
        source: DescriptorError,
    },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Mol(#[from] MolError),
    #[error(transparent)]
    Quantizer(#[from] VqError),
    #[error(transparent)]
    Line(#[from] LineError),
}

/// A molecule relabeled into the atom order of its line notation.
#[derive(Debug, Clone)]
pub struct LineMolecule {
    pub smiles: String,
    pub sequence: LineSequence,
    /// Graph as parsed from `smiles`, carrying the input conformer.
    pub molecule: Molecule,
}

/// Writes line notation for `mol` and moves its conformer into line order.
pub fn to_line_order(mol: &Molecule) -> Result<LineMolecule, HarnessError> {
    let (smiles, order) = write_smiles(mol)?;
    let (graph, sequence) = parse_smiles(&smiles)?;
    let ordered = order.apply(mol);
    canonical_atom_order(&ordered, &sequence, None)?;
    let molecule = match ordered.conformer() {
        Some(c) => graph.with_conformer(c.clone())?,
        None => graph,
    };
    Ok(LineMolecule {
        smiles,
        sequence,
        molecule,
    })
}

/// Descriptors of every molecule, concatenated in corpus order. With
/// `skip_first` the gauge atom of each molecule is left out.
pub fn corpus_descriptors(
    mols: &[Molecule],
    strategy: FrameStrategy,
    skip_first: bool,
) -> Result<Vec<DescriptorVec<f64>>, HarnessError> {
    let per: Vec<Vec<DescriptorVec<f64>>> = mols
        .par_iter()
        .enumerate()
        .map(|(index, m)| {
            let d = molecule_descriptors(m, &AtomOrder::identity(m.atom_count()), strategy)
                .map_err(|source| HarnessError::Molecule { index, source })?;
            Ok(if skip_first && !d.is_empty() {
                d[1..].to_vec()
            } else {
                d
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseSpace {
    /// Noise added after normalization, so one scale means the same for
    /// lengths and angles.
    Normalized,
    /// Noise added to raw lengths and radians.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudyConfig {
    pub noise_scales: Vec<f64>,
    pub strategies: Vec<FrameStrategy>,
    pub rmsd_threshold: f64,
    /// Use only the first `n` molecules.
    pub sample_count: Option<usize>,
    pub seed: u64,
    pub space: NoiseSpace,
    pub length_scaling: LengthScaling,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            noise_scales: vec![0.01, 0.05, 0.1],
            strategies: FrameStrategy::ALL.to_vec(),
            rmsd_threshold: 1.0,
            sample_count: None,
            seed: 0,
            space: NoiseSpace::Normalized,
            length_scaling: LengthScaling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub strategy: FrameStrategy,
    pub scale: f64,
    pub molecules: usize,
    /// Fraction with aligned RMSD below the threshold.
    pub fraction: f64,
    pub mean_aligned_rmsd: f64,
    pub median_aligned_rmsd: f64,
    /// RMSD in the gauge frame, without superposition.
    pub mean_gauge_rmsd: f64,
    /// Molecules whose noisy descriptors could not be decoded.
    pub failures: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn noisy_spherical(
    descriptors: &[DescriptorVec<f64>],
    stats: &NormStats,
    space: NoiseSpace,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SphericalCoord<f64>>, DescriptorError> {
    let mut out = Vec::with_capacity(descriptors.len());
    for (k, v) in descriptors.iter().enumerate() {
        if k == 0 {
            // the gauge atom has no frame to perturb
            out.push(SphericalCoord::gauge());
            continue;
        }
        let mut noise = [0.0; DIM];
        for x in &mut noise {
            let z: f64 = StandardNormal.sample(rng);
            *x = scale * z;
        }
        let mut w = match space {
            NoiseSpace::Normalized => {
                let mut y = stats.normalize(v)?;
                for (a, b) in y.iter_mut().zip(noise) {
                    *a += b;
                }
                stats.denormalize(&y)
            }
            NoiseSpace::Raw => {
                let mut w = *v;
                for (a, b) in w.0.iter_mut().zip(noise) {
                    *a += b;
                }
                w.0[0] = w.0[0].abs();
                w
            }
        };
        sanitize(&mut w);
        out.push(w.generation().to_spherical());
    }
    Ok(out)
}

/// Encode, perturb, decode and superpose, for every strategy and scale.
/// Noise for molecule `m` at scale index `s` comes from its own random
/// stream, shared across strategies.
pub fn noise_study(mols: &[Molecule], cfg: &NoiseStudyConfig) -> Result<Vec<NoiseRow>, HarnessError> {
    if cfg.noise_scales.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(HarnessError::Config("noise scales must be finite and non-negative".into()));
    }
    if !(cfg.rmsd_threshold > 0.0) {
        return Err(HarnessError::Config("RMSD threshold must be positive".into()));
    }
    let mols = &mols[..cfg.sample_count.unwrap_or(mols.len()).min(mols.len())];
    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        let per: Vec<Vec<DescriptorVec<f64>>> = mols
            .par_iter()
            .enumerate()
            .map(|(index, m)| {
                molecule_descriptors(m, &AtomOrder::identity(m.atom_count()), strategy)
                    .map_err(|source| HarnessError::Molecule { index, source })
            })
            .collect::<Result<_, _>>()?;
        let fit: Vec<DescriptorVec<f64>> =
            per.iter().flat_map(|d| d.iter().skip(1).copied()).collect();
        let stats = if fit.is_empty() {
            NormStats::identity()
        } else {
            NormStats::fit_with(&fit, cfg.length_scaling)?
        };
        for (si, &scale) in cfg.noise_scales.iter().enumerate() {
            let results: Vec<Option<(f64, f64)>> = mols
                .par_iter()
                .zip(&per)
                .enumerate()
                .map(|(m, (mol, desc))| -> Result<_, HarnessError> {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(((m as u64) << 8) | si as u64);
                    let coords = noisy_spherical(desc, &stats, cfg.space, scale, &mut rng)?;
                    let order = AtomOrder::identity(mol.atom_count());
                    let decoded = match decode_molecule(mol, &order, &coords, strategy) {
                        Ok(c) => c,
                        Err(e) => {
                            log::warn!("molecule {m}: decode failed under noise {scale}: {e}");
                            return Ok(None);
                        }
                    };
                    let truth = mol.coords()?;
                    let aligned = aligned_rmsd(truth, &decoded.coords);
                    let gauge = raw_rmsd(&gauge_positions(truth)?, &decoded.coords);
                    Ok(Some((aligned, gauge)))
                })
                .collect::<Result<_, _>>()?;
            let ok: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
            let n = mols.len();
            let below = ok.iter().filter(|r| r.0 < cfg.rmsd_threshold).count();
            let mut aligned: Vec<f64> = ok.iter().map(|r| r.0).collect();
            rows.push(NoiseRow {
                strategy,
                scale,
                molecules: n,
                fraction: if n == 0 { 1.0 } else { below as f64 / n as f64 },
                mean_aligned_rmsd: aligned.iter().sum::<f64>() / ok.len().max(1) as f64,
                median_aligned_rmsd: median(&mut aligned),
                mean_gauge_rmsd: ok.iter().map(|r| r.1).sum::<f64>() / ok.len().max(1) as f64,
                failures: n - ok.len(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsdSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl RmsdSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: 0.0,
                median: 0.0,
                p95: 0.0,
                max: 0.0,
            };
        }
        let p95 = v[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median: median(&mut v.clone()),
            p95,
            max: v[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripRow {
    pub index: usize,
    pub atoms: usize,
    pub exact_rmsd: f64,
    pub quantized_rmsd: Option<f64>,
}

/// Decodes codebook codes back to spherical coordinates, one per atom.
fn quantized_spherical(
    desc: &[DescriptorVec<f64>],
    q: &Quantizer<f64>,
    table: &[DescriptorVec<f64>],
) -> Result<Vec<SphericalCoord<f64>>, VqError> {
    let codes = q.encode_batch(desc)?;
    Ok(codes
        .iter()
        .map(|&c| table[c].generation().to_spherical())
        .collect())
}

/// Aligned RMSD of the exact codec and, given a quantizer, of the path
/// through the codebook.
pub fn roundtrip(
    mols: &[Molecule],
    strategy: FrameStrategy,
    quantizer: Option<&Quantizer<f64>>,
) -> Result<Vec<RoundtripRow>, HarnessError> {
    let table = quantizer.map(Quantizer::decode_table);
    mols.par_iter()
        .enumerate()
        .map(|(index, mol)| {
            let order = AtomOrder::identity(mol.atom_count());
            let truth = mol.coords()?;
            let exact = crate::frames::encode_molecule(mol, &order, strategy)?;
            let back = decode_molecule(mol, &order, &exact, strategy)?;
            let exact_rmsd = aligned_rmsd(truth, &back.coords);
            let quantized_rmsd = match (quantizer, &table) {
                (Some(q), Some(t)) => {
                    let desc = molecule_descriptors(mol, &order, q.strategy)
                        .map_err(|source| HarnessError::Molecule { index, source })?;
                    let coords = quantized_spherical(&desc, q, t)?;
                    let decoded = decode_molecule(mol, &order, &coords, q.strategy)?;
                    Some(aligned_rmsd(truth, &decoded.coords))
                }
                _ => None,
            };
            Ok(RoundtripRow {
                index,
                atoms: mol.atom_count(),
                exact_rmsd,
                quantized_rmsd,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRow {
    pub code: usize,
    pub d: f64,
    pub theta: f64,
    pub abs_phi: f64,
    pub sign: f64,
    pub count: usize,
}

/// Atom-type by code hit counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitMatrix {
    pub symbols: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    /// `ln P(code | atom type)`, `None` where the count is zero.
    pub log_prob: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    pub codes: Vec<CodeRow>,
    pub hits: HitMatrix,
    pub utilization: f64,
}

impl CodeStats {
    pub fn codes_csv(&self) -> String {
        let mut s = String::from("code,d,theta,abs_phi,sign,count\n");
        for r in &self.codes {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.code, r.d, r.theta, r.abs_phi, r.sign, r.count
            ));
        }
        s
    }

    pub fn hits_csv(&self) -> String {
        let k = self.codes.len();
        let mut s = String::from("symbol");
        for c in 0..k {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (sym, row) in self.hits.symbols.iter().zip(&self.hits.counts) {
            s.push_str(sym);
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-code decoded values, atom-type hit matrix and utilization over
/// every atom of `mols`.
pub fn code_stats(mols: &[Molecule], q: &Quantizer<f64>) -> Result<CodeStats, HarnessError> {
    let k = q.size();
    let per: Vec<Vec<(u8, usize)>> = mols
        .par_iter()
        .enumerate()
        .map(|(index, m)| {
            let d = molecule_descriptors(m, &AtomOrder::identity(m.atom_count()), q.strategy)
                .map_err(|source| HarnessError::Molecule { index, source })?;
            let codes = q.encode_batch(&d)?;
            Ok(m.atoms()
                .iter()
                .map(|a| a.atomic_number())
                .zip(codes)
                .collect())
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut elements: Vec<u8> = per.iter().flatten().map(|p| p.0).collect();
    elements.sort_unstable();
    elements.dedup();
    let mut counts = vec![vec![0usize; k]; elements.len()];
    let mut per_code = vec![0usize; k];
    for &(z, c) in per.iter().flatten() {
        let row = elements.binary_search(&z).expect("collected above");
        counts[row][c] += 1;
        per_code[c] += 1;
    }
    let log_prob = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| (c > 0).then(|| (c as f64 / total as f64).ln()))
                .collect()
        })
        .collect();
    let symbols = elements
        .iter()
        .map(|&z| crate::elements::symbol(z).unwrap_or("?").to_string())
        .collect();
    let codes = q
        .decode_table()
        .iter()
        .enumerate()
        .map(|(code, v)| CodeRow {
            code,
            d: v.0[0],
            theta: v.0[1],
            abs_phi: v.0[2],
            sign: v.0[3],
            count: per_code[code],
        })
        .collect();
    let used = per_code.iter().filter(|&&c| c > 0).count();
    Ok(CodeStats {
        codes,
        hits: HitMatrix {
            symbols,
            counts,
            log_prob,
        },
        utilization: used as f64 / k as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub metrics: ReconstructionMetrics,
}

/// Trains one quantizer per codebook size on the same data and seed.
pub fn k_sweep(
    data: &[DescriptorVec<f64>],
    base: &TrainConfig,
    sizes: &[usize],
) -> Result<Vec<KSweepRow>, HarnessError> {
    sizes
        .iter()
        .map(|&k| {
            let cfg = TrainConfig {
                codebook_size: k,
                ..base.clone()
            };
            let (q, _) = train::<f64>(data, &cfg)?;
            Ok(KSweepRow {
                k,
                metrics: q.evaluate(data)?,
            })
        })
        .collect()
}

/// Hex SHA-256 of the JSON form of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Results of one command, stamped with what is needed to reproduce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_clock_secs: f64,
    pub results: serde_json::Value,
}

impl RunReport {
    pub fn new<C: Serialize, R: Serialize>(
        command: &str,
        config: &C,
        seed: u64,
        results: &R,
        started: Instant,
    ) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            config_hash: config_hash(config),
            seed,
            threads: rayon::current_num_threads(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            results: serde_json::to_value(results).expect("results serialize"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    fn small_corpus() -> Vec<Molecule> {
        let cfg = CorpusConfig {
            size: 12,
            seed: 5,
            ..CorpusConfig::default()
        };
        generate_corpus(&cfg).into_iter().map(|e| e.molecule).collect()
    }

    #[test]
    fn zero_noise_reconstructs_everything() {
        let mols = small_corpus();
        let cfg = NoiseStudyConfig {
            noise_scales: vec![0.0],
            ..NoiseStudyConfig::default()
        };
        for row in noise_study(&mols, &cfg).unwrap() {
            assert_eq!(row.fraction, 1.0, "{row:?}");
            assert!(row.mean_aligned_rmsd < 1e-9);
            assert!(row.mean_gauge_rmsd < 1e-9);
        }
    }

    #[test]
    fn exact_roundtrip_rows() {
        let mols = small_corpus();
        let rows = roundtrip(&mols, FrameStrategy::Spatial3D, None).unwrap();
        assert_eq!(rows.len(), mols.len());
        assert!(rows.iter().all(|r| r.exact_rmsd < 1e-9 && r.quantized_rmsd.is_none()));
        assert_eq!(RmsdSummary::of(&[]).count, 0);
        let s = RmsdSummary::of(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!((s.median, s.max, s.p95), (2.5, 4.0, 4.0));
    }

    #[test]
    fn skipping_gauge_atoms() {
        let mols = small_corpus();
        let all = corpus_descriptors(&mols, FrameStrategy::Topo2D, false).unwrap();
        let rest = corpus_descriptors(&mols, FrameStrategy::Topo2D, true).unwrap();
        assert_eq!(all.len(), rest.len() + mols.len());
    }

    fn sorted_distances(m: &Molecule) -> Vec<f64> {
        let x = m.coords().unwrap();
        let mut d: Vec<f64> = (0..x.len())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| x[i].distance(x[j]))
            .collect();
        d.sort_by(f64::total_cmp);
        d
    }

    #[test]
    fn line_order_keeps_geometry() {
        for m in &small_corpus() {
            let n = m.atom_count();
            let scrambled = m.permuted(&(0..n).rev().collect::<Vec<_>>());
            let lm = to_line_order(&scrambled).unwrap();
            assert_eq!(lm.sequence.atom_count(), n);
            assert_eq!(sorted_distances(&lm.molecule), sorted_distances(m));
            let bonded: Vec<f64> = lm
                .molecule
                .bonds()
                .iter()
                .map(|b| {
                    let (i, j) = b.endpoints();
                    lm.molecule.coords().unwrap()[i].distance(lm.molecule.coords().unwrap()[j])
                })
                .collect();
            assert!(bonded.iter().all(|&d| d > 0.8 && d < 1.7), "{bonded:?}");
        }
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash(&NoiseStudyConfig::default()), config_hash(&NoiseStudyConfig::default()));
        assert_ne!(
            config_hash(&NoiseStudyConfig::default()),
            config_hash(&NoiseStudyConfig {
                seed: 1,
                ..NoiseStudyConfig::default()
            })
        );
    }
}
