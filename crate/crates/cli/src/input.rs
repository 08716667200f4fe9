use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use mstk_core::harness::{to_line_order, LineMolecule};
use mstk_core::lineno::parse_smiles;
use mstk_core::molgraph::{infer_bonds, read_molblock_titled, read_sdf, read_xyz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Xyz,
    Mol,
    Smiles,
}

/// One input record.
pub struct Record {
    pub name: String,
    pub mol: LineMolecule,
}

fn sniff(path: &Path) -> Option<Format> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "xyz" => Some(Format::Xyz),
        "mol" | "sdf" | "sd" => Some(Format::Mol),
        "smi" | "smiles" => Some(Format::Smiles),
        _ => None,
    }
}

/// Files named on the command line, with directories expanded to their
/// sorted regular files.
pub fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading directory {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| e.is_file());
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn read_file(path: &Path, format: Option<Format>) -> Result<Vec<Record>> {
    let format = format
        .or_else(|| sniff(path))
        .with_context(|| format!("cannot tell the format of {}; pass --format", path.display()))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stem = path.display().to_string();
    let mut records = Vec::new();
    match format {
        Format::Xyz => {
            let mol = infer_bonds(&read_xyz(&text)?)?;
            records.push(Record {
                name: stem,
                mol: to_line_order(&mol)?,
            });
        }
        Format::Mol => {
            let blocks = read_sdf(&text);
            let many = blocks.len() > 1;
            for (k, block) in blocks.into_iter().enumerate() {
                let (_, mol) = block.with_context(|| format!("record {k}"))?;
                let name = if many { format!("{stem}#{k}") } else { stem.clone() };
                records.push(Record {
                    name,
                    mol: to_line_order(&mol).with_context(|| format!("record {k}"))?,
                });
            }
            if records.is_empty() {
                // a bare MOL block without terminator
                let (_, mol) = read_molblock_titled(&text)?;
                records.push(Record {
                    name: stem,
                    mol: to_line_order(&mol)?,
                });
            }
        }
        Format::Smiles => {
            for (k, line) in text.lines().enumerate() {
                let Some(smiles) = line.split_whitespace().next() else {
                    continue;
                };
                let (molecule, sequence) =
                    parse_smiles(smiles).with_context(|| format!("line {}", k + 1))?;
                records.push(Record {
                    name: format!("{stem}:{}", k + 1),
                    mol: LineMolecule {
                        smiles: smiles.to_string(),
                        sequence,
                        molecule,
                    },
                });
            }
        }
    }
    Ok(records)
}

/// Reads every input. A file that fails is skipped with a warning, or
/// aborts the run under `strict`.
pub fn load(paths: &[PathBuf], format: Option<Format>, strict: bool) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for path in expand(paths)? {
        match read_file(&path, format) {
            Ok(r) => out.extend(r),
            Err(e) if strict => return Err(e.context(format!("in {}", path.display()))),
            Err(e) => log::warn!("skipping {}: {e:#}", path.display()),
        }
    }
    Ok(out)
}

/// Records that carry coordinates; others are reported and dropped, or
/// abort under `strict`.
pub fn with_conformers(records: Vec<Record>, strict: bool) -> Result<Vec<Record>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.mol.molecule.conformer().is_some() {
            out.push(r);
        } else if strict {
            bail!("{} has no coordinates", r.name);
        } else {
            log::warn!("skipping {}: no coordinates", r.name);
        }
    }
    Ok(out)
}
