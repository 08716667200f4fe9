mod input;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mstk_core::corpus::{generate_corpus, CorpusConfig};
use mstk_core::descriptors::LengthScaling;
use mstk_core::harness::{
    code_stats, corpus_descriptors, k_sweep, noise_study, roundtrip, NoiseSpace,
    NoiseStudyConfig, RmsdSummary, RunReport,
};
use mstk_core::molgraph::{write_sdf, write_xyz};
use mstk_core::vocab::{
    encode_struct, format_line, parse_line, struct_to_structure, structure_to_sequence, Vocab,
};
use mstk_core::vq::{io as model_io, train, ModelDims, Quantizer, TrainConfig};
use mstk_core::{FrameStrategy, Molecule};
use serde_json::json;

use input::{Format, Record};

#[derive(Parser)]
#[command(name = "mstk", version, about = "Structural tokenizer for 3D molecules")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Local frame construction: 1d, 2d or 3d.
    #[arg(long, global = true, default_value = "2d")]
    strategy: FrameStrategy,
    /// Input or output structure format. Inputs default to the file extension.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Abort on the first unreadable input instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file, or the codebook half when --params is given.
    #[arg(long)]
    codebook: PathBuf,
    /// Parameter file written separately from the codebook.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<Quantizer<f64>> {
        let open = |p: &Path| -> Result<BufReader<File>> {
            Ok(BufReader::new(
                File::open(p).with_context(|| format!("opening {}", p.display()))?,
            ))
        };
        let q = match &self.params {
            Some(p) => model_io::read_split(open(p)?, open(&self.codebook)?)?,
            None => model_io::read_quantizer(open(&self.codebook)?)?,
        };
        Ok(q)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Write the JSON run report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write per-row results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scaling {
    Log,
    Standardized,
}

impl From<Scaling> for LengthScaling {
    fn from(s: Scaling) -> Self {
        match s {
            Scaling::Log => LengthScaling::Log,
            Scaling::Standardized => LengthScaling::LogStandardized,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 256)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Epochs of linear learning-rate warmup.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Commitment weight.
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    /// Codebook EMA decay.
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    #[arg(long)]
    no_sign_head: bool,
    #[arg(long, value_enum, default_value = "log")]
    length_scaling: Scaling,
}

impl TrainArgs {
    fn config(&self, seed: u64, strategy: FrameStrategy) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            warmup_epochs: self.warmup,
            beta: self.beta,
            ema_decay: self.decay,
            epochs: self.epochs,
            seed,
            codebook_size: self.k,
            dims: ModelDims {
                sign_head: !self.no_sign_head,
                ..ModelDims::default()
            },
            strategy,
            length_scaling: self.length_scaling.into(),
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of embedded molecules as SDF.
    Synth {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a quantizer on the descriptors of the input molecules.
    Train {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        /// Model file holding parameters and codebook.
        #[arg(long)]
        out: PathBuf,
        /// Additionally write the two halves separately.
        #[arg(long, requires = "codebook_out")]
        params_out: Option<PathBuf>,
        #[arg(long, requires = "params_out")]
        codebook_out: Option<PathBuf>,
        /// Human-readable dump of the trained model.
        #[arg(long)]
        json_export: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Tokenize molecules into structural token lines.
    Encode {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        /// Condition value prepended to every line.
        #[arg(long, allow_negative_numbers = true)]
        cond: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the vocabulary built from the encoded lines as JSON.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        /// Write vocabulary ids, one sequence per line. Needs --vocab-out.
        #[arg(long, requires = "vocab_out")]
        ids_out: Option<PathBuf>,
    },
    /// Rebuild molecules from structural token lines.
    Decode {
        input: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode and decode each molecule, reporting aligned RMSD.
    Roundtrip {
        inputs: Vec<PathBuf>,
        /// Also measure the path through this model's codebook.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, requires = "codebook")]
        params: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Perturb descriptors with Gaussian noise and count faithful decodes.
    NoiseStudy {
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
        scales: Vec<f64>,
        /// Strategies to compare; defaults to all three.
        #[arg(long = "strategies", value_delimiter = ',')]
        strategies: Vec<FrameStrategy>,
        /// Aligned RMSD below which a decode counts as faithful.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Use only the first N molecules.
        #[arg(long)]
        samples: Option<usize>,
        /// Add noise to normalized features or to raw lengths and radians.
        #[arg(long, value_enum, default_value = "normalized")]
        noise_space: Space,
        #[arg(long, value_enum, default_value = "log")]
        length_scaling: Scaling,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Per-code centroids and element hit counts.
    Stats {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        codes_csv: Option<PathBuf>,
        #[arg(long)]
        hits_csv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train one quantizer per codebook size and compare reconstruction.
    KSweep {
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        ks: Vec<usize>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Print a model file as JSON.
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Normalized,
    Raw,
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_report(report: &RunReport, path: Option<&Path>) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn molecules(records: &[Record]) -> Vec<Molecule> {
    records.iter().map(|r| r.mol.molecule.clone()).collect()
}

fn load_structures(cli: &Cli, inputs: &[PathBuf]) -> Result<Vec<Record>> {
    if inputs.is_empty() {
        bail!("no input files given");
    }
    input::with_conformers(input::load(inputs, cli.format, cli.strict)?, cli.strict)
}

fn format_molecules<'a>(
    format: Format,
    items: impl IntoIterator<Item = (&'a str, &'a Molecule)>,
) -> Result<String> {
    Ok(match format {
        Format::Mol => write_sdf(items)?,
        Format::Xyz => {
            let mut s = String::new();
            for (title, m) in items {
                s.push_str(&write_xyz(m, title)?);
            }
            s
        }
        Format::Smiles => {
            let mut s = String::new();
            for (title, _) in items {
                s.push_str(title);
                s.push('\n');
            }
            s
        }
    })
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    match &cli.command {
        Command::Synth { count, out } => {
            let cfg = CorpusConfig {
                size: *count,
                seed: cli.seed,
                ..CorpusConfig::default()
            };
            let corpus = generate_corpus(&cfg);
            let items = corpus.iter().map(|e| (e.smiles.as_str(), &e.molecule));
            let text = format_molecules(cli.format.unwrap_or(Format::Mol), items)?;
            write_text(out.as_deref(), &text)?;
            log::info!("wrote {} molecules in {:.1}s", corpus.len(), started.elapsed().as_secs_f64());
        }
        Command::Train {
            inputs,
            train: targs,
            out,
            params_out,
            codebook_out,
            json_export,
            report,
        } => {
            let mols = molecules(&load_structures(cli, inputs)?);
            let data = corpus_descriptors(&mols, cli.strategy, true)?;
            let cfg = targs.config(cli.seed, cli.strategy);
            log::info!("training on {} descriptors from {} molecules", data.len(), mols.len());
            let (q, tr) = train::<f64>(&data, &cfg)?;
            model_io::write_quantizer(BufWriter::new(File::create(out)?), &q)?;
            if let (Some(p), Some(c)) = (params_out, codebook_out) {
                model_io::write_params(BufWriter::new(File::create(p)?), &q)?;
                model_io::write_codebook(BufWriter::new(File::create(c)?), &q)?;
            }
            if let Some(p) = json_export {
                model_io::export_json(BufWriter::new(File::create(p)?), &q)?;
            }
            if let Some(path) = &report.csv {
                let mut s = String::from(
                    "epoch,learning_rate,loss,recon,commit,sign,utilization,reseeded,gen_length_rmsd,gen_polar_rmsd,gen_azimuth_rmsd\n",
                );
                for e in &tr.epochs {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{}\n",
                        e.epoch,
                        e.learning_rate,
                        e.loss.total,
                        e.loss.reconstruction,
                        e.loss.commitment,
                        e.loss.sign,
                        e.utilization,
                        e.reseeded,
                        e.metrics.gen_length_rmsd,
                        e.metrics.gen_polar_rmsd,
                        e.metrics.gen_azimuth_rmsd
                    ));
                }
                fs::write(path, s)?;
            }
            let results = json!({
                "molecules": mols.len(),
                "model_tag": format!("{:016x}", cfg.model_tag()),
                "training": tr,
            });
            emit_report(
                &RunReport::new("train", &cfg, cli.seed, &results, started),
                report.report.as_deref(),
            )?;
        }
        Command::Encode {
            inputs,
            model,
            cond,
            out,
            vocab_out,
            ids_out,
        } => {
            let q = model.load()?;
            if q.strategy != cli.strategy {
                log::info!("using the model's {} frames", q.strategy);
            }
            let records = load_structures(cli, inputs)?;
            let mut lines = Vec::with_capacity(records.len());
            let mut seqs = Vec::with_capacity(records.len());
            for r in &records {
                match structure_to_sequence(&r.mol.molecule, &r.mol.sequence, &q) {
                    Ok(s) => {
                        lines.push(format_line(&s, *cond)?);
                        seqs.push((s, &r.mol.sequence));
                    }
                    Err(e) if cli.strict => return Err(e).context(r.name.clone()),
                    Err(e) => log::warn!("skipping {}: {e}", r.name),
                }
            }
            let mut text = lines.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            write_text(out.as_deref(), &text)?;
            if let Some(path) = vocab_out {
                let vocab = Vocab::from_sequences(seqs.iter().map(|(_, l)| *l), q.size())?;
                fs::write(path, vocab.to_json())?;
                if let Some(ids_path) = ids_out {
                    let mut s = String::new();
                    for (seq, _) in &seqs {
                        let ids = encode_struct(seq, *cond, &vocab)?;
                        let row: Vec<String> = ids.iter().map(usize::to_string).collect();
                        s.push_str(&row.join(" "));
                        s.push('\n');
                    }
                    fs::write(ids_path, s)?;
                }
            }
        }
        Command::Decode { input, model, out } => {
            let q = model.load()?;
            let text = fs::read_to_string(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut decoded = Vec::new();
            for (k, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let result = parse_line(line)
                    .and_then(|(seq, _)| Ok((seq.line_text(), struct_to_structure(&seq, &q)?)));
                match result {
                    Ok(m) => decoded.push(m),
                    Err(e) if cli.strict => {
                        return Err(e).with_context(|| format!("line {}", k + 1))
                    }
                    Err(e) => log::warn!("skipping line {}: {e}", k + 1),
                }
            }
            let items = decoded.iter().map(|(t, m)| (t.as_str(), m));
            write_text(
                out.as_deref(),
                &format_molecules(cli.format.unwrap_or(Format::Mol), items)?,
            )?;
        }
        Command::Roundtrip {
            inputs,
            codebook,
            params,
            report,
        } => {
            let q = codebook
                .as_ref()
                .map(|c| {
                    ModelArgs {
                        codebook: c.clone(),
                        params: params.clone(),
                    }
                    .load()
                })
                .transpose()?;
            let strategy = q.as_ref().map_or(cli.strategy, |q| q.strategy);
            let records = if inputs.is_empty() {
                Vec::new()
            } else {
                load_structures(cli, inputs)?
            };
            let rows = roundtrip(&molecules(&records), strategy, q.as_ref())?;
            let exact: Vec<f64> = rows.iter().map(|r| r.exact_rmsd).collect();
            let quant: Vec<f64> = rows.iter().filter_map(|r| r.quantized_rmsd).collect();
            let named: Vec<_> = rows
                .iter()
                .zip(&records)
                .map(|(row, rec)| json!({"name": rec.name, "smiles": rec.mol.smiles, "row": row}))
                .collect();
            if let Some(path) = &report.csv {
                let mut s = String::from("index,name,atoms,exact_rmsd,quantized_rmsd\n");
                for (row, rec) in rows.iter().zip(&records) {
                    let qr = row.quantized_rmsd.map(|v| v.to_string()).unwrap_or_default();
                    s.push_str(&format!(
                        "{},{},{},{},{}\n",
                        row.index, rec.name, row.atoms, row.exact_rmsd, qr
                    ));
                }
                fs::write(path, s)?;
            }
            let results = json!({
                "molecules": rows.len(),
                "exact": RmsdSummary::of(&exact),
                "quantized": (!quant.is_empty()).then(|| RmsdSummary::of(&quant)),
                "rows": named,
            });
            let config = json!({"strategy": strategy, "codebook": codebook, "params": params});
            emit_report(
                &RunReport::new("roundtrip", &config, cli.seed, &results, started),
                report.report.as_deref(),
            )?;
        }
        Command::NoiseStudy {
            inputs,
            scales,
            strategies,
            threshold,
            samples,
            noise_space,
            length_scaling,
            report,
        } => {
            let mols = molecules(&load_structures(cli, inputs)?);
            let cfg = NoiseStudyConfig {
                noise_scales: scales.clone(),
                strategies: if strategies.is_empty() {
                    FrameStrategy::ALL.to_vec()
                } else {
                    strategies.clone()
                },
                rmsd_threshold: *threshold,
                sample_count: *samples,
                seed: cli.seed,
                space: match noise_space {
                    Space::Normalized => NoiseSpace::Normalized,
                    Space::Raw => NoiseSpace::Raw,
                },
                length_scaling: (*length_scaling).into(),
            };
            let rows = noise_study(&mols, &cfg)?;
            if let Some(path) = &report.csv {
                let mut s = String::from(
                    "strategy,scale,molecules,fraction,mean_aligned_rmsd,median_aligned_rmsd,mean_gauge_rmsd,failures\n",
                );
                for r in &rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        r.strategy,
                        r.scale,
                        r.molecules,
                        r.fraction,
                        r.mean_aligned_rmsd,
                        r.median_aligned_rmsd,
                        r.mean_gauge_rmsd,
                        r.failures
                    ));
                }
                fs::write(path, s)?;
            }
            emit_report(
                &RunReport::new("noise-study", &cfg, cli.seed, &rows, started),
                report.report.as_deref(),
            )?;
        }
        Command::Stats {
            inputs,
            model,
            codes_csv,
            hits_csv,
            report,
        } => {
            let q = model.load()?;
            let mols = molecules(&load_structures(cli, inputs)?);
            let stats = code_stats(&mols, &q)?;
            if let Some(p) = codes_csv {
                fs::write(p, stats.codes_csv())?;
            }
            if let Some(p) = hits_csv {
                fs::write(p, stats.hits_csv())?;
            }
            let config = json!({"codebook": model.codebook, "params": model.params});
            emit_report(
                &RunReport::new("stats", &config, cli.seed, &stats, started),
                report.as_deref(),
            )?;
        }
        Command::KSweep {
            inputs,
            ks,
            train: targs,
            report,
        } => {
            let mols = molecules(&load_structures(cli, inputs)?);
            let data = corpus_descriptors(&mols, cli.strategy, true)?;
            let cfg = targs.config(cli.seed, cli.strategy);
            let rows = k_sweep(&data, &cfg, ks)?;
            if let Some(path) = &report.csv {
                let mut s = String::from(
                    "k,gen_length_rmsd,gen_polar_rmsd,gen_azimuth_rmsd,gen_abs_azimuth_rmsd,sign_accuracy,utilization\n",
                );
                for r in &rows {
                    let m = &r.metrics;
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        r.k,
                        m.gen_length_rmsd,
                        m.gen_polar_rmsd,
                        m.gen_azimuth_rmsd,
                        m.gen_abs_azimuth_rmsd,
                        m.sign_accuracy,
                        m.utilization
                    ));
                }
                fs::write(path, s)?;
            }
            let config = json!({"base": cfg, "sizes": ks});
            emit_report(
                &RunReport::new("k-sweep", &config, cli.seed, &rows, started),
                report.report.as_deref(),
            )?;
        }
        Command::Inspect { model, out } => {
            let q = model.load()?;
            let mut w = writer(out.as_deref())?;
            model_io::export_json(&mut w, &q)?;
            writeln!(w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("MSTK_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("MSTK_THREADS={value:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
