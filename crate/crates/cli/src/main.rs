use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ssmzip::pipeline::{compress_with, decompress_with, CodecReport, Hooks, ProgressPoint};
use ssmzip::{CodecOptions, Error, TokenizerDefinition, Variant};

const DEFAULT_TOKENIZER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/gpt2-bpe.json");

/// Lossless text compressor driven by an online-trained state space model.
#[derive(Parser)]
#[command(name = "ssmzip", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a file.
    Compress {
        input: PathBuf,
        /// Defaults to INPUT.ssmz.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        /// Write the bits-per-token trace as a tab-separated table.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Restore a compressed file.
    Decompress {
        input: PathBuf,
        /// Defaults to INPUT without its .ssmz suffix, or INPUT.out.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compress each input and print a size/speed table.
    Bench {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_variant)]
        variant: Variant,
        /// Also decompress and compare.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compare predictor variants on one input.
    Ablate {
        input: PathBuf,
        /// Run only this variant (default: all four).
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Tokenizer definition (JSON). Overrides SSMZIP_TOKENIZER.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print progress samples to stderr.
    #[arg(long)]
    progress: bool,
    /// Worker threads for the model (output does not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    /// Tokens between progress samples.
    #[arg(long, default_value_t = 1000)]
    interval: u64,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_state: Option<usize>,
    #[arg(long)]
    d_conv: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// log2 of the slot count of each hashed n-gram table.
    #[arg(long)]
    ngram_bits: Option<u32>,
    /// log2 of the slot count of the pair-prediction table.
    #[arg(long)]
    lz_bits: Option<u32>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::from_name(s).ok_or_else(|| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant '{s}' (expected one of: {})", names.join(", "))
    })
}

impl Common {
    fn options(&self, variant: Variant) -> CodecOptions {
        let mut o = CodecOptions {
            variant,
            stats_interval: self.interval,
            ..CodecOptions::default()
        };
        let m = &mut o.model;
        m.rng_seed = self.seed;
        if let Some(d) = self.d_model {
            m.d_model = d;
            m.d_inner = 2 * d;
        }
        m.d_state = self.d_state.unwrap_or(m.d_state);
        m.d_conv = self.d_conv.unwrap_or(m.d_conv);
        m.n_layers = self.layers.unwrap_or(m.n_layers);
        m.chunk_size = self.chunk.unwrap_or(m.chunk_size);
        m.lr = self.lr.unwrap_or(m.lr);
        m.label_smoothing = self.label_smoothing.unwrap_or(m.label_smoothing);
        o.tables.ngram_slot_bits = self.ngram_bits.unwrap_or(o.tables.ngram_slot_bits);
        o.tables.lz_slot_bits = self.lz_bits.unwrap_or(o.tables.lz_slot_bits);
        o
    }

    fn tokenizer(&self) -> anyhow::Result<TokenizerDefinition> {
        let path = self
            .tokenizer
            .clone()
            .or_else(|| std::env::var_os("SSMZIP_TOKENIZER").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_TOKENIZER));
        TokenizerDefinition::load(&path).with_context(|| format!("loading tokenizer {}", path.display()))
    }

    fn setup_threads(&self) -> anyhow::Result<()> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn print_progress(p: &ProgressPoint) {
    eprintln!(
        "  {:>10} tokens  {:>12} bits  {:>7.3} bpt",
        p.tokens, p.cumulative_bits, p.interval_bpt
    );
}

fn run_compress(
    input: &[u8],
    tok: &TokenizerDefinition,
    opts: &CodecOptions,
    progress: bool,
) -> anyhow::Result<(Vec<u8>, CodecReport)> {
    let mut show = print_progress;
    let mut hooks = Hooks::default();
    if progress {
        hooks.on_progress = Some(&mut show);
    }
    Ok(compress_with(input, tok, opts, &mut hooks)?)
}

fn bpb(bytes_out: usize, bytes_in: usize) -> f64 {
    if bytes_in == 0 {
        0.0
    } else {
        bytes_out as f64 * 8.0 / bytes_in as f64
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Command::Compress {
            input,
            output,
            variant,
            stats,
            common,
        } => {
            common.setup_threads()?;
            let tok = common.tokenizer()?;
            let data = read(&input)?;
            let (archive, report) = run_compress(&data, &tok, &common.options(variant), common.progress)?;
            let output = output.unwrap_or_else(|| {
                let mut s = input.clone().into_os_string();
                s.push(".ssmz");
                s.into()
            });
            write(&output, &archive)?;
            if let Some(path) = stats {
                write(&path, report.trace.to_tsv().as_bytes())?;
            }
            eprintln!(
                "{} -> {}: {} -> {} bytes ({:.3} bpb, {} tokens, v_e {})",
                input.display(),
                output.display(),
                data.len(),
                archive.len(),
                bpb(archive.len(), data.len()),
                report.tokens,
                report.v_e
            );
        }
        Command::Decompress {
            input,
            output,
            common,
        } => {
            common.setup_threads()?;
            let tok = common.tokenizer()?;
            let archive = read(&input)?;
            let mut show = print_progress;
            let mut hooks = Hooks::default();
            if common.progress {
                hooks.on_progress = Some(&mut show);
            }
            let (data, _) = decompress_with(&archive, &tok, &common.options(Variant::Full), &mut hooks)?;
            let output = output.unwrap_or_else(|| match input.extension() {
                Some(e) if e == "ssmz" => input.with_extension(""),
                _ => {
                    let mut s = input.clone().into_os_string();
                    s.push(".out");
                    s.into()
                }
            });
            write(&output, &data)?;
        }
        Command::Bench {
            inputs,
            variant,
            verify,
            common,
        } => {
            common.setup_threads()?;
            let tok = common.tokenizer()?;
            let opts = common.options(variant);
            let mut out = std::io::stdout().lock();
            writeln!(out, "input\tbytes_in\tbytes_out\tbpb\traw_bpb\tseconds")?;
            for path in &inputs {
                let data = read(path)?;
                let t0 = Instant::now();
                let (archive, _) = run_compress(&data, &tok, &opts, common.progress)?;
                let secs = t0.elapsed().as_secs_f64();
                if verify {
                    let back = ssmzip::decompress(&archive, &tok, &opts)?;
                    if back != data {
                        return Err(anyhow!("{}: round trip mismatch", path.display()));
                    }
                }
                writeln!(
                    out,
                    "{}\t{}\t{}\t{:.4}\t8.0000\t{:.2}",
                    path.display(),
                    data.len(),
                    archive.len(),
                    bpb(archive.len(), data.len()),
                    secs
                )?;
            }
        }
        Command::Ablate {
            input,
            variant,
            common,
        } => {
            common.setup_threads()?;
            let tok = common.tokenizer()?;
            let data = read(&input)?;
            let variants = variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
            let mut out = std::io::stdout().lock();
            writeln!(out, "variant\tbytes_out\tbpb\tseconds")?;
            for v in variants {
                let t0 = Instant::now();
                let (archive, _) = run_compress(&data, &tok, &common.options(v), common.progress)?;
                writeln!(
                    out,
                    "{}\t{}\t{:.4}\t{:.2}",
                    v.name(),
                    archive.len(),
                    bpb(archive.len(), data.len()),
                    t0.elapsed().as_secs_f64()
                )?;
            }
        }
    }
    Ok(())
}

/// 1 generic, 3 corrupt archive, 4 incompatible archive, 5 I/O.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::CorruptArchive(_) | Error::ShortRead(_) | Error::BadMagic | Error::ChecksumMismatch => 3,
                Error::UnsupportedVersion(_) | Error::IncompatibleTokenizer { .. } => 4,
                Error::Io(_) => 5,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 5;
        }
    }
    1
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ssmzip: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
