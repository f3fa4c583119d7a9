//! Command-line entry point. Exit status is 0 on success, 2 on invalid
//! input or usage, 1 on runtime failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analytics::{
    activation_stats, centre_cross_merges, layer_proportions, merge_labels, parse_merges,
    pca_corpus, summarize_models, timeline, write_activation_csv, write_pca_csv,
    write_pca_ratios_csv, write_proportions_csv, write_timeline_csv,
};
use crate::autoencoder::{
    default_hidden_dims, init_model, load_model, save_model, train, TrainConfig,
};
use crate::classifier::{
    build_codebook, classify_corpus, default_threshold, kmeans_fit, label_centroids,
    minmax_corpus, read_assignments_csv, write_assignments_csv, Assignment, KMeansConfig, Reason,
    DEFAULT_CODEBOOK_SIZE,
};
use crate::corpus::{
    export_csv, filter_by, import_csv, read_corpus, write_corpus, Corpus, CORPUS_MAGIC,
};
use crate::dogfamily::{default_bank, render, render_raw, Family, PatternClass, Polarity, TemplateSpec};
use crate::error::{Error, Result};
use crate::geometry::mc_cosine_dissim;
use crate::initgen::{generate_init, InitSpec};
use crate::spectrum::{
    annotate, load_labelmap, sample_spectrum, save_labelmap, suggest_labels, write_spectrum_csv,
    DEFAULT_SPECTRUM_SAMPLES,
};

#[derive(Debug, Parser)]
#[command(name = "kernelscope", version, about = "Depthwise-kernel pattern analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// RNG seed; falls back to KERNELSCOPE_SEED.
    #[arg(long, env = "KERNELSCOPE_SEED")]
    pub seed: Option<u64>,
}

impl SeedArg {
    fn require(&self, cmd: &str) -> Result<u64> {
        let seed = self.seed.ok_or_else(|| {
            Error::InvalidConfig(format!("{cmd} needs --seed or KERNELSCOPE_SEED"))
        })?;
        println!("seed: {seed}");
        Ok(seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a filter CSV into a KCP1 corpus, or a KCP1 corpus into CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only this model.
        #[arg(long)]
        model_id: Option<String>,
        /// Keep only this depthwise layer.
        #[arg(long)]
        layer: Option<u32>,
    },
    /// Train the autoencoder on a corpus and write a KAE1 model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Four comma-separated hidden widths; defaults depend on kernel size.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        hidden: Option<Vec<usize>>,
        /// Per-epoch mean loss as CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Decode evenly spaced codes and write the spectrum CSV.
    Spectrum {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPECTRUM_SAMPLES)]
        samples: usize,
        /// Tag every sample with its nearest template.
        #[arg(long)]
        annotate: bool,
    },
    /// Propose a JSON label map from the spectrum; edit it before classifying.
    LabelSuggest {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPECTRUM_SAMPLES)]
        samples: usize,
    },
    /// Assign every filter a class through the decoder codebook.
    Classify {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 0.3 for 7×7 and 0.2 otherwise.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_CODEBOOK_SIZE)]
        n_codes: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Cluster min-max encoded kernels with k-means and name the centroids.
    Kmeans {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        /// Centroids and their names as CSV.
        #[arg(long)]
        centroids: Option<PathBuf>,
    },
    /// Per-layer proportions and total-activation box statistics.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        proportions: Option<PathBuf>,
        #[arg(long)]
        activation: Option<PathBuf>,
        /// Relabel before aggregating: `OnCross=OnCentre,...`, or `centre-cross`.
        #[arg(long)]
        merge: Option<String>,
        /// Drop Other and Degenerate rows from the proportions table.
        #[arg(long)]
        exclude_other: bool,
    },
    /// Project raw kernels onto their leading principal components.
    Pca {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        components: usize,
        /// Adds a class column.
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        ratios: Option<PathBuf>,
    },
    /// Clustered percentage and proportions across assignment snapshots.
    Timeline {
        /// `tag=assignments.csv`, repeated in snapshot order.
        #[arg(long = "snapshot", required = true)]
        snapshots: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate DoG-family initialization kernels as a corpus.
    Init {
        #[arg(long)]
        kernel_size: u32,
        /// Channel count per depthwise layer, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        channels: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
        /// Also write the kernels as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render one template as a k×k CSV grid.
    Synth {
        #[arg(long)]
        family: String,
        #[arg(long, default_value = "on")]
        polarity: String,
        #[arg(long)]
        sigma1: f64,
        /// Ignored for cross; defaults to 2·sigma1.
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, default_value_t = 7)]
        size: u32,
        /// Skip centering and normalization.
        #[arg(long)]
        raw: bool,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One line per model: filter count and clustered percentage.
    Summary {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        assignments: PathBuf,
    },
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    run(std::env::args_os())
}

/// Parses `args` (program name first) and executes; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

/// Refuses to overwrite any input.
fn guard_outputs(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for o in outputs {
        let o = absolute(o)?;
        for i in inputs {
            if absolute(i)? == o {
                return Err(Error::InvalidConfig(format!(
                    "output {} would overwrite an input",
                    o.display()
                )));
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn is_kcp(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut magic = [0u8; 4];
    let mut f = File::open(path)?;
    Ok(f.read(&mut magic)? == 4 && magic == CORPUS_MAGIC)
}

fn load_assignments(path: &Path, corpus: &Corpus) -> Result<Vec<Assignment>> {
    let a = read_assignments_csv(File::open(path)?)?;
    crate::analytics::check_aligned(corpus, &a)?;
    Ok(a)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            input,
            out,
            model_id,
            layer,
        } => {
            guard_outputs(&[&input], &[&out])?;
            let to_csv = is_kcp(&input)?;
            let corpus = if to_csv { read_corpus(&input)? } else { import_csv(&input)? };
            let corpus = if model_id.is_some() || layer.is_some() {
                filter_by(&corpus, model_id.as_deref(), layer)
            } else {
                corpus
            };
            if to_csv {
                export_csv(&corpus, &out)?;
            } else {
                write_corpus(&corpus, &out)?;
            }
            println!("{} filters of size {k}x{k}", corpus.len(), k = corpus.kernel_size());
        }
        Command::Train {
            corpus,
            out,
            seed,
            epochs,
            batch,
            lr,
            hidden,
            loss_log,
        } => {
            let mut outputs = vec![out.as_path()];
            outputs.extend(loss_log.as_deref());
            guard_outputs(&[&corpus], &outputs)?;
            let seed = seed.require("train")?;
            let data = read_corpus(&corpus)?;
            let k = data.kernel_size();
            let hidden = match hidden {
                Some(h) => [h[0], h[1], h[2], h[3]],
                None => default_hidden_dims(k),
            };
            let cfg = TrainConfig {
                epochs,
                batch_size: batch,
                learning_rate: lr,
                seed,
                shuffle: true,
            };
            cfg.validate()?;
            let model = init_model(k, hidden, seed)?;
            let outcome = train(&model, &data, &cfg)?;
            save_model(&outcome.model, &out)?;
            if let Some(path) = loss_log {
                let mut w = create(&path)?;
                writeln!(w, "epoch,loss")?;
                for (e, l) in outcome.loss_history.iter().enumerate() {
                    writeln!(w, "{e},{l}")?;
                }
                w.flush()?;
            }
            println!(
                "trained on {} filters ({} degenerate skipped); loss {:.6} -> {:.6}",
                data.len() - outcome.excluded.len(),
                outcome.excluded.len(),
                outcome.initial_loss,
                outcome.loss_history.last().copied().unwrap_or(outcome.initial_loss)
            );
        }
        Command::Spectrum {
            model,
            out,
            samples,
            annotate: tag,
        } => {
            guard_outputs(&[&model], &[&out])?;
            let m = load_model(&model)?;
            let mut spectrum = sample_spectrum(&m, samples)?;
            if tag {
                annotate(&mut spectrum, &default_bank(m.kernel_size())?)?;
            }
            let mut w = create(&out)?;
            write_spectrum_csv(&spectrum, &mut w)?;
            w.flush()?;
        }
        Command::LabelSuggest {
            model,
            out,
            samples,
        } => {
            guard_outputs(&[&model], &[&out])?;
            let m = load_model(&model)?;
            let spectrum = sample_spectrum(&m, samples)?;
            let map = suggest_labels(&spectrum, &default_bank(m.kernel_size())?)?;
            save_labelmap(&map, &out)?;
            println!("{} labelled intervals", map.intervals().len());
        }
        Command::Classify {
            corpus,
            model,
            labels,
            out,
            threshold,
            n_codes,
            jobs,
        } => {
            guard_outputs(&[&corpus, &model, &labels], &[&out])?;
            let data = read_corpus(&corpus)?;
            let m = load_model(&model)?;
            let map = load_labelmap(&labels)?;
            let threshold = threshold.unwrap_or_else(|| default_threshold(data.kernel_size()));
            if !(threshold > 0.0 && threshold <= 2.0) {
                return Err(Error::InvalidConfig(format!(
                    "threshold {threshold} outside (0, 2]"
                )));
            }
            let codebook = build_codebook(&m, n_codes)?;
            let assignments = classify_corpus(&data, &codebook, &map, threshold, jobs.max(1))?;
            let mut w = create(&out)?;
            write_assignments_csv(&data, &assignments, &mut w)?;
            w.flush()?;
            if !assignments.is_empty() {
                println!(
                    "threshold {threshold}: {:.2}% clustered",
                    crate::analytics::clustered_percentage(&assignments)?
                );
            }
        }
        Command::Kmeans {
            corpus,
            out,
            seed,
            clusters,
            restarts,
            max_iter,
            centroids,
        } => {
            let mut outputs = vec![out.as_path()];
            outputs.extend(centroids.as_deref());
            guard_outputs(&[&corpus], &outputs)?;
            let seed = seed.require("kmeans")?;
            let data = read_corpus(&corpus)?;
            let (encoded, kept, _) = minmax_corpus(&data);
            let cfg = KMeansConfig {
                k_clusters: clusters,
                seed,
                max_iter,
                n_restarts: restarts,
            };
            let result = kmeans_fit(&encoded, &cfg)?;
            let names = label_centroids(&result, &default_bank(data.kernel_size())?)?;
            let mut assignments: Vec<Assignment> =
                (0..data.len()).map(Assignment::degenerate).collect();
            for ((&i, &l), p) in kept.iter().zip(&result.labels).zip(&encoded) {
                let class = names[l];
                assignments[i] = Assignment {
                    source_index: i,
                    matched_code: None,
                    class,
                    dissimilarity: mc_cosine_dissim(p, &result.centroids[l]).unwrap_or(1.0),
                    reason: if class == PatternClass::Other {
                        Reason::Unlabeled
                    } else {
                        Reason::Matched
                    },
                };
            }
            let mut w = create(&out)?;
            write_assignments_csv(&data, &assignments, &mut w)?;
            w.flush()?;
            if let Some(path) = centroids {
                let mut w = create(&path)?;
                for (c, name) in result.centroids.iter().zip(&names) {
                    let vals: Vec<String> = c.iter().map(|v| crate::analytics::fmt_g(*v)).collect();
                    writeln!(w, "{},{}", name, vals.join(","))?;
                }
                w.flush()?;
            }
            println!("inertia {}", crate::analytics::fmt_g(result.inertia));
        }
        Command::Stats {
            corpus,
            assignments,
            proportions,
            activation,
            merge,
            exclude_other,
        } => {
            let mut outputs = Vec::new();
            outputs.extend(proportions.as_deref());
            outputs.extend(activation.as_deref());
            guard_outputs(&[&corpus, &assignments], &outputs)?;
            let data = read_corpus(&corpus)?;
            let mut a = load_assignments(&assignments, &data)?;
            if let Some(spec) = merge {
                let merges = if spec == "centre-cross" {
                    centre_cross_merges()
                } else {
                    parse_merges(&spec)?
                };
                a = merge_labels(&a, &merges)?;
            }
            let table = layer_proportions(&data, &a)?;
            let stats = activation_stats(&data, &a)?;
            let quiet = proportions.is_some() || activation.is_some();
            if let Some(p) = proportions {
                let mut w = create(&p)?;
                write_proportions_csv(&table, !exclude_other, &mut w)?;
                w.flush()?;
            }
            if let Some(p) = activation {
                let mut w = create(&p)?;
                write_activation_csv(&stats, &mut w)?;
                w.flush()?;
            }
            if !quiet {
                let stdout = io::stdout();
                write_proportions_csv(&table, !exclude_other, stdout.lock())?;
                println!();
                write_activation_csv(&stats, stdout.lock())?;
            }
        }
        Command::Pca {
            corpus,
            out,
            components,
            assignments,
            ratios,
        } => {
            let mut inputs = vec![corpus.as_path()];
            inputs.extend(assignments.as_deref());
            let mut outputs = vec![out.as_path()];
            outputs.extend(ratios.as_deref());
            guard_outputs(&inputs, &outputs)?;
            let data = read_corpus(&corpus)?;
            let a = assignments
                .as_deref()
                .map(|p| load_assignments(p, &data))
                .transpose()?;
            let pca = pca_corpus(&data, components)?;
            let mut w = create(&out)?;
            write_pca_csv(&data, &pca, a.as_deref(), &mut w)?;
            w.flush()?;
            match ratios {
                Some(p) => {
                    let mut w = create(&p)?;
                    write_pca_ratios_csv(&pca, &mut w)?;
                    w.flush()?;
                }
                None => write_pca_ratios_csv(&pca, io::stdout().lock())?,
            }
        }
        Command::Timeline { snapshots, out } => {
            let parsed: Vec<(String, PathBuf)> = snapshots
                .iter()
                .map(|s| {
                    s.split_once('=')
                        .map(|(t, p)| (t.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("snapshot {s:?} is not tag=path"))
                        })
                })
                .collect::<Result<_>>()?;
            let inputs: Vec<&Path> = parsed.iter().map(|(_, p)| p.as_path()).collect();
            guard_outputs(&inputs, &[&out])?;
            let series = parsed
                .into_iter()
                .map(|(t, p)| Ok((t, read_assignments_csv(File::open(p)?)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = timeline(&series)?;
            let mut w = create(&out)?;
            write_timeline_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Init {
            kernel_size,
            channels,
            out,
            seed,
            csv,
        } => {
            let seed = seed.require("init")?;
            let spec = InitSpec::new(kernel_size, channels, seed);
            let corpus = generate_init(&spec)?;
            write_corpus(&corpus, &out)?;
            if let Some(p) = csv {
                export_csv(&corpus, &p)?;
            }
            println!("{} kernels of size {kernel_size}x{kernel_size}", corpus.len());
        }
        Command::Synth {
            family,
            polarity,
            sigma1,
            sigma2,
            size,
            raw,
            out,
        } => {
            let family: Family = family.parse()?;
            let polarity: Polarity = polarity.parse()?;
            let sigma2 = match family {
                Family::Cross => sigma1,
                _ => sigma2.unwrap_or(2.0 * sigma1),
            };
            let spec = TemplateSpec::new(family, polarity, sigma1, sigma2, size);
            spec.validate()?;
            let kernel = if raw { render_raw(&spec)? } else { render(&spec)? };
            let mut text = String::new();
            for row in kernel.chunks(size as usize) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Summary {
            corpus,
            assignments,
        } => {
            let data = read_corpus(&corpus)?;
            let a = load_assignments(&assignments, &data)?;
            println!("model\tfilters\tclustered_percent");
            for s in summarize_models(&data, &a)? {
                println!("{}\t{}\t{:.2}%", s.model_id, s.filters, s.clustered_percentage);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["kernelscope", "bogus"]), 2);
        assert_eq!(run(["kernelscope", "train", "--nope"]), 2);
        assert_eq!(run(["kernelscope", "--help"]), 0);
    }

    #[test]
    fn synth_validation() {
        assert_eq!(
            run(["kernelscope", "synth", "--family", "dog", "--sigma1", "2", "--sigma2", "1"]),
            2
        );
        assert_eq!(run(["kernelscope", "synth", "--family", "blob", "--sigma1", "1"]), 2);
    }

    #[test]
    fn missing_input_is_runtime_error() {
        assert_eq!(
            run(["kernelscope", "ingest", "--input", "/nonexistent/x.csv", "--out", "/tmp/y.kcp"]),
            1
        );
    }

    #[test]
    fn refuses_to_overwrite_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "x").unwrap();
        let s = p.to_str().unwrap();
        assert_eq!(run(["kernelscope", "ingest", "--input", s, "--out", s]), 2);
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x");
    }
}
