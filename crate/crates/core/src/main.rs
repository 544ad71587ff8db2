use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use spectro_embed::config::KeyValues;
use spectro_embed::embednet::EmbeddingNetwork;
use spectro_embed::frontend::CorpusManifest;
use spectro_embed::pipeline::{
    basis_features, compute_spectrograms, concat_aux, embeddings_archive, features_archive, fit_network,
    group_by_speaker, run_extract, speaker_archive, toy_adaptation_experiment, FeatureArchive, PipelineConfig,
    ToyConfig, EMBEDDINGS_FILE, FEATURES_FILE, MODEL_FILE, REPORT_TEXT_FILE, REPORT_TSV_FILE, SPEAKERS_FILE,
    TRAINING_LOG_FILE,
};
use spectro_embed::smoothing::{average_smooth, lda_smooth_speakers, SmoothingMethod};
use spectro_embed::viz::{emit_plot, tsne_project, TsneConfig};
use spectro_embed::{Error, Result};

/// Spectro-temporal deep speaker embeddings.
#[derive(Parser)]
#[command(name = "stbe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestArg {
    /// Corpus manifest (defaults to the `manifest` config key)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    None,
    Severity,
    Age,
}

#[derive(Subcommand)]
enum Command {
    /// Log mel filter-bank features of every utterance (fbank.ark)
    Fbk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// SVD subspace basis features of every utterance (features.ark)
    Svd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Train the bottleneck classifier (model.json, training.log, report)
    TrainEmbed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
    },
    /// Utterance-level bottleneck embeddings from a trained model (embeddings.ark)
    Extract {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
        /// Trained model (defaults to the `model` config key)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Speaker-level smoothing of utterance embeddings (speakers.ark)
    Smooth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
        /// Utterance embedding archive
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Append speaker features to every acoustic frame (concat.ark)
    Concat {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
        /// Frame-level acoustic archive, e.g. from `fbk`
        #[arg(long)]
        acoustic: PathBuf,
        /// Speaker-level archive, e.g. from `smooth`
        #[arg(long)]
        speakers: PathBuf,
    },
    /// 2-D t-SNE projection of an archive of vectors (tsne.svg, tsne.tsv)
    Tsne {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
        /// Archive with one vector per key
        #[arg(long)]
        input: PathBuf,
        /// Manifest label used to colour points
        #[arg(long, value_enum, default_value = "none")]
        group_by: GroupBy,
    },
    /// Synthetic adaptation experiment with and without speaker features
    ToyAdapt {
        #[command(flatten)]
        common: Common,
        /// Disable speaker variation (control run)
        #[arg(long)]
        control: bool,
    },
    /// Manifest to feature, embedding and speaker archives in one run
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        manifest: ManifestArg,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_manifest(arg: &ManifestArg, cfg: &PipelineConfig) -> Result<CorpusManifest> {
    let path = arg
        .manifest
        .as_ref()
        .or(cfg.manifest.as_ref())
        .ok_or_else(|| Error::Config("no manifest given (use --manifest or the manifest config key)".into()))?;
    let manifest = CorpusManifest::load(path)?;
    if manifest.entries.is_empty() {
        return Err(Error::Manifest(vec![format!("{} has no entries", path.display())]));
    }
    Ok(manifest)
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out).map_err(|e| Error::Io {
        path: common.out.clone(),
        source: e,
    })?;
    Ok(&common.out)
}

fn write_text(path: PathBuf, text: String) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fbk { common, manifest } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let specs = compute_spectrograms(&manifest, &cfg.frontend)?;
            let mut archive = FeatureArchive::new("fbank", cfg.frontend.channels, cfg.hash());
            for s in &specs {
                archive.push(&s.utterance_id, s.values.t().to_owned())?;
            }
            archive.write(&out_dir(&common)?.join("fbank.ark"))
        }
        Command::Svd { common, manifest } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let features = basis_features(&compute_spectrograms(&manifest, &cfg.frontend)?, &cfg)?;
            features_archive(&features, &cfg)?.write(&out_dir(&common)?.join(FEATURES_FILE))
        }
        Command::TrainEmbed { common, manifest } => {
            let mut cfg = load_config(&common)?;
            cfg.model = None;
            let manifest = load_manifest(&manifest, &cfg)?;
            let features = basis_features(&compute_spectrograms(&manifest, &cfg.frontend)?, &cfg)?;
            let (net, log, report) = fit_network(&manifest, &features, &cfg)?;
            let dir = out_dir(&common)?;
            net.save(&dir.join(MODEL_FILE))?;
            write_text(dir.join(TRAINING_LOG_FILE), log.to_text())?;
            write_text(dir.join(REPORT_TEXT_FILE), report.to_text())?;
            write_text(dir.join(REPORT_TSV_FILE), report.to_tsv())
        }
        Command::Extract {
            common,
            manifest,
            model,
        } => {
            let cfg = load_config(&common)?;
            let model = model
                .or(cfg.model.clone())
                .ok_or_else(|| Error::Config("no model given (use --model or the model config key)".into()))?;
            let net = EmbeddingNetwork::load(&model)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let features = basis_features(&compute_spectrograms(&manifest, &cfg.frontend)?, &cfg)?;
            embeddings_archive(&net, &features, &cfg.hash())?.write(&out_dir(&common)?.join(EMBEDDINGS_FILE))
        }
        Command::Smooth {
            common,
            manifest,
            embeddings,
        } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let groups = group_by_speaker(&manifest, &FeatureArchive::read(&embeddings)?)?;
            let dir = out_dir(&common)?;
            let smoothed = match cfg.smoothing {
                SmoothingMethod::Average => average_smooth(&groups)?,
                SmoothingMethod::Lda => {
                    let fit = lda_smooth_speakers(&groups, &cfg.lda_config())?;
                    write_text(dir.join("gmm.json"), fit.gmm.model.to_json()?)?;
                    write_text(dir.join("lda.json"), fit.lda.to_json()?)?;
                    fit.embeddings
                }
            };
            speaker_archive(&smoothed, &cfg.hash())?.write(&dir.join(SPEAKERS_FILE))
        }
        Command::Concat {
            common,
            manifest,
            acoustic,
            speakers,
        } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let acoustic = FeatureArchive::read(&acoustic)?;
            let speakers = FeatureArchive::read(&speakers)?;
            let mut out = FeatureArchive::new(
                format!("{}+{}", acoustic.kind, speakers.kind),
                acoustic.dim + speakers.dim,
                cfg.hash(),
            );
            for (utt, frames) in acoustic.entries() {
                let speaker = manifest
                    .speaker_of(utt)
                    .ok_or_else(|| Error::Data(format!("utterance {utt} is not in the manifest")))?;
                let emb = speakers
                    .vector(speaker)
                    .ok_or_else(|| Error::Data(format!("no speaker features for {speaker}")))?;
                out.push(utt, concat_aux(frames.view(), &emb))?;
            }
            out.write(&out_dir(&common)?.join("concat.ark"))
        }
        Command::Tsne {
            common,
            manifest,
            input,
            group_by,
        } => {
            let cfg = load_config(&common)?;
            let archive = FeatureArchive::read(&input)?;
            let keys: Vec<String> = archive.keys().map(String::from).collect();
            let rows: Vec<f64> = keys
                .iter()
                .flat_map(|k| archive.vector(k).unwrap_or_default())
                .collect();
            let points = Array2::from_shape_vec((keys.len(), archive.dim), rows)
                .map_err(|_| Error::Data("every archive entry must hold one vector".into()))?;
            let groups = match group_by {
                GroupBy::None => vec!["all".to_string(); keys.len()],
                GroupBy::Severity | GroupBy::Age => {
                    let manifest = load_manifest(&manifest, &cfg)?;
                    keys.iter()
                        .map(|k| {
                            let entry = manifest
                                .entries
                                .iter()
                                .find(|e| &e.utterance_id == k || &e.speaker_id == k);
                            let label = entry.and_then(|e| match group_by {
                                GroupBy::Severity => e.labels.severity.clone(),
                                _ => e.labels.age.map(|a| a.to_string()),
                            });
                            label.unwrap_or_else(|| "unlabelled".into())
                        })
                        .collect()
                }
            };
            let tsne = TsneConfig {
                perplexity: cfg.tsne_perplexity,
                iterations: cfg.tsne_iterations,
                seed: cfg.seed,
                ..TsneConfig::default()
            };
            let result = tsne_project(&points, &tsne)?.with_labels(keys, groups)?;
            emit_plot(&result, &out_dir(&common)?.join("tsne.svg"))?;
            Ok(())
        }
        Command::ToyAdapt { common, control } => {
            let mut cfg = match &common.config {
                Some(path) => ToyConfig::from_key_values(&KeyValues::load(path)?)?,
                None => ToyConfig::default(),
            };
            if let Some(seed) = common.seed {
                let n = cfg.seeds.len() as u64;
                cfg.seeds = (seed..seed + n).collect();
            }
            if control {
                cfg.speaker_variation = false;
            }
            let report = toy_adaptation_experiment(&cfg)?;
            let dir = out_dir(&common)?;
            print!("{}", report.to_text());
            write_text(dir.join("toy_report.txt"), report.to_text())?;
            write_text(dir.join("toy_report.tsv"), report.to_tsv())
        }
        Command::Pipeline { common, manifest } => {
            let cfg = load_config(&common)?;
            let manifest = load_manifest(&manifest, &cfg)?;
            let output = run_extract(&manifest, &cfg, Some(out_dir(&common)?))?;
            print!("{}", output.report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
