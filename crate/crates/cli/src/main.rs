//! `eegrisk` command-line front-end.
//!
//! Settings are resolved in this order, later winning: built-in defaults,
//! the `--config` file, `--set key=value` overrides, then dedicated flags
//! (`--seed`, `--out-dir`, and the per-subcommand flags).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eegrisk::config::{InputConfig, PipelineConfig};
use eegrisk::datamodel::{load_feature_table, write_epochs, write_feature_table, LoadOptions};
use eegrisk::features::connectivity::SlParams;
use eegrisk::harmonize::{apply_combat, HarmonizationModel};
use eegrisk::pipeline::{self, StageError};
use eegrisk::psm::Strategy;
use eegrisk::synth::{
    generate_epoch_cohort, generate_feature_cohort, ground_truth_csv, CohortSpec, EpochLayout,
    Recipe,
};
use eegrisk::Error;

#[derive(Parser)]
#[command(name = "eegrisk", version, about = "Multi-site EEG biomarker pipeline")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct InputArgs {
    /// Feature table CSV.
    #[arg(long, conflicts_with_all = ["epochs", "synth"])]
    features: Option<String>,
    /// Directory of epoch manifests.
    #[arg(long, conflicts_with = "synth")]
    epochs: Option<String>,
    /// `default` or a cohort spec file.
    #[arg(long)]
    synth: Option<String>,
    /// Impute missing feature cells with the column median.
    #[arg(long)]
    allow_missing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the feature table (features.csv, manifest.csv).
    Extract {
        #[command(flatten)]
        input: InputArgs,
        /// Per-band SL parameters, `band:m,lag,w1,w2,p_ref`; repeatable.
        #[arg(long = "sl-params", value_name = "SPEC")]
        sl_params: Vec<String>,
        /// Print the feature-count breakdown for N components and exit.
        #[arg(long, value_name = "N")]
        describe: Option<usize>,
    },
    /// ComBat across sites (harmonized.csv, harmonize_model/, site_smd.csv).
    Harmonize {
        #[arg(long)]
        input: PathBuf,
        /// Apply a saved model instead of fitting one.
        #[arg(long, value_name = "MODEL_DIR")]
        apply: Option<PathBuf>,
        /// Keep the group effect as a covariate.
        #[arg(long)]
        preserve_group: bool,
    },
    /// Propensity-score trimming at one ratio (matched.csv and diagnostics).
    Match {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ratio: usize,
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Train/test split, pruning and feature selection.
    Select {
        #[arg(long)]
        input: PathBuf,
    },
    /// Final tree on the selected features (model.txt).
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        selection: PathBuf,
    },
    /// Held-out metrics, cross-validation and learning curve.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Synthetic cohort: features.csv and truth.csv, plus epoch bundles
    /// with `--epochs`.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Signal recipe for epoch bundles, e.g. `sine:10`, `noise:1:40`.
        #[arg(long, value_name = "RECIPE")]
        epochs: Option<Recipe>,
    },
    /// Every stage, writing the full report bundle.
    Pipeline {
        #[command(flatten)]
        input: InputArgs,
    },
}

fn resolve(cli: &Cli) -> eegrisk::Result<PipelineConfig> {
    let text = match &cli.config {
        Some(p) => {
            fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => String::new(),
    };
    let mut cfg = PipelineConfig::from_toml_with(&text, &cli.sets)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = Some(d.display().to_string());
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut PipelineConfig, a: &InputArgs) {
    if a.features.is_some() || a.epochs.is_some() || a.synth.is_some() {
        cfg.input = InputConfig {
            features: a.features.clone(),
            epochs: a.epochs.clone(),
            synth: a.synth.clone(),
            allow_missing: a.allow_missing,
        };
    } else if a.allow_missing {
        cfg.input.allow_missing = true;
    }
}

fn out_dir(cfg: &PipelineConfig) -> PathBuf {
    PathBuf::from(cfg.out_dir.as_deref().unwrap_or("eegrisk-out"))
}

fn staged<T>(stage: &str, r: eegrisk::Result<T>) -> Result<T, StageError> {
    r.map_err(|error| StageError {
        stage: stage.to_string(),
        error,
    })
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> eegrisk::Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> eegrisk::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// `band:m,lag,w1,w2,p_ref`.
fn parse_sl(s: &str) -> eegrisk::Result<(String, SlParams)> {
    let bad = || {
        Error::Config(format!(
            "--sl-params `{s}` must look like band:m,lag,w1,w2,p_ref"
        ))
    };
    let (band, rest) = s.split_once(':').ok_or_else(bad)?;
    let v: Vec<&str> = rest.split(',').map(str::trim).collect();
    if v.len() != 5 {
        return Err(bad());
    }
    let int = |x: &str| x.parse::<usize>().map_err(|_| bad());
    Ok((
        band.trim().to_string(),
        SlParams {
            m: int(v[0])?,
            lag: int(v[1])?,
            w1: int(v[2])?,
            w2: int(v[3])?,
            p_ref: v[4].parse().map_err(|_| bad())?,
        },
    ))
}

fn synth(
    spec: Option<&Path>,
    seed: Option<u64>,
    recipe: Option<Recipe>,
    out: &Path,
) -> eegrisk::Result<()> {
    let mut spec = match spec {
        Some(p) => CohortSpec::from_toml(
            &fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        )?,
        None => CohortSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    mkdir(out)?;
    let table = generate_feature_cohort(&spec)?;
    write_feature_table(&table, out.join("features.csv"))?;
    write(&out.join("truth.csv"), ground_truth_csv(&spec))?;
    write(&out.join("spec.toml"), spec.to_toml())?;
    if let Some(recipe) = recipe {
        let dir = out.join("epochs");
        mkdir(&dir)?;
        let layout = EpochLayout::default();
        for (i, set) in generate_epoch_cohort(&spec, recipe, layout)?
            .iter()
            .enumerate()
        {
            write_epochs(set, dir.join(format!("{i:04}_{}.txt", set.meta.subject_id)))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), StageError> {
    let mut cfg = staged("config", resolve(&cli))?;
    if let Some(n) = cli.threads {
        staged(
            "config",
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("--threads: {e}"))),
        )?;
    }
    match &cli.command {
        Command::Extract {
            input,
            sl_params,
            describe,
        } => {
            apply_input(&mut cfg, input);
            for s in sl_params {
                let (band, params) = staged("config", parse_sl(s))?;
                cfg.sl.overrides.insert(band, params);
            }
            staged("config", cfg.validate())?;
            if let Some(n) = describe {
                print!("{}", staged("config", cfg.extractor())?.describe(*n));
                return Ok(());
            }
            staged(
                "extract",
                pipeline::stage_extract(&cfg, &out_dir(&cfg)).map(|_| ()),
            )
        }
        Command::Harmonize {
            input,
            apply,
            preserve_group,
        } => {
            cfg.harmonize.preserve_group |= *preserve_group;
            staged("config", cfg.validate())?;
            let out = out_dir(&cfg);
            match apply {
                None => staged(
                    "harmonize",
                    pipeline::stage_harmonize(&cfg, input, &out).map(|_| ()),
                ),
                Some(model_dir) => staged("harmonize", {
                    (|| {
                        let model = HarmonizationModel::read(model_dir)?;
                        let table = load_feature_table(input, LoadOptions::default())?;
                        mkdir(&out)?;
                        write_feature_table(
                            &apply_combat(&model, &table)?,
                            out.join("harmonized.csv"),
                        )
                    })()
                }),
            }
        }
        Command::Match {
            input,
            ratio,
            strategy,
        } => {
            if let Some(s) = strategy {
                cfg.matching.strategy = *s;
            }
            staged("config", cfg.validate())?;
            staged(
                "match",
                pipeline::stage_match(&cfg, input, *ratio, &out_dir(&cfg)).map(|_| ()),
            )
        }
        Command::Select { input } => {
            staged("config", cfg.validate())?;
            staged(
                "select",
                pipeline::stage_select(&cfg, input, &out_dir(&cfg)).map(|_| ()),
            )
        }
        Command::Train { train, selection } => {
            staged("config", cfg.validate())?;
            staged(
                "train",
                pipeline::stage_train(&cfg, train, selection, &out_dir(&cfg)).map(|_| ()),
            )
        }
        Command::Evaluate { model, train, test } => {
            staged("config", cfg.validate())?;
            let e = staged(
                "evaluate",
                pipeline::stage_evaluate(&cfg, model, train, test, &out_dir(&cfg)),
            )?;
            println!(
                "accuracy {:.4} ({}/{})",
                e.metrics.accuracy.value(),
                e.metrics.accuracy.num,
                e.metrics.accuracy.den
            );
            Ok(())
        }
        Command::Synth { spec, epochs } => staged(
            "synth",
            synth(spec.as_deref(), cli.seed, *epochs, &out_dir(&cfg)),
        ),
        Command::Pipeline { input } => {
            apply_input(&mut cfg, input);
            staged("config", cfg.validate())?;
            let out = out_dir(&cfg);
            let summary = pipeline::run_pipeline(&cfg, &out)?;
            for r in &summary.runs {
                println!(
                    "{}: n={} test={} accuracy {:.4}",
                    r.label(),
                    r.n_matched,
                    r.n_test,
                    r.evaluation.metrics.accuracy.value()
                );
            }
            println!("report bundle in {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
