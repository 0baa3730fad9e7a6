//! Stage runners and the end-to-end pipeline.
//!
//! Each stage reads its inputs from files and writes its outputs into a
//! directory, so running the stages one by one with the same files gives
//! the same bundle as [`run_pipeline`]. Bundle layout:
//!
//! ```text
//! out/
//!   config.toml  provenance.txt  metrics.csv  confusion.csv
//!   features.csv  manifest.csv  [truth.csv]
//!   [harmonized.csv  harmonize_model/  site_smd.csv]
//!   ratio_N/
//!     matched.csv  psm_*.csv  psm_histogram.svg
//!     train.csv  test.csv  prune.csv  importance.csv  selection.csv
//!     effect_sizes.csv  effect_sizes.svg  model.txt
//!     predictions.csv  confusion.csv  confusion.svg  metrics.csv
//!     cv_folds.csv  learning_curve.csv  learning_curve.svg
//! ```
//!
//! On failure a `FAILED` file naming the stage and cause is written and
//! everything produced so far is left in place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classify::{
    effect_sizes, fit_selection, train_selected, SelectionFit, SelectionOutcome, TreeModel,
};
use crate::config::PipelineConfig;
use crate::datamodel::table::fmt_f64;
use crate::datamodel::{
    load_epochs, load_feature_table, manifest, write_feature_table, FeatureTable, Group,
    LoadOptions,
};
use crate::error::{Error, Result};
use crate::evaluate::{
    confusion, cross_validate, learning_curve, metrics_from_confusion, roc_auc,
    stratified_split_rows, ConfusionMatrix, Metrics,
};
use crate::harmonize::harmonize;
use crate::psm::match_cohort;
use crate::report;
use crate::rng::derive_seed;
use crate::stats::smd;
use crate::synth::{generate_feature_cohort, ground_truth_csv, CohortSpec};

const SPLIT_TASK: u64 = 0x11;
const SELECT_TASK: u64 = 0x12;
const CV_TASK: u64 = 0x13;
const CURVE_TASK: u64 = 0x14;

#[derive(Debug)]
pub struct StageError {
    pub stage: String,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

fn write(path: impl AsRef<Path>, body: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn read(path: &Path) -> Result<FeatureTable> {
    load_feature_table(path, LoadOptions::default())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Cohort spec behind `input.synth`, with the pipeline seed.
pub fn synth_spec(cfg: &PipelineConfig) -> Result<Option<CohortSpec>> {
    let Some(src) = &cfg.input.synth else {
        return Ok(None);
    };
    let mut spec = if src == "default" {
        CohortSpec::default()
    } else {
        let text = fs::read_to_string(src).map_err(|e| Error::Io {
            path: src.into(),
            source: e,
        })?;
        CohortSpec::from_toml(&text)?
    };
    spec.seed = cfg.seed;
    Ok(Some(spec))
}

/// Manifest files (`*.txt`) in `dir`, in file-name order.
pub fn epoch_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no epoch manifests in {}",
            dir.display()
        )));
    }
    Ok(paths)
}

/// Builds the feature table from the configured input and writes
/// `features.csv`, `manifest.csv` and, for synthetic input, `truth.csv`.
pub fn stage_extract(cfg: &PipelineConfig, out: &Path) -> Result<FeatureTable> {
    mkdir(out)?;
    let table = if let Some(path) = &cfg.input.features {
        load_feature_table(
            path,
            LoadOptions {
                allow_missing: cfg.input.allow_missing,
            },
        )?
    } else if let Some(dir) = &cfg.input.epochs {
        let sets = epoch_manifests(Path::new(dir))?
            .iter()
            .map(load_epochs)
            .collect::<Result<Vec<_>>>()?;
        cfg.extractor()?.extract_table(&sets)?
    } else {
        let spec = synth_spec(cfg)?.ok_or_else(|| Error::Config("no input configured".into()))?;
        write(out.join("truth.csv"), ground_truth_csv(&spec))?;
        generate_feature_cohort(&spec)?
    };
    write_feature_table(&table, out.join("features.csv"))?;
    write(out.join("manifest.csv"), manifest(&table)?.to_csv())?;
    Ok(table)
}

/// Largest pairwise |SMD| between sites, computed on HC records only so the
/// group imbalance across sites does not count as a site effect.
pub fn site_smd(table: &FeatureTable) -> Vec<f64> {
    let mut sites: Vec<&str> = table.records().iter().map(|r| r.site.as_str()).collect();
    sites.sort_unstable();
    sites.dedup();
    let rows: Vec<Vec<usize>> = sites
        .iter()
        .map(|s| {
            (0..table.n_rows())
                .filter(|&i| table.records()[i].site == *s && table.records()[i].group == Group::HC)
                .collect()
        })
        .filter(|r: &Vec<usize>| r.len() >= 2)
        .collect();
    (0..table.n_features())
        .map(|j| {
            let col = table.column(j);
            let vals: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().map(|&i| col[i]).collect())
                .collect();
            let mut worst = 0.0f64;
            for a in 0..vals.len() {
                for b in a + 1..vals.len() {
                    worst = worst.max(smd(&vals[a], &vals[b]).0.abs());
                }
            }
            worst
        })
        .collect()
}

/// ComBat on `input`; writes `harmonized.csv`, `harmonize_model/` and
/// `site_smd.csv`.
pub fn stage_harmonize(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<FeatureTable> {
    mkdir(out)?;
    let table = read(input)?;
    let (model, harmonized) =
        harmonize(&table, &cfg.harmonize.covariates(), cfg.harmonize.options())?;
    model.write(out.join("harmonize_model"))?;
    write_feature_table(&harmonized, out.join("harmonized.csv"))?;
    let (before, after) = (site_smd(&table), site_smd(&harmonized));
    let mut s = String::from("feature,before,after\n");
    for (j, name) in table.names().iter().enumerate() {
        let _ = writeln!(s, "{name},{},{}", fmt_f64(before[j]), fmt_f64(after[j]));
    }
    write(out.join("site_smd.csv"), s)?;
    Ok(harmonized)
}

/// Propensity trimming at `ratio`; writes `matched.csv` and the PSM
/// diagnostics.
pub fn stage_match(
    cfg: &PipelineConfig,
    input: &Path,
    ratio: usize,
    out: &Path,
) -> Result<FeatureTable> {
    mkdir(out)?;
    let table = read(input)?;
    let m = match_cohort(table.records(), cfg.matching.options(ratio))?;
    let matched = m.apply(&table)?;
    write_feature_table(&matched, out.join("matched.csv"))?;
    write(out.join("psm_scores.csv"), m.scores_csv())?;
    write(out.join("psm_balance.csv"), m.balance_csv())?;
    write(out.join("psm_summary.csv"), m.summary_csv())?;
    write(out.join("psm_histogram.csv"), m.histogram_csv())?;
    write(
        out.join("psm_histogram.svg"),
        report::histogram_svg(&format!("Propensity scores, {ratio}:1"), &m.histogram),
    )?;
    log::info!(
        "match {ratio}:1 kept {} ACr, {} HC",
        m.n_kept(Group::ACr),
        m.n_kept(Group::HC)
    );
    Ok(matched)
}

/// Stratified train/test split, then pruning, preliminary tree and feature
/// selection on the training part. Effect sizes of the selected features
/// are computed on the whole input table.
pub fn stage_select(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<SelectionFit> {
    mkdir(out)?;
    let table = read(input)?;
    let split = stratified_split_rows(
        table.records(),
        &table.labels(),
        cfg.evaluate.test_fraction,
        derive_seed(cfg.seed, SPLIT_TASK),
    )?;
    let train = table.select_rows(&split.train);
    let test = table.select_rows(&split.test);
    write_feature_table(&train, out.join("train.csv"))?;
    write_feature_table(&test, out.join("test.csv"))?;
    let fit = fit_selection(&train, &cfg.classify, derive_seed(cfg.seed, SELECT_TASK))?;
    write(out.join("prune.csv"), report::prune_csv(&fit))?;
    write(out.join("importance.csv"), report::importance_csv(&fit))?;
    write(
        out.join("selection.csv"),
        report::selection_csv(&fit.selection),
    )?;
    let effects = effect_sizes(&table, &fit.selection.selected_names())?;
    write(out.join("effect_sizes.csv"), report::effects_csv(&effects))?;
    let defined: Vec<_> = effects
        .iter()
        .filter_map(|e| e.d.map(|d| (e.feature.clone(), d)))
        .collect();
    let (labels, values): (Vec<String>, Vec<f64>) = defined.into_iter().unzip();
    write(
        out.join("effect_sizes.svg"),
        report::bar_svg("Cohen's d, ACr vs HC", &labels, &values, "d"),
    )?;
    Ok(fit)
}

/// Reads back the table written by [`report::selection_csv`].
pub fn read_selection(path: &Path, threshold: f64) -> Result<SelectionOutcome> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["feature", "accuracy", "selected", "weight"] {
        return Err(Error::Schema(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let num = |s: &str, row: usize, col: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse {
            row,
            column: col.into(),
            message: format!("`{s}` is not a number"),
        })
    };
    let mut out = SelectionOutcome {
        features: Vec::new(),
        accuracy: Vec::new(),
        selected: Vec::new(),
        weights: Vec::new(),
        threshold,
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
        out.features.push(rec[0].to_string());
        out.accuracy.push(num(&rec[1], i + 1, "accuracy")?);
        if &rec[2] == "1" {
            out.selected.push(i);
            out.weights.push(num(&rec[3], i + 1, "weight")?);
        }
    }
    if out.selected.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no selected features",
            path.display()
        )));
    }
    Ok(out)
}

/// Final tree on the selected features; writes `model.txt`.
pub fn stage_train(
    cfg: &PipelineConfig,
    train: &Path,
    selection: &Path,
    out: &Path,
) -> Result<TreeModel> {
    mkdir(out)?;
    let table = read(train)?;
    let sel = read_selection(selection, cfg.classify.accuracy_threshold)?;
    let params = crate::classify::TreeParams {
        seed: derive_seed(cfg.seed, SELECT_TASK),
        ..cfg.classify.tree
    };
    let model = train_selected(&table, &sel, params)?;
    model.write(out.join("model.txt"))?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub auc: Option<f64>,
    pub cv_mean: f64,
}

/// Held-out metrics of `model` on `test`, plus cross-validation and the
/// learning curve on `train` restricted to the model's features.
pub fn stage_evaluate(
    cfg: &PipelineConfig,
    model: &Path,
    train: &Path,
    test: &Path,
    out: &Path,
) -> Result<Evaluation> {
    mkdir(out)?;
    let model = TreeModel::read(model)?;
    let train = read(train)?.select_features_by_name(&model.features)?;
    let test = read(test)?;
    let positive = cfg.evaluate.positive_class;
    let y = test.labels();
    let pred = model.predict_table(&test)?;
    let prob = model.probability_table(&test, positive.index())?;
    let mut s = String::from("subject_id,group,predicted,p_positive\n");
    for (i, r) in test.records().iter().enumerate() {
        let p = Group::from_index(pred[i]).expect("binary model");
        let _ = writeln!(s, "{},{},{p},{}", r.subject_id, r.group, fmt_f64(prob[i]));
    }
    write(out.join("predictions.csv"), s)?;

    let cm = confusion(&pred, &y, positive)?;
    let metrics = metrics_from_confusion(&cm)?;
    let auc = match roc_auc(&prob, &y, positive) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    write(
        out.join("confusion.csv"),
        report::confusion_csv(&[("test".into(), cm)]),
    )?;
    write(
        out.join("confusion.svg"),
        report::confusion_svg("Held-out confusion matrix", &cm),
    )?;
    write(
        out.join("metrics.csv"),
        report::metrics_csv(&[("test".into(), metrics, auc)]),
    )?;

    let params = cfg.classify.tree;
    let ytr = train.labels();
    let cv = cross_validate(
        &train,
        &ytr,
        params,
        cfg.evaluate.folds,
        derive_seed(cfg.seed, CV_TASK),
    )?;
    write(out.join("cv_folds.csv"), report::folds_csv(&cv))?;
    let curve = learning_curve(
        &train,
        &ytr,
        params,
        &cfg.evaluate.curve_sizes,
        cfg.evaluate.folds,
        derive_seed(cfg.seed, CURVE_TASK),
    )?;
    write(out.join("learning_curve.csv"), report::curve_csv(&curve))?;
    let x: Vec<f64> = curve.iter().map(|p| p.n as f64).collect();
    write(
        out.join("learning_curve.svg"),
        report::line_svg(
            "Learning curve",
            &x,
            &[
                ("training", curve.iter().map(|p| p.train_score).collect()),
                (
                    "cross-validation",
                    curve.iter().map(|p| p.validation_score).collect(),
                ),
            ],
            "training records",
            "accuracy",
        ),
    )?;
    Ok(Evaluation {
        confusion: cm,
        metrics,
        auc,
        cv_mean: cv.mean_test,
    })
}

#[derive(Debug, Clone)]
pub struct RatioOutcome {
    /// `None` when the match stage is disabled.
    pub ratio: Option<usize>,
    pub n_matched: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub selected: Vec<String>,
    pub evaluation: Evaluation,
}

impl RatioOutcome {
    pub fn label(&self) -> String {
        self.ratio
            .map(|r| format!("{r}:1"))
            .unwrap_or_else(|| "all".into())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub n_records: usize,
    pub n_features: usize,
    pub runs: Vec<RatioOutcome>,
}

/// Directory of one run inside the bundle.
pub fn run_dir(out: &Path, ratio: Option<usize>) -> PathBuf {
    match ratio {
        Some(r) => out.join(format!("ratio_{r}")),
        None => out.join("unmatched"),
    }
}

struct Tracker {
    rows: Vec<String>,
}

impl Tracker {
    fn run<T>(
        &mut self,
        stage: &str,
        f: impl FnOnce() -> Result<T>,
    ) -> std::result::Result<T, StageError> {
        log::info!("stage {stage}");
        f().map_err(|error| StageError {
            stage: stage.to_string(),
            error,
        })
    }
}

/// Runs every enabled stage into `out`. Writes `FAILED` on error.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    out: &Path,
) -> std::result::Result<PipelineSummary, StageError> {
    let result = run_inner(cfg, out);
    if let Err(e) = &result {
        let _ = fs::create_dir_all(out);
        let _ = fs::write(
            out.join("FAILED"),
            format!("stage: {}\ncause: {}\n", e.stage, e.error),
        );
    }
    result
}

fn run_inner(cfg: &PipelineConfig, out: &Path) -> std::result::Result<PipelineSummary, StageError> {
    let mut t = Tracker { rows: Vec::new() };
    let config_text = cfg.to_toml();
    t.run("setup", || {
        cfg.validate()?;
        mkdir(out)?;
        let _ = fs::remove_file(out.join("FAILED"));
        write(out.join("config.toml"), &config_text)
    })?;

    let table = t.run("extract", || stage_extract(cfg, out))?;
    t.rows
        .push(format!("extract,{},{}", table.n_rows(), table.n_features()));
    let mut input = out.join("features.csv");
    if cfg.stages.harmonize {
        let h = t.run("harmonize", || stage_harmonize(cfg, &input, out))?;
        t.rows
            .push(format!("harmonize,{},{}", h.n_rows(), h.n_features()));
        input = out.join("harmonized.csv");
    }

    let ratios: Vec<Option<usize>> = if cfg.stages.matching {
        cfg.ratios.iter().map(|&r| Some(r)).collect()
    } else {
        vec![None]
    };
    let mut runs = Vec::new();
    for ratio in ratios {
        let dir = run_dir(out, ratio);
        let tag = ratio.map(|r| format!(":{r}")).unwrap_or_default();
        let pool = match ratio {
            Some(r) => {
                let m = t.run(&format!("match{tag}"), || stage_match(cfg, &input, r, &dir))?;
                t.rows
                    .push(format!("match{tag},{},{}", m.n_rows(), m.n_features()));
                dir.join("matched.csv")
            }
            None => input.clone(),
        };
        let n_matched = t.run(&format!("select{tag}"), || read(&pool).map(|p| p.n_rows()))?;
        let fit = t.run(&format!("select{tag}"), || stage_select(cfg, &pool, &dir))?;
        let (n_train, n_test) = t.run(&format!("select{tag}"), || {
            Ok((
                read(&dir.join("train.csv"))?.n_rows(),
                read(&dir.join("test.csv"))?.n_rows(),
            ))
        })?;
        let selected = fit.selection.selected_names();
        t.rows.push(format!("split{tag},{n_train},{n_test}"));
        t.rows.push(format!(
            "select{tag},{},{}",
            fit.prune.table.n_features(),
            selected.len()
        ));
        let model = t.run(&format!("train{tag}"), || {
            stage_train(
                cfg,
                &dir.join("train.csv"),
                &dir.join("selection.csv"),
                &dir,
            )
        })?;
        t.rows
            .push(format!("train{tag},{},{}", model.n_splits(), model.depth()));
        let evaluation = t.run(&format!("evaluate{tag}"), || {
            stage_evaluate(
                cfg,
                &dir.join("model.txt"),
                &dir.join("train.csv"),
                &dir.join("test.csv"),
                &dir,
            )
        })?;
        t.rows.push(format!(
            "evaluate{tag},{},{}",
            evaluation.confusion.n(),
            evaluation.metrics.accuracy.num
        ));
        runs.push(RatioOutcome {
            ratio,
            n_matched,
            n_train,
            n_test,
            selected,
            evaluation,
        });
    }

    let rows = std::mem::take(&mut t.rows);
    t.run("report", || {
        let metrics: Vec<_> = runs
            .iter()
            .map(|r| (r.label(), r.evaluation.metrics, r.evaluation.auc))
            .collect();
        write(out.join("metrics.csv"), report::metrics_csv(&metrics))?;
        let cms: Vec<_> = runs
            .iter()
            .map(|r| (r.label(), r.evaluation.confusion))
            .collect();
        write(out.join("confusion.csv"), report::confusion_csv(&cms))?;
        write(
            out.join("provenance.txt"),
            provenance(cfg, &config_text, &rows),
        )
    })?;
    Ok(PipelineSummary {
        n_records: table.n_rows(),
        n_features: table.n_features(),
        runs,
    })
}

/// Config hash, seed, version and per-stage counts, followed by the
/// resolved config itself. No timestamps, so reruns are byte-identical.
fn provenance(cfg: &PipelineConfig, config_text: &str, rows: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tool = eegrisk {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "config_sha256 = {}", sha256_hex(config_text.as_bytes()));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    s.push_str("\n# stage,count_a,count_b\n");
    s.push_str("# extract/harmonize/match: rows,features; split: train,test;\n");
    s.push_str(
        "# select: after pruning,selected; train: splits,depth; evaluate: test rows,correct\n",
    );
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    s.push_str("\n# resolved config\n");
    s.push_str(config_text);
    s
}
