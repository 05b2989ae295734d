//! The staged experiment: data → generator → baseline → scan →
//! interventions → report. Every stage persists its outputs under the run
//! directory and is skipped when they already exist, so an interrupted run
//! resumes from the last completed stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use acai_core::generative::{train_infogan, GeneratorHandle, OracleGenerator, QPredictor};
use acai_core::harness::{
    acai_row, acai_select, generalization_setting, sensitivity_scan, unsupervised_setting, Candidate, EvalReport,
    FactorReport, FactorSource, RankedCode, Splits, SyntheticEval,
};
use acai_core::interventions::{apply_intervention, InterventionContext, InterventionKind};
use acai_core::metrics::{evaluate, AccGapPair};
use acai_core::task::{train_classifier, Classifier, CurveRow, LabeledSet};
use acai_core::world::{generate_dataset, label_distribution, Image, Sample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::config::{ExperimentConfig, GeneratorConfig};
use crate::dataset::{load_dataset, save_dataset, DatasetInfo};
use crate::report::emit_report;
use crate::{read_json, write_json, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Datagen,
    Generator,
    Baseline,
    Scan,
    Interventions,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Datagen => "datagen",
            Stage::Generator => "generator",
            Stage::Baseline => "baseline",
            Stage::Scan => "scan",
            Stage::Interventions => "interventions",
            Stage::Report => "report",
        }
    }
}

pub struct Data {
    pub info: DatasetInfo,
    pub samples: Vec<Sample>,
    pub splits: Splits,
}

impl Data {
    pub fn split(&self, idx: &[usize]) -> Vec<&Sample> {
        idx.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn train(&self) -> Vec<Sample> {
        self.split(&self.splits.train).into_iter().cloned().collect()
    }
}

/// One run directory bound to its resolved configuration.
pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
}

/// Copies the run seed into the component configs.
pub fn resolve(mut config: ExperimentConfig) -> ExperimentConfig {
    config.classifier.seed = config.seed;
    if let GeneratorConfig::InfoGan(g) = &mut config.generator {
        g.seed = config.seed;
    }
    config
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))
}

pub fn write_curve(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::write(path, e))?;
    for row in curve {
        w.serialize(row).map_err(|e| Error::write(path, e))?;
    }
    w.flush().map_err(|e| Error::write(path, e))
}

impl Run {
    /// Opens (or creates) `dir`, refusing a directory that holds a run with
    /// a different configuration. Writes the resolved config snapshot.
    pub fn open(dir: &Path, config: ExperimentConfig) -> Result<Run> {
        let config = resolve(config);
        config.validate()?;
        mkdir(dir)?;
        let snapshot = dir.join("config.json");
        if snapshot.exists() {
            let existing: ExperimentConfig = read_json(&snapshot)?;
            if existing.hash() != config.hash() {
                return Err(Error::input(format!(
                    "{} already holds a run with a different configuration (hash {} vs {})",
                    dir.display(),
                    existing.hash(),
                    config.hash()
                )));
            }
        } else {
            write_json(&snapshot, &config)?;
        }
        Ok(Run { dir: dir.to_path_buf(), config })
    }

    /// Reopens a finished or partial run from its snapshot.
    pub fn from_dir(dir: &Path) -> Result<Run> {
        let config: ExperimentConfig = read_json(&dir.join("config.json"))?;
        Ok(Run { dir: dir.to_path_buf(), config })
    }

    fn stage<T>(&self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
        f().map_err(|e| {
            let _ = write_json(&self.dir.join("failure.json"), &json!({ "stage": stage.name(), "error": e.to_string() }));
            Error::Stage { stage: stage.name().to_string(), source: Box::new(e) }
        })
    }

    pub fn data(&self) -> Result<Data> {
        self.stage(Stage::Datagen, || {
            let dir = self.dir.join("data");
            let d = &self.config.dataset;
            let splits = Splits::contiguous(d.train, d.validation, d.test);
            splits.check_disjoint()?;
            if !dir.join("spec.json").exists() {
                let samples = generate_dataset(&d.spec, splits.total(), self.config.seed, None)?;
                save_dataset(&dir, &d.spec, self.config.seed, &samples)?;
                write_json(&dir.join("splits.json"), &splits)?;
            }
            let (info, samples) = load_dataset(&dir)?;
            let splits: Splits = read_json(&dir.join("splits.json"))?;
            splits.check_disjoint()?;
            if splits.total() != samples.len() || info.spec != d.spec {
                return Err(Error::input(format!("{} does not match the configured dataset", dir.display())));
            }
            Ok(Data { info, samples, splits })
        })
    }

    pub fn generator(&self, data: &Data) -> Result<GeneratorHandle> {
        self.stage(Stage::Generator, || {
            let dir = self.dir.join("generator");
            mkdir(&dir)?;
            let path = dir.join("generator.ckpt");
            if path.exists() {
                return Ok(checkpoint::load(&path, "generator")?.1);
            }
            let gen = match &self.config.generator {
                GeneratorConfig::Oracle { d_c, mapping } => {
                    let spec = &self.config.dataset.spec;
                    let pairs: Vec<(usize, usize)> = mapping
                        .iter()
                        .map(|b| (b.code, spec.factor_by_name(&b.factor).expect("validated factor name")))
                        .collect();
                    GeneratorHandle::Oracle(OracleGenerator::with_pairs(spec.clone(), &pairs, *d_c)?)
                }
                GeneratorConfig::InfoGan(cfg) => {
                    let out = train_infogan(&data.train(), cfg)?;
                    let log = dir.join("gan_log.csv");
                    let mut w = csv::Writer::from_path(&log).map_err(|e| Error::write(&log, e))?;
                    for row in &out.log {
                        w.serialize(row).map_err(|e| Error::write(&log, e))?;
                    }
                    w.flush().map_err(|e| Error::write(&log, e))?;
                    let hash = acai_core::config_hash(cfg);
                    checkpoint::save(&dir.join("q.ckpt"), "q_predictor", &hash, cfg.seed, json!({}), &out.q)?;
                    out.generator
                }
            };
            let hash = acai_core::config_hash(&self.config.generator);
            checkpoint::save(&path, "generator", &hash, self.config.seed, json!({ "meta": gen.meta() }), &gen)?;
            Ok(gen)
        })
    }

    pub fn q_predictor(&self) -> Result<Option<QPredictor>> {
        let path = self.dir.join("generator").join("q.ckpt");
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(checkpoint::load(&path, "q_predictor")?.1))
    }

    pub fn baseline(&self, data: &Data) -> Result<Classifier> {
        self.stage(Stage::Baseline, || {
            let dir = self.dir.join("baseline");
            let path = dir.join("model.ckpt");
            if path.exists() {
                return Ok(checkpoint::load(&path, "classifier")?.1);
            }
            mkdir(&dir)?;
            let train = data.split(&data.splits.train);
            let set = LabeledSet { images: train.iter().map(|s| &s.image).collect(), labels: train.iter().map(|s| s.label).collect() };
            let trained = train_classifier(&set, data.info.num_classes, &self.config.classifier)?;
            write_curve(&dir.join("curve.csv"), &trained.curve)?;
            let clf = trained.classifier;
            checkpoint::save(&path, "classifier", &clf.meta.config_hash, clf.meta.seed, json!({ "recipe": "baseline" }), &clf)?;
            Ok(clf)
        })
    }

    fn test_label_dist(&self, data: &Data) -> Vec<f64> {
        let test: Vec<Sample> = data.split(&data.splits.test).into_iter().cloned().collect();
        label_distribution(&test, data.info.num_classes)
    }

    fn synthetic_eval(&self, data: &Data, gen: &GeneratorHandle) -> Result<SyntheticEval> {
        Ok(SyntheticEval::new(gen, &self.test_label_dist(data), data.splits.test.len(), self.config.seed)?)
    }

    pub fn scan(&self, data: &Data, gen: &GeneratorHandle, baseline: &Classifier) -> Result<Vec<RankedCode>> {
        self.stage(Stage::Scan, || {
            let path = self.dir.join("scan").join("ranking.json");
            if path.exists() {
                return read_json(&path);
            }
            mkdir(&self.dir.join("scan"))?;
            let (ranking, _) = sensitivity_scan(
                baseline,
                gen,
                &self.test_label_dist(data),
                data.splits.test.len(),
                self.config.seed,
                self.config.evaluation.min_count,
            )?;
            write_json(&path, &ranking)?;
            Ok(ranking)
        })
    }

    /// Codes the interventions target.
    pub fn target_codes(&self, ranking: &[RankedCode]) -> Vec<usize> {
        match &self.config.interventions.codes {
            Some(c) => c.clone(),
            None => ranking.iter().take(self.config.interventions.top_k).map(|r| r.code).collect(),
        }
    }

    fn intervention_dir(&self, kind: InterventionKind, code: usize) -> PathBuf {
        self.dir.join("interventions").join(kind.label(code))
    }

    /// Trains every missing (code, kind) model, independent jobs in parallel.
    pub fn interventions(&self, data: &Data, gen: &GeneratorHandle, jobs: &[(InterventionKind, usize)]) -> Result<Vec<Classifier>> {
        self.stage(Stage::Interventions, || {
            let train = data.train();
            let ctx = InterventionContext::new(&train, data.splits.test.len(), gen, self.config.classifier.clone());
            jobs.par_iter()
                .map(|&(kind, code)| {
                    let dir = self.intervention_dir(kind, code);
                    let path = dir.join("model.ckpt");
                    if path.exists() {
                        return Ok(checkpoint::load::<Classifier>(&path, "classifier")?.1);
                    }
                    let cfg = self.config.interventions.config(kind, code, self.config.seed);
                    let out = apply_intervention(&cfg, &ctx).map_err(|e| Error::from(e).with_context(&kind.label(code)))?;
                    mkdir(&dir)?;
                    write_json(&dir.join("config.json"), &json!({ "intervention": cfg, "classifier": self.config.classifier }))?;
                    write_curve(&dir.join("curve.csv"), &out.trained.curve)?;
                    let clf = out.trained.classifier;
                    let meta = json!({ "recipe": clf.meta.recipe, "extra": clf.meta.extra, "diagnostics": out.diagnostics });
                    checkpoint::save(&path, "classifier", &clf.meta.config_hash, clf.meta.seed, meta, &clf)?;
                    Ok(clf)
                })
                .collect()
        })
    }

    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }

    /// Evaluates all settings and ACAI, then writes the report files.
    pub fn evaluate(
        &self,
        data: &Data,
        gen: &GeneratorHandle,
        baseline: &Classifier,
        ranking: &[RankedCode],
        models: &[((InterventionKind, usize), Classifier)],
    ) -> Result<EvalReport> {
        self.stage(Stage::Report, || {
            let cfg = &self.config;
            let min = cfg.evaluation.min_count;
            let eval = self.synthetic_eval(data, gen)?;
            let test = data.split(&data.splits.test);
            let val = data.split(&data.splits.validation);
            let source = factor_source(cfg)?;
            let range = source.range(if val.is_empty() { &test } else { &val })?;
            let test_part = source.partition(&test, range)?;

            let codes = self.target_codes(ranking);
            let mut factors = Vec::new();
            for &code in &codes {
                let cands: Vec<Candidate> = models
                    .iter()
                    .filter(|((_, c), _)| *c == code)
                    .map(|((kind, c), clf)| Candidate { kind: *kind, code: *c, classifier: clf })
                    .collect();
                factors.push(FactorReport {
                    code,
                    unsupervised: unsupervised_setting(baseline, &cands, &eval, code, min)?,
                    generalization: generalization_setting(baseline, &cands, &test, &test_part, min)?,
                });
            }

            let mut acai = None;
            if cfg.stages.acai && !models.is_empty() {
                let val_part = source.partition(&val, range)?;
                let images: Vec<&Image> = val.iter().map(|s| &s.image).collect();
                let labels: Vec<usize> = val.iter().map(|s| s.label).collect();
                let base_val = evaluate(baseline, &images, &labels, &val_part, min)?;
                let grid = models
                    .iter()
                    .map(|((kind, code), clf)| {
                        Ok((*kind, *code, AccGapPair::from(&evaluate(clf, &images, &labels, &val_part, min)?)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let selection = acai_select(&grid, AccGapPair::from(&base_val))?;
                let chosen = &models[selection.index].1;
                let t_images: Vec<&Image> = test.iter().map(|s| &s.image).collect();
                let t_labels: Vec<usize> = test.iter().map(|s| s.label).collect();
                let base_test = evaluate(baseline, &t_images, &t_labels, &test_part, min)?;
                let row = acai_row(&selection, &base_test, evaluate(chosen, &t_images, &t_labels, &test_part, min)?, &test_part.factor_id);
                for f in &mut factors {
                    f.generalization.push(row.clone());
                }
                acai = Some(selection);
            }

            let report = EvalReport {
                config_hash: cfg.hash(),
                real_factor: source.name(),
                ranking: ranking.to_vec(),
                factors,
                acai,
            };
            report.check_consistency(1e-9)?;
            let figures = if cfg.stages.figures { Some(gen) } else { None };
            emit_report(&report, &self.report_dir(), figures, &cfg.evaluation)?;
            Ok(report)
        })
    }

    /// Runs every stage up to `last`, resuming from whatever is on disk.
    pub fn run_until(&self, last: Stage) -> Result<Option<EvalReport>> {
        let data = self.data()?;
        if last == Stage::Datagen {
            return Ok(None);
        }
        let gen = self.generator(&data)?;
        if last == Stage::Generator {
            return Ok(None);
        }
        let baseline = self.baseline(&data)?;
        if last == Stage::Baseline {
            return Ok(None);
        }
        let ranking = self.scan(&data, &gen, &baseline)?;
        if last == Stage::Scan {
            return Ok(None);
        }
        let jobs = if self.config.stages.interventions { self.jobs(&ranking) } else { Vec::new() };
        let models = self.interventions(&data, &gen, &jobs)?;
        if last == Stage::Interventions {
            return Ok(None);
        }
        let models: Vec<_> = jobs.into_iter().zip(models).collect();
        Ok(Some(self.evaluate(&data, &gen, &baseline, &ranking, &models)?))
    }

    /// The intervention grid: target codes × configured kinds.
    pub fn jobs(&self, ranking: &[RankedCode]) -> Vec<(InterventionKind, usize)> {
        let codes = self.target_codes(ranking);
        codes.iter().flat_map(|&c| self.config.interventions.kinds.iter().map(move |&k| (k, c))).collect()
    }

    /// Rewrites tables and figures from a stored report without retraining.
    pub fn regenerate_report(&self) -> Result<EvalReport> {
        let report: EvalReport = read_json(&self.report_dir().join("report.json"))?;
        let gen_path = self.dir.join("generator").join("generator.ckpt");
        let gen: Option<GeneratorHandle> =
            if self.config.stages.figures && gen_path.exists() { Some(checkpoint::load(&gen_path, "generator")?.1) } else { None };
        emit_report(&report, &self.report_dir(), gen.as_ref(), &self.config.evaluation)?;
        Ok(report)
    }

    /// Summary of what is on disk, per stage.
    pub fn status(&self) -> BTreeMap<&'static str, bool> {
        let has = |p: &[&str]| p.iter().fold(self.dir.clone(), |d, s| d.join(s)).exists();
        BTreeMap::from([
            ("datagen", has(&["data", "spec.json"])),
            ("generator", has(&["generator", "generator.ckpt"])),
            ("baseline", has(&["baseline", "model.ckpt"])),
            ("scan", has(&["scan", "ranking.json"])),
            ("report", has(&["report", "report.json"])),
        ])
    }
}

pub fn factor_source(cfg: &ExperimentConfig) -> Result<FactorSource> {
    let name = &cfg.evaluation.real_factor;
    if name == "measured_brightness" {
        return Ok(FactorSource::ExtractedBrightness);
    }
    let spec = &cfg.dataset.spec;
    let index = spec.factor_by_name(name).ok_or_else(|| Error::input(format!("unknown real factor `{name}`")))?;
    Ok(FactorSource::Manifest { index, name: name.clone(), range: spec.factors[index].range })
}
