//! The staged pipeline: synth (optional), ingest, filter, features,
//! experiment, report. Each stage writes a manifest with its config hash and
//! input hashes; a rerun skips stages whose manifests still match and whose
//! outputs are intact. A present-but-mismatched output halts the run naming
//! the stage, since somebody edited or corrupted an artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use moocpred_core::datamodel::CourseIteration;
use moocpred_core::dropout::{apply_filter, filter_course};
use moocpred_core::experiments::{
    attention_report, run_ablation, run_transfer, select_courses, train_transfer,
    ExperimentReport, SettingKind, TransferSetting,
};
use moocpred_core::features::compute_raw;
use moocpred_core::models::ArchKind;
use moocpred_core::rng::derive_seed;

use crate::config::PipelineConfig;
use crate::jobs::par_map;
use crate::{io, read_json, report, scenario, write_text, Error, Result};

/// Every pipeline artifact carries the hash of the config that produced it.
#[derive(Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub data: T,
}

pub fn write_artifact<T: Serialize>(
    path: &Path,
    config_hash: &str,
    data: &T,
    pretty: bool,
) -> Result<()> {
    let artifact = Artifact {
        config_hash: config_hash.to_string(),
        data,
    };
    let mut text = if pretty {
        serde_json::to_string_pretty(&artifact)
    } else {
        serde_json::to_string(&artifact)
    }
    .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_artifact<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    read_json(path)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    stage: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    /// Output path -> content hash.
    outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageReport {
    pub name: String,
    pub skipped: bool,
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    let mut out = String::new();
    for byte in digest.as_ref() {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(Sha256::digest(&bytes)))
}

/// Hash of a corpus directory: course file names and contents, in path order.
fn hash_corpus(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for course_dir in io::course_dirs(dir)? {
        for name in [
            io::EVENTS_FILE,
            io::SCHEDULE_FILE,
            io::META_FILE,
            io::LABELS_FILE,
        ] {
            let path = course_dir.join(name);
            hasher.update(path.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(hash_file(&path)?.as_bytes());
        }
    }
    Ok(hex(hasher.finalize()))
}

struct Ctx {
    cfg: PipelineConfig,
    hash: String,
    verbose: bool,
}

impl Ctx {
    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.cfg.out.join("manifests").join(format!("{stage}.json"))
    }

    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    /// Runs one stage under the manifest protocol. `run` returns the files
    /// it wrote; they are hashed into the manifest for later verification.
    fn stage(
        &self,
        name: &str,
        inputs: BTreeMap<String, String>,
        run: impl FnOnce() -> Result<Vec<PathBuf>>,
    ) -> Result<StageReport> {
        let manifest_path = self.manifest_path(name);
        if manifest_path.is_file() {
            let manifest: Manifest = read_json(&manifest_path)?;
            if manifest.config_hash == self.hash && manifest.inputs == inputs {
                let mut all_present = true;
                for (rel, want) in &manifest.outputs {
                    let path = PathBuf::from(rel);
                    if !path.is_file() {
                        all_present = false;
                        break;
                    }
                    let got = hash_file(&path)?;
                    if &got != want {
                        return Err(Error::format(
                            path,
                            format!("stage {name}: output does not match its manifest (corrupted or edited)"),
                        ));
                    }
                }
                if all_present {
                    self.log(&format!("stage {name}: up to date, skipping"));
                    return Ok(StageReport {
                        name: name.to_string(),
                        skipped: true,
                    });
                }
            }
            self.log(&format!("stage {name}: inputs changed, rerunning"));
        }
        self.log(&format!("stage {name}: running"));
        let written = run()?;
        let mut outputs = BTreeMap::new();
        for path in written {
            outputs.insert(path.to_string_lossy().into_owned(), hash_file(&path)?);
        }
        crate::write_json(
            &manifest_path,
            &Manifest {
                stage: name.to_string(),
                config_hash: self.hash.clone(),
                inputs,
                outputs,
            },
        )?;
        Ok(StageReport {
            name: name.to_string(),
            skipped: false,
        })
    }
}

/// Level tag for file names: `l40` for 0.4.
pub fn level_tag(level: f64) -> String {
    format!("l{:02}", (level * 100.0).round() as u32)
}

/// Default targets: the newest iteration of every course set.
pub fn default_targets(corpus: &[CourseIteration]) -> Vec<String> {
    let mut newest: BTreeMap<&str, &CourseIteration> = BTreeMap::new();
    for course in corpus {
        let slot = newest.entry(course.meta.course_set.as_str()).or_insert(course);
        if course.meta.iteration > slot.meta.iteration {
            *slot = course;
        }
    }
    newest.values().map(|c| c.meta.id()).collect()
}

pub fn run_pipeline(cfg: &PipelineConfig, verbose: bool) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    let ctx = Ctx {
        cfg: cfg.clone(),
        hash: cfg.hash(),
        verbose,
    };
    let mut stages = Vec::new();

    // synth: only when the corpus has to be generated.
    if !cfg.corpus.is_dir() {
        let Some(name) = &cfg.scenario else {
            return Err(Error::config(format!(
                "corpus {} does not exist and no scenario is configured",
                cfg.corpus.display()
            )));
        };
        let scenario_cfg = scenario::resolve(name, Some(cfg.seed))?;
        let scenario_json = serde_json::to_string(&scenario_cfg).expect("scenario serializes");
        let inputs = BTreeMap::from([("scenario".to_string(), hex(Sha256::digest(&scenario_json)))]);
        stages.push(ctx.stage("synth", inputs, || {
            let (courses, truth) = moocpred_core::synth::generate_corpus(&scenario_cfg)?;
            io::write_corpus(&cfg.corpus, &courses)?;
            io::write_truth(&cfg.corpus, &truth)?;
            crate::write_json(&cfg.corpus.join(io::SCENARIO_FILE), &scenario_cfg)?;
            let mut written = vec![
                cfg.corpus.join(io::TRUTH_FILE),
                cfg.corpus.join(io::SCENARIO_FILE),
            ];
            for course in &courses {
                let dir = cfg.corpus.join(course.meta.id());
                for name in [
                    io::EVENTS_FILE,
                    io::SCHEDULE_FILE,
                    io::META_FILE,
                    io::LABELS_FILE,
                ] {
                    written.push(dir.join(name));
                }
            }
            Ok(written)
        })?);
    } else if verbose {
        eprintln!("stage synth: corpus already present, skipping");
    }

    let corpus_hash = hash_corpus(&cfg.corpus)?;
    let corpus_input = BTreeMap::from([("corpus".to_string(), corpus_hash.clone())]);

    // ingest: load, validate, summarize.
    let courses = io::read_corpus(&cfg.corpus)?;
    stages.push(ctx.stage("ingest", corpus_input.clone(), || {
        #[derive(Serialize)]
        struct CourseSummary {
            id: String,
            students: usize,
            duration_weeks: u32,
            fail_share: f64,
        }
        let summary: Vec<CourseSummary> = courses
            .iter()
            .map(|c| CourseSummary {
                id: c.meta.id(),
                students: c.labels.len(),
                duration_weeks: c.meta.duration_weeks,
                fail_share: c.labels.values().filter(|l| l.is_fail()).count() as f64
                    / c.labels.len() as f64,
            })
            .collect();
        let path = cfg.out.join("ingest").join("summary.json");
        write_artifact(&path, &ctx.hash, &summary, true)?;
        Ok(vec![path])
    })?);

    let targets = if cfg.targets.is_empty() {
        default_targets(&courses)
    } else {
        for t in &cfg.targets {
            if !courses.iter().any(|c| &c.meta.id() == t) {
                return Err(Error::config(format!("target {t} is not in the corpus")));
            }
        }
        cfg.targets.clone()
    };

    // filter: one removal filter per course, seeded the way the experiment
    // runners will seed theirs, so these artifacts are the real thing.
    stages.push(ctx.stage("filter", corpus_input.clone(), || {
        let run = cfg.run_config(cfg.levels[0]);
        let filters = par_map(cfg.jobs, &courses, |course| {
            let id = course.meta.id();
            filter_course(
                course,
                &run.filter,
                derive_seed(run.seed, &format!("filter/{id}")),
            )
            .map(|f| (id, f))
        });
        let mut written = Vec::new();
        for result in filters {
            let (id, filter) = result?;
            let path = cfg.out.join("filters").join(format!("{id}.json"));
            write_artifact(&path, &ctx.hash, &filter, true)?;
            written.push(path);
        }
        Ok(written)
    })?);

    // features: raw weekly features of the filtered population, per level.
    let mut filter_inputs = corpus_input.clone();
    for course in &courses {
        let path = cfg.out.join("filters").join(format!("{}.json", course.meta.id()));
        filter_inputs.insert(format!("filter/{}", course.meta.id()), hash_file(&path)?);
    }
    stages.push(ctx.stage("features", filter_inputs, || {
        let run = cfg.run_config(cfg.levels[0]);
        let mut written = Vec::new();
        for course in &courses {
            let id = course.meta.id();
            let filter_path = cfg.out.join("filters").join(format!("{id}.json"));
            let filter: Artifact<moocpred_core::dropout::DropoutFilter> =
                read_artifact(&filter_path)?;
            let filtered = apply_filter(course, &filter.data);
            for &level in &cfg.levels {
                let raw = compute_raw(&filtered, level, &run.features)?;
                let path = cfg
                    .out
                    .join("features")
                    .join(format!("{id}-{}.json", level_tag(level)));
                write_artifact(&path, &ctx.hash, &raw, false)?;
                written.push(path);
            }
        }
        Ok(written)
    })?);

    // experiment: the transfer sweep, one report per level, plus optional
    // ablation tables and attention summaries.
    let report_paths: Vec<PathBuf> = cfg
        .levels
        .iter()
        .map(|&l| cfg.out.join(format!("report-{}.json", level_tag(l))))
        .collect();
    stages.push(ctx.stage("experiment", corpus_input.clone(), || {
        let mut written = Vec::new();
        for (&level, report_path) in cfg.levels.iter().zip(&report_paths) {
            let run = cfg.run_config(level);
            let mut combos = Vec::new();
            for &arch in &cfg.archs {
                for &setting in &cfg.settings {
                    for target in &targets {
                        // Selection failures here mean "setting inapplicable
                        // to this course"; the table shows a gap instead.
                        if select_courses(setting, &courses, target).is_ok() {
                            combos.push((arch, setting, target.clone()));
                        } else {
                            ctx.log(&format!(
                                "experiment: {setting:?} inapplicable to {target}, skipping"
                            ));
                        }
                    }
                }
            }
            let rows = par_map(cfg.jobs, &combos, |(arch, setting, target)| {
                let transfer = TransferSetting {
                    kind: *setting,
                    template: cfg.template(*arch),
                };
                run_transfer(&courses, target, &transfer, &run)
            });
            let mut report = ExperimentReport::new(cfg.seed, level);
            for row in rows {
                report.rows.push(row?);
            }
            write_artifact(report_path, &ctx.hash, &report, true)?;
            written.push(report_path.clone());

            if cfg.ablation {
                for target in &targets {
                    if select_courses(SettingKind::NOneDiff, &courses, target).is_err() {
                        continue;
                    }
                    let table =
                        run_ablation(&courses, target, &cfg.template(ArchKind::Btm), &run)?;
                    let path = cfg
                        .out
                        .join("ablation")
                        .join(format!("{target}-{}.json", level_tag(level)));
                    write_artifact(&path, &ctx.hash, &table, true)?;
                    written.push(path);
                }
            }
            if cfg.attention {
                for target in &targets {
                    if select_courses(SettingKind::NOneDiff, &courses, target).is_err() {
                        continue;
                    }
                    let transfer = TransferSetting {
                        kind: SettingKind::NOneDiff,
                        template: cfg.template(ArchKind::Bsm),
                    };
                    let tm = train_transfer(&courses, target, &transfer, &run)?;
                    let course = courses
                        .iter()
                        .find(|c| &c.meta.id() == target)
                        .expect("target exists");
                    let summary = attention_summary_for(&tm, course, &run)?;
                    let path = cfg
                        .out
                        .join("attention")
                        .join(format!("{target}-{}.json", level_tag(level)));
                    write_artifact(&path, &ctx.hash, &summary, true)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    })?);

    // report: render every table as CSV. The CSVs carry the config hash in
    // a leading comment line.
    let mut report_inputs = BTreeMap::new();
    for path in &report_paths {
        report_inputs.insert(path.to_string_lossy().into_owned(), hash_file(path)?);
    }
    stages.push(ctx.stage("report", report_inputs, || {
        let mut written = Vec::new();
        let stamp = format!("# config_hash={}\n", ctx.hash);
        for (&level, report_path) in cfg.levels.iter().zip(&report_paths) {
            let tag = level_tag(level);
            let artifact: Artifact<ExperimentReport> = read_artifact(report_path)?;
            for (pop, name) in [
                (moocpred_core::experiments::Population::Filtered, "filtered"),
                (moocpred_core::experiments::Population::Full, "full"),
            ] {
                let path = cfg
                    .out
                    .join("tables")
                    .join(format!("transfer_{name}_{tag}.csv"));
                let body = report::transfer_table(&artifact.data, pop);
                write_text(&path, &format!("{stamp}{body}"))?;
                written.push(path);
            }
            let per_source = report::per_source_table(
                &artifact.data,
                moocpred_core::experiments::Population::Filtered,
            );
            let path = cfg.out.join("tables").join(format!("per_source_{tag}.csv"));
            write_text(&path, &format!("{stamp}{per_source}"))?;
            written.push(path);

            if cfg.ablation {
                for target in &targets {
                    let json = cfg.out.join("ablation").join(format!("{target}-{tag}.json"));
                    if !json.is_file() {
                        continue;
                    }
                    let table: Artifact<moocpred_core::experiments::AblationTable> =
                        read_artifact(&json)?;
                    let path = cfg
                        .out
                        .join("tables")
                        .join(format!("ablation_{target}_{tag}.csv"));
                    write_text(&path, &format!("{stamp}{}", report::ablation_table(&table.data)))?;
                    written.push(path);
                }
            }
            if cfg.attention {
                for target in &targets {
                    let json = cfg.out.join("attention").join(format!("{target}-{tag}.json"));
                    if !json.is_file() {
                        continue;
                    }
                    let summary: Artifact<moocpred_core::experiments::AttentionSummary> =
                        read_artifact(&json)?;
                    let path = cfg
                        .out
                        .join("tables")
                        .join(format!("attention_{target}_{tag}.csv"));
                    write_text(
                        &path,
                        &format!("{stamp}{}", report::attention_table(&summary.data)),
                    )?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    })?);

    Ok(stages)
}

/// Attention summary of a trained dual-attention model over the filtered
/// population of one course.
pub fn attention_summary_for(
    tm: &moocpred_core::experiments::TransferModel,
    course: &CourseIteration,
    run: &moocpred_core::experiments::RunConfig,
) -> Result<moocpred_core::experiments::AttentionSummary> {
    use moocpred_core::models::Dataset;

    let filter = filter_course(
        course,
        &run.filter,
        derive_seed(run.seed, &format!("filter/{}", course.meta.id())),
    )?;
    let filtered = apply_filter(course, &filter);
    let raw = compute_raw(&filtered, tm.level, &tm.features)?;
    let week_count = tm.week_count.max(raw.weeks);
    let tensor = moocpred_core::features::normalize_and_pad(&raw, &tm.norm_stats, week_count)?;
    let mut data = Dataset::new(week_count, tm.meta_dim())?;
    data.extend_from_course(&tensor, &tm.meta_row(&course.meta)?, &filtered.labels)?;
    let idxs: Vec<usize> = (0..data.len()).collect();
    Ok(attention_report(&tm.model, &data, &idxs)?)
}
