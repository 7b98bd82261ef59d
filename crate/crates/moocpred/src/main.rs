use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moocpred_core::dropout::{apply_filter, filter_course};
use moocpred_core::experiments::{
    predict_labels, run_ablation, run_transfer, select_courses, train_transfer, AblationTable,
    ExperimentReport, Population, SettingKind, TransferSetting,
};
use moocpred_core::features::{compute_raw, N_FEATURES};
use moocpred_core::models::{ArchKind, SearchGrid};
use moocpred_core::rng::derive_seed;
use moocpred_core::synth::generate_corpus;

use moocpred::checkpoint::{load_model, save_model};
use moocpred::config::PipelineConfig;
use moocpred::jobs::par_map;
use moocpred::pipeline::{
    attention_summary_for, default_targets, level_tag, read_artifact, run_pipeline, write_artifact,
};
use moocpred::{io, report, scenario, write_json, write_text, Error, Result};

#[derive(Parser)]
#[command(
    name = "moocpred",
    version,
    about = "Early success prediction for online courses: dropout filtering, \
             weekly behavior features, transfer models, and experiment reports."
)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file supplying defaults for every command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent training runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Progress output on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus with known ground truth.
    Synth {
        /// Bundled scenario name (small, medium) or a scenario JSON path.
        #[arg(long)]
        scenario: String,
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and validate a corpus, printing a per-course summary.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fit the early-dropout removal filter.
    Filter {
        #[arg(long)]
        corpus: PathBuf,
        /// One course id; all courses when omitted.
        #[arg(long)]
        course: Option<String>,
        /// Directory for the fitted filter JSONs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute weekly behavior features for one filtered course.
    Features {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        course: String,
        /// Early horizon as a fraction of the course duration.
        #[arg(long)]
        level: f64,
        /// Feature JSON path; summary only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one transfer model and save a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Course the model will be evaluated on.
        #[arg(long)]
        target: String,
        /// Transfer setting (n-1-same, 1-1-diff, n-1-diff, n-c-diff, n-c-diff-ft).
        #[arg(long, value_parser = parse_setting)]
        setting: SettingKind,
        /// Architecture: bo, btm or bsm.
        #[arg(long, value_parser = parse_arch)]
        arch: ArchKind,
        #[arg(long)]
        level: f64,
        /// Search the architecture grid instead of the single template.
        #[arg(long)]
        grid: bool,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a course with a saved checkpoint.
    Predict {
        /// Checkpoint path.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        course: String,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transfer experiment sweeps and their tables.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Meta-feature ablation on one target course.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        level: f64,
        /// Table JSON path; CSV on stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render CSV tables from a report file.
    Report {
        /// Experiment report JSON.
        #[arg(long)]
        report: PathBuf,
        /// Ablation table JSONs to render alongside.
        #[arg(long)]
        ablation: Vec<PathBuf>,
        /// Attention summary JSONs to render alongside.
        #[arg(long)]
        attention: Vec<PathBuf>,
        /// Output directory for the CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the staged pipeline: synth, ingest, filter, features, experiment,
    /// report, with manifest-based resume.
    Pipeline,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run the transfer sweep at one level and write a report.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        level: f64,
        /// Settings to run; config default when omitted.
        #[arg(long = "setting", value_parser = parse_setting)]
        settings: Vec<SettingKind>,
        /// Architectures to run; config default when omitted.
        #[arg(long = "arch", value_parser = parse_arch)]
        archs: Vec<ArchKind>,
        /// Target course ids; the newest iteration per set when omitted.
        #[arg(long = "target")]
        targets: Vec<String>,
        #[arg(long)]
        grid: bool,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the course x setting BAC table from a report.
    Table {
        #[arg(long)]
        report: PathBuf,
        /// filtered or full.
        #[arg(long, default_value = "filtered", value_parser = parse_population)]
        population: Population,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the dual-attention model and summarize its attention weights
    /// over the target course.
    Attention {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        level: f64,
        /// Summary JSON path; CSV on stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_setting(s: &str) -> std::result::Result<SettingKind, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_arch(s: &str) -> std::result::Result<ArchKind, String> {
    match s {
        "bo" => Ok(ArchKind::Bo),
        "btm" => Ok(ArchKind::Btm),
        "bsm" => Ok(ArchKind::Bsm),
        _ => Err(format!("unknown architecture {s:?}; expected bo, btm or bsm")),
    }
}

fn parse_population(s: &str) -> std::result::Result<Population, String> {
    match s {
        "filtered" => Ok(Population::Filtered),
        "full" => Ok(Population::Full),
        _ => Err(format!("unknown population {s:?}; expected filtered or full")),
    }
}

/// Config file if given, defaults otherwise, with flag overrides applied.
fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a report written either bare or wrapped with a config hash.
fn read_report(path: &Path) -> Result<(Option<String>, ExperimentReport)> {
    match read_artifact::<ExperimentReport>(path) {
        Ok(artifact) => Ok((Some(artifact.config_hash), artifact.data)),
        Err(_) => moocpred::read_json(path).map(|report| (None, report)),
    }
}

fn find_course<'a>(
    courses: &'a [moocpred_core::datamodel::CourseIteration],
    id: &str,
) -> Result<&'a moocpred_core::datamodel::CourseIteration> {
    courses
        .iter()
        .find(|c| c.id() == id)
        .ok_or_else(|| Error::config(format!("course {id} is not in the corpus")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = base_config(&cli)?;
    let verbose = cli.verbose;
    match cli.command {
        Cmd::Synth { scenario: name, out } => {
            // Bundled scenarios take the effective seed; a scenario file
            // keeps its own unless --seed is given.
            let seed = if scenario::is_bundled(&name) {
                Some(cfg.seed)
            } else {
                cli.seed
            };
            let scn = scenario::resolve(&name, seed)?;
            let (courses, truth) = generate_corpus(&scn)?;
            io::write_corpus(&out, &courses)?;
            io::write_truth(&out, &truth)?;
            write_json(&out.join(io::SCENARIO_FILE), &scn)?;
            println!("wrote {} courses to {}", courses.len(), out.display());
        }

        Cmd::Ingest { corpus } => {
            let courses = io::read_corpus(&corpus)?;
            println!("{} courses", courses.len());
            for c in &courses {
                let fails = c.labels.values().filter(|l| l.is_fail()).count();
                println!(
                    "  {}  {} students  {} weeks  {:.1}% fail",
                    c.id(),
                    c.labels.len(),
                    c.meta.duration_weeks,
                    100.0 * fails as f64 / c.labels.len() as f64
                );
            }
        }

        Cmd::Filter { corpus, course, out } => {
            let courses = io::read_corpus(&corpus)?;
            let run = cfg.run_config(cfg.levels[0]);
            let selected: Vec<_> = match &course {
                Some(id) => vec![find_course(&courses, id)?],
                None => courses.iter().collect(),
            };
            for c in selected {
                let id = c.id();
                let filter =
                    filter_course(c, &run.filter, derive_seed(cfg.seed, &format!("filter/{id}")))?;
                println!(
                    "{id}: removed {} of {} students (threshold {:.3})",
                    filter.removed.len(),
                    c.labels.len(),
                    filter.threshold
                );
                if let Some(dir) = &out {
                    write_artifact(&dir.join(format!("{id}.json")), &cfg.hash(), &filter, true)?;
                }
            }
        }

        Cmd::Features {
            corpus,
            course,
            level,
            out,
        } => {
            let c = io::read_course(&corpus.join(&course))?;
            let run = cfg.run_config(level);
            let filter = filter_course(
                &c,
                &run.filter,
                derive_seed(cfg.seed, &format!("filter/{course}")),
            )?;
            let filtered = apply_filter(&c, &filter);
            let raw = compute_raw(&filtered, level, &run.features)?;
            println!(
                "{course}: {} students x {} weeks x {N_FEATURES} features",
                raw.students.len(),
                raw.weeks
            );
            if let Some(path) = &out {
                write_artifact(path, &cfg.hash(), &raw, false)?;
            }
        }

        Cmd::Train {
            corpus,
            target,
            setting,
            arch,
            level,
            grid,
            out,
        } => {
            let courses = io::read_corpus(&corpus)?;
            let mut run = cfg.run_config(level);
            if grid {
                run.grid.get_or_insert_with(SearchGrid::default);
            }
            let transfer = TransferSetting {
                kind: setting,
                template: cfg.template(arch),
            };
            let tm = train_transfer(&courses, &target, &transfer, &run)?;
            save_model(&out, &tm, &cfg.hash())?;
            println!(
                "saved {} (validation bac {:.4})",
                out.display(),
                tm.val_bac
            );
        }

        Cmd::Predict {
            model,
            corpus,
            course,
            out,
        } => {
            let (hash, tm) = load_model(&model)?;
            let c = io::read_course(&corpus.join(&course))?;
            let scores = tm.predict_course(&c)?;
            let mut text = format!("# config_hash={hash}\nstudent,p_fail,label\n");
            for (student, score) in &scores {
                let label = if predict_labels(&[*score])[0] {
                    "fail"
                } else {
                    "pass"
                };
                text.push_str(&format!("{student},{score},{label}\n"));
            }
            match &out {
                Some(path) => {
                    write_text(path, &text)?;
                    println!("wrote {} predictions to {}", scores.len(), path.display());
                }
                None => print!("{text}"),
            }
        }

        Cmd::Experiment(sub) => run_experiment(sub, verbose, &cfg)?,

        Cmd::Ablate {
            corpus,
            target,
            level,
            out,
        } => {
            let courses = io::read_corpus(&corpus)?;
            let run = cfg.run_config(level);
            let table = run_ablation(&courses, &target, &cfg.template(ArchKind::Btm), &run)?;
            match &out {
                Some(path) => {
                    write_artifact(path, &cfg.hash(), &table, true)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", report::ablation_table(&table)),
            }
        }

        Cmd::Report {
            report: report_path,
            ablation,
            attention,
            out,
        } => {
            let (hash, rep) = read_report(&report_path)?;
            let stamp = format!("# config_hash={}\n", hash.unwrap_or_else(|| cfg.hash()));
            let tag = level_tag(rep.level);
            let mut written = Vec::new();
            for (pop, name) in [(Population::Filtered, "filtered"), (Population::Full, "full")] {
                let path = out.join(format!("transfer_{name}_{tag}.csv"));
                write_text(&path, &format!("{stamp}{}", report::transfer_table(&rep, pop)))?;
                written.push(path);
            }
            let path = out.join(format!("per_source_{tag}.csv"));
            write_text(
                &path,
                &format!("{stamp}{}", report::per_source_table(&rep, Population::Filtered)),
            )?;
            written.push(path);
            for json in &ablation {
                let table = read_artifact::<AblationTable>(json)?;
                let stamp = format!("# config_hash={}\n", table.config_hash);
                let stem = json.file_stem().unwrap_or_default().to_string_lossy();
                let path = out.join(format!("ablation_{stem}.csv"));
                write_text(
                    &path,
                    &format!("{stamp}{}", report::ablation_table(&table.data)),
                )?;
                written.push(path);
            }
            for json in &attention {
                let summary =
                    read_artifact::<moocpred_core::experiments::AttentionSummary>(json)?;
                let stamp = format!("# config_hash={}\n", summary.config_hash);
                let stem = json.file_stem().unwrap_or_default().to_string_lossy();
                let path = out.join(format!("attention_{stem}.csv"));
                write_text(
                    &path,
                    &format!("{stamp}{}", report::attention_table(&summary.data)),
                )?;
                written.push(path);
            }
            for path in &written {
                println!("wrote {}", path.display());
            }
        }

        Cmd::Pipeline => {
            let stages = run_pipeline(&cfg, verbose)?;
            for stage in &stages {
                println!(
                    "stage {}: {}",
                    stage.name,
                    if stage.skipped { "up to date" } else { "done" }
                );
            }
        }
    }
    Ok(())
}

fn run_experiment(sub: ExperimentCmd, verbose: bool, cfg: &PipelineConfig) -> Result<()> {
    match sub {
        ExperimentCmd::Run {
            corpus,
            level,
            settings,
            archs,
            targets,
            grid,
            out,
        } => {
            let courses = io::read_corpus(&corpus)?;
            let mut run = cfg.run_config(level);
            if grid {
                run.grid.get_or_insert_with(SearchGrid::default);
            }
            let settings = if settings.is_empty() {
                cfg.settings.clone()
            } else {
                settings
            };
            let archs = if archs.is_empty() { cfg.archs.clone() } else { archs };
            let targets = if targets.is_empty() {
                if cfg.targets.is_empty() {
                    default_targets(&courses)
                } else {
                    cfg.targets.clone()
                }
            } else {
                targets
            };
            for t in &targets {
                find_course(&courses, t)?;
            }
            let mut combos = Vec::new();
            for &arch in &archs {
                for &setting in &settings {
                    for target in &targets {
                        if select_courses(setting, &courses, target).is_ok() {
                            combos.push((arch, setting, target.clone()));
                        } else if verbose {
                            eprintln!("{setting:?} inapplicable to {target}, skipping");
                        }
                    }
                }
            }
            let rows = par_map(cfg.jobs, &combos, |(arch, setting, target)| {
                run_transfer(
                    &courses,
                    target,
                    &TransferSetting {
                        kind: *setting,
                        template: cfg.template(*arch),
                    },
                    &run,
                )
            });
            let mut rep = ExperimentReport::new(cfg.seed, level);
            for row in rows {
                rep.rows.push(row?);
            }
            write_artifact(&out, &cfg.hash(), &rep, true)?;
            println!("wrote {} rows to {}", rep.rows.len(), out.display());
        }

        ExperimentCmd::Table {
            report: path,
            population,
            out,
        } => {
            let (_, rep) = read_report(&path)?;
            let table = report::transfer_table(&rep, population);
            match &out {
                Some(path) => {
                    write_text(path, &table)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{table}"),
            }
        }

        ExperimentCmd::Attention {
            corpus,
            target,
            level,
            out,
        } => {
            let courses = io::read_corpus(&corpus)?;
            let run = cfg.run_config(level);
            let transfer = TransferSetting {
                kind: SettingKind::NOneDiff,
                template: cfg.template(ArchKind::Bsm),
            };
            let tm = train_transfer(&courses, &target, &transfer, &run)?;
            let course = find_course(&courses, &target)?;
            let summary = attention_summary_for(&tm, course, &run)?;
            match &out {
                Some(path) => {
                    write_artifact(path, &cfg.hash(), &summary, true)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", report::attention_table(&summary)),
            }
        }
    }
    Ok(())
}
