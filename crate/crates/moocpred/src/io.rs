//! Course directories on disk: one directory per course iteration holding
//! `events.jsonl`, `schedule.json`, `meta.json`, and `labels.csv`.
//!
//! Writing then reading then writing again produces byte-identical files:
//! events are emitted in (student, time) order, JSON field order follows the
//! struct declarations, and labels follow student id order.

use std::fs;
use std::path::{Path, PathBuf};

use moocpred_core::datamodel::{load_course, CourseIteration};
use moocpred_core::synth::GroundTruth;

use crate::{read_text, write_text, Error, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const META_FILE: &str = "meta.json";
pub const LABELS_FILE: &str = "labels.csv";
/// Optional generator ground truth, stored next to the course directories.
pub const TRUTH_FILE: &str = "ground_truth.json";
/// Scenario the corpus was generated from, for provenance.
pub const SCENARIO_FILE: &str = "scenario.json";

/// Loads and validates one course directory.
pub fn read_course(dir: &Path) -> Result<CourseIteration> {
    let events = read_text(&dir.join(EVENTS_FILE))?;
    let schedule = read_text(&dir.join(SCHEDULE_FILE))?;
    let meta = read_text(&dir.join(META_FILE))?;
    let labels = read_text(&dir.join(LABELS_FILE))?;
    load_course(&events, &schedule, &meta, &labels)
        .map_err(|e| Error::format(dir, e.to_string()))
}

/// Course directories under `dir`: every subdirectory with a `meta.json`,
/// sorted by name.
pub fn course_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(dir, "no course directories (none contain meta.json)"));
    }
    Ok(dirs)
}

/// Loads every course of a corpus directory, sorted by directory name.
pub fn read_corpus(dir: &Path) -> Result<Vec<CourseIteration>> {
    course_dirs(dir)?.iter().map(|d| read_course(d)).collect()
}

/// Writes one course directory in the load formats.
pub fn write_course(dir: &Path, course: &CourseIteration) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut events = String::new();
    for student_events in course.events.values() {
        for event in student_events {
            let line = serde_json::to_string(event)
                .map_err(|e| Error::format(dir.join(EVENTS_FILE), e.to_string()))?;
            events.push_str(&line);
            events.push('\n');
        }
    }
    write_text(&dir.join(EVENTS_FILE), &events)?;

    crate::write_json(&dir.join(SCHEDULE_FILE), &course.schedule)?;
    crate::write_json(&dir.join(META_FILE), &course.meta)?;

    let mut labels = String::from("student_id,label\n");
    for (student, label) in &course.labels {
        labels.push_str(&format!(
            "{student},{}\n",
            match label {
                moocpred_core::datamodel::Label::Pass => "pass",
                moocpred_core::datamodel::Label::Fail => "fail",
            }
        ));
    }
    write_text(&dir.join(LABELS_FILE), &labels)
}

/// Writes a whole corpus, one subdirectory per course id.
pub fn write_corpus(dir: &Path, courses: &[CourseIteration]) -> Result<()> {
    for course in courses {
        write_course(&dir.join(course.meta.id()), course)?;
    }
    Ok(())
}

pub fn write_truth(dir: &Path, truth: &GroundTruth) -> Result<()> {
    crate::write_json(&dir.join(TRUTH_FILE), truth)
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    crate::read_json(&dir.join(TRUTH_FILE))
}
