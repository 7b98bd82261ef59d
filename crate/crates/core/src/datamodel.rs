//! Course data: clickstream events, schedules, metadata, labels.
//!
//! A course iteration is the unit everything else operates on. Loading
//! validates cross-references (every event points at a scheduled object,
//! every active student has a label); downstream code relies on those
//! invariants instead of re-checking them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const WEEK_SECONDS: i64 = 604_800;
pub const DAY_SECONDS: i64 = 86_400;

pub type StudentId = String;

/// Clickstream actions. The textual form is the dotted pair used in logs,
/// e.g. `Video.Play` or `Quiz.Submit`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "Video.Load")]
    VideoLoad,
    #[serde(rename = "Video.Play")]
    VideoPlay,
    #[serde(rename = "Video.Pause")]
    VideoPause,
    #[serde(rename = "Video.Stop")]
    VideoStop,
    #[serde(rename = "Video.SeekBackward")]
    VideoSeekBackward,
    #[serde(rename = "Video.SeekForward")]
    VideoSeekForward,
    #[serde(rename = "Video.SpeedChange")]
    VideoSpeedChange,
    #[serde(rename = "Quiz.Submit")]
    QuizSubmit,
}

impl Action {
    pub fn is_video(self) -> bool {
        !matches!(self, Action::QuizSubmit)
    }

    pub fn is_seek(self) -> bool {
        matches!(self, Action::VideoSeekBackward | Action::VideoSeekForward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Video,
    Quiz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Bachelor,
    Master,
    Propedeutic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    French,
    English,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pass,
    Fail,
}

impl Label {
    /// Failing is the positive class throughout.
    pub fn is_fail(self) -> bool {
        matches!(self, Label::Fail)
    }

    /// Cross-entropy target: the positive class maps to one.
    pub fn target(self) -> f64 {
        if self.is_fail() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub student: StudentId,
    /// Unix seconds, UTC.
    pub t: i64,
    pub action: Action,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seek_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleItem {
    pub object: String,
    pub kind: ItemKind,
    /// Zero-based week the item belongs to.
    pub release_week: u32,
    pub release_time: i64,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub graded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_duration: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseMeta {
    pub course_set: String,
    pub iteration: u32,
    pub duration_weeks: u32,
    pub start_time: i64,
    pub level: Level,
    pub language: Language,
    pub title: String,
    pub short_description: String,
    pub long_description: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CourseIteration {
    pub meta: CourseMeta,
    pub schedule: Vec<ScheduleItem>,
    /// Per-student events, each list sorted by timestamp (stable for ties).
    pub events: BTreeMap<StudentId, Vec<Event>>,
    /// All labeled students; superset of the students with events.
    pub labels: BTreeMap<StudentId, Label>,
}

impl CourseMeta {
    pub fn id(&self) -> String {
        format!("{}-{:02}", self.course_set, self.iteration)
    }
}

impl CourseIteration {
    pub fn id(&self) -> String {
        self.meta.id()
    }

    pub fn start_time(&self) -> i64 {
        self.meta.start_time
    }

    pub fn end_time(&self) -> i64 {
        self.meta.start_time + self.meta.duration_weeks as i64 * WEEK_SECONDS
    }

    pub fn events_of(&self, student: &str) -> &[Event] {
        self.events.get(student).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The student population is everyone with a label, active or not.
    pub fn student_ids(&self) -> impl Iterator<Item = &StudentId> {
        self.labels.keys()
    }

    pub fn n_students(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cid = self.id();
        if self.meta.duration_weeks == 0 {
            return Err(CoreError::data(format!("{cid}: duration_weeks is zero")));
        }
        let mut by_object: BTreeMap<&str, &ScheduleItem> = BTreeMap::new();
        for item in &self.schedule {
            if by_object.insert(&item.object, item).is_some() {
                return Err(CoreError::data(format!(
                    "{cid}: duplicate schedule object {}",
                    item.object
                )));
            }
            if item.release_week >= self.meta.duration_weeks {
                return Err(CoreError::data(format!(
                    "{cid}: {} released in week {} of a {}-week course",
                    item.object, item.release_week, self.meta.duration_weeks
                )));
            }
            let week_start =
                self.meta.start_time + item.release_week as i64 * WEEK_SECONDS;
            if item.release_time < week_start || item.release_time >= week_start + WEEK_SECONDS {
                return Err(CoreError::data(format!(
                    "{cid}: {} release_time outside its release_week",
                    item.object
                )));
            }
            match item.kind {
                ItemKind::Video => {
                    if item.graded {
                        return Err(CoreError::data(format!(
                            "{cid}: video {} marked graded",
                            item.object
                        )));
                    }
                }
                ItemKind::Quiz => {
                    if item.video_duration.is_some() {
                        return Err(CoreError::data(format!(
                            "{cid}: quiz {} has video_duration",
                            item.object
                        )));
                    }
                }
            }
        }
        for (student, events) in &self.events {
            if !self.labels.contains_key(student) {
                return Err(CoreError::data(format!(
                    "{cid}: student {student} has events but no label"
                )));
            }
            let mut prev_t = i64::MIN;
            for e in events {
                if e.student != *student {
                    return Err(CoreError::data(format!(
                        "{cid}: event filed under {student} belongs to {}",
                        e.student
                    )));
                }
                if e.t < prev_t {
                    return Err(CoreError::data(format!(
                        "{cid}: events of {student} not sorted by time"
                    )));
                }
                prev_t = e.t;
                if e.t < self.meta.start_time || e.t >= self.end_time() {
                    return Err(CoreError::data(format!(
                        "{cid}: event of {student} at {} outside the course run",
                        e.t
                    )));
                }
                let item = by_object.get(e.object.as_str()).ok_or_else(|| {
                    CoreError::data(format!(
                        "{cid}: event references unscheduled object {}",
                        e.object
                    ))
                })?;
                let kind_ok = match item.kind {
                    ItemKind::Video => e.action.is_video(),
                    ItemKind::Quiz => e.action == Action::QuizSubmit,
                };
                if !kind_ok {
                    return Err(CoreError::data(format!(
                        "{cid}: action {:?} on {:?} object {}",
                        e.action, item.kind, e.object
                    )));
                }
                match e.grade {
                    Some(g) if e.action != Action::QuizSubmit => {
                        let _ = g;
                        return Err(CoreError::data(format!(
                            "{cid}: grade on non-submit event of {student}"
                        )));
                    }
                    Some(g) if !(0.0..=1.0).contains(&g) => {
                        return Err(CoreError::data(format!(
                            "{cid}: grade {g} outside [0, 1]"
                        )));
                    }
                    _ => {}
                }
                match e.seek_seconds {
                    Some(s) if !e.action.is_seek() => {
                        let _ = s;
                        return Err(CoreError::data(format!(
                            "{cid}: seek_seconds on non-seek event of {student}"
                        )));
                    }
                    Some(s) if !s.is_finite() => {
                        return Err(CoreError::data(format!(
                            "{cid}: non-finite seek_seconds of {student}"
                        )));
                    }
                    None if e.action.is_seek() => {
                        return Err(CoreError::data(format!(
                            "{cid}: seek event of {student} without seek_seconds"
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// Parses one JSON event per line and sorts stably by (student, time).
pub fn parse_event_log(text: &str) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(line).map_err(|e| {
            CoreError::data(format!("events line {}: {e}", lineno + 1))
        })?;
        events.push(event);
    }
    events.sort_by(|a, b| a.student.cmp(&b.student).then(a.t.cmp(&b.t)));
    Ok(events)
}

pub fn parse_schedule(text: &str) -> Result<Vec<ScheduleItem>> {
    serde_json::from_str(text).map_err(|e| CoreError::data(format!("schedule: {e}")))
}

pub fn parse_meta(text: &str) -> Result<CourseMeta> {
    serde_json::from_str(text).map_err(|e| CoreError::data(format!("meta: {e}")))
}

/// Parses `labels.csv`: a `student_id,label` header, then one row per
/// student with label `pass` or `fail`.
pub fn parse_labels(text: &str) -> Result<BTreeMap<StudentId, Label>> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("student_id,label") => {}
        other => {
            return Err(CoreError::data(format!(
                "labels: expected header student_id,label, got {other:?}"
            )))
        }
    }
    let mut labels = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (student, label) = line.split_once(',').ok_or_else(|| {
            CoreError::data(format!("labels line {}: missing comma", lineno + 2))
        })?;
        let label = match label.trim() {
            "pass" => Label::Pass,
            "fail" => Label::Fail,
            other => {
                return Err(CoreError::data(format!(
                    "labels line {}: unknown label {other}",
                    lineno + 2
                )))
            }
        };
        if labels.insert(student.trim().to_string(), label).is_some() {
            return Err(CoreError::data(format!(
                "labels line {}: duplicate student {student}",
                lineno + 2
            )));
        }
    }
    Ok(labels)
}

/// Assembles and validates one course iteration from its four raw inputs.
/// Students that appear in the labels but never in the log are kept; they
/// legitimately produce all-zero features.
pub fn load_course(
    events_text: &str,
    schedule_text: &str,
    meta_text: &str,
    labels_text: &str,
) -> Result<CourseIteration> {
    let flat = parse_event_log(events_text)?;
    let schedule = parse_schedule(schedule_text)?;
    let meta = parse_meta(meta_text)?;
    let labels = parse_labels(labels_text)?;
    let mut events: BTreeMap<StudentId, Vec<Event>> = BTreeMap::new();
    for e in flat {
        events.entry(e.student.clone()).or_default().push(e);
    }
    let course = CourseIteration {
        meta,
        schedule,
        events,
        labels,
    };
    course.validate()?;
    Ok(course)
}

/// Weeks of data available at early level `e`: `floor(e * duration)`.
pub fn weeks_kept(early_level: f64, duration_weeks: u32) -> u32 {
    libm::floor(early_level * duration_weeks as f64) as u32
}

/// Restricts a course to its first `floor(e * duration)` weeks of events.
/// The cutoff is half-open: an event exactly on the boundary is dropped.
/// Schedule, metadata and labels stay untouched.
pub fn truncate_to_level(course: &CourseIteration, early_level: f64) -> Result<CourseIteration> {
    if !(early_level > 0.0 && early_level <= 1.0) || !early_level.is_finite() {
        return Err(CoreError::config(format!(
            "early level {early_level} outside (0, 1]"
        )));
    }
    let kept = weeks_kept(early_level, course.meta.duration_weeks);
    if kept == 0 {
        return Err(CoreError::config(format!(
            "early level {early_level} keeps zero weeks of a {}-week course",
            course.meta.duration_weeks
        )));
    }
    let cutoff = course.meta.start_time + kept as i64 * WEEK_SECONDS;
    let mut truncated = course.clone();
    for events in truncated.events.values_mut() {
        events.retain(|e| e.t < cutoff);
    }
    Ok(truncated)
}

/// Zero-based week of a timestamp inside a course. Caller guarantees
/// `t >= start_time`.
pub fn week_index(start_time: i64, t: i64) -> u32 {
    debug_assert!(t >= start_time);
    ((t - start_time) / WEEK_SECONDS) as u32
}

/// Days since the Unix epoch, floored (works for negative timestamps too).
pub fn day_index(t: i64) -> i64 {
    t.div_euclid(DAY_SECONDS)
}

/// Saturday or Sunday in UTC. Day zero of the epoch was a Thursday, so days
/// 2 and 3 modulo 7 are the weekend.
pub fn is_weekend(t: i64) -> bool {
    matches!(day_index(t).rem_euclid(7), 2 | 3)
}

/// Hour of day in UTC, 0..24.
pub fn hour_of_day(t: i64) -> usize {
    (t.rem_euclid(DAY_SECONDS) / 3600) as usize
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub courses: Vec<CourseIteration>,
    /// Course ids available for training.
    pub train_ids: BTreeSet<String>,
    /// Course ids held out as transfer targets.
    pub transfer_ids: BTreeSet<String>,
}

impl Corpus {
    pub fn course(&self, id: &str) -> Option<&CourseIteration> {
        self.courses.iter().find(|c| c.id() == id)
    }

    pub fn max_duration_weeks(&self) -> u32 {
        self.courses
            .iter()
            .map(|c| c.meta.duration_weeks)
            .max()
            .unwrap_or(0)
    }

    pub fn train_courses(&self) -> impl Iterator<Item = &CourseIteration> {
        self.courses.iter().filter(|c| self.train_ids.contains(&c.id()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for c in &self.courses {
            c.validate()?;
            if !ids.insert(c.id()) {
                return Err(CoreError::data(format!("duplicate course id {}", c.id())));
            }
        }
        for id in self.train_ids.iter().chain(self.transfer_ids.iter()) {
            if !ids.contains(id) {
                return Err(CoreError::data(format!(
                    "partition references unknown course {id}"
                )));
            }
        }
        if let Some(id) = self.train_ids.intersection(&self.transfer_ids).next() {
            return Err(CoreError::data(format!(
                "course {id} is both a training and a transfer course"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub const START: i64 = 1_704_067_200; // 2024-01-01 00:00 UTC, a Monday

    pub fn tiny_meta() -> CourseMeta {
        CourseMeta {
            course_set: "dsp".to_string(),
            iteration: 1,
            duration_weeks: 4,
            start_time: START,
            level: Level::Bachelor,
            language: Language::English,
            title: "Signals".to_string(),
            short_description: "Filters and transforms".to_string(),
            long_description: "A first pass over discrete signals.".to_string(),
        }
    }

    pub fn tiny_schedule() -> Vec<ScheduleItem> {
        vec![
            ScheduleItem {
                object: "v1".to_string(),
                kind: ItemKind::Video,
                release_week: 0,
                release_time: START + 3600,
                graded: false,
                video_duration: Some(600.0),
            },
            ScheduleItem {
                object: "q1".to_string(),
                kind: ItemKind::Quiz,
                release_week: 1,
                release_time: START + WEEK_SECONDS + 3600,
                graded: true,
                video_duration: None,
            },
        ]
    }

    fn ev(student: &str, t: i64, action: Action, object: &str) -> Event {
        Event {
            student: student.to_string(),
            t,
            action,
            object: object.to_string(),
            grade: None,
            seek_seconds: None,
        }
    }

    pub fn tiny_course() -> CourseIteration {
        let mut events = BTreeMap::new();
        events.insert(
            "s1".to_string(),
            vec![
                ev("s1", START + 4000, Action::VideoPlay, "v1"),
                Event {
                    grade: Some(0.8),
                    ..ev("s1", START + WEEK_SECONDS + 7200, Action::QuizSubmit, "q1")
                },
            ],
        );
        let mut labels = BTreeMap::new();
        labels.insert("s1".to_string(), Label::Pass);
        labels.insert("s2".to_string(), Label::Fail); // labeled, never active
        CourseIteration {
            meta: tiny_meta(),
            schedule: tiny_schedule(),
            events,
            labels,
        }
    }

    #[test]
    fn tiny_course_validates() {
        tiny_course().validate().unwrap();
    }

    #[test]
    fn event_log_parses_sorts_and_reports_bad_lines() {
        let text = concat!(
            "{\"student\":\"b\",\"t\":100,\"action\":\"Video.Play\",\"object\":\"v1\"}\n",
            "\n",
            "{\"student\":\"a\",\"t\":200,\"action\":\"Quiz.Submit\",\"object\":\"q1\",\"grade\":0.5}\n",
            "{\"student\":\"a\",\"t\":50,\"action\":\"Video.Load\",\"object\":\"v1\"}\n",
        );
        let events = parse_event_log(text).unwrap();
        let order: Vec<(&str, i64)> = events
            .iter()
            .map(|e| (e.student.as_str(), e.t))
            .collect();
        assert_eq!(order, vec![("a", 50), ("a", 200), ("b", 100)]);
        assert_eq!(events[1].grade, Some(0.5));

        let err = parse_event_log("not json\n").unwrap_err();
        assert!(format!("{err}").contains("line 1"));
        let err = parse_event_log(
            "{\"student\":\"a\",\"t\":1,\"action\":\"Video.Teleport\",\"object\":\"v\"}\n",
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Data(_)));
    }

    #[test]
    fn sort_is_stable_for_equal_timestamps() {
        let text = concat!(
            "{\"student\":\"a\",\"t\":100,\"action\":\"Video.Load\",\"object\":\"v1\"}\n",
            "{\"student\":\"a\",\"t\":100,\"action\":\"Video.Play\",\"object\":\"v1\"}\n",
        );
        let events = parse_event_log(text).unwrap();
        assert_eq!(events[0].action, Action::VideoLoad);
        assert_eq!(events[1].action, Action::VideoPlay);
    }

    #[test]
    fn labels_header_and_content_are_enforced() {
        let ok = parse_labels("student_id,label\ns1,pass\ns2,fail\n").unwrap();
        assert_eq!(ok["s1"], Label::Pass);
        assert_eq!(ok["s2"], Label::Fail);
        assert!(parse_labels("id,label\ns1,pass\n").is_err());
        assert!(parse_labels("student_id,label\ns1,maybe\n").is_err());
        assert!(parse_labels("student_id,label\ns1,pass\ns1,fail\n").is_err());
    }

    #[test]
    fn load_course_keeps_label_only_students() {
        let events = "{\"student\":\"s1\",\"t\":1704071200,\"action\":\"Video.Play\",\"object\":\"v1\"}\n";
        let schedule = serde_json::to_string(&tiny_schedule()).unwrap();
        let meta = serde_json::to_string(&tiny_meta()).unwrap();
        let labels = "student_id,label\ns1,pass\nghost,fail\n";
        let course = load_course(events, &schedule, &meta, labels).unwrap();
        assert_eq!(course.n_students(), 2);
        assert!(course.events_of("ghost").is_empty());
        assert_eq!(course.labels["ghost"], Label::Fail);
    }

    #[test]
    fn validation_catches_cross_reference_breaks() {
        // Events without a label.
        let mut c = tiny_course();
        c.labels.remove("s1");
        assert!(matches!(c.validate(), Err(CoreError::Data(_))));

        // Unknown object.
        let mut c = tiny_course();
        c.events.get_mut("s1").unwrap()[0].object = "vX".to_string();
        assert!(c.validate().is_err());

        // Video action on a quiz object.
        let mut c = tiny_course();
        c.events.get_mut("s1").unwrap()[0].object = "q1".to_string();
        assert!(c.validate().is_err());

        // Grade on a video event.
        let mut c = tiny_course();
        c.events.get_mut("s1").unwrap()[0].grade = Some(0.5);
        assert!(c.validate().is_err());

        // Seek without seek_seconds.
        let mut c = tiny_course();
        c.events.get_mut("s1").unwrap()[0].action = Action::VideoSeekForward;
        assert!(c.validate().is_err());

        // Event before the course starts.
        let mut c = tiny_course();
        c.events.get_mut("s1").unwrap()[0].t = START - 1;
        assert!(c.validate().is_err());

        // Graded video.
        let mut c = tiny_course();
        c.schedule[0].graded = true;
        assert!(c.validate().is_err());

        // Release outside the declared week.
        let mut c = tiny_course();
        c.schedule[1].release_time = START;
        assert!(c.validate().is_err());
    }

    #[test]
    fn weeks_kept_matches_hand_values() {
        assert_eq!(weeks_kept(0.4, 10), 4);
        assert_eq!(weeks_kept(0.6, 10), 6);
        assert_eq!(weeks_kept(0.4, 5), 2);
        assert_eq!(weeks_kept(0.6, 5), 3);
        assert_eq!(weeks_kept(0.6, 7), 4); // floor(4.2)
        assert_eq!(weeks_kept(0.1, 4), 0);
        assert_eq!(weeks_kept(1.0, 12), 12);
    }

    #[test]
    fn truncation_boundary_is_half_open() {
        let mut c = tiny_course();
        let cutoff = START + 2 * WEEK_SECONDS;
        c.events.insert(
            "s2".to_string(),
            vec![
                ev("s2", cutoff - 1, Action::VideoPlay, "v1"),
                ev("s2", cutoff, Action::VideoPlay, "v1"),
            ],
        );
        let t = truncate_to_level(&c, 0.5).unwrap(); // 2 of 4 weeks
        let kept = t.events_of("s2");
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].t, cutoff - 1);
        // Schedule and labels are untouched.
        assert_eq!(t.schedule, c.schedule);
        assert_eq!(t.labels, c.labels);
    }

    #[test]
    fn truncation_rejects_bad_levels() {
        let c = tiny_course();
        assert!(matches!(
            truncate_to_level(&c, 0.0),
            Err(CoreError::Config(_))
        ));
        assert!(truncate_to_level(&c, 1.5).is_err());
        assert!(truncate_to_level(&c, -0.2).is_err());
        // floor(0.1 * 4) = 0 weeks.
        assert!(matches!(
            truncate_to_level(&c, 0.1),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn weekend_and_hour_helpers_match_known_dates() {
        // 2024-01-06 was a Saturday, 2024-01-08 a Monday.
        let sat = 1_704_499_200;
        let mon = 1_704_672_000;
        assert!(is_weekend(sat));
        assert!(is_weekend(sat + 3600 * 30)); // Sunday morning
        assert!(!is_weekend(mon));
        assert!(!is_weekend(START)); // 2024-01-01, Monday
        assert_eq!(hour_of_day(START), 0);
        assert_eq!(hour_of_day(START + 3600 * 13 + 59), 13);
        assert_eq!(day_index(0), 0);
        assert_eq!(day_index(-1), -1);
    }

    #[test]
    fn corpus_partition_is_checked() {
        let c = tiny_course();
        let mut corpus = Corpus {
            courses: vec![c],
            train_ids: BTreeSet::from(["dsp-01".to_string()]),
            transfer_ids: BTreeSet::new(),
        };
        corpus.validate().unwrap();
        corpus.transfer_ids.insert("dsp-01".to_string());
        assert!(corpus.validate().is_err());
        corpus.transfer_ids.clear();
        corpus.transfer_ids.insert("nope-01".to_string());
        assert!(corpus.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn course_with_events(times: Vec<i64>) -> CourseIteration {
            let mut c = tiny_course();
            let end = c.end_time();
            let evs: Vec<Event> = times
                .into_iter()
                .map(|raw| {
                    let t = START + raw.rem_euclid(end - START);
                    ev("s1", t, Action::VideoPlay, "v1")
                })
                .collect();
            let mut evs = evs;
            evs.sort_by_key(|e| e.t);
            c.events.insert("s1".to_string(), evs);
            c
        }

        proptest! {
            #[test]
            fn truncation_is_idempotent(times in proptest::collection::vec(0i64..10_000_000, 0..40),
                                        num in 1u32..=4) {
                let e = num as f64 / 4.0;
                let c = course_with_events(times);
                let once = truncate_to_level(&c, e).unwrap();
                let twice = truncate_to_level(&once, e).unwrap();
                prop_assert_eq!(&once.events, &twice.events);
            }

            #[test]
            fn truncation_is_monotone_in_level(times in proptest::collection::vec(0i64..10_000_000, 0..40),
                                               lo in 1u32..=4, hi in 1u32..=4) {
                prop_assume!(lo <= hi);
                let c = course_with_events(times);
                let a = truncate_to_level(&c, lo as f64 / 4.0).unwrap();
                let b = truncate_to_level(&c, hi as f64 / 4.0).unwrap();
                let ae = a.events_of("s1");
                let be = b.events_of("s1");
                prop_assert!(ae.len() <= be.len());
                // The shorter prefix is literally a prefix of the longer one.
                prop_assert_eq!(ae, &be[..ae.len()]);
            }
        }
    }
}
