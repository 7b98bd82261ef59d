//! Weekly behavior features.
//!
//! For every student and every visible week this module produces a 45-value
//! row: 3 regularity, 13 engagement, 22 video-control and 7 participation
//! features, in that fixed order. Each week's row is computed from the event
//! prefix up to that week's end, so feature values never look into the
//! future; sessionization is redone per prefix for the same reason (a session
//! straddling a week boundary is seen trimmed at the earlier week).
//!
//! Raw values are min-max normalized per feature over the fitting population
//! (all students and weeks jointly), and weeks beyond the visible horizon are
//! padded with -1 so shorter courses line up with the longest one.

pub mod sessions;

mod control;
mod engagement;
mod participation;
mod regularity;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    week_index, weeks_kept, CourseIteration, Event, ItemKind, StudentId, WEEK_SECONDS,
};
use crate::error::{CoreError, Result};
pub use sessions::{event_times, sessionize, Session};

pub const N_FEATURES: usize = 45;

/// Marker for padded weeks.
pub const MASK_VALUE: f64 = -1.0;

/// Canonical feature order. Names are qualified by their set because
/// TotalClicksVideo exists in both Engagement (per-week) and Control
/// (cumulative) with different meanings.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "Regularity.DelayLecture",
    "Regularity.RegPeakTimeDayHour",
    "Regularity.RegPeriodicityDayHour",
    "Engagement.NumberOfSessions",
    "Engagement.RatioClicksWeekendDay",
    "Engagement.AvgTimeSessions",
    "Engagement.TotalTimeSessions",
    "Engagement.StdTimeSessions",
    "Engagement.StdTimeBetweenSessions",
    "Engagement.TotalClicks",
    "Engagement.TotalClicksProblem",
    "Engagement.TotalClicksVideo",
    "Engagement.TotalClicksWeekday",
    "Engagement.TotalClicksWeekend",
    "Engagement.TotalTimeProblem",
    "Engagement.TotalTimeVideo",
    "Control.TotalClicksVideoLoad",
    "Control.TotalClicksVideo",
    "Control.AvgWatchedWeeklyProp",
    "Control.StdWatchedWeeklyProp",
    "Control.AvgReplayedWeeklyProp",
    "Control.StdReplayedWeeklyProp",
    "Control.AvgInterruptedWeeklyProp",
    "Control.StdInterruptedWeeklyProp",
    "Control.FrequencyEventVideo",
    "Control.FrequencyEventLoad",
    "Control.FrequencyEventPlay",
    "Control.FrequencyEventPause",
    "Control.FrequencyEventStop",
    "Control.FrequencyEventSeekBackward",
    "Control.FrequencyEventSeekForward",
    "Control.FrequencyEventSpeedChange",
    "Control.AvgSeekLength",
    "Control.StdSeekLength",
    "Control.AvgPauseDuration",
    "Control.StdPauseDuration",
    "Control.AvgTimeSpeedingUp",
    "Control.StdTimeSpeedingUp",
    "Participation.CompetencyStrength",
    "Participation.CompetencyAlignment",
    "Participation.CompetencyAnticipation",
    "Participation.ContentAlignment",
    "Participation.ContentAnticipation",
    "Participation.StudentSpeed",
    "Participation.StudentShape",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Gaps of at least this many seconds split sessions; within-session
    /// event time attribution is capped at the same value.
    pub session_gap_s: i64,
    /// Seconds credited to the last event of a session.
    pub terminal_credit_s: f64,
    /// Quiz grades at or above this count as a pass.
    pub pass_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            session_gap_s: 1800,
            terminal_credit_s: 60.0,
            pass_threshold: 0.5,
        }
    }
}

/// Schedule lookups shared by all feature sets.
pub(crate) struct ScheduleIndex {
    /// Scheduled videos: object id -> (release week, release time).
    pub videos: BTreeMap<String, (u32, i64)>,
    /// Graded quizzes: object id -> release week.
    pub quizzes: BTreeMap<String, u32>,
    /// `videos_through[w]` = videos released in weeks `0..=w`.
    pub videos_through: Vec<usize>,
}

impl ScheduleIndex {
    pub fn build(course: &CourseIteration) -> Self {
        let mut videos = BTreeMap::new();
        let mut quizzes = BTreeMap::new();
        let weeks = course.meta.duration_weeks as usize;
        let mut per_week = alloc::vec![0usize; weeks];
        for item in &course.schedule {
            match item.kind {
                ItemKind::Video => {
                    videos.insert(item.object.clone(), (item.release_week, item.release_time));
                    if (item.release_week as usize) < weeks {
                        per_week[item.release_week as usize] += 1;
                    }
                }
                ItemKind::Quiz if item.graded => {
                    quizzes.insert(item.object.clone(), item.release_week);
                }
                ItemKind::Quiz => {}
            }
        }
        let mut videos_through = per_week;
        for w in 1..videos_through.len() {
            videos_through[w] += videos_through[w - 1];
        }
        ScheduleIndex {
            videos,
            quizzes,
            videos_through,
        }
    }

    pub fn videos_available(&self, week: usize) -> usize {
        let w = week.min(self.videos_through.len().saturating_sub(1));
        self.videos_through.get(w).copied().unwrap_or(0)
    }
}

/// Everything a feature set needs to score one student at one week: the
/// event prefix visible at that week's end, its sessionization and the
/// per-event time attribution.
pub(crate) struct WeekView<'a> {
    pub sched: &'a ScheduleIndex,
    pub cfg: &'a FeatureConfig,
    pub start_time: i64,
    /// Zero-based week being scored.
    pub week: usize,
    /// All events with `t` strictly before the end of `week`.
    pub events: &'a [Event],
    /// Session-attributed seconds per event, parallel to `events`.
    pub times: &'a [f64],
    pub sessions: &'a [Session],
}

impl WeekView<'_> {
    pub fn week_of(&self, ev: &Event) -> usize {
        week_index(self.start_time, ev.t) as usize
    }

    pub fn elapsed_weeks(&self) -> f64 {
        (self.week + 1) as f64
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation; zero for fewer than two samples.
pub(crate) fn pstd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs
        .iter()
        .map(|x| {
            let d = x - m;
            d * d
        })
        .sum::<f64>()
        / xs.len() as f64;
    libm::sqrt(var)
}

/// Unnormalized features for one course: `students.len() * weeks * 45`
/// values, week-major within each student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFeatures {
    pub course_id: String,
    pub students: Vec<StudentId>,
    /// Visible weeks at the requested early level.
    pub weeks: usize,
    pub values: Vec<f64>,
}

impl RawFeatures {
    pub fn value(&self, student: usize, week: usize, feature: usize) -> f64 {
        self.values[(student * self.weeks + week) * N_FEATURES + feature]
    }
}

/// Computes raw features for every labeled student over the first
/// `floor(early_level * duration)` weeks. Events beyond that horizon are
/// ignored even if present, so callers may pass untruncated courses.
pub fn compute_raw(
    course: &CourseIteration,
    early_level: f64,
    cfg: &FeatureConfig,
) -> Result<RawFeatures> {
    if !(early_level > 0.0 && early_level <= 1.0) || !early_level.is_finite() {
        return Err(CoreError::config(alloc::format!(
            "early level {early_level} outside (0, 1]"
        )));
    }
    let kept = weeks_kept(early_level, course.meta.duration_weeks) as usize;
    if kept == 0 {
        return Err(CoreError::config(alloc::format!(
            "early level {early_level} keeps zero weeks of a {}-week course",
            course.meta.duration_weeks
        )));
    }
    let sched = ScheduleIndex::build(course);
    let start = course.start_time();
    let cutoff = start + kept as i64 * WEEK_SECONDS;
    let students: Vec<StudentId> = course.student_ids().cloned().collect();
    let mut values = alloc::vec![0.0; students.len() * kept * N_FEATURES];

    for (si, id) in students.iter().enumerate() {
        let all = course.events_of(id);
        let visible = &all[..all.partition_point(|e| e.t < cutoff)];
        let ts: Vec<i64> = visible.iter().map(|e| e.t).collect();
        for j in 0..kept {
            let boundary = start + (j as i64 + 1) * WEEK_SECONDS;
            let n = ts.partition_point(|&t| t < boundary);
            let sessions = sessionize(&ts[..n], cfg.session_gap_s, cfg.terminal_credit_s);
            let times = event_times(&ts[..n], &sessions, cfg.session_gap_s, cfg.terminal_credit_s);
            let view = WeekView {
                sched: &sched,
                cfg,
                start_time: start,
                week: j,
                events: &visible[..n],
                times: &times,
                sessions: &sessions,
            };
            let row = &mut values[(si * kept + j) * N_FEATURES..][..N_FEATURES];
            row[0..3].copy_from_slice(&regularity::compute(&view));
            row[3..16].copy_from_slice(&engagement::compute(&view));
            row[16..38].copy_from_slice(&control::compute(&view));
            row[38..45].copy_from_slice(&participation::compute(&view));
        }
    }

    Ok(RawFeatures {
        course_id: course.id(),
        students,
        weeks: kept,
        values,
    })
}

/// Per-feature min and max observed over a fitting population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fits bounds over all students and weeks of the given courses jointly.
    pub fn fit<'a, I>(raws: I) -> Result<NormStats>
    where
        I: IntoIterator<Item = &'a RawFeatures>,
    {
        let mut min = alloc::vec![f64::INFINITY; N_FEATURES];
        let mut max = alloc::vec![f64::NEG_INFINITY; N_FEATURES];
        let mut any = false;
        for raw in raws {
            for row in raw.values.chunks_exact(N_FEATURES) {
                any = true;
                for (k, &v) in row.iter().enumerate() {
                    min[k] = min[k].min(v);
                    max[k] = max[k].max(v);
                }
            }
        }
        if !any {
            return Err(CoreError::data("cannot fit normalization bounds on an empty population"));
        }
        Ok(NormStats {
            names: FEATURE_NAMES.iter().map(|n| n.to_string()).collect(),
            min,
            max,
        })
    }

    /// Maps one raw value into `[0, 1]`, clamping out-of-range transfer
    /// values. Constant features map to zero.
    pub fn normalize(&self, feature: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi == lo {
            0.0
        } else {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }

    fn check_names(&self) -> Result<()> {
        if self.names.len() != N_FEATURES
            || self.names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(CoreError::data("normalization bounds were fitted for a different feature set"));
        }
        Ok(())
    }
}

/// Normalized, padded behavior features for one course:
/// `students.len() * week_count * 45` values with padded weeks all `-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorTensor {
    pub course_id: String,
    pub students: Vec<StudentId>,
    /// Padded length, the corpus-wide maximum duration.
    pub week_count: usize,
    /// Unpadded prefix length actually backed by data.
    pub kept_weeks: usize,
    pub values: Vec<f64>,
}

impl BehaviorTensor {
    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn value(&self, student: usize, week: usize, feature: usize) -> f64 {
        self.values[(student * self.week_count + week) * N_FEATURES + feature]
    }

    /// One student's `week_count * 45` block, week-major.
    pub fn student_rows(&self, student: usize) -> &[f64] {
        &self.values[student * self.week_count * N_FEATURES..][..self.week_count * N_FEATURES]
    }
}

/// Applies fitted bounds and pads every student out to `week_count` weeks.
pub fn normalize_and_pad(
    raw: &RawFeatures,
    stats: &NormStats,
    week_count: usize,
) -> Result<BehaviorTensor> {
    stats.check_names()?;
    if week_count < raw.weeks {
        return Err(CoreError::config(alloc::format!(
            "padding target {week_count} weeks is shorter than the {} weeks of data",
            raw.weeks
        )));
    }
    let n = raw.students.len();
    let mut values = alloc::vec![MASK_VALUE; n * week_count * N_FEATURES];
    for si in 0..n {
        for j in 0..raw.weeks {
            let src = &raw.values[(si * raw.weeks + j) * N_FEATURES..][..N_FEATURES];
            let dst = &mut values[(si * week_count + j) * N_FEATURES..][..N_FEATURES];
            for (k, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
                *d = stats.normalize(k, s);
            }
        }
    }
    Ok(BehaviorTensor {
        course_id: raw.course_id.clone(),
        students: raw.students.clone(),
        week_count,
        kept_weeks: raw.weeks,
        values,
    })
}

/// One-course convenience: compute, normalize (fitting bounds when none are
/// given) and pad. Multi-course training fits [`NormStats`] over all courses
/// first and calls [`normalize_and_pad`] per course instead.
pub fn assemble_behavior(
    course: &CourseIteration,
    early_level: f64,
    week_count: usize,
    stats: Option<&NormStats>,
    cfg: &FeatureConfig,
) -> Result<(BehaviorTensor, NormStats)> {
    let raw = compute_raw(course, early_level, cfg)?;
    let stats = match stats {
        Some(s) => {
            s.check_names()?;
            s.clone()
        }
        None => NormStats::fit([&raw])?,
    };
    let tensor = normalize_and_pad(&raw, &stats, week_count)?;
    Ok((tensor, stats))
}
