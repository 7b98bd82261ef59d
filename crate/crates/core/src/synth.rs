//! Deterministic synthetic corpus generator with planted ground truth.
//!
//! Students are drawn from four behavioral archetypes. Engaged students show
//! up often, watch the current week's videos and score well; disengaged
//! students drift in rarely and score badly; early dropouts are active in the
//! opening two weeks and then vanish; erratic students are bursty and
//! unpredictable from behavior alone. Labels are sampled per archetype, so
//! behavior carries real but bounded signal.
//!
//! The knob that matters for transfer studies is `coupling`. Erratic
//! students' outcomes follow a per-course tilt computed from the course
//! metadata (level and topic). At coupling 0 the tilt is silent and their
//! pass chance sits at one half; at coupling 1 the metadata nearly decides
//! the outcome. A behavior-only model cannot see the tilt, a metadata-aware
//! model can, which makes the expected gap between the two tunable.
//!
//! Each course set additionally gets an outcome drift that its iterations
//! share but that is invisible in the metadata. Fine-tuning on a prior
//! iteration is the only way to pick it up.
//!
//! Everything is derived from the scenario seed through `derive_seed`, so a
//! config generates the same corpus on every platform, course by course.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Action, CourseIteration, CourseMeta, Event, ItemKind, Label, Language, Level, ScheduleItem,
    StudentId, DAY_SECONDS, WEEK_SECONDS,
};
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, derive_seed_indexed, fnv1a64, rng_from_seed, Rng};

/// 2024-01-01 00:00 UTC, a Monday. All course starts are whole weeks after
/// this, which keeps weekday offsets within a week fixed.
pub const START_ANCHOR: i64 = 1_704_067_200;

const P_PASS_ENGAGED: f64 = 0.92;
const P_PASS_DISENGAGED: f64 = 0.15;
const P_PASS_DROPOUT: f64 = 0.02;
/// Erratic pass chance is 0.5 plus this times the course tilt.
const ERRATIC_SPAN: f64 = 0.45;

/// Weeks in which everyone, dropouts included, is still around.
const OPENING_WEEKS: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Engaged,
    Disengaged,
    EarlyDropout,
    Erratic,
}

pub const ARCHETYPES: [Archetype; 4] = [
    Archetype::Engaged,
    Archetype::Disengaged,
    Archetype::EarlyDropout,
    Archetype::Erratic,
];

/// Population fractions per archetype. Must sum to one; the engaged and
/// disengaged shares are rebalanced per course to land in the scenario's
/// pass-rate band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMix {
    pub engaged: f64,
    pub disengaged: f64,
    pub early_dropout: f64,
    pub erratic: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        ArchetypeMix {
            engaged: 0.34,
            disengaged: 0.25,
            early_dropout: 0.16,
            erratic: 0.25,
        }
    }
}

impl ArchetypeMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.engaged, self.disengaged, self.early_dropout, self.erratic];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(CoreError::config("archetype fractions must lie in [0, 1]"));
        }
        let sum: f64 = parts.iter().sum();
        if libm::fabs(sum - 1.0) > 1e-9 {
            return Err(CoreError::config(format!(
                "archetype mixture sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Distinct courses; each runs `iterations_per_set` times.
    pub course_sets: usize,
    pub iterations_per_set: u32,
    pub students_per_course: usize,
    /// Inclusive range course durations are drawn from, in weeks.
    pub duration_weeks: (u32, u32),
    /// Per-course expected pass rates are drawn from this band, then the
    /// engaged/disengaged split is solved to match.
    pub pass_rate: (f64, f64),
    pub levels: Vec<Level>,
    pub languages: Vec<Language>,
    pub topics: Vec<String>,
    pub mix: ArchetypeMix,
    /// Strength of the metadata-to-outcome link for erratic students, 0 to 1.
    pub coupling: f64,
    /// Half-width of the per-set outcome drift shared by iterations of a set
    /// but absent from the metadata.
    pub set_drift: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Three course sets, two runs each, 200 students per run. Small enough
    /// for an end-to-end pipeline in minutes.
    pub fn small(seed: u64) -> Self {
        ScenarioConfig {
            name: String::from("small"),
            course_sets: 3,
            iterations_per_set: 2,
            students_per_course: 200,
            duration_weeks: (5, 7),
            pass_rate: (0.5, 0.7),
            levels: alloc::vec![Level::Propedeutic, Level::Bachelor, Level::Master],
            languages: alloc::vec![Language::English, Language::French],
            topics: ["algebra", "statistics", "programming", "thermodynamics", "linguistics", "databases"]
                .iter()
                .map(|s| String::from(*s))
                .collect(),
            mix: ArchetypeMix::default(),
            coupling: 0.6,
            set_drift: 0.25,
            seed,
        }
    }

    /// Ten course sets, two runs each, 2000 students per run.
    pub fn medium(seed: u64) -> Self {
        ScenarioConfig {
            students_per_course: 2000,
            course_sets: 10,
            duration_weeks: (6, 10),
            name: String::from("medium"),
            topics: [
                "algebra",
                "statistics",
                "programming",
                "thermodynamics",
                "linguistics",
                "databases",
                "microeconomics",
                "anatomy",
                "optics",
                "chemistry",
            ]
            .iter()
            .map(|s| String::from(*s))
            .collect(),
            ..ScenarioConfig::small(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.course_sets == 0 || self.iterations_per_set == 0 {
            return Err(CoreError::config("need at least one course set and iteration"));
        }
        if self.students_per_course < 20 {
            return Err(CoreError::config(
                "students_per_course below 20 cannot support a stratified filter split",
            ));
        }
        let (dlo, dhi) = self.duration_weeks;
        if dlo < 3 || dlo > dhi || dhi > 52 {
            return Err(CoreError::config(format!(
                "duration_weeks ({dlo}, {dhi}) must satisfy 3 <= lo <= hi <= 52"
            )));
        }
        let (plo, phi) = self.pass_rate;
        if !(plo > 0.0 && plo <= phi && phi < 1.0) {
            return Err(CoreError::config(format!(
                "pass_rate band ({plo}, {phi}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        if self.levels.is_empty() || self.languages.is_empty() || self.topics.is_empty() {
            return Err(CoreError::config("levels, languages and topics must be non-empty"));
        }
        self.mix.validate()?;
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(CoreError::config(format!(
                "coupling {} outside [0, 1]",
                self.coupling
            )));
        }
        if !(0.0..1.0).contains(&self.set_drift) {
            return Err(CoreError::config(format!(
                "set_drift {} outside [0, 1)",
                self.set_drift
            )));
        }
        // The band must be reachable by rebalancing engaged against
        // disengaged when erratic students sit at their neutral pass chance.
        let (lo, hi) = achievable_pass_range(&self.mix, 0.5);
        if phi < lo - 1e-9 || plo > hi + 1e-9 {
            return Err(CoreError::config(format!(
                "infeasible mixture: pass-rate band ({plo}, {phi}) outside the achievable ({lo:.3}, {hi:.3})"
            )));
        }
        Ok(())
    }
}

/// What a course's expected pass rate can be, as a function of the erratic
/// pass chance, when only the engaged/disengaged split is free.
fn achievable_pass_range(mix: &ArchetypeMix, erratic_pass: f64) -> (f64, f64) {
    let base = mix.early_dropout * P_PASS_DROPOUT + mix.erratic * erratic_pass;
    let r = mix.engaged + mix.disengaged;
    (base + r * P_PASS_DISENGAGED, base + r * P_PASS_ENGAGED)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentTruth {
    pub archetype: Archetype,
    pub label: Label,
}

impl StudentTruth {
    pub fn is_early_dropout(&self) -> bool {
        self.archetype == Archetype::EarlyDropout
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CourseTruth {
    /// Planted metadata-to-outcome direction in [-1, 1]; positive pushes
    /// erratic students toward passing. Includes the hidden set drift.
    pub tilt: f64,
    /// 0.5 + ERRATIC_SPAN * tilt, the sampling probability actually used.
    pub erratic_pass_rate: f64,
    /// Engaged share of the engaged+disengaged mass after pass-rate
    /// balancing.
    pub engaged_share: f64,
}

/// Everything the generator decided, keyed by course id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub students: BTreeMap<String, BTreeMap<StudentId, StudentTruth>>,
    pub courses: BTreeMap<String, CourseTruth>,
}

impl GroundTruth {
    pub fn student(&self, course_id: &str, student: &str) -> Option<StudentTruth> {
        self.students.get(course_id).and_then(|m| m.get(student)).copied()
    }
}

/// Behavioral parameters of one archetype.
struct Profile {
    sessions_per_week: f64,
    weekend_prob: f64,
    /// None means no preferred hour; sessions start any time of day.
    peak_hour: Option<i64>,
    /// Range of extra in-session interactions after the opening load/play.
    extra_events: (u32, u32),
    seek_prob: f64,
    /// Chance a week past the opening ones sees any activity at all.
    week_active_prob: f64,
    /// Chance an active week's graded quiz gets submitted.
    submit_prob: f64,
    /// Same, during the opening weeks. Kept near one for everyone who is not
    /// dropping out: a passer with a missing opening grade looks half like a
    /// dropout and blunts the removal filter.
    opening_submit_prob: f64,
    /// Beta parameters for quiz grades.
    grade_shape: (u32, u32),
    /// Days between release and submission.
    submit_delay_days: (i64, i64),
    /// Chance a session is spent on the current week's videos rather than a
    /// random released one.
    current_week_prob: f64,
    /// Chance of a second quiz attempt.
    retry_prob: f64,
}

fn profile(a: Archetype) -> Profile {
    match a {
        Archetype::Engaged => Profile {
            sessions_per_week: 4.0,
            weekend_prob: 0.15,
            peak_hour: Some(19),
            extra_events: (2, 5),
            seek_prob: 0.1,
            week_active_prob: 0.97,
            submit_prob: 0.95,
            opening_submit_prob: 0.995,
            grade_shape: (7, 2),
            submit_delay_days: (0, 2),
            current_week_prob: 0.85,
            retry_prob: 0.25,
        },
        Archetype::Disengaged => Profile {
            sessions_per_week: 1.4,
            weekend_prob: 0.5,
            peak_hour: None,
            extra_events: (0, 2),
            seek_prob: 0.15,
            week_active_prob: 0.8,
            submit_prob: 0.8,
            opening_submit_prob: 0.93,
            grade_shape: (2, 5),
            submit_delay_days: (2, 6),
            current_week_prob: 0.4,
            retry_prob: 0.0,
        },
        Archetype::EarlyDropout => Profile {
            sessions_per_week: 3.0,
            weekend_prob: 0.25,
            peak_hour: Some(20),
            extra_events: (1, 4),
            seek_prob: 0.2,
            week_active_prob: 0.0,
            submit_prob: 0.0,
            opening_submit_prob: 0.0,
            grade_shape: (1, 3),
            submit_delay_days: (0, 2),
            current_week_prob: 0.7,
            retry_prob: 0.0,
        },
        Archetype::Erratic => Profile {
            sessions_per_week: 2.6,
            weekend_prob: 0.5,
            peak_hour: None,
            extra_events: (0, 6),
            seek_prob: 0.5,
            week_active_prob: 0.75,
            submit_prob: 0.85,
            opening_submit_prob: 0.995,
            // Decent weekly grades: their outcome hinges on the course tilt,
            // not the quizzes, and low grades would drag them into the
            // dropout filter's removal zone.
            grade_shape: (5, 2),
            submit_delay_days: (0, 6),
            current_week_prob: 0.5,
            retry_prob: 0.1,
        },
    }
}

fn pass_prob(a: Archetype, erratic_pass: f64) -> f64 {
    match a {
        Archetype::Engaged => P_PASS_ENGAGED,
        Archetype::Disengaged => P_PASS_DISENGAGED,
        Archetype::EarlyDropout => P_PASS_DROPOUT,
        Archetype::Erratic => erratic_pass,
    }
}

/// Knuth inversion; fine for the single-digit rates used here.
fn poisson(rng: &mut Rng, lambda: f64) -> u32 {
    let floor = libm::exp(-lambda);
    let mut k = 0u32;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= floor || k > 200 {
            return k;
        }
        k += 1;
    }
}

/// Gamma(shape, 1) for small integer shapes, as a sum of exponentials.
fn gamma_int(rng: &mut Rng, shape: u32) -> f64 {
    let mut acc = 0.0;
    for _ in 0..shape {
        acc -= libm::log(rng.gen::<f64>().max(1e-300));
    }
    acc
}

fn beta_int(rng: &mut Rng, a: u32, b: u32) -> f64 {
    let x = gamma_int(rng, a);
    x / (x + gamma_int(rng, b))
}

fn level_tilt(level: Level) -> f64 {
    match level {
        Level::Propedeutic => 1.0,
        Level::Bachelor => 0.2,
        Level::Master => -1.0,
    }
}

fn topic_tilt(topic: &str) -> f64 {
    if fnv1a64(topic.as_bytes()) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Metadata-visible part of the tilt.
fn meta_tilt(level: Level, topic: &str) -> f64 {
    0.65 * level_tilt(level) + 0.35 * topic_tilt(topic)
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

struct CoursePlan {
    meta: CourseMeta,
    truth: CourseTruth,
    /// Sampling probabilities per ARCHETYPES entry, post balancing.
    archetype_probs: [f64; 4],
    seed: u64,
}

fn capitalized(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn course_texts(topic: &str, language: Language, duration: u32, variant: usize) -> (String, String, String) {
    let cap = capitalized(topic);
    match language {
        Language::English => {
            let styles = ["Introduction to", "Fundamentals of", "Applied", "Principles of"];
            let title = format!("{} {cap}", styles[variant % styles.len()]);
            let short = format!("A {duration}-week course on {topic} with weekly videos and quizzes.");
            let long = format!(
                "This course develops {topic} from the ground up. Each week pairs \
                 short lecture videos with one graded quiz, and the {topic} toolkit \
                 built along the way is assessed in a final exam."
            );
            (title, short, long)
        }
        Language::French => {
            let styles = ["Introduction a", "Fondements de", "Pratique de", "Principes de"];
            let title = format!("{} {cap}", styles[variant % styles.len()]);
            let short = format!("Un cours de {topic} sur {duration} semaines, videos et quiz hebdomadaires.");
            let long = format!(
                "Ce cours construit {topic} pas a pas. Chaque semaine associe des \
                 videos courtes a un quiz note, et les outils de {topic} acquis en \
                 chemin sont evalues par un examen final."
            );
            (title, short, long)
        }
    }
}

/// Lays out every course of the scenario: metadata, planted tilt and the
/// archetype mixture that lands the sampled pass-rate target.
fn plan_courses(cfg: &ScenarioConfig) -> Result<Vec<CoursePlan>> {
    let mut plans = Vec::new();
    for set_idx in 0..cfg.course_sets {
        let set_seed = derive_seed_indexed(cfg.seed, "course-set", set_idx as u64);
        let mut set_rng = rng_from_seed(set_seed);

        // Round-robin over the vocabularies keeps small scenarios diverse;
        // random draws could collapse three sets onto one level.
        let level = cfg.levels[set_idx % cfg.levels.len()];
        let language = cfg.languages[set_idx % cfg.languages.len()];
        let topic = &cfg.topics[set_idx % cfg.topics.len()];
        let (dlo, dhi) = cfg.duration_weeks;
        let duration = set_rng.gen_range(dlo..=dhi);
        let variant = set_rng.gen_range(0..4usize);
        let drift = if cfg.set_drift > 0.0 {
            set_rng.gen_range(-cfg.set_drift..=cfg.set_drift)
        } else {
            0.0
        };

        let tilt = clamp(cfg.coupling * meta_tilt(level, topic) + drift, -1.0, 1.0);
        let erratic_pass = 0.5 + ERRATIC_SPAN * tilt;
        let (title, short, long) = course_texts(topic, language, duration, variant);

        for iteration in 1..=cfg.iterations_per_set {
            let course_seed = derive_seed_indexed(set_seed, "iteration", iteration as u64);
            let mut course_rng = rng_from_seed(derive_seed(course_seed, "course-plan"));

            let target = course_rng.gen_range(cfg.pass_rate.0..=cfg.pass_rate.1);
            let (lo, hi) = achievable_pass_range(&cfg.mix, erratic_pass);
            let target = clamp(target, lo, hi);
            let r = cfg.mix.engaged + cfg.mix.disengaged;
            let engaged_share = if r == 0.0 {
                0.0
            } else {
                let base = cfg.mix.early_dropout * P_PASS_DROPOUT + cfg.mix.erratic * erratic_pass;
                clamp(
                    (target - base - r * P_PASS_DISENGAGED) / (r * (P_PASS_ENGAGED - P_PASS_DISENGAGED)),
                    0.0,
                    1.0,
                )
            };

            // Iterations of a set run back to back; starts stay week-aligned
            // to the anchor so weekday offsets inside a week never move.
            let start_time = START_ANCHOR
                + 2 * set_idx as i64 * WEEK_SECONDS
                + (iteration as i64 - 1) * (duration as i64 + 2) * WEEK_SECONDS;

            plans.push(CoursePlan {
                meta: CourseMeta {
                    course_set: format!("{topic}-{set_idx:02}"),
                    iteration,
                    duration_weeks: duration,
                    start_time,
                    level,
                    language,
                    title: title.clone(),
                    short_description: short.clone(),
                    long_description: long.clone(),
                },
                truth: CourseTruth {
                    tilt,
                    erratic_pass_rate: erratic_pass,
                    engaged_share,
                },
                archetype_probs: [
                    engaged_share * r,
                    (1.0 - engaged_share) * r,
                    cfg.mix.early_dropout,
                    cfg.mix.erratic,
                ],
                seed: course_seed,
            });
        }
    }
    Ok(plans)
}

fn weekly_schedule(plan: &CoursePlan, rng: &mut Rng) -> Vec<ScheduleItem> {
    let mut schedule = Vec::new();
    for w in 0..plan.meta.duration_weeks {
        let week_start = plan.meta.start_time + w as i64 * WEEK_SECONDS;
        for half in ["a", "b"] {
            schedule.push(ScheduleItem {
                object: format!("v{w:02}{half}"),
                kind: ItemKind::Video,
                release_week: w,
                release_time: week_start + 3600,
                graded: false,
                video_duration: Some(rng.gen_range(420..=1200) as f64),
            });
        }
        // Two graded quizzes per week. Besides giving the weekly features
        // something to count, averaging two grades per column keeps the
        // grade matrix clusters tight, which the removal filter depends on.
        for half in ["a", "b"] {
            schedule.push(ScheduleItem {
                object: format!("q{w:02}{half}"),
                kind: ItemKind::Quiz,
                release_week: w,
                release_time: week_start + 3600,
                graded: true,
                video_duration: None,
            });
        }
    }
    schedule
}

/// Picks a session start within the given week honoring the archetype's
/// weekend and hour-of-day preferences.
fn session_start(rng: &mut Rng, week_start: i64, p: &Profile) -> i64 {
    let day = if rng.gen::<f64>() < p.weekend_prob {
        rng.gen_range(5..7)
    } else {
        rng.gen_range(0..5)
    };
    let hour = match p.peak_hour {
        Some(mu) => (mu + rng.gen_range(-2..=2)).rem_euclid(24),
        None => rng.gen_range(0..24),
    };
    week_start + day * DAY_SECONDS + hour * 3600 + rng.gen_range(0..3600)
}

struct StudentSim<'a> {
    id: StudentId,
    profile: Profile,
    archetype: Archetype,
    plan: &'a CoursePlan,
    videos: &'a [Vec<String>],
    end_time: i64,
    events: Vec<Event>,
}

impl<'a> StudentSim<'a> {
    fn push(&mut self, t: i64, action: Action, object: &str, grade: Option<f64>, seek: Option<f64>) {
        self.events.push(Event {
            student: self.id.clone(),
            t: t.min(self.end_time - 1),
            action,
            object: String::from(object),
            grade,
            seek_seconds: seek,
        });
    }

    fn run_session(&mut self, rng: &mut Rng, week: u32) {
        let start = session_start(
            rng,
            self.plan.meta.start_time + week as i64 * WEEK_SECONDS,
            &self.profile,
        );
        let pool_week = if rng.gen::<f64>() < self.profile.current_week_prob {
            week as usize
        } else {
            rng.gen_range(0..=week as usize)
        };
        let video = &self.videos[pool_week][rng.gen_range(0..self.videos[pool_week].len())];
        let video = video.clone();

        let mut t = start;
        self.push(t, Action::VideoLoad, &video, None, None);
        t += rng.gen_range(5..30);
        self.push(t, Action::VideoPlay, &video, None, None);
        let extras = rng.gen_range(self.profile.extra_events.0..=self.profile.extra_events.1);
        for _ in 0..extras {
            t += rng.gen_range(20..240);
            if rng.gen::<f64>() < self.profile.seek_prob {
                let (action, sign) = if rng.gen_bool(0.5) {
                    (Action::VideoSeekForward, 1.0)
                } else {
                    (Action::VideoSeekBackward, -1.0)
                };
                let span = sign * rng.gen_range(10..120) as f64;
                self.push(t, action, &video, None, Some(span));
            } else {
                let action = match rng.gen_range(0..3u32) {
                    0 => Action::VideoPause,
                    1 => Action::VideoPlay,
                    _ => Action::VideoSpeedChange,
                };
                self.push(t, action, &video, None, None);
            }
        }
        if rng.gen_bool(0.6) {
            t += rng.gen_range(20..240);
            self.push(t, Action::VideoStop, &video, None, None);
        }
    }

    fn submit_quiz(&mut self, rng: &mut Rng, week: u32, quiz: &str) {
        let release = self.plan.meta.start_time + week as i64 * WEEK_SECONDS + 3600;
        let (dlo, dhi) = self.profile.submit_delay_days;
        let t = release + rng.gen_range(dlo..=dhi) * DAY_SECONDS + rng.gen_range(0..DAY_SECONDS);
        let (a, b) = self.profile.grade_shape;
        let grade = beta_int(rng, a, b);
        self.push(t, Action::QuizSubmit, quiz, Some(grade), None);
        if rng.gen::<f64>() < self.profile.retry_prob {
            let retry = beta_int(rng, a, b);
            self.push(t + DAY_SECONDS, Action::QuizSubmit, quiz, Some(grade.max(retry)), None);
        }
    }
}

fn generate_course(plan: &CoursePlan, cfg: &ScenarioConfig) -> (CourseIteration, BTreeMap<StudentId, StudentTruth>) {
    let mut schedule_rng = rng_from_seed(derive_seed(plan.seed, "schedule"));
    let schedule = weekly_schedule(plan, &mut schedule_rng);

    // Video objects by release week, for session content choices.
    let videos: Vec<Vec<String>> = (0..plan.meta.duration_weeks)
        .map(|w| {
            schedule
                .iter()
                .filter(|s| s.kind == ItemKind::Video && s.release_week == w)
                .map(|s| s.object.clone())
                .collect()
        })
        .collect();

    let end_time = plan.meta.start_time + plan.meta.duration_weeks as i64 * WEEK_SECONDS;
    let mut events: BTreeMap<StudentId, Vec<Event>> = BTreeMap::new();
    let mut labels: BTreeMap<StudentId, Label> = BTreeMap::new();
    let mut truths: BTreeMap<StudentId, StudentTruth> = BTreeMap::new();

    for i in 0..cfg.students_per_course {
        let mut rng = rng_from_seed(derive_seed_indexed(plan.seed, "student", i as u64));
        let id = format!("s{i:04}");

        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut archetype = Archetype::Erratic;
        for (k, &a) in ARCHETYPES.iter().enumerate() {
            acc += plan.archetype_probs[k];
            if draw < acc {
                archetype = a;
                break;
            }
        }
        let label = if rng.gen::<f64>() < pass_prob(archetype, plan.truth.erratic_pass_rate) {
            Label::Pass
        } else {
            Label::Fail
        };

        let mut sim = StudentSim {
            id: id.clone(),
            profile: profile(archetype),
            archetype,
            plan,
            videos: &videos,
            end_time,
            events: Vec::new(),
        };

        for week in 0..plan.meta.duration_weeks {
            let opening = week < OPENING_WEEKS;
            let active = if opening {
                // Everyone shows up early; dropouts differ later.
                true
            } else {
                rng.gen::<f64>() < sim.profile.week_active_prob
            };
            if !active {
                continue;
            }
            // Erratic students alternate between binge and near-silence.
            let rate = match sim.archetype {
                Archetype::Erratic => {
                    sim.profile.sessions_per_week * if rng.gen_bool(0.5) { 2.0 } else { 0.35 }
                }
                _ => sim.profile.sessions_per_week,
            };
            let mut sessions = poisson(&mut rng, rate);
            if week == 0 && sim.archetype == Archetype::EarlyDropout {
                sessions = sessions.max(1);
            }
            for _ in 0..sessions {
                sim.run_session(&mut rng, week);
            }
            let submit_prob = if opening {
                sim.profile.opening_submit_prob
            } else {
                sim.profile.submit_prob
            };
            for half in ["a", "b"] {
                if rng.gen::<f64>() < submit_prob {
                    let quiz = format!("q{week:02}{half}");
                    sim.submit_quiz(&mut rng, week, &quiz);
                }
            }
        }

        sim.events.sort_by_key(|e| e.t);
        if !sim.events.is_empty() {
            events.insert(id.clone(), sim.events);
        }
        labels.insert(id.clone(), label);
        truths.insert(id, StudentTruth { archetype, label });
    }

    (
        CourseIteration {
            meta: plan.meta.clone(),
            schedule,
            events,
            labels,
        },
        truths,
    )
}

/// Generates every course of the scenario along with the planted truth.
/// Courses come out ordered by set then iteration.
pub fn generate_corpus(cfg: &ScenarioConfig) -> Result<(Vec<CourseIteration>, GroundTruth)> {
    cfg.validate()?;
    let plans = plan_courses(cfg)?;
    let mut corpus = Vec::with_capacity(plans.len());
    let mut truth = GroundTruth::default();
    for plan in &plans {
        let (course, students) = generate_course(plan, cfg);
        let id = course.id();
        truth.students.insert(id.clone(), students);
        truth.courses.insert(id, plan.truth);
        corpus.push(course);
    }
    Ok((corpus, truth))
}
