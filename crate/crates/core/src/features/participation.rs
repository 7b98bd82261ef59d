//! Attendance and mastery features over the graded quizzes and scheduled
//! videos: how well and how promptly a student passes quizzes, and whether
//! they keep up with (or run ahead of) the week's material.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::{mean, WeekView};
use crate::datamodel::Action;

struct QuizState {
    attempts: usize,
    best: f64,
    first: f64,
    gaps: Vec<f64>,
    last_t: i64,
}

pub(crate) fn compute(v: &WeekView) -> [f64; 7] {
    let mut quizzes: BTreeMap<&str, QuizState> = BTreeMap::new();
    let mut watched: BTreeSet<&str> = BTreeSet::new();
    for ev in v.events {
        match ev.action {
            Action::QuizSubmit if v.sched.quizzes.contains_key(ev.object.as_str()) => {
                let grade = ev.grade.unwrap_or(0.0);
                let state = quizzes.entry(&ev.object).or_insert(QuizState {
                    attempts: 0,
                    best: grade,
                    first: grade,
                    gaps: Vec::new(),
                    last_t: ev.t,
                });
                if state.attempts > 0 {
                    state.gaps.push((ev.t - state.last_t) as f64);
                    state.best = state.best.max(grade);
                }
                state.attempts += 1;
                state.last_t = ev.t;
            }
            Action::VideoPlay if v.sched.videos.contains_key(ev.object.as_str()) => {
                watched.insert(&ev.object);
            }
            _ => {}
        }
    }

    let pass = v.cfg.pass_threshold;
    let passed: Vec<(&str, &QuizState)> = quizzes
        .iter()
        .filter(|(_, s)| s.best >= pass)
        .map(|(o, s)| (*o, s))
        .collect();

    let strengths: Vec<f64> = passed
        .iter()
        .map(|(_, s)| s.best / s.attempts as f64)
        .collect();
    let alignment = passed
        .iter()
        .filter(|(object, _)| v.sched.quizzes[*object] as usize == v.week)
        .count() as f64;
    let anticipation = quizzes
        .keys()
        .filter(|object| v.sched.quizzes[**object] as usize > v.week)
        .count() as f64;
    let content_alignment = watched
        .iter()
        .filter(|object| v.sched.videos[**object].0 as usize == v.week)
        .count() as f64;
    let content_anticipation = watched
        .iter()
        .filter(|object| v.sched.videos[**object].0 as usize > v.week)
        .count() as f64;
    let all_gaps: Vec<f64> = quizzes.values().flat_map(|s| s.gaps.iter().copied()).collect();
    let first_try_max = passed.iter().filter(|(_, s)| s.first >= 1.0).count();
    let shape = if passed.is_empty() {
        0.0
    } else {
        first_try_max as f64 / passed.len() as f64
    };

    [
        mean(&strengths),
        alignment,
        anticipation,
        content_alignment,
        content_anticipation,
        mean(&all_gaps),
        shape,
    ]
}
