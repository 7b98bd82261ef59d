//! Volume-of-activity features: session counts and durations, click totals
//! split by weekday/weekend and video/problem, and time-on-task sums.
//!
//! Counts and times are cumulative up to the scored week except
//! TotalClicksProblem and TotalClicksVideo, which cover the scored week only.

use alloc::vec::Vec;

use super::{mean, pstd, Session, WeekView};
use crate::datamodel::{is_weekend, Action};

pub(crate) fn compute(v: &WeekView) -> [f64; 13] {
    let durations: Vec<f64> = v.sessions.iter().map(Session::duration).collect();
    let between: Vec<f64> = v
        .sessions
        .windows(2)
        .map(|w| (w[1].start - w[0].end) as f64)
        .collect();

    let mut weekend = 0.0;
    let mut problem_clicks_week = 0.0;
    let mut video_clicks_week = 0.0;
    let mut problem_time = 0.0;
    let mut video_time = 0.0;
    for (ev, &t) in v.events.iter().zip(v.times) {
        if is_weekend(ev.t) {
            weekend += 1.0;
        }
        if ev.action == Action::QuizSubmit {
            problem_time += t;
        } else {
            video_time += t;
        }
        if v.week_of(ev) == v.week {
            if ev.action == Action::QuizSubmit {
                problem_clicks_week += 1.0;
            } else if ev.action.is_video() {
                video_clicks_week += 1.0;
            }
        }
    }
    let weekday = v.events.len() as f64 - weekend;

    [
        v.sessions.len() as f64,
        if weekday == 0.0 { 0.0 } else { weekend / weekday },
        mean(&durations),
        durations.iter().sum(),
        pstd(&durations),
        pstd(&between),
        v.events.len() as f64,
        problem_clicks_week,
        video_clicks_week,
        weekday,
        weekend,
        problem_time,
        video_time,
    ]
}
