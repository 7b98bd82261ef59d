//! Study-habit regularity: lecture-viewing delay, concentration of activity
//! on one hour of the day, and repetition of the daily hour profile.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{mean, WeekView};
use crate::datamodel::{day_index, hour_of_day, Action};

pub(crate) fn compute(v: &WeekView) -> [f64; 3] {
    [delay_lecture(v), peak_time(v), periodicity(v)]
}

/// Mean hours between a video's release and the student's first Load or Play
/// of it, over videos viewed so far. Views before release count negatively.
fn delay_lecture(v: &WeekView) -> f64 {
    let mut first_view: BTreeMap<&str, i64> = BTreeMap::new();
    for ev in v.events {
        if matches!(ev.action, Action::VideoLoad | Action::VideoPlay)
            && v.sched.videos.contains_key(ev.object.as_str())
        {
            first_view.entry(&ev.object).or_insert(ev.t);
        }
    }
    let delays: Vec<f64> = first_view
        .iter()
        .map(|(object, &t)| {
            let (_, release) = v.sched.videos[*object];
            (t - release) as f64 / 3_600.0
        })
        .collect();
    mean(&delays)
}

/// One minus the normalized entropy of the hour-of-day click histogram:
/// 1 when all clicks share an hour, 0 when they are uniform over 24 hours.
fn peak_time(v: &WeekView) -> f64 {
    let mut hist = [0.0f64; 24];
    for ev in v.events {
        hist[hour_of_day(ev.t)] += 1.0;
    }
    let total = v.events.len() as f64;
    if total == 0.0 {
        return 0.0;
    }
    let mut entropy = 0.0;
    for &c in &hist {
        if c > 0.0 {
            let p = c / total;
            entropy -= p * libm::log(p);
        }
    }
    1.0 - entropy / libm::log(24.0)
}

/// Mean pairwise cosine similarity between the hour histograms of all active
/// days. Zero with fewer than two active days.
fn periodicity(v: &WeekView) -> f64 {
    let mut days: BTreeMap<i64, [f64; 24]> = BTreeMap::new();
    for ev in v.events {
        days.entry(day_index(ev.t)).or_insert([0.0; 24])[hour_of_day(ev.t)] += 1.0;
    }
    mean_pairwise_cosine(days.values())
}

/// With each histogram scaled to a unit vector u_d, the pairwise cosine sum
/// collapses to (|sum u_d|^2 - D) / 2, avoiding the quadratic pair loop.
pub(crate) fn mean_pairwise_cosine<'a, I>(days: I) -> f64
where
    I: IntoIterator<Item = &'a [f64; 24]>,
{
    let mut sum = [0.0f64; 24];
    let mut d = 0usize;
    for hist in days {
        let norm = libm::sqrt(hist.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        for (s, &h) in sum.iter_mut().zip(hist) {
            *s += h / norm;
        }
        d += 1;
    }
    if d < 2 {
        return 0.0;
    }
    let sq: f64 = sum.iter().map(|x| x * x).sum();
    (sq - d as f64) / (d as f64 * (d - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{cell, oracle_raw};
    use super::super::{compute_raw, FeatureConfig};
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn lecture_delay_averages_first_views_in_hours() {
        let raw = oracle_raw();
        // week 0: v1 seen 1 h after release, v2 2 h after
        assert_eq!(cell(&raw, "alice", 0, "Regularity.DelayLecture"), 1.5);
        // week 1 adds v3 (+1 h) and v4, played 166.25 h before its release
        assert_eq!(cell(&raw, "alice", 1, "Regularity.DelayLecture"), -40.5625);
    }

    #[test]
    fn peak_time_matches_entropy_by_hand() {
        let raw = oracle_raw();
        // week 0 histogram: 7 clicks at hour 1, 3 at hour 2
        let h = |ps: &[f64]| -> f64 { ps.iter().map(|p| -p * p.ln()).sum() };
        let expect0 = 1.0 - h(&[0.7, 0.3]) / 24f64.ln();
        assert_relative_eq!(
            cell(&raw, "alice", 0, "Regularity.RegPeakTimeDayHour"),
            expect0,
            max_relative = 1e-12
        );
        // week 1: 13 at hour 1, 3 at hour 2, 2 at hour 10
        let expect1 = 1.0 - h(&[13.0 / 18.0, 3.0 / 18.0, 2.0 / 18.0]) / 24f64.ln();
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Regularity.RegPeakTimeDayHour"),
            expect1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn single_hour_concentration_scores_one() {
        use super::super::fixtures::START;
        let mut course = super::super::fixtures::oracle_course();
        let alice = course.events.get_mut("alice").unwrap();
        alice.retain(|e| e.t < START + 2 * 3600);
        assert!(alice.len() >= 2, "fixture should keep the hour-1 events");
        let raw = compute_raw(&course, 0.4, &FeatureConfig::default()).unwrap();
        assert_eq!(cell(&raw, "alice", 0, "Regularity.RegPeakTimeDayHour"), 1.0);
    }

    #[test]
    fn uniform_hours_score_zero() {
        use super::super::fixtures::START;
        use crate::datamodel::{Action, Event};
        let mut course = super::super::fixtures::oracle_course();
        let spread: alloc::vec::Vec<Event> = (0..24)
            .map(|h| Event {
                student: "alice".into(),
                t: START + h * 3600,
                action: Action::VideoLoad,
                object: "v1".into(),
                grade: None,
                seek_seconds: None,
            })
            .collect();
        course.events.insert("alice".into(), spread);
        let raw = compute_raw(&course, 0.4, &FeatureConfig::default()).unwrap();
        assert_relative_eq!(
            cell(&raw, "alice", 0, "Regularity.RegPeakTimeDayHour"),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn periodicity_on_oracle_weeks() {
        let raw = oracle_raw();
        // week 0: two active days in disjoint hours -> orthogonal profiles
        assert_eq!(cell(&raw, "alice", 0, "Regularity.RegPeriodicityDayHour"), 0.0);
        // week 1: four active days, exactly one aligned pair out of six
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Regularity.RegPeriodicityDayHour"),
            1.0 / 6.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn identical_day_profiles_score_one() {
        let a = [2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(mean_pairwise_cosine([&a, &a]), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fewer_than_two_active_days_score_zero() {
        let a = [1.0; 24];
        assert_eq!(mean_pairwise_cosine([&a]), 0.0);
        let none: [&[f64; 24]; 0] = [];
        assert_eq!(mean_pairwise_cosine(none), 0.0);
    }

    #[test]
    fn cosine_identity_matches_naive_pairwise_loop() {
        let mut rng = rng_from_seed(550);
        for _ in 0..20 {
            let n_days = rng.gen_range(2..8);
            let days: alloc::vec::Vec<[f64; 24]> = (0..n_days)
                .map(|_| {
                    let mut h = [0.0; 24];
                    for _ in 0..rng.gen_range(1..30) {
                        h[rng.gen_range(0..24)] += 1.0;
                    }
                    h
                })
                .collect();
            let naive = {
                let unit: alloc::vec::Vec<[f64; 24]> = days
                    .iter()
                    .map(|h| {
                        let n = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let mut u = *h;
                        u.iter_mut().for_each(|x| *x /= n);
                        u
                    })
                    .collect();
                let mut total = 0.0;
                let mut pairs = 0usize;
                for i in 0..unit.len() {
                    for j in i + 1..unit.len() {
                        total += unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();
                        pairs += 1;
                    }
                }
                total / pairs as f64
            };
            assert_relative_eq!(mean_pairwise_cosine(days.iter()), naive, epsilon = 1e-10);
        }
    }
}
