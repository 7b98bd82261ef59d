//! Video-consumption control features: how much of the available material a
//! student watches, replays or abandons week by week, how often each player
//! action fires, and how long seeks and pauses last.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{mean, pstd, WeekView};
use crate::datamodel::Action;

pub(crate) fn compute(v: &WeekView) -> [f64; 22] {
    let mut loads = 0.0;
    let mut plays = 0.0;
    let mut pauses = 0.0;
    let mut stops = 0.0;
    let mut seek_back = 0.0;
    let mut seek_fwd = 0.0;
    let mut speed = 0.0;
    let mut seek_lengths = Vec::new();
    let mut speedup_times = Vec::new();
    for (ev, &t) in v.events.iter().zip(v.times) {
        match ev.action {
            Action::VideoLoad => loads += 1.0,
            Action::VideoPlay => plays += 1.0,
            Action::VideoPause => pauses += 1.0,
            Action::VideoStop => stops += 1.0,
            Action::VideoSeekBackward => seek_back += 1.0,
            Action::VideoSeekForward => seek_fwd += 1.0,
            Action::VideoSpeedChange => speed += 1.0,
            Action::QuizSubmit => {}
        }
        if ev.action.is_seek() {
            if let Some(s) = ev.seek_seconds {
                seek_lengths.push(libm::fabs(s));
            }
        }
        if ev.action == Action::VideoSeekForward {
            speedup_times.push(t);
        }
    }
    let video_clicks = loads + plays + pauses + stops + seek_back + seek_fwd + speed;

    let (watched, replayed, interrupted) = weekly_proportions(v);
    let pause_durations = pause_durations(v);
    let ew = v.elapsed_weeks();

    [
        loads,
        video_clicks,
        mean(&watched),
        pstd(&watched),
        mean(&replayed),
        pstd(&replayed),
        mean(&interrupted),
        pstd(&interrupted),
        video_clicks / ew,
        loads / ew,
        plays / ew,
        pauses / ew,
        stops / ew,
        seek_back / ew,
        seek_fwd / ew,
        speed / ew,
        mean(&seek_lengths),
        pstd(&seek_lengths),
        mean(&pause_durations),
        pstd(&pause_durations),
        mean(&speedup_times),
        pstd(&speedup_times),
    ]
}

/// Per elapsed week, the fraction of the videos released so far that were
/// watched (any Play), replayed (two or more Plays) or interrupted (a Pause
/// or Stop not followed by another Play inside the same week). Weeks with no
/// released videos score zero.
fn weekly_proportions(v: &WeekView) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut watched = Vec::with_capacity(v.week + 1);
    let mut replayed = Vec::with_capacity(v.week + 1);
    let mut interrupted = Vec::with_capacity(v.week + 1);
    for w in 0..=v.week {
        let available = v.sched.videos_available(w);
        if available == 0 {
            watched.push(0.0);
            replayed.push(0.0);
            interrupted.push(0.0);
            continue;
        }
        // per released video: (play count, last play t, last pause/stop t)
        let mut state: BTreeMap<&str, (u32, i64, Option<i64>)> = BTreeMap::new();
        for ev in v.events {
            if v.week_of(ev) != w || !ev.action.is_video() {
                continue;
            }
            match v.sched.videos.get(ev.object.as_str()) {
                Some(&(release_week, _)) if release_week as usize <= w => {}
                _ => continue,
            }
            let entry = state.entry(&ev.object).or_insert((0, i64::MIN, None));
            match ev.action {
                Action::VideoPlay => {
                    entry.0 += 1;
                    entry.1 = ev.t;
                }
                Action::VideoPause | Action::VideoStop => entry.2 = Some(ev.t),
                _ => {}
            }
        }
        let n = available as f64;
        watched.push(state.values().filter(|s| s.0 >= 1).count() as f64 / n);
        replayed.push(state.values().filter(|s| s.0 >= 2).count() as f64 / n);
        let abandoned = state
            .values()
            .filter(|s| matches!(s.2, Some(t) if t > s.1))
            .count();
        interrupted.push(abandoned as f64 / n);
    }
    (watched, replayed, interrupted)
}

/// Seconds from each Pause to the next event on the same video, capped like
/// within-session gaps; a pause nothing follows gets the terminal credit.
fn pause_durations(v: &WeekView) -> Vec<f64> {
    let cap = v.cfg.session_gap_s as f64;
    let mut out = Vec::new();
    for (i, ev) in v.events.iter().enumerate() {
        if ev.action != Action::VideoPause {
            continue;
        }
        let next = v.events[i + 1..].iter().find(|e| e.object == ev.object);
        out.push(match next {
            Some(n) => {
                let gap = (n.t - ev.t) as f64;
                if gap < cap {
                    gap
                } else {
                    cap
                }
            }
            None => v.cfg.terminal_credit_s,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{cell, oracle_raw};
    use approx::assert_relative_eq;

    #[test]
    fn cumulative_click_counts_by_hand() {
        let raw = oracle_raw();
        assert_eq!(cell(&raw, "alice", 0, "Control.TotalClicksVideoLoad"), 2.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.TotalClicksVideo"), 8.0);
        // loads: v1 and v2 in week 0, then v3 and v1 again in week 1
        assert_eq!(cell(&raw, "alice", 1, "Control.TotalClicksVideoLoad"), 4.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.TotalClicksVideo"), 15.0);
    }

    #[test]
    fn watched_replayed_interrupted_proportions_by_hand() {
        let raw = oracle_raw();
        // week 0: two videos out, both played; v1 played twice; v2 stopped
        // without another play
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgWatchedWeeklyProp"), 1.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.StdWatchedWeeklyProp"), 0.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgReplayedWeeklyProp"), 0.5);
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgInterruptedWeeklyProp"), 0.5);
        // week 1: three videos out; only v3 played (twice); the v1 pause has
        // no later play that week
        let wk1 = 1.0 / 3.0;
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Control.AvgWatchedWeeklyProp"),
            (1.0 + wk1) / 2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Control.StdWatchedWeeklyProp"),
            (1.0 - wk1) / 2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Control.AvgReplayedWeeklyProp"),
            (0.5 + wk1) / 2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Control.StdReplayedWeeklyProp"),
            (0.5 - wk1) / 2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            cell(&raw, "alice", 1, "Control.AvgInterruptedWeeklyProp"),
            (0.5 + wk1) / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn action_frequencies_divide_by_elapsed_weeks() {
        let raw = oracle_raw();
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventVideo"), 8.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventLoad"), 2.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventPlay"), 3.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventPause"), 1.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventStop"), 1.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventSeekBackward"), 0.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventSeekForward"), 1.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.FrequencyEventSpeedChange"), 0.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventVideo"), 7.5);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventLoad"), 2.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventPlay"), 3.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventPause"), 1.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventStop"), 0.5);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventSeekBackward"), 0.5);
        assert_eq!(cell(&raw, "alice", 1, "Control.FrequencyEventSeekForward"), 0.5);
    }

    #[test]
    fn seek_lengths_use_magnitudes() {
        let raw = oracle_raw();
        // +30 s forward in week 0; -10 s backward joins in week 1
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgSeekLength"), 30.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.StdSeekLength"), 0.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.AvgSeekLength"), 20.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.StdSeekLength"), 10.0);
    }

    #[test]
    fn pause_durations_by_hand() {
        let raw = oracle_raw();
        // week 0: pause on v1 resolved by a play 300 s later
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgPauseDuration"), 300.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.StdPauseDuration"), 0.0);
        // week 1 adds a trailing pause that only earns the terminal credit
        assert_eq!(cell(&raw, "alice", 1, "Control.AvgPauseDuration"), 180.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.StdPauseDuration"), 120.0);
    }

    #[test]
    fn speedup_time_uses_session_attribution() {
        let raw = oracle_raw();
        // the lone SeekForward sits 300 s before the next event
        assert_eq!(cell(&raw, "alice", 0, "Control.AvgTimeSpeedingUp"), 300.0);
        assert_eq!(cell(&raw, "alice", 0, "Control.StdTimeSpeedingUp"), 0.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.AvgTimeSpeedingUp"), 300.0);
        assert_eq!(cell(&raw, "alice", 1, "Control.StdTimeSpeedingUp"), 0.0);
    }
}
