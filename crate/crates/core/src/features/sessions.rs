//! Sessionization of a student's click timeline.
//!
//! Consecutive events closer than the gap threshold belong to one session.
//! A session ends 60 seconds (the terminal credit) after its last event, so
//! a single lonely click still represents a minute of attention.

use alloc::vec::Vec;

/// A maximal run of events with inter-event gaps below the threshold.
/// `first..first + len` indexes into the timestamp slice it was built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Session {
    pub start: i64,
    /// Last event timestamp plus the terminal credit.
    pub end: i64,
    pub first: usize,
    pub len: usize,
}

impl Session {
    pub fn duration(&self) -> f64 {
        (self.end - self.start) as f64
    }
}

/// Splits sorted timestamps into sessions. A gap of exactly `gap_s` already
/// starts a new session (the join condition is strictly "gap < threshold").
pub fn sessionize(ts: &[i64], gap_s: i64, terminal_credit_s: f64) -> Vec<Session> {
    let credit = terminal_credit_s as i64;
    let mut out = Vec::new();
    let mut first = 0usize;
    for i in 0..ts.len() {
        debug_assert!(i == 0 || ts[i] >= ts[i - 1], "timestamps must be sorted");
        let last_of_run = i + 1 == ts.len() || ts[i + 1] - ts[i] >= gap_s;
        if last_of_run {
            out.push(Session {
                start: ts[first],
                end: ts[i] + credit,
                first,
                len: i + 1 - first,
            });
            first = i + 1;
        }
    }
    out
}

/// Time attributed to each event: the gap to the next event in the same
/// session (capped), or the terminal credit for a session's last event.
/// Summing the result over a session gives exactly its duration.
pub fn event_times(ts: &[i64], sessions: &[Session], gap_s: i64, terminal_credit_s: f64) -> Vec<f64> {
    let cap = gap_s as f64;
    let mut out = Vec::with_capacity(ts.len());
    for s in sessions {
        for i in s.first..s.first + s.len {
            if i + 1 < s.first + s.len {
                let gap = (ts[i + 1] - ts[i]) as f64;
                out.push(if gap < cap { gap } else { cap });
            } else {
                out.push(terminal_credit_s);
            }
        }
    }
    out
}
