use super::InteractionLog;
use crate::error::{Error, Result};

/// Thirty minutes of inactivity closes a session.
pub const DEFAULT_GAP_SECONDS: u64 = 1800;

/// A run of a user's interactions with no gap longer than `gap_seconds`.
///
/// `start..end` indexes into the user's ordered history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub user: u32,
    pub start: usize,
    pub end: usize,
    pub gap_seconds: u64,
}

impl Session {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits every user's history into sessions; a new session starts exactly
/// when the gap to the previous interaction exceeds `gap_seconds`.
pub fn sessionize(log: &InteractionLog, gap_seconds: u64) -> Result<Vec<Session>> {
    if gap_seconds == 0 {
        return Err(Error::Config("gap_seconds must be positive".into()));
    }
    let mut sessions = Vec::new();
    for u in 0..log.n_users() as u32 {
        let hist = log.history(u);
        if hist.is_empty() {
            continue;
        }
        let mut start = 0;
        for p in 1..hist.len() {
            let gap = hist[p].timestamp - hist[p - 1].timestamp;
            if gap as u64 > gap_seconds {
                sessions.push(Session {
                    user: u,
                    start,
                    end: p,
                    gap_seconds,
                });
                start = p;
            }
        }
        sessions.push(Session {
            user: u,
            start,
            end: hist.len(),
            gap_seconds,
        });
    }
    Ok(sessions)
}

/// Position lookup over a session partition.
#[derive(Debug, Clone)]
pub struct SessionIndex {
    // per user: session end for every history position
    end_of: Vec<Vec<usize>>,
}

impl SessionIndex {
    pub fn new(log: &InteractionLog, sessions: &[Session]) -> Self {
        let mut end_of: Vec<Vec<usize>> = (0..log.n_users() as u32)
            .map(|u| vec![0; log.history_len(u)])
            .collect();
        for s in sessions {
            for p in s.start..s.end {
                end_of[s.user as usize][p] = s.end;
            }
        }
        Self { end_of }
    }

    /// Whether another interaction follows `position` inside its session, and
    /// whether `position` is the user's final interaction overall.
    pub fn continues(&self, user: u32, position: usize) -> Option<(bool, bool)> {
        let ends = self.end_of.get(user as usize)?;
        let end = *ends.get(position)?;
        Some((position + 1 < end, position + 1 == ends.len()))
    }
}
