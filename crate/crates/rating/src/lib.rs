//! Blinded A/B rating of infarct segmentations.
//!
//! Each patient's manual and automatic segmentations are shown as arms
//! A and B in an order fixed by the session seed. Raters judge every
//! slice of each arm with one of seven categories and then pick the arm
//! they agree with more. Events go to an append-only log; summaries
//! unblind them afterwards.

pub mod analysis;
pub mod events;
pub mod export;
pub mod model;
pub mod plan;
pub mod render;
pub mod server;
pub mod session;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RatingError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("incomplete ratings: {0}")]
    Incomplete(String),
    #[error("admin token missing or wrong")]
    Unauthorized,
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for RatingError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

pub use analysis::{comparison_eligible, AgreementKind};
pub use events::{EventDraft, EventLog, Payload, RatingEvent};
pub use model::{Arm, CaseAssignment, ComparisonChoice, Method, RatingCategory, TargetClass};
pub use plan::{CaseEntry, ManifestEntry, SessionPlan, CONSENSUS_RATER};
pub use server::{router, AppState, ADMIN_HEADER};
pub use session::{CreateSession, Session, SessionStore};
