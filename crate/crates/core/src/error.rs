use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("link {link} out of range for a topology with {n_links} links")]
    UnknownLink { link: usize, n_links: usize },

    #[error("distance must be strictly positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing fading gain for receiver {receiver} / transmitter {transmitter}")]
    MissingGain { receiver: usize, transmitter: usize },

    #[error("topology has no links")]
    EmptyTopology,

    #[error("instance too large for exhaustive enumeration: {n_links} links (limit {limit})")]
    TooLarge { n_links: usize, limit: usize },

    #[error("invalid decision schedule: links {0} and {1} interact")]
    InvalidDecisionSchedule(usize, usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
