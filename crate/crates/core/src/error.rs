//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input had the wrong shape or an index was out of range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value was outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or network document failed to parse or validate.
    #[error("parse error: {0}")]
    Parse(String),

    /// The Newton iteration on the stage equations did not converge.
    #[error(
        "integration failed at step {step}: stage residual {residual:.3e} \
         after {iterations} Newton iterations"
    )]
    Integration {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    /// The stage linear system was singular to working precision.
    #[error("singular stage system at step {step} (condition estimate {condition:.3e})")]
    SingularStageSystem { step: usize, condition: f64 },

    /// A numerical routine produced or encountered an unusable value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A combinatorial guard was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Simulation failed for one of the presumed initial states.
    #[error("initial guess {guess}: {source}")]
    Guess {
        guess: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags an error with the 1-based index of the initial guess it came from.
    pub fn for_guess(self, guess: usize) -> Error {
        Error::Guess {
            guess,
            source: Box::new(self),
        }
    }
}
