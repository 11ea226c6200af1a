use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("{op}: batch of {got} rows is too small (need at least {min})")]
    BatchTooSmall {
        op: &'static str,
        got: usize,
        min: usize,
    },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol order violation: {0}")]
    ProtocolOrder(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("round {round}, epoch {epoch}, client {client}: {source}")]
    Party {
        round: usize,
        epoch: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_party(self, round: usize, epoch: usize, client: usize) -> Self {
        Error::Party {
            round,
            epoch,
            client,
            source: Box::new(self),
        }
    }
}
