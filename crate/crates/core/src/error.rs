use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor extents or element counts disagree.
    Shape { layer: Option<usize>, detail: String },
    /// A value outside its admissible domain was supplied.
    Domain(String),
    /// A loss or objective became NaN or infinite.
    NonFinite { context: &'static str, index: usize },
    /// Class id not below the number of output classes.
    ClassOutOfRange { class: usize, classes: usize },
    /// A layer was addressed that cannot take part in the operation.
    Layer { layer: usize, detail: String },
    /// Permission or bundle does not match the protected model.
    Geometry(String),
    /// A tier holds ciphertext but no key was supplied for it.
    MissingKey { tier: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { layer: Some(l), detail } => write!(f, "shape mismatch at layer {l}: {detail}"),
            Error::Shape { layer: None, detail } => write!(f, "shape mismatch: {detail}"),
            Error::Domain(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { context, index } => write!(f, "non-finite {context} at index {index}"),
            Error::ClassOutOfRange { class, classes } => {
                write!(f, "target class {class} out of range for {classes} outputs")
            }
            Error::Layer { layer, detail } => write!(f, "layer {layer}: {detail}"),
            Error::Geometry(msg) => write!(f, "geometry mismatch: {msg}"),
            Error::MissingKey { tier } => write!(f, "no key for nonempty tier {tier}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
