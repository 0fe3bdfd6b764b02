use std::fmt;

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {
        $(
            impl From<$t> for CliError {
                fn from(e: $t) -> Self {
                    CliError::data(e.to_string())
                }
            }
        )*
    };
}

data_errors!(
    std::io::Error,
    serde_json::Error,
    vlparse::data::DataError,
    vlparse::model::ModelError,
    vlparse::align::AlignError,
    vlparse::tensor::TensorError,
    vlparse::eval::EvalError,
    vlparse::structure::StructureError
);
