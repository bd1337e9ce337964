//! Command implementations behind the `evtrack` binary. Each command
//! returns a [`CmdError`] whose code becomes the process exit status:
//! 2 for parse/config errors, 3 for tracking divergence, 4 for acceptance
//! failure.

pub mod commands;

#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn config(message: impl Into<String>) -> Self {
        CmdError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn divergence(message: impl Into<String>) -> Self {
        CmdError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn acceptance(message: impl Into<String>) -> Self {
        CmdError {
            code: 4,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}
