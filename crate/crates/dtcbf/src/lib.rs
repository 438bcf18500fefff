//! File formats, reports and the command-line front end around
//! [`dtcbf_core`].

pub mod builtins;
pub mod cli;
pub mod exec;
pub mod format;
pub mod report;

pub use builtins::{builtin, resolve};
pub use format::{load_problem, parse_problem, LoadError, ProblemFile, SynthesisSection};
