//! Problem files shipped inside the binary.

use std::path::Path;

use crate::format::{load_problem, parse_problem, LoadError, ProblemFile};

pub const BUILTINS: &[(&str, &str)] = &[
    ("poly2d", include_str!("../problems/poly2d.toml")),
    ("linear2d", include_str!("../problems/linear2d.toml")),
    ("cartpole", include_str!("../problems/cartpole.toml")),
];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
}

pub fn builtin(name: &str) -> Result<ProblemFile, LoadError> {
    let src = builtin_source(name).ok_or_else(|| LoadError::UnknownBuiltin(name.to_owned()))?;
    parse_problem(src, &format!("<builtin {name}>"))
}

/// A builtin name, or else a path to a problem file.
pub fn resolve(spec: &str) -> Result<ProblemFile, LoadError> {
    match builtin_source(spec) {
        Some(_) => builtin(spec),
        None if Path::new(spec).exists() => load_problem(Path::new(spec)),
        None if spec.ends_with(".toml") || spec.contains('/') => load_problem(Path::new(spec)),
        None => Err(LoadError::UnknownBuiltin(spec.to_owned())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_loads() {
        for (name, _) in BUILTINS {
            let f = builtin(name).unwrap();
            assert_eq!(f.problem.name, *name);
            assert!(f.candidate.is_some());
        }
    }

    #[test]
    fn shipped_files_match_embedded_copies() {
        for (name, src) in BUILTINS {
            let path = Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("problems")
                .join(format!("{name}.toml"));
            assert_eq!(std::fs::read_to_string(path).unwrap(), *src);
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin("nope"), Err(LoadError::UnknownBuiltin(_))));
        assert!(matches!(resolve("nope"), Err(LoadError::UnknownBuiltin(_))));
    }
}
