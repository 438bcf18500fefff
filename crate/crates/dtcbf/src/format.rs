//! TOML problem files.
//!
//! ```toml
//! name = "toy"
//!
//! [system]
//! n = 1
//! m = 1
//! constants = { Ts = 0.1 }
//! f = ["x1 + Ts*u1"]
//!
//! [input]
//! lo = [-1.0]
//! hi = [1.0]
//!
//! [safe]
//! s = "4 - x1^2"
//!
//! [search]
//! states = [1]          # optional, 1-based; defaults to every state
//! lo = [-2.0]
//! hi = [2.0]
//!
//! [candidate]           # optional
//! h = "1 - x1^2"
//! gamma = "lin 0.5"     # "id", "lin c" or a formula in r
//! pi = ["-x1"]          # optional
//!
//! [synthesis]           # optional
//! h_template = "1 - t1*x1^2"
//! pi_templates = ["m1*x1"]
//! gamma = "id"
//! theta_lo = [0.5]
//! theta_hi = [4.0]
//! mu_lo = [-1.0]
//! mu_hi = [-0.1]
//! outer_objective = "t1"
//! outer_constraints = []   # each g(ϑ) ≤ 0
//! admissibility = "symmetric-square"   # or "per-component", "super-ellipsoid"
//! p = 4                                # super-ellipsoid only
//! safe_subset = "inner-bb"             # or "direct"
//! eps_f = 1e-4
//! eps_F = 0.1
//! width_floor = 0.01                   # optional
//! ```
//!
//! Unknown keys are rejected. Formula errors are reported at their line in
//! the file.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use dtcbf_core::expr::{parse, ParseContext};
use dtcbf_core::problem::{Candidate, Gamma, Problem};
use dtcbf_core::synthesis::{AdmissibilityMode, SafeSubsetMode, SynthesisSpec};
use dtcbf_core::{BoxN, Expr, VarRef};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: String,
        #[source]
        source: dtcbf_core::Error,
    },
    #[error("unknown builtin problem `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    name: String,
    system: RawSystem,
    input: RawBounds,
    safe: Option<RawSafe>,
    search: RawSearch,
    candidate: Option<RawCandidate>,
    synthesis: Option<RawSynthesis>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: usize,
    m: usize,
    #[serde(default)]
    constants: BTreeMap<String, f64>,
    f: Vec<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBounds {
    lo: Spanned<Vec<f64>>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSafe {
    s: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSearch {
    states: Option<Spanned<Vec<usize>>>,
    lo: Spanned<Vec<f64>>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    h: Spanned<String>,
    #[serde(default = "identity")]
    gamma: Spanned<String>,
    pi: Option<Vec<Spanned<String>>>,
}

fn identity() -> Spanned<String> {
    Spanned::new(0..0, "id".to_owned())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthesis {
    h_template: Spanned<String>,
    pi_templates: Vec<Spanned<String>>,
    #[serde(default = "identity")]
    gamma: Spanned<String>,
    theta_lo: Spanned<Vec<f64>>,
    theta_hi: Vec<f64>,
    mu_lo: Spanned<Vec<f64>>,
    mu_hi: Vec<f64>,
    outer_objective: Spanned<String>,
    #[serde(default)]
    outer_constraints: Vec<Spanned<String>>,
    admissibility: Spanned<String>,
    p: Option<u32>,
    safe_subset: Spanned<String>,
    eps_f: f64,
    #[serde(rename = "eps_F")]
    eps_big_f: f64,
    width_floor: Option<f64>,
}

/// Synthesis settings read from a `[synthesis]` section.
#[derive(Clone, Debug)]
pub struct SynthesisSection {
    pub spec: SynthesisSpec,
    pub width_floor: Option<f64>,
}

/// Everything one problem file declares.
#[derive(Clone, Debug)]
pub struct ProblemFile {
    pub problem: Problem,
    pub candidate: Option<Candidate>,
    pub synthesis: Option<SynthesisSection>,
}

/// Upper end of the range γ is checked on.
const GAMMA_CHECK_RANGE: f64 = 10.0;

struct Loader<'a> {
    path: &'a str,
    text: &'a str,
    constants: &'a BTreeMap<String, f64>,
}

impl Loader<'_> {
    fn line_of(&self, span: &Range<usize>) -> usize {
        1 + self.text.as_bytes()[..span.start.min(self.text.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
    }

    fn schema(&self, span: &Range<usize>, message: impl Into<String>) -> LoadError {
        LoadError::Schema {
            path: self.path.to_owned(),
            line: self.line_of(span),
            message: message.into(),
        }
    }

    fn invalid(&self, source: dtcbf_core::Error) -> LoadError {
        LoadError::Invalid {
            path: self.path.to_owned(),
            source,
        }
    }

    fn ctx(&self, n: usize, m: usize, k: usize, j: usize) -> ParseContext {
        let mut ctx = ParseContext::new(n, m, k, j);
        ctx.constants = self.constants.clone();
        ctx
    }

    fn formula(&self, src: &Spanned<String>, ctx: &ParseContext) -> Result<Expr, LoadError> {
        parse(src.get_ref(), ctx).map_err(|e| LoadError::Schema {
            path: self.path.to_owned(),
            // formula lines count from the line holding the string
            line: self.line_of(&src.span()) + e.line - 1,
            message: format!("column {} of formula: {}", e.column, e.kind),
        })
    }

    fn gamma(&self, src: &Spanned<String>) -> Result<Gamma, LoadError> {
        let text = src.get_ref().trim();
        let gamma = if text == "id" {
            Gamma::Identity
        } else if let Some(c) = text.strip_prefix("lin ") {
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| self.schema(&src.span(), format!("bad gamma `{text}`")))?;
            Gamma::Linear(c)
        } else {
            let ctx = self.ctx(0, 0, 0, 0).with_alias("r", VarRef::state(0));
            Gamma::General(self.formula(src, &ctx)?)
        };
        gamma
            .validate(GAMMA_CHECK_RANGE, 64)
            .map_err(|e| self.invalid(e))?;
        Ok(gamma)
    }

    fn bounds(
        &self,
        lo: &Spanned<Vec<f64>>,
        hi: &[f64],
        dim: usize,
        what: &str,
    ) -> Result<BoxN, LoadError> {
        if lo.get_ref().len() != dim || hi.len() != dim {
            return Err(self.schema(&lo.span(), format!("{what} bounds need {dim} entries")));
        }
        BoxN::from_bounds(lo.get_ref(), hi).map_err(|e| self.invalid(e))
    }
}

pub fn parse_problem(text: &str, path: &str) -> Result<ProblemFile, LoadError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| LoadError::Schema {
        path: path.to_owned(),
        line: e.span().map_or(1, |s| {
            1 + text[..s.start.min(text.len())].matches('\n').count()
        }),
        message: e.message().to_owned(),
    })?;
    let l = Loader {
        path,
        text,
        constants: &raw.system.constants,
    };
    let (n, m) = (raw.system.n, raw.system.m);
    let sys = l.ctx(n, m, 0, 0);
    let f = raw
        .system
        .f
        .iter()
        .map(|e| l.formula(e, &sys))
        .collect::<Result<Vec<_>, _>>()?;
    let states = l.ctx(n, 0, 0, 0);
    let s = raw
        .safe
        .as_ref()
        .map(|s| l.formula(&s.s, &states))
        .transpose()?;
    let search_states: Vec<usize> = match &raw.search.states {
        Some(v) => {
            if v.get_ref().iter().any(|&i| i == 0 || i > n) {
                return Err(l.schema(&v.span(), "search states are 1-based state indices"));
            }
            v.get_ref().iter().map(|i| i - 1).collect()
        }
        None => (0..n).collect(),
    };
    let problem = Problem {
        name: raw.name.clone(),
        n,
        m,
        f,
        u_box: l.bounds(&raw.input.lo, &raw.input.hi, m, "input")?,
        s,
        search_box: l.bounds(
            &raw.search.lo,
            &raw.search.hi,
            search_states.len(),
            "search",
        )?,
        search_states,
    };
    problem.validate().map_err(|e| l.invalid(e))?;

    let candidate = match &raw.candidate {
        Some(c) => {
            let cand = Candidate {
                h: l.formula(&c.h, &states)?,
                gamma: l.gamma(&c.gamma)?,
                policy: c
                    .pi
                    .as_ref()
                    .map(|v| {
                        v.iter()
                            .map(|e| l.formula(e, &states))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .transpose()?,
            };
            cand.validate(&problem).map_err(|e| l.invalid(e))?;
            Some(cand)
        }
        None => None,
    };

    let synthesis = match &raw.synthesis {
        Some(sy) => Some(synthesis_section(&l, sy, &problem)?),
        None => None,
    };
    Ok(ProblemFile {
        problem,
        candidate,
        synthesis,
    })
}

fn synthesis_section(
    l: &Loader<'_>,
    sy: &RawSynthesis,
    problem: &Problem,
) -> Result<SynthesisSection, LoadError> {
    let (n, k, j) = (
        problem.n,
        sy.theta_lo.get_ref().len(),
        sy.mu_lo.get_ref().len(),
    );
    let admissibility = match (sy.admissibility.get_ref().as_str(), sy.p) {
        ("per-component", None) => AdmissibilityMode::PerComponentMinMax,
        ("symmetric-square", None) => AdmissibilityMode::SymmetricSquare,
        ("super-ellipsoid", Some(p)) => AdmissibilityMode::SuperEllipsoid(p),
        ("super-ellipsoid", None) => {
            return Err(l.schema(&sy.admissibility.span(), "super-ellipsoid needs `p`"))
        }
        (other, _) => {
            return Err(l.schema(
                &sy.admissibility.span(),
                format!("unknown admissibility mode `{other}`"),
            ));
        }
    };
    let safe_subset = match sy.safe_subset.get_ref().as_str() {
        "inner-bb" => SafeSubsetMode::InnerBB,
        "direct" => SafeSubsetMode::DirectParamConstraint,
        other => {
            return Err(l.schema(
                &sy.safe_subset.span(),
                format!("unknown safe-subset mode `{other}`"),
            ))
        }
    };
    let h_ctx = l.ctx(n, 0, k, 0);
    let pi_ctx = l.ctx(n, 0, 0, j);
    let outer = l.ctx(0, 0, k, 0);
    let spec = SynthesisSpec {
        problem: problem.clone(),
        h_template: l.formula(&sy.h_template, &h_ctx)?,
        pi_template: sy
            .pi_templates
            .iter()
            .map(|e| l.formula(e, &pi_ctx))
            .collect::<Result<_, _>>()?,
        gamma: l.gamma(&sy.gamma)?,
        theta_box: l.bounds(&sy.theta_lo, &sy.theta_hi, k, "theta")?,
        mu_box: l.bounds(&sy.mu_lo, &sy.mu_hi, j, "mu")?,
        outer_objective: l.formula(&sy.outer_objective, &outer)?,
        outer_constraints: sy
            .outer_constraints
            .iter()
            .map(|e| l.formula(e, &outer))
            .collect::<Result<_, _>>()?,
        admissibility,
        safe_subset,
        eps_f: sy.eps_f,
        eps_big_f: sy.eps_big_f,
    };
    spec.validate().map_err(|e| l.invalid(e))?;
    Ok(SynthesisSection {
        spec,
        width_floor: sy.width_floor,
    })
}

pub fn load_problem(path: &Path) -> Result<ProblemFile, LoadError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_problem(&text, &shown)
}
