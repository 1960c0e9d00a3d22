//! Specification frontend: a Tamarin-compatible dialect with format-string
//! macros, rule role attributes, reserved action symbols (Trig / Hint / Eq /
//! Emit) and an `#ifdef` preprocessor.

mod elaborate;
mod lexer;
mod parser;
mod printer;

pub use elaborate::{
    elaborate, select_role, Elaborated, Equality, ExtendedRule, Trigger,
};
pub use printer::print_spec;

use std::collections::{BTreeMap, BTreeSet};

use crate::formats::{FormatError, FormatRegistry};
use crate::term::{Fact, Term};

/// Reserved prefix for generated rule, fact and variable names.
pub const RESERVED_PREFIX: &str = "__";

#[derive(Debug, thiserror::Error)]
pub enum SpecError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("rule {rule}: {msg}")]
    Rule { rule: String, msg: String },
    #[error("{0}")]
    Validate(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl SpecError {
    pub(crate) fn syntax(line: usize, msg: impl Into<String>) -> Self {
        SpecError::Syntax { line, msg: msg.into() }
    }
}

/// Execution mode declared by a specification file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rewrite,
}

/// An action fact as written in the source: arguments may be tuples, which
/// stay flat for the reserved symbols and fold to pairs otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionArg {
    Term(Term),
    Tuple(Vec<Term>),
}

#[derive(Debug, Clone, Eq)]
pub struct ActionFact {
    pub name: String,
    pub args: Vec<ActionArg>,
    pub line: usize,
}

// Structural equality ignores source positions.
impl PartialEq for ActionFact {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.args == other.args
    }
}

/// A rule as parsed, with let bindings still unexpanded.
#[derive(Debug, Clone, Eq)]
pub struct RuleAst {
    pub name: String,
    pub role: Option<String>,
    pub lets: Vec<(String, Term)>,
    pub premise: Vec<Fact>,
    pub actions: Vec<ActionFact>,
    pub conclusion: Vec<Fact>,
    pub line: usize,
}

impl PartialEq for RuleAst {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.role == other.role
            && self.lets == other.lets
            && self.premise == other.premise
            && self.actions == other.actions
            && self.conclusion == other.conclusion
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpecFile {
    pub name: Option<String>,
    /// Declared function symbols with arities. Symbols shadowed by a macro
    /// of the same name resolve to formats inside rules.
    pub functions: BTreeMap<String, usize>,
    /// Verification equations, stored verbatim and never interpreted.
    pub equations: Vec<(Term, Term)>,
    pub formats: FormatRegistry,
    pub mode: Option<Mode>,
    pub rules: Vec<RuleAst>,
    /// Preprocessor flags the file was parsed under.
    pub flags: BTreeSet<String>,
    pub warnings: Vec<String>,
}

/// Parses a specification from source text under the given preprocessor
/// flags.
pub fn parse_spec(source: &str, flags: &BTreeSet<String>) -> Result<SpecFile, SpecError> {
    let effective = lexer::preprocess(source, flags)?;
    let tokens = lexer::lex(&effective)?;
    let mut spec = parser::parse(tokens)?;
    spec.flags = flags.clone();
    Ok(spec)
}
