//! Runtime compliance monitoring for protocol implementations specified
//! as multiset rewrite rules over wire-format byte strings.
//!
//! The pipeline: [`spec`] parses a protocol specification (a Tamarin-style
//! theory extended with wire-format macros, triggers and a rewrite-mode
//! marker) into extended rules; [`decompose`] splits every rule so that it
//! performs at most one computation, wiring the pieces together with
//! bookkeeping facts and lookahead hints; [`engine`] evolves a set of
//! configurations by dispatching observed library calls through the
//! decomposed rules; [`rewrite`] chains monitors so that earlier layers
//! abstract library calling conventions into single calls for the final
//! monitor. [`formats`] implements the byte-level codec behind format
//! macros and [`term`] the term and matching machinery everything shares.

pub mod decompose;
pub mod engine;
pub mod event;
pub mod formats;
pub mod rewrite;
pub mod spec;
pub mod term;

pub use decompose::{decompose_for_rewrite, special_rules, split_rule, split_ruleset, DecomposeError};
pub use engine::{
    Configuration, EngineError, MonitorState, Rejection, RunMode, TraceEvent, DEFAULT_MAX_CONFIGS,
};
pub use event::{parse_trace, EventParseError, ProgramEvent};
pub use formats::{FormatDef, FormatError, FormatRegistry};
pub use rewrite::{
    layer_from_spec, LayerError, LayerOutcome, Pipeline, PipelineError, PipelineRejection,
    RewriteLayer, Stage,
};
pub use spec::{
    elaborate, parse_spec, print_spec, select_role, Elaborated, Equality, ExtendedRule, Mode,
    SpecError, SpecFile, Trigger,
};
pub use term::{
    eval_ground, match_value, mgs, multiset_match, Fact, FactMultiset, GroundFact, Sort,
    Substitution, Term, Value, Variable,
};
