//! Cross-checking oracles for the monitor: an exhaustive symbolic
//! executor over the uninterpreted term fragment, concretization of
//! symbolic runs into byte-level event streams (and the reverse guided
//! search), and a generator of random small specifications.
//!
//! Everything here is deliberately independent of the engine's matching
//! and bookkeeping: states hold ground terms instead of bytes, rules fire
//! without lookahead or eager silent steps, and equality is structural.
//! Agreement between this executor and the monitor is what the
//! conformance test suites check.

pub mod conform;
pub mod genspec;
pub mod symbolic;

pub use conform::{concretize_stream, find_matching_run, stream_mutations, Concretizer, MatchOutcome};
pub use genspec::gen_spec;
pub use symbolic::{
    enumerate_traces, monitorable_runs, split_equivalence, sym_match, transitions, EnumOptions,
    FilteredTrace, InstTrigger, OracleError, SymRun, SymState, Transition,
};
