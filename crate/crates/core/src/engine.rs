//! The monitoring core: a set of configurations evolved by dispatching
//! observed program events through trigger rules, lookahead hints and
//! epsilon rules.
//!
//! A configuration is a multiset of ground facts plus the output trace
//! accumulated so far. An event is accepted iff at least one configuration
//! can process it; configurations that cannot are dropped, and when none
//! survive the monitor rejects the stream with diagnostics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::event::ProgramEvent;
use crate::formats::FormatRegistry;
use crate::spec::{ExtendedRule, Trigger};
use crate::term::{
    apply_subst, eval_ground, match_value, multiset_match, Fact, FactMultiset, GroundFact,
    Substitution, Value,
};

/// Default cap on the number of live configurations.
pub const DEFAULT_MAX_CONFIGS: usize = 10_000;

/// One entry in a configuration's output trace: an emitted action fact or
/// a forwarded call.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceEvent {
    Fact(GroundFact),
    Call(ProgramEvent),
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Fact(fact) => write!(f, "{fact}"),
            TraceEvent::Call(call) => write!(f, "{}", call.describe()),
        }
    }
}

/// A monitor configuration. The lineage number identifies the
/// configuration in diagnostics only; configurations compare equal when
/// state and output trace agree, so duplicates merge.
#[derive(Debug, Clone, Default)]
pub struct Configuration {
    pub state: FactMultiset,
    pub out_trace: Vec<TraceEvent>,
    pub lineage: u64,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state && self.out_trace == other.out_trace
    }
}

impl Eq for Configuration {}

impl PartialOrd for Configuration {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Configuration {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.state, &self.out_trace).cmp(&(&other.state, &other.out_trace))
    }
}

/// Whether the monitor checks a stream or rewrites it for a later stage.
/// Rewriting restricts the monitor to a single live configuration so that
/// exactly one output trace is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Monitor,
    Rewrite,
}

/// Verdict for a stream that violates the specification.
#[derive(Debug, Clone)]
pub struct Rejection {
    /// The offending event.
    pub event: ProgramEvent,
    /// Zero-based position of the offending event in the stream.
    pub index: usize,
    /// Why candidate matches failed, labeled per configuration.
    pub explanations: Vec<String>,
    /// Call patterns that would have been accepted instead, derived from
    /// the configurations live before the rejection.
    pub permissible: Vec<String>,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "event #{} {} rejected", self.index, self.event.describe())?;
        if !self.explanations.is_empty() {
            writeln!(f, "constraint failures:")?;
            for e in &self.explanations {
                writeln!(f, "  {e}")?;
            }
        }
        if self.permissible.is_empty() {
            write!(f, "no event was permissible")?;
        } else {
            write!(f, "permissible events:")?;
            for p in &self.permissible {
                write!(f, "\n  {p}")?;
            }
        }
        Ok(())
    }
}

/// Failures that abort the monitor itself, as opposed to a verdict about
/// the stream.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(
        "configuration set exceeded {limit} configurations at event {index}; \
         the specification is too non-deterministic to monitor (raise the cap \
         or refine the rules)"
    )]
    ConfigExplosion { limit: usize, index: usize },
    #[error(
        "event {event} matches hints of rule {rule} with {count} distinct \
         instantiations; hints must be exclusive"
    )]
    AmbiguousHints { rule: String, event: String, count: usize },
    #[error(
        "{count} configurations are live after an event in rewrite mode; \
         rewriting requires a deterministic specification"
    )]
    NondeterministicRewrite { count: usize },
}

/// Why a single rule application did not go through.
enum ApplyFailure {
    /// An equality constraint failed; carries its source rendering.
    Equality(String),
    /// A format or evaluation error; carries a description.
    Eval(String),
}

#[derive(Default)]
struct StepLog {
    explanations: BTreeSet<String>,
    diagnostics: Vec<String>,
}

/// Monitor state: the decomposed rule set, the format registry, the live
/// configurations and the rule indices.
#[derive(Debug)]
pub struct MonitorState {
    rules: Vec<ExtendedRule>,
    formats: FormatRegistry,
    mode: RunMode,
    configs: BTreeSet<Configuration>,
    trig_index: HashMap<String, Vec<usize>>,
    hint_index: HashMap<String, Vec<usize>>,
    epsilon_rules: Vec<usize>,
    seen_random: BTreeSet<Vec<u8>>,
    max_configs: usize,
    next_lineage: u64,
    events_processed: usize,
    /// Notes about dropped branches and skipped candidates; drained by the
    /// caller for verbose output.
    pub diagnostics: Vec<String>,
}

impl MonitorState {
    pub fn new(rules: Vec<ExtendedRule>, formats: FormatRegistry, mode: RunMode) -> MonitorState {
        let mut trig_index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut hint_index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut epsilon_rules = Vec::new();
        for (i, rule) in rules.iter().enumerate() {
            if let Some(t) = &rule.trigger {
                trig_index.entry(t.name.clone()).or_default().push(i);
            }
            for h in &rule.hints {
                let slot = hint_index.entry(h.name.clone()).or_default();
                if slot.last() != Some(&i) {
                    slot.push(i);
                }
            }
            if rule.is_epsilon() {
                epsilon_rules.push(i);
            }
        }
        let mut configs = BTreeSet::new();
        configs.insert(Configuration::default());
        MonitorState {
            rules,
            formats,
            mode,
            configs,
            trig_index,
            hint_index,
            epsilon_rules,
            seen_random: BTreeSet::new(),
            max_configs: DEFAULT_MAX_CONFIGS,
            next_lineage: 1,
            events_processed: 0,
            diagnostics: Vec::new(),
        }
    }

    pub fn set_max_configs(&mut self, cap: usize) {
        self.max_configs = cap.max(1);
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn rules(&self) -> &[ExtendedRule] {
        &self.rules
    }

    pub fn formats(&self) -> &FormatRegistry {
        &self.formats
    }

    pub fn config_count(&self) -> usize {
        self.configs.len()
    }

    pub fn configurations(&self) -> impl Iterator<Item = &Configuration> {
        self.configs.iter()
    }

    pub fn events_processed(&self) -> usize {
        self.events_processed
    }

    /// The output traces of the surviving configurations.
    pub fn output_traces(&self) -> BTreeSet<Vec<TraceEvent>> {
        self.configs.iter().map(|c| c.out_trace.clone()).collect()
    }

    pub fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }

    /// Processes one event. `Ok(None)` means the event was accepted;
    /// `Ok(Some(_))` is a verdict that the stream violates the
    /// specification; `Err(_)` aborts the monitor itself. After a verdict
    /// or an error the monitor must not be fed further events.
    pub fn process_event(
        &mut self,
        event: &ProgramEvent,
    ) -> Result<Option<Rejection>, EngineError> {
        let index = self.events_processed;
        self.events_processed += 1;

        // Runtime check of the likely-stream assumption: RNG outputs are
        // pairwise distinct. A duplicate is flagged before dispatch.
        if event.name == "random" && !self.seen_random.insert(event.ret.clone()) {
            let rejection = Rejection {
                event: event.clone(),
                index,
                explanations: vec![format!(
                    "random returned a value that was already seen: {}",
                    if event.ret.is_empty() { "''".into() } else { format!("0x{}", hex::encode(&event.ret)) }
                )],
                permissible: permissible_for(
                    &self.rules,
                    &self.formats,
                    self.configs.iter(),
                ),
            };
            self.configs.clear();
            return Ok(Some(rejection));
        }

        let configs = std::mem::take(&mut self.configs);
        let mut log = StepLog::default();
        let mut updated: BTreeSet<Configuration> = BTreeSet::new();
        for config in &configs {
            updated.extend(self.hint_step(config, event, &mut log)?);
            updated.extend(self.trigger_step(config, event, &mut log));
        }
        self.diagnostics.append(&mut log.diagnostics);

        if updated.is_empty() {
            return Ok(Some(Rejection {
                event: event.clone(),
                index,
                explanations: log.explanations.into_iter().collect(),
                permissible: permissible_for(&self.rules, &self.formats, configs.iter()),
            }));
        }
        if updated.len() > self.max_configs {
            return Err(EngineError::ConfigExplosion { limit: self.max_configs, index });
        }
        if self.mode == RunMode::Rewrite && updated.len() > 1 {
            return Err(EngineError::NondeterministicRewrite { count: updated.len() });
        }
        self.configs = updated
            .into_iter()
            .map(|mut c| {
                c.lineage = self.next_lineage;
                self.next_lineage += 1;
                c
            })
            .collect();
        Ok(None)
    }

    /// Folds `process_event` over a trace, stopping at the first verdict.
    pub fn process_trace(
        &mut self,
        events: &[ProgramEvent],
    ) -> Result<Option<Rejection>, EngineError> {
        for event in events {
            if let Some(rejection) = self.process_event(event)? {
                return Ok(Some(rejection));
            }
        }
        Ok(None)
    }

    /// Call patterns acceptable in the current configurations: the
    /// partially instantiated trigger and hint patterns of every rule
    /// whose premise matches, deduplicated.
    pub fn permissible_events(&self) -> Vec<String> {
        permissible_for(&self.rules, &self.formats, self.configs.iter())
    }

    /// Removes and returns the accumulated output trace. Used in rewrite
    /// mode, where at most one configuration is live; several live
    /// configurations are an error because their traces could differ.
    pub fn drain_output(&mut self) -> Result<Vec<TraceEvent>, EngineError> {
        if self.configs.len() > 1 {
            return Err(EngineError::NondeterministicRewrite { count: self.configs.len() });
        }
        let Some(mut config) = self.configs.pop_first() else {
            return Ok(Vec::new());
        };
        let trace = std::mem::take(&mut config.out_trace);
        self.configs.insert(config);
        Ok(trace)
    }

    /// Dispatches the event through every rule with a matching trigger.
    /// A candidate instantiation whose trigger does not specialize to the
    /// event is skipped; the remaining candidates are still tried.
    fn trigger_step(
        &self,
        config: &Configuration,
        event: &ProgramEvent,
        log: &mut StepLog,
    ) -> BTreeSet<Configuration> {
        let mut updated = BTreeSet::new();
        let Some(ids) = self.trig_index.get(&event.name) else {
            return updated;
        };
        for &ri in ids {
            let rule = &self.rules[ri];
            let trigger = rule.trigger.as_ref().expect("indexed rule has a trigger");
            for sigma_r in multiset_match(&config.state, &rule.premise, &self.formats) {
                let mut sigma = sigma_r;
                if !bind_call(&mut sigma, trigger, event, &self.formats) {
                    continue;
                }
                match self.apply_rule(config, rule, &sigma) {
                    Ok(d) => {
                        let next = self.epsilon_step(&d, log);
                        if next.is_empty() {
                            updated.insert(d);
                        } else {
                            updated.extend(next);
                        }
                    }
                    Err(ApplyFailure::Equality(display)) => {
                        log.explanations.insert(format!(
                            "configuration #{}: rule {} matched {} but {} was not satisfied",
                            config.lineage, rule.name, event.name, display
                        ));
                    }
                    Err(ApplyFailure::Eval(msg)) => {
                        log.diagnostics.push(format!(
                            "configuration #{}: rule {} on {}: {}",
                            config.lineage, rule.name, event.name, msg
                        ));
                    }
                }
            }
        }
        updated
    }

    /// Applies rules whose hints match the event, without consuming it,
    /// then dispatches the event through the trigger rules on each
    /// intermediate configuration. The event must match the hints of a
    /// rule instantiation in at most one way that is distinguishable in
    /// the rule body; hint result variables do not distinguish.
    fn hint_step(
        &self,
        config: &Configuration,
        event: &ProgramEvent,
        log: &mut StepLog,
    ) -> Result<BTreeSet<Configuration>, EngineError> {
        let mut updated = BTreeSet::new();
        let Some(ids) = self.hint_index.get(&event.name) else {
            return Ok(updated);
        };
        for &ri in ids {
            let rule = &self.rules[ri];
            let body_vars = rule_body_vars(rule);
            for sigma_r in multiset_match(&config.state, &rule.premise, &self.formats) {
                let mut matches: BTreeMap<Substitution, Substitution> = BTreeMap::new();
                for hint in rule.hints.iter().filter(|h| h.name == event.name) {
                    let mut full = sigma_r.clone();
                    if bind_call(&mut full, hint, event, &self.formats) {
                        matches.entry(full.restricted(&body_vars)).or_insert(full);
                    }
                }
                if matches.is_empty() {
                    continue;
                }
                if matches.len() > 1 {
                    return Err(EngineError::AmbiguousHints {
                        rule: rule.name.clone(),
                        event: event.describe(),
                        count: matches.len(),
                    });
                }
                let (_, full) = matches.into_iter().next().expect("one match");
                let d = match self.apply_rule(config, rule, &full) {
                    Ok(d) => d,
                    Err(ApplyFailure::Equality(display)) => {
                        log.explanations.insert(format!(
                            "configuration #{}: rule {} hinted at {} but {} was not satisfied",
                            config.lineage, rule.name, event.name, display
                        ));
                        continue;
                    }
                    Err(ApplyFailure::Eval(msg)) => {
                        log.diagnostics.push(format!(
                            "configuration #{}: rule {} on hinted {}: {}",
                            config.lineage, rule.name, event.name, msg
                        ));
                        continue;
                    }
                };
                let follow = self.trigger_step(&d, event, log);
                if follow.is_empty() {
                    log.diagnostics.push(format!(
                        "configuration #{}: lookahead applied rule {} for {} but no \
                         trigger rule then accepted the event; branch dropped",
                        config.lineage, rule.name, event.name
                    ));
                } else {
                    updated.extend(follow);
                }
            }
        }
        Ok(updated)
    }

    /// One pass over the epsilon rules: each applicable instantiation
    /// yields one follow-up configuration. No recursion; a chain of
    /// epsilon rules is not followed within a single step.
    fn epsilon_step(&self, config: &Configuration, log: &mut StepLog) -> BTreeSet<Configuration> {
        let mut updated = BTreeSet::new();
        for &ri in &self.epsilon_rules {
            let rule = &self.rules[ri];
            for sigma in multiset_match(&config.state, &rule.premise, &self.formats) {
                match self.apply_rule(config, rule, &sigma) {
                    Ok(d) => {
                        updated.insert(d);
                    }
                    Err(ApplyFailure::Equality(display)) => {
                        log.explanations.insert(format!(
                            "configuration #{}: rule {} applied but {} was not satisfied",
                            config.lineage, rule.name, display
                        ));
                    }
                    Err(ApplyFailure::Eval(msg)) => {
                        log.diagnostics.push(format!(
                            "configuration #{}: rule {}: {}",
                            config.lineage, rule.name, msg
                        ));
                    }
                }
            }
        }
        updated
    }

    /// Applies a rule under a grounding substitution: checks the equality
    /// constraints, removes the linear premise facts, adds the conclusion
    /// facts and appends the emitted events and forwarded calls to the
    /// output trace.
    fn apply_rule(
        &self,
        config: &Configuration,
        rule: &ExtendedRule,
        sigma: &Substitution,
    ) -> Result<Configuration, ApplyFailure> {
        for eq in &rule.equalities {
            let lhs = eval_ground(&eq.lhs, sigma, &self.formats)
                .map_err(|e| ApplyFailure::Eval(format!("{}: {e}", eq.display)))?;
            let rhs = eval_ground(&eq.rhs, sigma, &self.formats)
                .map_err(|e| ApplyFailure::Eval(format!("{}: {e}", eq.display)))?;
            if lhs != rhs {
                return Err(ApplyFailure::Equality(eq.display.clone()));
            }
        }
        let mut next = config.clone();
        for fact in rule.premise.iter().filter(|f| !f.persistent) {
            let ground = self.ground_fact(fact, sigma)?;
            if !next.state.remove_linear(&ground) {
                return Err(ApplyFailure::Eval(format!(
                    "premise fact {ground} is not in the state"
                )));
            }
        }
        for fact in &rule.conclusion {
            let ground = self.ground_fact(fact, sigma)?;
            next.state.insert(ground);
        }
        for fact in &rule.events {
            let ground = self.ground_fact(fact, sigma)?;
            next.out_trace.push(TraceEvent::Fact(ground));
        }
        for emit in &rule.emits {
            next.out_trace.push(TraceEvent::Call(self.ground_call(emit, sigma)?));
        }
        Ok(next)
    }

    fn ground_fact(&self, fact: &Fact, sigma: &Substitution) -> Result<GroundFact, ApplyFailure> {
        let args = fact
            .args
            .iter()
            .map(|a| eval_ground(a, sigma, &self.formats))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApplyFailure::Eval(format!("fact {}: {e}", fact.symbol)))?;
        Ok(GroundFact { symbol: fact.symbol.clone(), persistent: fact.persistent, args })
    }

    fn ground_call(
        &self,
        emit: &Trigger,
        sigma: &Substitution,
    ) -> Result<ProgramEvent, ApplyFailure> {
        let mut args = Vec::new();
        for a in &emit.args {
            let v = eval_ground(a, sigma, &self.formats)
                .map_err(|e| ApplyFailure::Eval(format!("emit {}: {e}", emit.name)))?;
            args.push(value_bytes(&v));
        }
        let ret = eval_ground(&emit.ret, sigma, &self.formats)
            .map_err(|e| ApplyFailure::Eval(format!("emit {}: {e}", emit.name)))?;
        Ok(ProgramEvent::new(emit.name.clone(), args, value_bytes(&ret)))
    }
}

/// Binds a call pattern (trigger or hint) against an observed event,
/// extending the substitution. Returns false when arity or any argument
/// or the return value does not match.
fn bind_call(
    sigma: &mut Substitution,
    pattern: &Trigger,
    event: &ProgramEvent,
    formats: &FormatRegistry,
) -> bool {
    if pattern.args.len() != event.args.len() {
        return false;
    }
    for (arg, bytes) in pattern.args.iter().zip(&event.args) {
        if !match_value(&Value::Bytes(bytes.clone()), arg, sigma, formats) {
            return false;
        }
    }
    match_value(&Value::Bytes(event.ret.clone()), &pattern.ret, sigma, formats)
}

/// Variables that influence a rule's application: premise, conclusion,
/// equalities, events and forwarded calls. Hint result variables are
/// excluded, so hint matches differing only in the result collapse.
fn rule_body_vars(rule: &ExtendedRule) -> BTreeSet<String> {
    let mut vars = Vec::new();
    for fact in rule.premise.iter().chain(&rule.conclusion).chain(&rule.events) {
        fact.collect_vars(&mut vars);
    }
    for eq in &rule.equalities {
        eq.lhs.collect_vars(&mut vars);
        eq.rhs.collect_vars(&mut vars);
    }
    for emit in &rule.emits {
        for a in &emit.args {
            a.collect_vars(&mut vars);
        }
        emit.ret.collect_vars(&mut vars);
    }
    vars.into_iter().map(|v| v.label).collect()
}

fn permissible_for<'a>(
    rules: &[ExtendedRule],
    formats: &FormatRegistry,
    configs: impl Iterator<Item = &'a Configuration>,
) -> Vec<String> {
    let mut out = BTreeSet::new();
    for config in configs {
        for rule in rules {
            let patterns: Vec<&Trigger> = rule.trigger.iter().chain(rule.hints.iter()).collect();
            if patterns.is_empty() {
                continue;
            }
            for sigma_r in multiset_match(&config.state, &rule.premise, formats) {
                for pattern in &patterns {
                    out.insert(render_call_pattern(pattern, &sigma_r, formats));
                }
            }
        }
    }
    out.into_iter().collect()
}

fn render_call_pattern(pattern: &Trigger, sigma: &Substitution, formats: &FormatRegistry) -> String {
    let args: Vec<String> = pattern
        .args
        .iter()
        .map(|a| match apply_subst(a, sigma, formats) {
            Ok(t) => t.to_string(),
            Err(_) => a.to_string(),
        })
        .collect();
    format!("{}({})", pattern.name, args.join(", "))
}

fn value_bytes(value: &Value) -> Vec<u8> {
    match value {
        Value::Bytes(b) => b.clone(),
        Value::Nat(n) => {
            let bytes = n.to_bytes_be();
            if bytes == [0] {
                Vec::new()
            } else {
                bytes
            }
        }
    }
}
