//! Elaboration: expands let bindings, classifies action facts, checks the
//! extended-rule shape and emits the role-decomposition lints.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{ActionArg, ActionFact, RuleAst, SpecError, SpecFile};
use crate::term::{Fact, Sort, Term, Variable};

/// A trigger-shaped annotation: `Trig('f', <a1,…,an>, r)`. The same shape
/// is used for lookahead hints and forwarded events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub name: String,
    pub args: Vec<Term>,
    pub ret: Term,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "'{}', <", self.name)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{arg}")?;
        }
        write!(f, ">, {}", self.ret)
    }
}

/// An equality constraint with its source rendering, kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equality {
    pub lhs: Term,
    pub rhs: Term,
    pub display: String,
}

/// An extended multiset-rewrite rule: at most one trigger, lookahead hints
/// (mutually exclusive with a trigger), equality constraints, emitted
/// events and forwarded calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedRule {
    pub name: String,
    pub role: Option<String>,
    pub premise: Vec<Fact>,
    pub trigger: Option<Trigger>,
    pub hints: Vec<Trigger>,
    pub equalities: Vec<Equality>,
    pub events: Vec<Fact>,
    pub emits: Vec<Trigger>,
    pub conclusion: Vec<Fact>,
    /// Name of the source rule this rule derives from.
    pub origin: String,
}

impl ExtendedRule {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        ExtendedRule {
            origin: name.clone(),
            name,
            role: None,
            premise: Vec::new(),
            trigger: None,
            hints: Vec::new(),
            equalities: Vec::new(),
            events: Vec::new(),
            emits: Vec::new(),
            conclusion: Vec::new(),
        }
    }

    /// Variables bound when the rule fires: premise plus trigger pattern.
    pub fn bound_vars(&self) -> BTreeSet<String> {
        let mut vars = Vec::new();
        for fact in &self.premise {
            fact.collect_vars(&mut vars);
        }
        if let Some(t) = &self.trigger {
            for arg in &t.args {
                arg.collect_vars(&mut vars);
            }
            t.ret.collect_vars(&mut vars);
        }
        vars.into_iter().map(|v| v.label).collect()
    }

    /// True when the rule has neither a trigger nor hints and so fires
    /// spontaneously.
    pub fn is_epsilon(&self) -> bool {
        self.trigger.is_none() && self.hints.is_empty()
    }
}

impl fmt::Display for ExtendedRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}", self.name)?;
        if let Some(role) = &self.role {
            write!(f, " [role={role}]")?;
        }
        writeln!(f, ":")?;
        write!(f, "  [ ")?;
        join_facts(f, &self.premise)?;
        writeln!(f, " ]")?;
        let mut actions: Vec<String> = Vec::new();
        for event in &self.events {
            actions.push(event.to_string());
        }
        if let Some(t) = &self.trigger {
            actions.push(format!("Trig({t})"));
        }
        for h in &self.hints {
            actions.push(format!("Hint({h})"));
        }
        for e in &self.emits {
            actions.push(format!("Emit({e})"));
        }
        for eq in &self.equalities {
            actions.push(format!("Eq({}, {})", eq.lhs, eq.rhs));
        }
        if actions.is_empty() {
            writeln!(f, "  -->")?;
        } else {
            writeln!(f, "  --[ {} ]->", actions.join(", "))?;
        }
        write!(f, "  [ ")?;
        join_facts(f, &self.conclusion)?;
        write!(f, " ]")
    }
}

fn join_facts(f: &mut fmt::Formatter<'_>, facts: &[Fact]) -> fmt::Result {
    for (i, fact) in facts.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{fact}")?;
    }
    Ok(())
}

/// Result of elaborating a specification: rules in source order, lints,
/// and per-rule shape errors (fatal only for the selected role).
#[derive(Debug, Clone, Default)]
pub struct Elaborated {
    pub rules: Vec<ExtendedRule>,
    pub warnings: Vec<String>,
    pub rule_errors: BTreeMap<String, Vec<String>>,
    pub roles: BTreeSet<String>,
}

pub fn elaborate(spec: &SpecFile) -> Elaborated {
    let mut out = Elaborated::default();
    for ast in &spec.rules {
        let (rule, errors) = elaborate_rule(ast);
        if !errors.is_empty() {
            out.rule_errors.insert(rule.name.clone(), errors);
        }
        if let Some(role) = &rule.role {
            out.roles.insert(role.clone());
        }
        out.rules.push(rule);
    }
    lint_roles(&out.rules, &mut out.warnings);
    lint_hint_exclusivity(&out.rules, &mut out.warnings);
    out
}

fn elaborate_rule(ast: &RuleAst) -> (ExtendedRule, Vec<String>) {
    let mut errors = Vec::new();

    // Expand let bindings, left to right, so later bindings may reference
    // earlier ones: each body first absorbs the bindings above it.
    let mut lets: Vec<(String, Term)> = Vec::new();
    for (label, body) in &ast.lets {
        let mut body = body.clone();
        for (prev, prev_body) in &lets {
            body = body.subst_var(prev, prev_body);
        }
        lets.push((label.clone(), body));
    }

    let mut premise = ast.premise.clone();
    let mut conclusion = ast.conclusion.clone();
    let mut actions = ast.actions.clone();
    for (label, body) in &lets {
        for fact in premise.iter_mut().chain(conclusion.iter_mut()) {
            for arg in &mut fact.args {
                *arg = arg.subst_var(label, &body);
            }
        }
        for action in &mut actions {
            for arg in &mut action.args {
                match arg {
                    ActionArg::Term(t) => *t = t.subst_var(label, &body),
                    ActionArg::Tuple(items) => {
                        for t in items {
                            *t = t.subst_var(label, &body);
                        }
                    }
                }
            }
        }
    }

    let mut rule = ExtendedRule::new(ast.name.clone());
    rule.role = ast.role.clone();
    rule.premise = premise;
    rule.conclusion = conclusion;

    for (action, raw) in actions.iter().zip(&ast.actions) {
        match action.name.as_str() {
            "Trig" | "Hint" | "Emit" => match trigger_shape(action) {
                Ok(trigger) => match action.name.as_str() {
                    "Trig" => {
                        if rule.trigger.is_some() {
                            errors.push("a rule may carry only one trigger".into());
                        } else {
                            rule.trigger = Some(trigger);
                        }
                    }
                    "Hint" => rule.hints.push(trigger),
                    _ => rule.emits.push(trigger),
                },
                Err(e) => errors.push(e),
            },
            "Eq" => match action.args.as_slice() {
                [ActionArg::Term(lhs), ActionArg::Term(rhs)] => {
                    let display = match raw.args.as_slice() {
                        [ActionArg::Term(l), ActionArg::Term(r)] => format!("Eq({l}, {r})"),
                        _ => format!("Eq({lhs}, {rhs})"),
                    };
                    rule.equalities.push(Equality {
                        lhs: lhs.clone(),
                        rhs: rhs.clone(),
                        display,
                    });
                }
                _ => errors.push("Eq expects two term arguments".into()),
            },
            _ => {
                let args = action
                    .args
                    .iter()
                    .map(|arg| match arg {
                        ActionArg::Term(t) => t.clone(),
                        ActionArg::Tuple(items) => fold_pairs(items.clone()),
                    })
                    .collect();
                rule.events.push(Fact::new(action.name.clone(), args));
            }
        }
    }

    check_shape(&rule, &mut errors);
    (rule, errors)
}

fn fold_pairs(mut items: Vec<Term>) -> Term {
    match items.len() {
        0 => Term::BitLit(Vec::new()),
        _ => {
            let last = items.pop().expect("non-empty");
            items
                .into_iter()
                .rev()
                .fold(last, |acc, item| Term::App("pair".into(), vec![item, acc]))
        }
    }
}

fn trigger_shape(action: &ActionFact) -> Result<Trigger, String> {
    let kind = &action.name;
    if action.args.len() != 3 {
        return Err(format!("{kind} expects (name, arguments, result)"));
    }
    let name = match &action.args[0] {
        ActionArg::Term(Term::PubName(bytes)) => String::from_utf8(bytes.clone())
            .map_err(|_| format!("{kind} name is not valid text"))?,
        ActionArg::Term(Term::Var(v)) if v.sort == Sort::Msg => v.label.clone(),
        _ => return Err(format!("{kind} name must be a quoted literal")),
    };
    let args = match &action.args[1] {
        ActionArg::Tuple(items) => items.clone(),
        ActionArg::Term(t) => vec![t.clone()],
    };
    let ret = match &action.args[2] {
        ActionArg::Term(t) => t.clone(),
        ActionArg::Tuple(_) => return Err(format!("{kind} result must be a single term")),
    };
    Ok(Trigger { name, args, ret })
}

fn check_shape(rule: &ExtendedRule, errors: &mut Vec<String>) {
    if rule.trigger.is_some() && !rule.hints.is_empty() {
        errors.push("hints and a trigger are mutually exclusive on one rule".into());
    }
    for fact in &rule.premise {
        for arg in &fact.args {
            if !arg.is_computation_free() {
                errors.push(format!(
                    "premise argument {arg} contains a function application; \
                     premises may only contain variables, literals and format strings"
                ));
            }
        }
    }
    let bound = rule.bound_vars();
    let mut used: Vec<Variable> = Vec::new();
    for fact in rule.conclusion.iter().chain(rule.events.iter()) {
        fact.collect_vars(&mut used);
    }
    for eq in &rule.equalities {
        eq.lhs.collect_vars(&mut used);
        eq.rhs.collect_vars(&mut used);
    }
    for emit in &rule.emits {
        for arg in &emit.args {
            arg.collect_vars(&mut used);
        }
        emit.ret.collect_vars(&mut used);
    }
    let mut reported = BTreeSet::new();
    for v in used {
        if !bound.contains(&v.label) && reported.insert(v.label.clone()) {
            errors.push(format!(
                "variable {} is not bound by the premise or trigger",
                v.label
            ));
        }
    }
}

/// True for facts that carry a role's local state (anything that is not
/// network I/O, freshness, or setup).
pub fn is_state_fact(symbol: &str) -> bool {
    !matches!(symbol, "In" | "Out" | "Fr") && !symbol.starts_with("Setup")
}

fn is_setup_rule(rule: &ExtendedRule) -> bool {
    rule.role.is_none()
        && !rule.conclusion.is_empty()
        && rule.conclusion.iter().all(|f| f.symbol.starts_with("Setup"))
}

fn lint_roles(rules: &[ExtendedRule], warnings: &mut Vec<String>) {
    let mut fact_roles: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for rule in rules {
        let Some(role) = &rule.role else {
            // A custom trigger on a setup rule is the supported way to
            // inject keys from outside the monitored process; observable
            // events and equality checks are not.
            if is_setup_rule(rule)
                && !(rule.events.is_empty() && rule.equalities.is_empty())
            {
                warnings.push(format!(
                    "rule {}: setup rules should carry an empty label",
                    rule.name
                ));
            }
            continue;
        };
        for fact in rule.premise.iter().chain(rule.conclusion.iter()) {
            if is_state_fact(&fact.symbol) {
                fact_roles.entry(&fact.symbol).or_default().insert(role);
            }
        }
        if !rule.conclusion.iter().any(|f| is_state_fact(&f.symbol)) {
            warnings.push(format!(
                "rule {}: conclusion contains no state fact, so the thread cannot be traced \
                 past this step",
                rule.name
            ));
        }
        let mut first_args: Vec<&Term> = Vec::new();
        for fact in rule.premise.iter().chain(rule.conclusion.iter()) {
            if is_state_fact(&fact.symbol) {
                if let Some(first) = fact.args.first() {
                    first_args.push(first);
                }
            }
        }
        for arg in &first_args {
            if !matches!(arg, Term::Var(v) if v.sort == Sort::Fresh) {
                warnings.push(format!(
                    "rule {}: state facts should carry a fresh-sorted thread identifier \
                     as their first argument",
                    rule.name
                ));
                break;
            }
        }
        if first_args.len() > 1 && !first_args.iter().all(|a| *a == first_args[0]) {
            warnings.push(format!(
                "rule {}: state facts disagree on their first argument",
                rule.name
            ));
        }
    }
    for (fact, roles) in fact_roles {
        if roles.len() > 1 {
            let list: Vec<&str> = roles.into_iter().collect();
            warnings.push(format!(
                "state fact {fact} is shared between roles {}",
                list.join(", ")
            ));
        }
    }
}

fn lint_hint_exclusivity(rules: &[ExtendedRule], warnings: &mut Vec<String>) {
    let mut seen: BTreeMap<(String, String), &str> = BTreeMap::new();
    for rule in rules {
        for hint in &rule.hints {
            let args = hint.args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",");
            let key = (hint.name.clone(), args);
            match seen.get(&key) {
                Some(other) if *other != rule.name => {
                    warnings.push(format!(
                        "hints are not exclusive: rules {other} and {} both hint {}(…)",
                        rule.name, hint.name
                    ));
                }
                _ => {
                    seen.insert(key, &rule.name);
                }
            }
        }
    }
}

/// The rules a monitor for `role` runs: rules attributed to the role plus
/// role-agnostic setup rules.
#[derive(Debug, Clone, Default)]
pub struct RoleSelection {
    pub rules: Vec<ExtendedRule>,
    pub warnings: Vec<String>,
}

pub fn select_role(elab: &Elaborated, role: &str) -> Result<RoleSelection, SpecError> {
    let mut selection = RoleSelection::default();
    if elab.roles.is_empty() {
        selection
            .warnings
            .push("specification contains no role attributes; nothing to monitor".into());
        return Ok(selection);
    }
    if !elab.roles.contains(role) {
        let available: Vec<&str> = elab.roles.iter().map(|s| s.as_str()).collect();
        return Err(SpecError::Validate(format!(
            "unknown role `{role}`; available roles: {}",
            available.join(", ")
        )));
    }
    for rule in &elab.rules {
        let selected = match &rule.role {
            Some(r) => r == role,
            None => {
                if is_setup_rule(rule) {
                    true
                } else {
                    selection.warnings.push(format!(
                        "rule {} has no role attribute and is not a setup rule; skipped",
                        rule.name
                    ));
                    false
                }
            }
        };
        if selected {
            if let Some(errors) = elab.rule_errors.get(&rule.name) {
                return Err(SpecError::Rule {
                    rule: rule.name.clone(),
                    msg: errors.join("; "),
                });
            }
            selection.rules.push(rule.clone());
        }
    }
    Ok(selection)
}
