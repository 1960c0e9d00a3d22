//! Rule decomposition: splits every rule that computes user functions into
//! a start rule, one mid rule per distinct function application, and an end
//! rule, so that each derived rule observes at most one library call.
//! Intermediate results travel through generated subterm-transport facts,
//! and start rules carry lookahead hints for the first calls they enable.

use std::collections::{BTreeMap, BTreeSet};

use crate::spec::{Equality, ExtendedRule, Trigger};
use crate::term::{Fact, Term, Variable};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecomposeError {
    #[error(
        "rule {rule}: a rule with an explicit trigger or hints must not compute \
         user functions (found {term})"
    )]
    TriggerRuleComputes { rule: String, term: String },
    #[error("rule {rule}: action term {term} does not occur in the conclusion")]
    ActionComputation { rule: String, term: String },
    #[error(
        "rule {rule}: {term} nests a computation inside a format or cat argument \
         of another function application; name the inner result in its own rule"
    )]
    OpaqueNesting { rule: String, term: String },
}

/// Where a transported value comes from and who consumes it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    /// Computation-free argument, produced by the start rule.
    Free(Term),
    /// Zero-argument occurrence: the start rule still transports the
    /// premise bindings.
    Control,
    /// Result of another occurrence.
    Occ(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Consumer {
    Mid(usize),
    End,
}

fn result_var(occ: usize) -> Variable {
    Variable::msg(format!("__x{occ}"))
}

fn arg_var(occ: usize, pos: usize) -> Variable {
    Variable::msg(format!("__v{occ}_{pos}"))
}

/// Distinct user-function applications of the conclusion, innermost first.
fn collect_occurrences(conclusion: &[Fact]) -> Vec<Term> {
    fn walk(term: &Term, out: &mut Vec<Term>) {
        match term {
            Term::App(_, args) => {
                for arg in args {
                    walk(arg, out);
                }
                if !out.contains(term) {
                    out.push(term.clone());
                }
            }
            Term::Cat(args) | Term::Format(_, args) => {
                for arg in args {
                    walk(arg, out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for fact in conclusion {
        for arg in &fact.args {
            walk(arg, &mut out);
        }
    }
    out
}

/// Replaces occurrence subterms by their result variables, outermost first.
fn replace_occurrences(term: &Term, ids: &BTreeMap<&Term, usize>) -> Term {
    if let Some(&id) = ids.get(term) {
        return Term::Var(result_var(id));
    }
    match term {
        Term::App(name, args) => Term::App(
            name.clone(),
            args.iter().map(|a| replace_occurrences(a, ids)).collect(),
        ),
        Term::Cat(args) => {
            Term::Cat(args.iter().map(|a| replace_occurrences(a, ids)).collect())
        }
        Term::Format(name, args) => Term::Format(
            name.clone(),
            args.iter().map(|a| replace_occurrences(a, ids)).collect(),
        ),
        other => other.clone(),
    }
}

/// Splits one rule. Rules without user-function applications are returned
/// unchanged; everything else becomes start / mid… / end.
pub fn split_rule(rule: &ExtendedRule) -> Result<Vec<ExtendedRule>, DecomposeError> {
    let occs = collect_occurrences(&rule.conclusion);
    let ids: BTreeMap<&Term, usize> = occs.iter().enumerate().map(|(i, t)| (t, i)).collect();

    // Parents: for every appearance of an occurrence, the nearest enclosing
    // application (formats and cat are transparent) or the end rule.
    let mut parents: BTreeMap<usize, BTreeSet<Consumer>> = BTreeMap::new();
    fn walk_parents(
        term: &Term,
        parent: Consumer,
        ids: &BTreeMap<&Term, usize>,
        parents: &mut BTreeMap<usize, BTreeSet<Consumer>>,
    ) {
        match term {
            Term::App(_, args) => {
                let id = ids[term];
                parents.entry(id).or_default().insert(parent);
                for arg in args {
                    walk_parents(arg, Consumer::Mid(id), ids, parents);
                }
            }
            Term::Cat(args) | Term::Format(_, args) => {
                for arg in args {
                    walk_parents(arg, parent, ids, parents);
                }
            }
            _ => {}
        }
    }
    for fact in &rule.conclusion {
        for arg in &fact.args {
            walk_parents(arg, Consumer::End, &ids, &mut parents);
        }
    }

    // Action terms: their outermost applications must occur in the
    // conclusion, and the end rule additionally needs their results.
    fn walk_action(
        term: &Term,
        rule: &str,
        ids: &BTreeMap<&Term, usize>,
        parents: &mut BTreeMap<usize, BTreeSet<Consumer>>,
    ) -> Result<(), DecomposeError> {
        match term {
            Term::App(..) => match ids.get(term) {
                Some(&id) => {
                    parents.entry(id).or_default().insert(Consumer::End);
                    Ok(())
                }
                None => Err(DecomposeError::ActionComputation {
                    rule: rule.to_string(),
                    term: term.to_string(),
                }),
            },
            Term::Cat(args) | Term::Format(_, args) => {
                for arg in args {
                    walk_action(arg, rule, ids, parents)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
    let mut action_terms: Vec<&Term> = Vec::new();
    for event in &rule.events {
        action_terms.extend(&event.args);
    }
    for eq in &rule.equalities {
        action_terms.push(&eq.lhs);
        action_terms.push(&eq.rhs);
    }
    for emit in &rule.emits {
        action_terms.extend(&emit.args);
        action_terms.push(&emit.ret);
    }
    for term in action_terms {
        walk_action(term, &rule.name, &ids, &mut parents)?;
    }

    if occs.is_empty() {
        return Ok(vec![rule.clone()]);
    }
    if rule.trigger.is_some() || !rule.hints.is_empty() {
        return Err(DecomposeError::TriggerRuleComputes {
            rule: rule.name.clone(),
            term: occs[0].to_string(),
        });
    }

    // Classify every occurrence argument. Identical argument terms share
    // one transport fact and one pattern variable.
    struct OccPlan {
        name: String,
        /// Distinct argument sources with the variable they bind.
        inputs: Vec<(Source, Variable)>,
        /// Trigger argument pattern, one variable per position.
        trigger_args: Vec<Term>,
    }
    let mut plans: Vec<OccPlan> = Vec::new();
    for (i, occ) in occs.iter().enumerate() {
        let Term::App(fname, args) = occ else { unreachable!("occurrences are applications") };
        let mut inputs: Vec<(Source, Variable)> = Vec::new();
        let mut trigger_args = Vec::new();
        let mut seen: BTreeMap<&Term, Variable> = BTreeMap::new();
        for (j, arg) in args.iter().enumerate() {
            if let Some(var) = seen.get(arg) {
                trigger_args.push(Term::Var(var.clone()));
                continue;
            }
            let (source, var) = if let Some(&child) = ids.get(arg) {
                (Source::Occ(child), result_var(child))
            } else if arg.is_computation_free() {
                (Source::Free(arg.clone()), arg_var(i, j))
            } else {
                return Err(DecomposeError::OpaqueNesting {
                    rule: rule.name.clone(),
                    term: occ.to_string(),
                });
            };
            seen.insert(arg, var.clone());
            trigger_args.push(Term::Var(var.clone()));
            inputs.push((source, var));
        }
        if inputs.is_empty() {
            inputs.push((Source::Control, result_var(i)));
        }
        plans.push(OccPlan { name: fname.clone(), inputs, trigger_args });
    }

    // Assign one transport-fact symbol per (source, consumer) pair.
    let mut keys: BTreeMap<(Source, Consumer), String> = BTreeMap::new();
    let mut next_key = 0usize;
    let mut key_symbol = |keys: &mut BTreeMap<(Source, Consumer), String>,
                          source: Source,
                          consumer: Consumer|
     -> String {
        keys.entry((source, consumer))
            .or_insert_with(|| {
                let symbol = format!("__ST_{}_{}", rule.name, next_key);
                next_key += 1;
                symbol
            })
            .clone()
    };

    // The premise variables, in order of first occurrence; every transport
    // fact carries them so parallel rule instances stay separate.
    let mut premise_vars: Vec<Variable> = Vec::new();
    for fact in &rule.premise {
        fact.collect_vars(&mut premise_vars);
    }
    let binding: Vec<Term> = premise_vars.iter().cloned().map(Term::Var).collect();
    let transport = |symbol: String, value: Option<Term>| -> Fact {
        let mut args = binding.clone();
        args.extend(value);
        Fact::new(symbol, args)
    };

    let mut start = ExtendedRule::new(format!("{}__start", rule.name));
    start.origin = rule.name.clone();
    start.role = rule.role.clone();
    start.premise = rule.premise.clone();

    let mut mids: Vec<ExtendedRule> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let mut mid = ExtendedRule::new(format!("{}__mid_{i}", rule.name));
        mid.origin = rule.name.clone();
        mid.role = rule.role.clone();
        for (source, var) in &plan.inputs {
            match source {
                Source::Control => {
                    let symbol =
                        key_symbol(&mut keys, Source::Control, Consumer::Mid(i));
                    start.conclusion.push(transport(symbol.clone(), None));
                    mid.premise.push(transport(symbol, None));
                }
                Source::Free(term) => {
                    let symbol =
                        key_symbol(&mut keys, source.clone(), Consumer::Mid(i));
                    start.conclusion.push(transport(symbol.clone(), Some(term.clone())));
                    mid.premise.push(transport(symbol, Some(Term::Var(var.clone()))));
                }
                Source::Occ(_) => {
                    let symbol =
                        key_symbol(&mut keys, source.clone(), Consumer::Mid(i));
                    mid.premise.push(transport(symbol, Some(Term::Var(var.clone()))));
                }
            }
        }
        mid.trigger = Some(Trigger {
            name: plan.name.clone(),
            args: plan.trigger_args.clone(),
            ret: Term::Var(result_var(i)),
        });
        for consumer in &parents[&i] {
            let symbol = key_symbol(&mut keys, Source::Occ(i), *consumer);
            mid.conclusion
                .push(transport(symbol, Some(Term::Var(result_var(i)))));
        }
        mids.push(mid);
    }

    let mut end = ExtendedRule::new(format!("{}__end", rule.name));
    end.origin = rule.name.clone();
    end.role = rule.role.clone();
    for (i, _) in occs.iter().enumerate() {
        if parents[&i].contains(&Consumer::End) {
            let symbol = key_symbol(&mut keys, Source::Occ(i), Consumer::End);
            end.premise.push(transport(symbol, Some(Term::Var(result_var(i)))));
        }
    }
    end.conclusion = rule
        .conclusion
        .iter()
        .map(|fact| Fact {
            symbol: fact.symbol.clone(),
            persistent: fact.persistent,
            args: fact.args.iter().map(|a| replace_occurrences(a, &ids)).collect(),
        })
        .collect();
    end.events = rule
        .events
        .iter()
        .map(|fact| Fact {
            symbol: fact.symbol.clone(),
            persistent: fact.persistent,
            args: fact.args.iter().map(|a| replace_occurrences(a, &ids)).collect(),
        })
        .collect();
    end.emits = rule
        .emits
        .iter()
        .map(|emit| Trigger {
            name: emit.name.clone(),
            args: emit.args.iter().map(|a| replace_occurrences(a, &ids)).collect(),
            ret: replace_occurrences(&emit.ret, &ids),
        })
        .collect();

    // Each equality constraint goes on the earliest rule that binds both
    // sides, so violations reject at the very call that exposes them.
    let mut rules: Vec<ExtendedRule> = Vec::with_capacity(mids.len() + 2);
    rules.push(start);
    rules.extend(mids);
    rules.push(end);
    for eq in &rule.equalities {
        let replaced = Equality {
            lhs: replace_occurrences(&eq.lhs, &ids),
            rhs: replace_occurrences(&eq.rhs, &ids),
            display: eq.display.clone(),
        };
        let mut vars: Vec<Variable> = Vec::new();
        replaced.lhs.collect_vars(&mut vars);
        replaced.rhs.collect_vars(&mut vars);
        let needed: BTreeSet<String> = vars.into_iter().map(|v| v.label).collect();
        let host = rules
            .iter_mut()
            .find(|r| needed.is_subset(&r.bound_vars()))
            .expect("action variables are bound by the end rule at the latest");
        host.equalities.push(replaced);
    }
    Ok(rules)
}

/// The builtin trigger rules shared by every monitored role: receiving a
/// message, sampling randomness, and sending.
pub fn special_rules() -> Vec<ExtendedRule> {
    let x = Variable::msg("x");
    let k = Variable::fresh("k");

    let mut receive = ExtendedRule::new("__receive");
    receive.trigger = Some(Trigger {
        name: "receive".into(),
        args: Vec::new(),
        ret: Term::Var(x.clone()),
    });
    receive.conclusion = vec![Fact::new("In", vec![Term::Var(x.clone())])];

    let mut random = ExtendedRule::new("__random");
    random.trigger = Some(Trigger {
        name: "random".into(),
        args: Vec::new(),
        ret: Term::Var(k.clone()),
    });
    random.conclusion = vec![Fact::new("Fr", vec![Term::Var(k)])];

    let mut send = ExtendedRule::new("__send");
    send.premise = vec![Fact::new("Out", vec![Term::Var(x.clone())])];
    send.trigger = Some(Trigger {
        name: "send".into(),
        args: vec![Term::Var(x)],
        ret: Term::BitLit(Vec::new()),
    });

    vec![receive, random, send]
}

/// Decomposes a full ruleset for direct monitoring: splits every rule,
/// attaches hints, and appends the builtin receive/random/send rules.
pub fn split_ruleset(rules: &[ExtendedRule]) -> Result<Vec<ExtendedRule>, DecomposeError> {
    let mut out = decompose_for_rewrite(rules)?;
    out.extend(special_rules());
    Ok(out)
}

/// Decomposition without the builtin I/O rules, for trace-rewriting layers
/// that define their own triggers.
pub fn decompose_for_rewrite(
    rules: &[ExtendedRule],
) -> Result<Vec<ExtendedRule>, DecomposeError> {
    let mut out = Vec::new();
    for rule in rules {
        let mut split = split_rule(rule)?;
        add_hints(&mut split);
        out.append(&mut split);
    }
    Ok(out)
}

/// Hints for a freshly split rule: the start rule announces the triggers
/// of every mid fed entirely by the start rule, phrased over the original
/// argument terms.
fn add_hints(split: &mut [ExtendedRule]) {
    if split.len() < 2 {
        return;
    }
    let start_symbols: BTreeSet<String> =
        split[0].conclusion.iter().map(|f| f.symbol.clone()).collect();
    let mut hints = Vec::new();
    for rule in split[1..].iter() {
        let Some(trigger) = &rule.trigger else { continue };
        if !rule.premise.iter().all(|f| start_symbols.contains(&f.symbol)) {
            continue;
        }
        // Recover the original argument terms: start transports them in
        // the value slot of the facts this mid consumes.
        let value_of: BTreeMap<&str, &Term> = split[0]
            .conclusion
            .iter()
            .filter_map(|f| Some((f.symbol.as_str(), f.args.last()?)))
            .collect();
        let mid_value: BTreeMap<String, Term> = rule
            .premise
            .iter()
            .filter_map(|f| {
                let var = match f.args.last() {
                    Some(Term::Var(v)) => v.label.clone(),
                    _ => return None,
                };
                let original = value_of.get(f.symbol.as_str())?;
                Some((var, (*original).clone()))
            })
            .collect();
        let args: Vec<Term> = trigger
            .args
            .iter()
            .map(|arg| match arg {
                Term::Var(v) => mid_value.get(&v.label).cloned().unwrap_or_else(|| arg.clone()),
                other => other.clone(),
            })
            .collect();
        hints.push(Trigger { name: trigger.name.clone(), args, ret: trigger.ret.clone() });
    }
    split[0].hints = hints;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{elaborate, parse_spec};
    use std::collections::BTreeSet as Set;

    fn rules_of(src: &str) -> Vec<ExtendedRule> {
        let flags: Set<String> = ["MONITOR".to_string()].into_iter().collect();
        let spec = parse_spec(src, &flags).unwrap();
        let elab = elaborate(&spec);
        assert!(elab.rule_errors.is_empty(), "{:?}", elab.rule_errors);
        elab.rules
    }

    fn split_one(src: &str) -> Vec<ExtendedRule> {
        let rules = rules_of(src);
        let mut split = split_rule(&rules[0]).unwrap();
        add_hints(&mut split);
        split
    }

    #[test]
    fn function_free_rules_pass_through() {
        let split = split_one("rule R: [ A(x) ] --[ E(x) ]-> [ B(x) ]");
        assert_eq!(split.len(), 1);
        assert_eq!(split[0].name, "R");
        assert_eq!(split[0].events.len(), 1);
    }

    #[test]
    fn two_nested_calls_give_five_rules() {
        let split = split_one(
            "functions: h/1, fs/2\n\
             rule RF: [ S0(x, y) ] --> [ S1(fs(h(x), h(y))) ]",
        );
        assert_eq!(split.len(), 5);
        let names: Vec<&str> = split.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["RF__start", "RF__mid_0", "RF__mid_1", "RF__mid_2", "RF__end"]
        );

        let start = &split[0];
        assert_eq!(start.premise[0].symbol, "S0");
        assert_eq!(start.conclusion.len(), 2, "one transport per leaf argument");
        assert_eq!(start.hints.len(), 2, "both h calls can come first");
        assert!(start.hints.iter().any(|h| h.args == vec![Term::var("x")]));
        assert!(start.hints.iter().any(|h| h.args == vec![Term::var("y")]));

        // Innermost first: h(x), h(y), then fs.
        let t0 = split[1].trigger.as_ref().unwrap();
        assert_eq!((t0.name.as_str(), t0.args.len()), ("h", 1));
        let t2 = split[3].trigger.as_ref().unwrap();
        assert_eq!((t2.name.as_str(), t2.args.len()), ("fs", 2));
        assert_eq!(split[3].premise.len(), 2, "fs consumes both h results");

        let end = &split[4];
        assert!(end.is_epsilon());
        assert_eq!(end.premise.len(), 1);
        assert_eq!(end.conclusion[0].symbol, "S1");
        assert_eq!(end.conclusion[0].args, vec![Term::Var(result_var(2))]);
    }

    #[test]
    fn single_call_rule_splits_into_three() {
        let split = split_one(
            "functions: hmac/2\n\
             rule R: [ In(m), Fr(k) ] --> [ Out(hmac(k, m)) ]",
        );
        assert_eq!(split.len(), 3);
        let start = &split[0];
        assert_eq!(start.premise.len(), 2);
        assert_eq!(start.conclusion.len(), 2);
        // Transport facts carry the premise binding (m, k) plus the value.
        assert_eq!(start.conclusion[0].args.len(), 3);

        let mid = &split[1];
        let t = mid.trigger.as_ref().unwrap();
        assert_eq!(t.name, "hmac");
        assert_eq!(t.args.len(), 2);
        assert_eq!(mid.premise.len(), 2);

        assert_eq!(start.hints.len(), 1);
        assert_eq!(start.hints[0].name, "hmac");
        assert_eq!(start.hints[0].args, vec![Term::var("k"), Term::var("m")]);

        let end = &split[2];
        assert_eq!(end.conclusion[0].symbol, "Out");
    }

    #[test]
    fn shared_arguments_share_one_transport() {
        let split = split_one(
            "functions: h/1, fs/2\n\
             rule R: [ S0(x) ] --> [ S1(fs(h(x), h(x))) ]",
        );
        // Occurrences are a set: h(x) appears once, fs once.
        assert_eq!(split.len(), 4);
        let fs_mid = split
            .iter()
            .find(|r| r.trigger.as_ref().map(|t| t.name.as_str()) == Some("fs"))
            .unwrap();
        assert_eq!(fs_mid.premise.len(), 1, "identical arguments share a transport");
        let t = fs_mid.trigger.as_ref().unwrap();
        assert_eq!(t.args[0], t.args[1], "both positions bind the same variable");
    }

    #[test]
    fn events_are_emitted_by_the_end_rule() {
        let split = split_one(
            "functions: h/1\n\
             rule R: [ S0(x) ] --[ E(h(x)) ]-> [ S1(h(x)) ]",
        );
        assert_eq!(split.len(), 3);
        for rule in &split[..2] {
            assert!(rule.events.is_empty());
        }
        let end = &split[2];
        assert_eq!(end.events.len(), 1);
        assert_eq!(end.events[0].args, vec![Term::Var(result_var(0))]);
    }

    #[test]
    fn action_only_computations_are_rejected() {
        let rules = rules_of(
            "functions: h/1, g/1\n\
             rule R: [ S0(x) ] --[ E(g(x)) ]-> [ S1(h(x)) ]",
        );
        let err = split_rule(&rules[0]).unwrap_err();
        assert!(matches!(err, DecomposeError::ActionComputation { .. }));
        assert!(err.to_string().contains("g(x)"));
    }

    #[test]
    fn computation_inside_format_argument_is_rejected() {
        let rules = rules_of(
            "functions: h/1, g/1\n\
             macros: fmt(a) = cat(byte('0x01'), byte(a))\n\
             rule R: [ S0(x) ] --> [ S1(h(fmt(g(x)))) ]",
        );
        let err = split_rule(&rules[0]).unwrap_err();
        assert!(matches!(err, DecomposeError::OpaqueNesting { .. }));
    }

    #[test]
    fn format_wrapped_results_stay_on_the_end_rule() {
        // A call nested in a format argument of a *fact* is fine: the
        // format is evaluated by the engine, so the call is top-level.
        let split = split_one(
            "functions: h/1\n\
             macros: fmt(a, b) = cat(byte('0x01'), byte(a, '4'), byte(b))\n\
             rule R: [ S0(x, y) ] --> [ Out(fmt(x, h(y))) ]",
        );
        assert_eq!(split.len(), 3);
        let end = &split[2];
        match &end.conclusion[0].args[0] {
            Term::Format(name, args) => {
                assert_eq!(name, "fmt");
                assert_eq!(args[1], Term::Var(result_var(0)));
            }
            other => panic!("expected format, got {other}"),
        }
    }

    #[test]
    fn trigger_rules_must_be_computation_free() {
        let rules = rules_of(
            "functions: h/1\n\
             rule R: [ S0(x) ] --[ Trig('f', <x>, r) ]-> [ S1(h(x)) ]",
        );
        let err = split_rule(&rules[0]).unwrap_err();
        assert!(matches!(err, DecomposeError::TriggerRuleComputes { .. }));
    }

    #[test]
    fn zero_arity_calls_get_a_control_transport() {
        let split = split_one(
            "functions: nonce/0\n\
             rule R: [ A(x) ] --> [ B(x, nonce()) ]",
        );
        assert_eq!(split.len(), 3);
        let start = &split[0];
        assert_eq!(start.conclusion.len(), 1);
        assert_eq!(start.conclusion[0].args.len(), 1, "binding only, no value slot");
        let mid = &split[1];
        assert!(mid.trigger.as_ref().unwrap().args.is_empty());
        assert_eq!(split[2].conclusion[0].args[1], Term::Var(result_var(0)));
    }

    #[test]
    fn equality_lands_on_the_earliest_binding_rule() {
        let split = split_one(
            "functions: hmac/2, payload/3, data/2\n\
             macros:\n\
               payload(t,m,h) = cat(int(l,'8'),byte(t,'1'),string(m,l),byte(h)),\n\
               data(t, m) = cat(int(l, '8'), byte(t, '1'), string(m, l))\n\
             rule Server [role=Server]:\n\
               let  p = payload('0x02', m, h)\n\
                   hp = hmac('secret', data('0x02', m)) in\n\
               [ In(p) ] --[ ServerAccept(m), Eq(h, hp) ]-> [ Accept(h, hp) ]",
        );
        assert_eq!(split.len(), 3);
        let mid = &split[1];
        assert_eq!(mid.trigger.as_ref().unwrap().name, "hmac");
        assert_eq!(mid.equalities.len(), 1, "check fires at the hmac call itself");
        assert_eq!(mid.equalities[0].display, "Eq(h, hp)");
        assert_eq!(mid.equalities[0].lhs, Term::var("h"));
        assert_eq!(mid.equalities[0].rhs, Term::Var(result_var(0)));
        assert!(split[0].equalities.is_empty());
        assert!(split[2].equalities.is_empty());
        // The hint still looks ahead with the original terms.
        let hint = &split[0].hints[0];
        assert_eq!(hint.name, "hmac");
        assert_eq!(hint.args[0], Term::pub_name(b"secret".to_vec()));
        assert!(matches!(&hint.args[1], Term::Format(n, _) if n == "data"));
    }

    #[test]
    fn variable_only_equalities_go_on_the_start_rule() {
        let split = split_one(
            "functions: h/1\n\
             rule R: [ A(x, y) ] --[ Eq(x, y) ]-> [ B(h(x)) ]",
        );
        assert_eq!(split[0].equalities.len(), 1);
    }

    #[test]
    fn special_rules_cover_io_and_randomness() {
        let rules = special_rules();
        assert_eq!(rules.len(), 3);
        let receive = &rules[0];
        assert_eq!(receive.trigger.as_ref().unwrap().name, "receive");
        assert!(receive.premise.is_empty());
        assert_eq!(receive.conclusion[0].symbol, "In");
        let random = &rules[1];
        assert_eq!(random.conclusion[0].symbol, "Fr");
        let send = &rules[2];
        assert_eq!(send.premise[0].symbol, "Out");
        assert_eq!(send.trigger.as_ref().unwrap().ret, Term::BitLit(Vec::new()));
        assert!(send.conclusion.is_empty());
    }

    #[test]
    fn ruleset_split_is_deterministic() {
        let rules = rules_of(
            "functions: h/1, fs/2\n\
             rule RF: [ S0(x, y) ] --> [ S1(fs(h(x), h(y))) ]",
        );
        let a = split_ruleset(&rules).unwrap();
        let b = split_ruleset(&rules).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5 + 3);
    }
}
