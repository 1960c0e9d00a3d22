//! Terms, runtime values, facts and the matching primitives used by the
//! monitor engine.
//!
//! Rule patterns are [`Term`]s. At runtime every observed value is a
//! [`Value`]: either an opaque byte string or a natural number. Matching a
//! pattern against values produces a [`Substitution`] from variable labels
//! to values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;

use crate::formats::{FormatError, FormatRegistry};

/// Variable sorts. `Msg` admits any value, `Fresh` and `Pub` admit byte
/// strings, `Nat` admits natural numbers only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sort {
    Msg,
    Fresh,
    Pub,
    Nat,
}

impl Sort {
    pub fn admits(&self, value: &Value) -> bool {
        match (self, value) {
            (Sort::Msg, _) => true,
            (Sort::Fresh, Value::Bytes(_)) | (Sort::Pub, Value::Bytes(_)) => true,
            (Sort::Nat, Value::Nat(_)) => true,
            _ => false,
        }
    }

    pub fn prefix(&self) -> &'static str {
        match self {
            Sort::Msg => "",
            Sort::Fresh => "~",
            Sort::Pub => "$",
            Sort::Nat => "%",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variable {
    pub label: String,
    pub sort: Sort,
}

impl Variable {
    pub fn msg(label: impl Into<String>) -> Self {
        Variable { label: label.into(), sort: Sort::Msg }
    }

    pub fn fresh(label: impl Into<String>) -> Self {
        Variable { label: label.into(), sort: Sort::Fresh }
    }
}

/// How a function symbol may be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    /// Uninterpreted function computed by the monitored program.
    User,
    /// Reserved input/output call names: `receive`, `random`, `send`.
    BuiltinIo,
    /// Symbol with a wire-format definition; evaluated by the engine.
    Format,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionSymbol {
    pub name: String,
    pub arity: usize,
    pub kind: SymbolKind,
}

/// Rule-level term syntax. Ground runtime values are represented by
/// `BitLit` and `NatLit`; `FreshName` only appears in symbolic reasoning,
/// never in a running monitor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(Variable),
    /// Public name literal, already encoded to bytes.
    PubName(Vec<u8>),
    /// Symbolic fresh name.
    FreshName(String),
    /// Byte string literal.
    BitLit(Vec<u8>),
    /// Natural number literal.
    NatLit(BigUint),
    /// Uninterpreted function application.
    App(String, Vec<Term>),
    /// Builtin byte concatenation; construction only.
    Cat(Vec<Term>),
    /// Format-string application, evaluated through the registry.
    Format(String, Vec<Term>),
}

impl Term {
    pub fn var(label: impl Into<String>) -> Self {
        Term::Var(Variable::msg(label))
    }

    pub fn pub_name(bytes: impl Into<Vec<u8>>) -> Self {
        Term::PubName(bytes.into())
    }

    pub fn app(name: impl Into<String>, args: Vec<Term>) -> Self {
        Term::App(name.into(), args)
    }

    pub fn format(name: impl Into<String>, args: Vec<Term>) -> Self {
        Term::Format(name.into(), args)
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::PubName(_) | Term::BitLit(_) | Term::NatLit(_) | Term::FreshName(_) => true,
            Term::App(_, args) | Term::Cat(args) | Term::Format(_, args) => {
                args.iter().all(Term::is_ground)
            }
        }
    }

    /// True when the term contains no uninterpreted function application,
    /// so the engine can evaluate it once its variables are bound.
    pub fn is_computation_free(&self) -> bool {
        match self {
            Term::App(_, _) => false,
            Term::Var(_)
            | Term::PubName(_)
            | Term::FreshName(_)
            | Term::BitLit(_)
            | Term::NatLit(_) => true,
            Term::Cat(args) | Term::Format(_, args) => {
                args.iter().all(Term::is_computation_free)
            }
        }
    }

    /// Collects variable labels in first-occurrence order.
    pub fn collect_vars(&self, out: &mut Vec<Variable>) {
        match self {
            Term::Var(v) => {
                if !out.iter().any(|u| u.label == v.label) {
                    out.push(v.clone());
                }
            }
            Term::App(_, args) | Term::Cat(args) | Term::Format(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
            _ => {}
        }
    }

    /// Replaces every occurrence of the variable `label` by `replacement`.
    pub fn subst_var(&self, label: &str, replacement: &Term) -> Term {
        match self {
            Term::Var(v) if v.label == label => replacement.clone(),
            Term::App(f, args) => {
                Term::App(f.clone(), args.iter().map(|a| a.subst_var(label, replacement)).collect())
            }
            Term::Cat(args) => {
                Term::Cat(args.iter().map(|a| a.subst_var(label, replacement)).collect())
            }
            Term::Format(f, args) => Term::Format(
                f.clone(),
                args.iter().map(|a| a.subst_var(label, replacement)).collect(),
            ),
            other => other.clone(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{}{}", v.sort.prefix(), v.label),
            Term::PubName(b) => write!(f, "'{}'", render_pub_bytes(b)),
            Term::FreshName(n) => write!(f, "~'{n}'"),
            Term::BitLit(b) => {
                if b.is_empty() {
                    write!(f, "<>")
                } else {
                    write!(f, "'0x{}'", hex::encode(b))
                }
            }
            Term::NatLit(n) => write!(f, "{n}"),
            Term::App(name, args) | Term::Format(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Term::Cat(args) => {
                write!(f, "cat(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Renders public-name bytes the way the parser accepts them: plain ASCII
/// when unambiguous, hex otherwise.
pub fn render_pub_bytes(b: &[u8]) -> String {
    let printable = !b.is_empty()
        && b.iter().all(|c| c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'.'));
    if printable && !b.starts_with(b"0x") {
        String::from_utf8(b.to_vec()).unwrap()
    } else {
        format!("0x{}", hex::encode(b))
    }
}

/// A ground runtime value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bytes(Vec<u8>),
    Nat(BigUint),
}

impl Value {
    pub fn bytes(b: impl Into<Vec<u8>>) -> Self {
        Value::Bytes(b.into())
    }

    pub fn nat(n: u64) -> Self {
        Value::Nat(BigUint::from(n))
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            Value::Nat(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bytes(b) if b.is_empty() => write!(f, "<>"),
            Value::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
            Value::Nat(n) => write!(f, "{n}"),
        }
    }
}

/// A fact pattern as written in a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub symbol: String,
    pub persistent: bool,
    pub args: Vec<Term>,
}

impl Fact {
    pub fn new(symbol: impl Into<String>, args: Vec<Term>) -> Self {
        Fact { symbol: symbol.into(), persistent: false, args }
    }

    pub fn persistent(symbol: impl Into<String>, args: Vec<Term>) -> Self {
        Fact { symbol: symbol.into(), persistent: true, args }
    }

    pub fn collect_vars(&self, out: &mut Vec<Variable>) {
        for a in &self.args {
            a.collect_vars(out);
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.persistent {
            write!(f, "!")?;
        }
        write!(f, "{}(", self.symbol)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// A fact over ground values, as stored in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundFact {
    pub symbol: String,
    pub persistent: bool,
    pub args: Vec<Value>,
}

impl GroundFact {
    pub fn new(symbol: impl Into<String>, args: Vec<Value>) -> Self {
        GroundFact { symbol: symbol.into(), persistent: false, args }
    }

    pub fn persistent(symbol: impl Into<String>, args: Vec<Value>) -> Self {
        GroundFact { symbol: symbol.into(), persistent: true, args }
    }
}

impl fmt::Display for GroundFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.persistent {
            write!(f, "!")?;
        }
        write!(f, "{}(", self.symbol)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Multiset of ground facts. Linear facts carry multiplicities, persistent
/// facts live in a set and are never consumed.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactMultiset {
    linear: BTreeMap<GroundFact, usize>,
    persistent: BTreeSet<GroundFact>,
}

impl FactMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fact: GroundFact) {
        if fact.persistent {
            self.persistent.insert(fact);
        } else {
            *self.linear.entry(fact).or_insert(0) += 1;
        }
    }

    /// Removes one copy of a linear fact. Returns false if absent.
    pub fn remove_linear(&mut self, fact: &GroundFact) -> bool {
        match self.linear.get_mut(fact) {
            Some(n) if *n > 1 => {
                *n -= 1;
                true
            }
            Some(_) => {
                self.linear.remove(fact);
                true
            }
            None => false,
        }
    }

    pub fn count_linear(&self, fact: &GroundFact) -> usize {
        self.linear.get(fact).copied().unwrap_or(0)
    }

    pub fn has_persistent(&self, fact: &GroundFact) -> bool {
        self.persistent.contains(fact)
    }

    pub fn iter_linear(&self) -> impl Iterator<Item = (&GroundFact, usize)> {
        self.linear.iter().map(|(f, n)| (f, *n))
    }

    pub fn iter_persistent(&self) -> impl Iterator<Item = &GroundFact> {
        self.persistent.iter()
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &GroundFact> {
        self.linear.keys().chain(self.persistent.iter())
    }

    /// Total number of fact copies.
    pub fn len(&self) -> usize {
        self.linear.values().sum::<usize>() + self.persistent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty() && self.persistent.is_empty()
    }
}

impl FromIterator<GroundFact> for FactMultiset {
    fn from_iter<T: IntoIterator<Item = GroundFact>>(iter: T) -> Self {
        let mut ms = FactMultiset::new();
        for f in iter {
            ms.insert(f);
        }
        ms
    }
}

/// Map from variable labels to ground values.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Substitution {
    map: BTreeMap<String, Value>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, label: &str) -> Option<&Value> {
        self.map.get(label)
    }

    /// Binds a variable, or checks consistency if already bound.
    pub fn bind(&mut self, var: &Variable, value: Value) -> bool {
        if !var.sort.admits(&value) {
            return false;
        }
        match self.map.get(&var.label) {
            Some(existing) => *existing == value,
            None => {
                self.map.insert(var.label.clone(), value);
                true
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Restricts the substitution to the given labels.
    pub fn restricted(&self, labels: &BTreeSet<String>) -> Substitution {
        Substitution {
            map: self
                .map
                .iter()
                .filter(|(k, _)| labels.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

impl FromIterator<(String, Value)> for Substitution {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Substitution { map: iter.into_iter().collect() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("variable {0} is unbound")]
    Unbound(String),
    #[error("cannot evaluate uninterpreted function {0}")]
    Uninterpreted(String),
    #[error("cannot evaluate symbolic fresh name {0}")]
    SymbolicFresh(String),
    #[error("cat expects byte-string arguments")]
    CatOnNat,
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Evaluates a term to a ground value under a substitution. Format
/// applications are constructed; uninterpreted functions fail.
pub fn eval_ground(
    term: &Term,
    subst: &Substitution,
    registry: &FormatRegistry,
) -> Result<Value, EvalError> {
    match term {
        Term::Var(v) => {
            subst.get(&v.label).cloned().ok_or_else(|| EvalError::Unbound(v.label.clone()))
        }
        Term::PubName(b) | Term::BitLit(b) => Ok(Value::Bytes(b.clone())),
        Term::NatLit(n) => Ok(Value::Nat(n.clone())),
        Term::FreshName(n) => Err(EvalError::SymbolicFresh(n.clone())),
        Term::App(f, _) => Err(EvalError::Uninterpreted(f.clone())),
        Term::Cat(args) => {
            let mut out = Vec::new();
            for a in args {
                match eval_ground(a, subst, registry)? {
                    Value::Bytes(b) => out.extend_from_slice(&b),
                    Value::Nat(_) => return Err(EvalError::CatOnNat),
                }
            }
            Ok(Value::Bytes(out))
        }
        Term::Format(name, args) => {
            let def = registry.get(name)?;
            let mut bindings = BTreeMap::new();
            for (param, arg) in def.params.iter().zip(args) {
                bindings.insert(param.clone(), eval_ground(arg, subst, registry)?);
            }
            Ok(Value::Bytes(registry.construct(name, &bindings)?))
        }
    }
}

/// Applies a substitution to a term. Bound variables become literals and
/// fully ground format or cat applications are evaluated to byte literals.
pub fn apply_subst(
    term: &Term,
    subst: &Substitution,
    registry: &FormatRegistry,
) -> Result<Term, EvalError> {
    match term {
        Term::Var(v) => Ok(match subst.get(&v.label) {
            Some(Value::Bytes(b)) => Term::BitLit(b.clone()),
            Some(Value::Nat(n)) => Term::NatLit(n.clone()),
            None => term.clone(),
        }),
        Term::App(f, args) => {
            let args = args
                .iter()
                .map(|a| apply_subst(a, subst, registry))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Term::App(f.clone(), args))
        }
        Term::Cat(args) | Term::Format(_, args) => {
            let new_args = args
                .iter()
                .map(|a| apply_subst(a, subst, registry))
                .collect::<Result<Vec<_>, _>>()?;
            let rebuilt = match term {
                Term::Cat(_) => Term::Cat(new_args),
                Term::Format(name, _) => Term::Format(name.clone(), new_args),
                _ => unreachable!(),
            };
            if rebuilt.is_ground() {
                match eval_ground(&rebuilt, subst, registry)? {
                    Value::Bytes(b) => Ok(Term::BitLit(b)),
                    Value::Nat(n) => Ok(Term::NatLit(n)),
                }
            } else {
                Ok(rebuilt)
            }
        }
        other => Ok(other.clone()),
    }
}

/// Matches a ground value against a pattern, extending `subst` with the
/// most general bindings. Returns false on mismatch; `subst` may then hold
/// partial bindings and should be discarded by the caller.
pub fn match_value(
    value: &Value,
    pattern: &Term,
    subst: &mut Substitution,
    registry: &FormatRegistry,
) -> bool {
    match pattern {
        Term::Var(v) => subst.bind(v, value.clone()),
        Term::PubName(b) | Term::BitLit(b) => value.as_bytes() == Some(b.as_slice()),
        Term::NatLit(n) => matches!(value, Value::Nat(m) if m == n),
        Term::FreshName(_) => false,
        Term::App(_, _) | Term::Cat(_) => false,
        Term::Format(name, args) => {
            let Some(data) = value.as_bytes() else { return false };
            let Ok(def) = registry.get(name) else { return false };
            let Ok(Some(bindings)) = registry.parse(name, data) else { return false };
            for (param, arg) in def.params.iter().zip(args) {
                let Some(v) = bindings.get(param) else { return false };
                if !match_value(v, arg, subst, registry) {
                    return false;
                }
            }
            true
        }
    }
}

/// Computes the most general substitution matching a ground value against
/// a pattern, if any.
pub fn mgs(value: &Value, pattern: &Term, registry: &FormatRegistry) -> Option<Substitution> {
    let mut subst = Substitution::new();
    match_value(value, pattern, &mut subst, registry).then_some(subst)
}

/// All most general substitutions under which the premise patterns embed
/// into the state. Linear patterns consume pairwise distinct fact copies,
/// persistent patterns match set members and may be shared.
pub fn multiset_match(
    state: &FactMultiset,
    premise: &[Fact],
    registry: &FormatRegistry,
) -> Vec<Substitution> {
    let mut results = BTreeSet::new();
    let mut used: BTreeMap<GroundFact, usize> = BTreeMap::new();
    go(state, premise, 0, &Substitution::new(), &mut used, &mut results, registry);
    return results.into_iter().collect();

    fn go(
        state: &FactMultiset,
        premise: &[Fact],
        idx: usize,
        subst: &Substitution,
        used: &mut BTreeMap<GroundFact, usize>,
        results: &mut BTreeSet<Substitution>,
        registry: &FormatRegistry,
    ) {
        if idx == premise.len() {
            results.insert(subst.clone());
            return;
        }
        let pattern = &premise[idx];
        let candidates: Vec<GroundFact> = if pattern.persistent {
            state
                .iter_persistent()
                .filter(|f| f.symbol == pattern.symbol && f.args.len() == pattern.args.len())
                .cloned()
                .collect()
        } else {
            state
                .iter_linear()
                .filter(|(f, _)| f.symbol == pattern.symbol && f.args.len() == pattern.args.len())
                .map(|(f, _)| f.clone())
                .collect()
        };
        for fact in candidates {
            if !pattern.persistent {
                let budget = state.count_linear(&fact);
                let taken = used.get(&fact).copied().unwrap_or(0);
                if taken >= budget {
                    continue;
                }
            }
            let mut extended = subst.clone();
            let ok = fact
                .args
                .iter()
                .zip(&pattern.args)
                .all(|(v, p)| match_value(v, p, &mut extended, registry));
            if !ok {
                continue;
            }
            if !pattern.persistent {
                *used.entry(fact.clone()).or_insert(0) += 1;
            }
            go(state, premise, idx + 1, &extended, used, results, registry);
            if !pattern.persistent {
                let n = used.get_mut(&fact).unwrap();
                *n -= 1;
                if *n == 0 {
                    used.remove(&fact);
                }
            }
        }
    }
}
