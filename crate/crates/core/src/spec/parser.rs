//! Recursive-descent parser for the specification dialect, plus the
//! post-parse resolution pass that distinguishes format applications from
//! declared function symbols.

use std::collections::BTreeMap;

use num_bigint::BigUint;

use super::lexer::Tok;
use super::{ActionArg, ActionFact, Mode, RuleAst, SpecError, SpecFile, RESERVED_PREFIX};
use crate::formats::{
    FieldContent, FormatDef, FormatField, LengthSpec, TypeTag, ValueExpr,
};
use crate::term::{Fact, Sort, Term, Variable};

/// Action symbols with reserved meaning; also barred as function names.
pub const RESERVED_ACTIONS: [&str; 4] = ["Trig", "Hint", "Eq", "Emit"];
/// Builtin term constructors that need no declaration.
const BUILTIN_TERMS: [&str; 2] = ["cat", "pair"];

pub(super) fn parse(tokens: Vec<(Tok, usize)>) -> Result<SpecFile, SpecError> {
    let mut parser = Parser { toks: tokens, pos: 0 };
    let mut spec = parser.parse_file()?;
    resolve(&mut spec)?;
    Ok(spec)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, l)| *l)
            .unwrap_or(1)
    }

    fn next(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn err(&self, msg: impl Into<String>) -> SpecError {
        SpecError::syntax(self.line(), msg)
    }

    fn expect(&mut self, tok: Tok) -> Result<(), SpecError> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            Some(t) => Err(SpecError::syntax(
                self.toks[self.pos - 1].1,
                format!("expected `{tok}`, found `{t}`"),
            )),
            None => Err(self.err(format!("expected `{tok}`, found end of input"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, SpecError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            Some(t) => Err(SpecError::syntax(
                self.toks[self.pos - 1].1,
                format!("expected an identifier, found `{t}`"),
            )),
            None => Err(self.err("expected an identifier, found end of input")),
        }
    }

    fn check_name(&self, name: &str, what: &str, line: usize) -> Result<(), SpecError> {
        if name.starts_with(RESERVED_PREFIX) {
            return Err(SpecError::syntax(
                line,
                format!("{what} `{name}` uses the reserved `{RESERVED_PREFIX}` prefix"),
            ));
        }
        Ok(())
    }

    fn parse_file(&mut self) -> Result<SpecFile, SpecError> {
        let mut spec = SpecFile::default();
        while let Some(tok) = self.peek() {
            match tok.clone() {
                Tok::Ident(kw) => match kw.as_str() {
                    "theory" => {
                        self.next();
                        spec.name = Some(self.expect_ident()?);
                    }
                    "begin" | "end" => {
                        self.next();
                    }
                    "functions" => {
                        self.next();
                        self.expect(Tok::Colon)?;
                        self.parse_functions(&mut spec)?;
                    }
                    "equations" => {
                        self.next();
                        self.expect(Tok::Colon)?;
                        self.parse_equations(&mut spec)?;
                    }
                    "macros" => {
                        self.next();
                        self.expect(Tok::Colon)?;
                        self.parse_macros(&mut spec)?;
                    }
                    "mode" => {
                        self.next();
                        self.expect(Tok::Colon)?;
                        let line = self.line();
                        let value = self.expect_ident()?;
                        match value.as_str() {
                            "rewrite" => spec.mode = Some(Mode::Rewrite),
                            other => {
                                return Err(SpecError::syntax(
                                    line,
                                    format!("unknown mode `{other}`"),
                                ));
                            }
                        }
                    }
                    "rule" => {
                        self.next();
                        let rule = self.parse_rule()?;
                        spec.rules.push(rule);
                    }
                    other => {
                        spec.warnings.push(format!(
                            "line {}: skipping unrecognized section `{other}`",
                            self.line()
                        ));
                        self.next();
                        self.skip_unknown_section();
                    }
                },
                other => {
                    return Err(self.err(format!("expected a section keyword, found `{other}`")));
                }
            }
        }
        let mut seen = BTreeMap::new();
        for rule in &spec.rules {
            if let Some(prev) = seen.insert(rule.name.clone(), rule.line) {
                return Err(SpecError::syntax(
                    rule.line,
                    format!("duplicate rule name `{}` (first defined on line {prev})", rule.name),
                ));
            }
        }
        Ok(spec)
    }

    fn at_section_start(&self) -> bool {
        match self.peek() {
            Some(Tok::Ident(s)) => match s.as_str() {
                "theory" | "begin" | "end" | "rule" => true,
                // Common Tamarin sections we skip; recognizing them keeps
                // one warning per skipped section.
                "builtins" | "lemma" | "restriction" | "axiom" | "predicates"
                | "heuristic" | "tactic" | "options" | "diffLemma" => true,
                "functions" | "equations" | "macros" | "mode" => {
                    matches!(self.peek2(), Some(Tok::Colon))
                }
                _ => false,
            },
            _ => false,
        }
    }

    fn skip_unknown_section(&mut self) {
        while self.peek().is_some() && !self.at_section_start() {
            self.next();
        }
    }

    fn parse_functions(&mut self, spec: &mut SpecFile) -> Result<(), SpecError> {
        loop {
            let line = self.line();
            let name = self.expect_ident()?;
            self.check_name(&name, "function", line)?;
            if RESERVED_ACTIONS.contains(&name.as_str()) || BUILTIN_TERMS.contains(&name.as_str())
            {
                return Err(SpecError::syntax(line, format!("`{name}` is a reserved symbol")));
            }
            self.expect(Tok::Slash)?;
            let arity = match self.next() {
                Some(Tok::Num(n)) => n.parse::<usize>().map_err(|_| {
                    SpecError::syntax(line, format!("invalid arity `{n}`"))
                })?,
                _ => return Err(SpecError::syntax(line, "expected an arity after `/`")),
            };
            if matches!(self.peek(), Some(Tok::LBracket)) {
                // Attribute list such as [private]; recorded nowhere.
                while !matches!(self.next(), Some(Tok::RBracket) | None) {}
            }
            if spec.functions.insert(name.clone(), arity).is_some() {
                return Err(SpecError::syntax(
                    line,
                    format!("duplicate declaration of function `{name}`"),
                ));
            }
            if matches!(self.peek(), Some(Tok::Comma)) {
                self.next();
                // Tolerate a trailing comma before the next section.
                if !matches!(self.peek(), Some(Tok::Ident(_))) || self.at_section_start() {
                    break;
                }
            } else {
                break;
            }
        }
        Ok(())
    }

    fn parse_equations(&mut self, spec: &mut SpecFile) -> Result<(), SpecError> {
        loop {
            let lhs = self.parse_term()?;
            self.expect(Tok::Equals)?;
            let rhs = self.parse_term()?;
            spec.equations.push((lhs, rhs));
            if matches!(self.peek(), Some(Tok::Comma)) {
                self.next();
                if self.at_section_start() || self.peek().is_none() {
                    break;
                }
            } else {
                break;
            }
        }
        Ok(())
    }

    fn parse_macros(&mut self, spec: &mut SpecFile) -> Result<(), SpecError> {
        loop {
            let line = self.line();
            let name = self.expect_ident()?;
            self.check_name(&name, "macro", line)?;
            self.expect(Tok::LParen)?;
            let mut params = Vec::new();
            if !matches!(self.peek(), Some(Tok::RParen)) {
                loop {
                    params.push(self.expect_ident()?);
                    if matches!(self.peek(), Some(Tok::Comma)) {
                        self.next();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RParen)?;
            self.expect(Tok::Equals)?;
            let fields = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "cat")
                && matches!(self.peek2(), Some(Tok::LParen))
            {
                self.next();
                self.expect(Tok::LParen)?;
                let mut fields = Vec::new();
                loop {
                    fields.push(self.parse_field()?);
                    if matches!(self.peek(), Some(Tok::Comma)) {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RParen)?;
                fields
            } else {
                vec![self.parse_field()?]
            };
            let def = FormatDef::new(name, params, fields)?;
            spec.formats.insert(def)?;
            if matches!(self.peek(), Some(Tok::Comma)) {
                self.next();
                if self.at_section_start() || self.peek().is_none() {
                    break;
                }
            } else {
                break;
            }
        }
        Ok(())
    }

    fn parse_field(&mut self) -> Result<FormatField, SpecError> {
        let line = self.line();
        let kind = self.expect_ident()?;
        let tag = match kind.as_str() {
            "byte" => TypeTag::Byte,
            "int" => TypeTag::Int,
            "string" => TypeTag::Str,
            other => {
                return Err(SpecError::syntax(
                    line,
                    format!("expected a field (byte/int/string), found `{other}`"),
                ));
            }
        };
        self.expect(Tok::LParen)?;
        let expr = self.parse_field_expr(line)?;
        let length = if matches!(self.peek(), Some(Tok::Comma)) {
            self.next();
            Some(self.parse_length(line)?)
        } else {
            None
        };
        self.expect(Tok::RParen)?;

        let content = match expr {
            ValueExpr::Var(v) => FieldContent::Var(v),
            ValueExpr::Bytes(b) if tag != TypeTag::Int => FieldContent::Const(b),
            ValueExpr::Bytes(b) => {
                // Constant int field: normalize through the numeric value.
                let n = BigUint::from_bytes_be(&b);
                let w = match length {
                    Some(LengthSpec::Const(w)) => w,
                    _ => {
                        return Err(SpecError::syntax(
                            line,
                            "constant int field requires a fixed width",
                        ));
                    }
                };
                FieldContent::Const(encode_const_nat(&n, w, line)?)
            }
            ValueExpr::Nat(n) => {
                if tag != TypeTag::Int {
                    return Err(SpecError::syntax(
                        line,
                        "numeric constant in a byte field; use a quoted literal",
                    ));
                }
                let w = match length {
                    Some(LengthSpec::Const(w)) => w,
                    _ => {
                        return Err(SpecError::syntax(
                            line,
                            "constant int field requires a fixed width",
                        ));
                    }
                };
                FieldContent::Const(encode_const_nat(&n, w, line)?)
            }
            expr => FieldContent::Expr(expr),
        };
        let length = match (length, &content) {
            (Some(spec), _) => spec,
            (None, FieldContent::Const(b)) => LengthSpec::Const(b.len()),
            (None, _) => LengthSpec::Rest,
        };
        Ok(FormatField { content, tag, length })
    }

    fn parse_field_expr(&mut self, line: usize) -> Result<ValueExpr, SpecError> {
        let mut acc = self.parse_field_atom(line)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => Tok::Plus,
                Some(Tok::Amp) => Tok::Amp,
                Some(Tok::Pipe) => Tok::Pipe,
                _ => break,
            };
            self.next();
            let rhs = self.parse_field_atom(line)?;
            acc = match op {
                Tok::Plus => ValueExpr::Add(Box::new(acc), Box::new(rhs)),
                Tok::Amp => ValueExpr::And(Box::new(acc), Box::new(rhs)),
                _ => ValueExpr::Or(Box::new(acc), Box::new(rhs)),
            };
        }
        Ok(acc)
    }

    fn parse_field_atom(&mut self, line: usize) -> Result<ValueExpr, SpecError> {
        match self.next() {
            Some(Tok::Ident(v)) => {
                self.check_name(&v, "variable", line)?;
                Ok(ValueExpr::Var(v))
            }
            Some(Tok::Num(n)) => Ok(ValueExpr::Nat(BigUint::parse_bytes(n.as_bytes(), 10)
                .ok_or_else(|| SpecError::syntax(line, format!("invalid number `{n}`")))?)),
            Some(Tok::Quoted(s)) => Ok(ValueExpr::Bytes(decode_quoted(&s, line)?)),
            Some(Tok::LParen) => {
                let inner = self.parse_field_expr(line)?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => Err(SpecError::syntax(
                line,
                format!(
                    "expected a field expression, found `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ),
            )),
        }
    }

    fn parse_length(&mut self, line: usize) -> Result<LengthSpec, SpecError> {
        match self.next() {
            Some(Tok::Num(n)) => Ok(LengthSpec::Const(parse_width(&n, line)?)),
            Some(Tok::Quoted(s)) => Ok(LengthSpec::Const(parse_width(&s, line)?)),
            Some(Tok::Ident(name)) if name == "reverse" => {
                self.expect(Tok::LParen)?;
                let inner = self.parse_length(line)?;
                self.expect(Tok::RParen)?;
                match inner {
                    LengthSpec::Var { label, reverse } => {
                        Ok(LengthSpec::Var { label, reverse: !reverse })
                    }
                    _ => Err(SpecError::syntax(line, "reverse() applies to length variables")),
                }
            }
            Some(Tok::Ident(label)) => {
                self.check_name(&label, "variable", line)?;
                Ok(LengthSpec::Var { label, reverse: false })
            }
            other => Err(SpecError::syntax(
                line,
                format!(
                    "expected a field length, found `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ),
            )),
        }
    }

    fn parse_rule(&mut self) -> Result<RuleAst, SpecError> {
        let line = self.line();
        let name = self.expect_ident()?;
        self.check_name(&name, "rule", line)?;
        let mut role = None;
        if matches!(self.peek(), Some(Tok::LBracket)) {
            self.next();
            loop {
                let key = self.expect_ident()?;
                if matches!(self.peek(), Some(Tok::Equals)) {
                    self.next();
                    if key == "role" {
                        role = Some(match self.next() {
                            Some(Tok::Ident(v)) => v,
                            Some(Tok::Quoted(v)) => v,
                            _ => {
                                return Err(SpecError::syntax(
                                    line,
                                    "role attribute expects a name",
                                ));
                            }
                        });
                    } else {
                        // Unknown attribute value (color=#abc …): skip tokens.
                        while !matches!(self.peek(), Some(Tok::Comma | Tok::RBracket) | None) {
                            self.next();
                        }
                    }
                }
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RBracket) => break,
                    _ => return Err(SpecError::syntax(line, "unterminated attribute list")),
                }
            }
        }
        self.expect(Tok::Colon)?;

        let mut lets = Vec::new();
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "let") {
            self.next();
            loop {
                let let_line = self.line();
                let label = self.expect_ident()?;
                self.check_name(&label, "let binding", let_line)?;
                self.expect(Tok::Equals)?;
                let body = self.parse_term()?;
                lets.push((label, body));
                match self.peek() {
                    Some(Tok::Ident(s)) if s == "in" => {
                        self.next();
                        break;
                    }
                    Some(Tok::Ident(_)) if matches!(self.peek2(), Some(Tok::Equals)) => continue,
                    _ => {
                        return Err(self.err("expected `in` or another binding after `let`"));
                    }
                }
            }
        }

        let premise = self.parse_fact_list()?;
        let mut actions = Vec::new();
        match self.next() {
            Some(Tok::ArrowPlain) => {}
            Some(Tok::ActOpen) => {
                if !matches!(self.peek(), Some(Tok::ActClose)) {
                    loop {
                        actions.push(self.parse_action_fact()?);
                        if matches!(self.peek(), Some(Tok::Comma)) {
                            self.next();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::ActClose)?;
            }
            _ => return Err(self.err("expected `-->` or `--[` after the premise")),
        }
        let conclusion = self.parse_fact_list()?;
        Ok(RuleAst { name, role, lets, premise, actions, conclusion, line })
    }

    fn parse_fact_list(&mut self) -> Result<Vec<Fact>, SpecError> {
        self.expect(Tok::LBracket)?;
        let mut facts = Vec::new();
        if !matches!(self.peek(), Some(Tok::RBracket)) {
            loop {
                facts.push(self.parse_fact()?);
                if matches!(self.peek(), Some(Tok::Comma)) {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RBracket)?;
        Ok(facts)
    }

    fn parse_fact(&mut self) -> Result<Fact, SpecError> {
        let line = self.line();
        let persistent = if matches!(self.peek(), Some(Tok::Bang)) {
            self.next();
            true
        } else {
            false
        };
        let name = self.expect_ident()?;
        self.check_name(&name, "fact", line)?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Some(Tok::RParen)) {
            loop {
                args.push(self.parse_term()?);
                if matches!(self.peek(), Some(Tok::Comma)) {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        Ok(Fact { symbol: name, persistent, args })
    }

    fn parse_action_fact(&mut self) -> Result<ActionFact, SpecError> {
        let line = self.line();
        if matches!(self.peek(), Some(Tok::Bang)) {
            return Err(SpecError::syntax(line, "action facts cannot be persistent"));
        }
        let name = self.expect_ident()?;
        self.check_name(&name, "action fact", line)?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if !matches!(self.peek(), Some(Tok::RParen)) {
            loop {
                if matches!(self.peek(), Some(Tok::LAngle)) {
                    self.next();
                    let mut items = Vec::new();
                    if !matches!(self.peek(), Some(Tok::RAngle)) {
                        loop {
                            items.push(self.parse_term()?);
                            if matches!(self.peek(), Some(Tok::Comma)) {
                                self.next();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RAngle)?;
                    args.push(ActionArg::Tuple(items));
                } else {
                    args.push(ActionArg::Term(self.parse_term()?));
                }
                if matches!(self.peek(), Some(Tok::Comma)) {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        Ok(ActionFact { name, args, line })
    }

    fn parse_term(&mut self) -> Result<Term, SpecError> {
        let line = self.line();
        match self.next() {
            Some(Tok::Tilde) => {
                let label = self.expect_ident()?;
                self.check_name(&label, "variable", line)?;
                Ok(Term::Var(Variable { label, sort: Sort::Fresh }))
            }
            Some(Tok::Dollar) => {
                let label = self.expect_ident()?;
                self.check_name(&label, "variable", line)?;
                Ok(Term::Var(Variable { label, sort: Sort::Pub }))
            }
            Some(Tok::Percent) => {
                let label = self.expect_ident()?;
                self.check_name(&label, "variable", line)?;
                Ok(Term::Var(Variable { label, sort: Sort::Nat }))
            }
            Some(Tok::Num(n)) => Ok(Term::NatLit(
                BigUint::parse_bytes(n.as_bytes(), 10)
                    .ok_or_else(|| SpecError::syntax(line, format!("invalid number `{n}`")))?,
            )),
            Some(Tok::Quoted(s)) => {
                if s.is_empty() {
                    Ok(Term::BitLit(Vec::new()))
                } else {
                    Ok(Term::PubName(decode_quoted(&s, line)?))
                }
            }
            Some(Tok::LAngle) => {
                if matches!(self.peek(), Some(Tok::RAngle)) {
                    self.next();
                    return Ok(Term::BitLit(Vec::new()));
                }
                let mut items = Vec::new();
                loop {
                    items.push(self.parse_term()?);
                    if matches!(self.peek(), Some(Tok::Comma)) {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RAngle)?;
                Ok(fold_pairs(items))
            }
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.next();
                    let mut args = Vec::new();
                    if !matches!(self.peek(), Some(Tok::RParen)) {
                        loop {
                            args.push(self.parse_term()?);
                            if matches!(self.peek(), Some(Tok::Comma)) {
                                self.next();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    if name == "cat" {
                        Ok(Term::Cat(args))
                    } else {
                        self.check_name(&name, "function", line)?;
                        Ok(Term::App(name, args))
                    }
                } else {
                    self.check_name(&name, "variable", line)?;
                    Ok(Term::Var(Variable { label: name, sort: Sort::Msg }))
                }
            }
            other => Err(SpecError::syntax(
                line,
                format!(
                    "expected a term, found `{}`",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                ),
            )),
        }
    }
}

fn fold_pairs(mut items: Vec<Term>) -> Term {
    let last = items.pop().expect("tuple has at least one item");
    items
        .into_iter()
        .rev()
        .fold(last, |acc, item| Term::App("pair".into(), vec![item, acc]))
}

fn parse_width(s: &str, line: usize) -> Result<usize, SpecError> {
    s.parse::<usize>()
        .map_err(|_| SpecError::syntax(line, format!("invalid field width `{s}`")))
}

fn encode_const_nat(n: &BigUint, width: usize, line: usize) -> Result<Vec<u8>, SpecError> {
    let raw = n.to_bytes_be();
    let raw = if raw == [0] { Vec::new() } else { raw };
    if raw.len() > width {
        return Err(SpecError::syntax(
            line,
            format!("constant does not fit in {width} bytes"),
        ));
    }
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    Ok(out)
}

/// Decodes a quoted source literal: `0x…` (even digit count) is raw bytes,
/// anything else is taken as ASCII.
pub fn decode_quoted(s: &str, line: usize) -> Result<Vec<u8>, SpecError> {
    if let Some(hexpart) = s.strip_prefix("0x") {
        if hexpart.len() % 2 != 0 {
            return Err(SpecError::syntax(
                line,
                format!("hex literal '0x{hexpart}' has an odd number of digits"),
            ));
        }
        return hex::decode(hexpart).map_err(|_| {
            SpecError::syntax(line, format!("invalid hex literal '0x{hexpart}'"))
        });
    }
    Ok(s.as_bytes().to_vec())
}

/// Resolves applications: macro names become format constructors, declared
/// functions are arity-checked, anything else is an error. Also validates
/// the reserved fact names.
fn resolve(spec: &mut SpecFile) -> Result<(), SpecError> {
    // Equations are inert; formats are still resolved for display fidelity,
    // but unknown symbols are tolerated (they may come from skipped
    // builtins).
    let formats = spec.formats.clone();
    for (lhs, rhs) in &mut spec.equations {
        resolve_term_lenient(lhs, &formats);
        resolve_term_lenient(rhs, &formats);
    }
    let functions = spec.functions.clone();
    for rule in &mut spec.rules {
        let rule_name = rule.name.clone();
        let ctx = |msg: String| SpecError::Rule { rule: rule_name.clone(), msg };
        for (_, body) in &mut rule.lets {
            resolve_term(body, &functions, &formats).map_err(&ctx)?;
        }
        for fact in rule.premise.iter_mut().chain(rule.conclusion.iter_mut()) {
            check_fact_shape(fact).map_err(&ctx)?;
            for arg in &mut fact.args {
                resolve_term(arg, &functions, &formats).map_err(&ctx)?;
            }
        }
        for action in &mut rule.actions {
            for arg in &mut action.args {
                match arg {
                    ActionArg::Term(t) => resolve_term(t, &functions, &formats).map_err(&ctx)?,
                    ActionArg::Tuple(items) => {
                        for t in items {
                            resolve_term(t, &functions, &formats).map_err(&ctx)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_fact_shape(fact: &Fact) -> Result<(), String> {
    if RESERVED_ACTIONS.contains(&fact.symbol.as_str()) {
        return Err(format!("`{}` is reserved for action position", fact.symbol));
    }
    let builtin_arity = match fact.symbol.as_str() {
        "In" | "Out" | "Fr" => Some(1),
        _ => None,
    };
    if let Some(expected) = builtin_arity {
        if fact.args.len() != expected {
            return Err(format!(
                "builtin fact {} expects {expected} argument(s), found {}",
                fact.symbol,
                fact.args.len()
            ));
        }
        if fact.persistent {
            return Err(format!("builtin fact {} cannot be persistent", fact.symbol));
        }
    }
    Ok(())
}

fn resolve_term(
    term: &mut Term,
    functions: &BTreeMap<String, usize>,
    formats: &crate::formats::FormatRegistry,
) -> Result<(), String> {
    match term {
        Term::App(name, args) => {
            for arg in args.iter_mut() {
                resolve_term(arg, functions, formats)?;
            }
            if let Ok(def) = formats.get(name) {
                if def.params.len() != args.len() {
                    return Err(format!(
                        "format {name} expects {} argument(s), found {}",
                        def.params.len(),
                        args.len()
                    ));
                }
                let args = std::mem::take(args);
                *term = Term::Format(name.clone(), args);
            } else if name == "pair" {
                if args.len() != 2 {
                    return Err("pair expects 2 arguments".into());
                }
            } else if let Some(&arity) = functions.get(name.as_str()) {
                if arity != args.len() {
                    return Err(format!(
                        "function {name} expects {arity} argument(s), found {}",
                        args.len()
                    ));
                }
            } else {
                return Err(format!("undeclared function symbol {name}/{}", args.len()));
            }
            Ok(())
        }
        Term::Cat(args) | Term::Format(_, args) => {
            for arg in args.iter_mut() {
                resolve_term(arg, functions, formats)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn resolve_term_lenient(term: &mut Term, formats: &crate::formats::FormatRegistry) {
    match term {
        Term::App(name, args) => {
            for arg in args.iter_mut() {
                resolve_term_lenient(arg, formats);
            }
            if formats.get(name).map(|d| d.params.len() == args.len()).unwrap_or(false) {
                let args = std::mem::take(args);
                *term = Term::Format(name.clone(), args);
            }
        }
        Term::Cat(args) | Term::Format(_, args) => {
            for arg in args.iter_mut() {
                resolve_term_lenient(arg, formats);
            }
        }
        _ => {}
    }
}
