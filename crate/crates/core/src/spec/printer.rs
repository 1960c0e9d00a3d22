//! Renders a parsed specification back to source text. The output parses
//! to a structurally identical specification (warnings aside), which also
//! backs the `--dump-decomposed` style output.

use std::fmt::Write as _;

use super::{ActionArg, ActionFact, Mode, RuleAst, SpecFile};
use crate::formats::{FieldContent, FormatDef, FormatField, LengthSpec, TypeTag, ValueExpr};
use crate::term::render_pub_bytes;

pub fn print_spec(spec: &SpecFile) -> String {
    let mut out = String::new();
    if let Some(name) = &spec.name {
        let _ = writeln!(out, "theory {name}\nbegin\n");
    }
    if !spec.functions.is_empty() {
        let decls: Vec<String> =
            spec.functions.iter().map(|(n, a)| format!("{n}/{a}")).collect();
        let _ = writeln!(out, "functions: {}\n", decls.join(", "));
    }
    if !spec.equations.is_empty() {
        let eqs: Vec<String> =
            spec.equations.iter().map(|(l, r)| format!("  {l} = {r}")).collect();
        let _ = writeln!(out, "equations:\n{}\n", eqs.join(",\n"));
    }
    if !spec.formats.is_empty() {
        let macros: Vec<String> =
            spec.formats.iter().map(|def| format!("  {}", print_macro(def))).collect();
        let _ = writeln!(out, "macros:\n{}\n", macros.join(",\n"));
    }
    if spec.mode == Some(Mode::Rewrite) {
        let _ = writeln!(out, "mode: rewrite\n");
    }
    for rule in &spec.rules {
        let _ = writeln!(out, "{}\n", print_rule(rule));
    }
    if spec.name.is_some() {
        let _ = writeln!(out, "end");
    }
    out
}

fn print_macro(def: &FormatDef) -> String {
    let fields: Vec<String> = def.fields.iter().map(|f| print_field(def, f)).collect();
    format!("{}({}) = cat({})", def.name, def.params.join(", "), fields.join(", "))
}

fn print_field(def: &FormatDef, field: &FormatField) -> String {
    let kind = match field.tag {
        TypeTag::Byte => "byte",
        TypeTag::Int => "int",
        TypeTag::Str => "string",
    };
    let content = match &field.content {
        FieldContent::Const(bytes) => format!("'{}'", render_pub_bytes(bytes)),
        FieldContent::Var(label) => label.clone(),
        FieldContent::Expr(expr) => print_expr(expr),
    };
    let length = match &field.length {
        // Constant byte fields restate their implicit width only never;
        // int constants always need the explicit width back.
        LengthSpec::Const(w) => match (&field.content, field.tag) {
            (FieldContent::Const(b), TypeTag::Byte | TypeTag::Str) if b.len() == *w => None,
            _ => Some(format!("'{w}'")),
        },
        LengthSpec::Var { label, reverse } => Some(if *reverse {
            format!("reverse({label})")
        } else {
            label.clone()
        }),
        LengthSpec::Rest => None,
    };
    let _ = def;
    match length {
        Some(l) => format!("{kind}({content}, {l})"),
        None => format!("{kind}({content})"),
    }
}

fn print_expr(expr: &ValueExpr) -> String {
    fn atom(e: &ValueExpr) -> String {
        match e {
            ValueExpr::Var(_) | ValueExpr::Bytes(_) | ValueExpr::Nat(_) => print_expr(e),
            _ => format!("({})", print_expr(e)),
        }
    }
    match expr {
        ValueExpr::Var(v) => v.clone(),
        ValueExpr::Bytes(b) => format!("'{}'", render_pub_bytes(b)),
        ValueExpr::Nat(n) => n.to_string(),
        ValueExpr::Add(a, b) => format!("{} + {}", atom(a), atom(b)),
        ValueExpr::And(a, b) => format!("{} & {}", atom(a), atom(b)),
        ValueExpr::Or(a, b) => format!("{} | {}", atom(a), atom(b)),
    }
}

pub fn print_rule(rule: &RuleAst) -> String {
    let mut out = String::new();
    let _ = write!(out, "rule {}", rule.name);
    if let Some(role) = &rule.role {
        let _ = write!(out, " [role={role}]");
    }
    let _ = writeln!(out, ":");
    if !rule.lets.is_empty() {
        for (i, (label, body)) in rule.lets.iter().enumerate() {
            let kw = if i == 0 { "let" } else { "   " };
            let _ = writeln!(out, "  {kw} {label} = {body}");
        }
        let _ = writeln!(out, "  in");
    }
    let premise: Vec<String> = rule.premise.iter().map(|f| f.to_string()).collect();
    let conclusion: Vec<String> = rule.conclusion.iter().map(|f| f.to_string()).collect();
    let _ = write!(out, "  [ {} ]", premise.join(", "));
    if rule.actions.is_empty() {
        let _ = write!(out, " --> ");
    } else {
        let actions: Vec<String> = rule.actions.iter().map(print_action).collect();
        let _ = write!(out, " --[ {} ]-> ", actions.join(", "));
    }
    let _ = write!(out, "[ {} ]", conclusion.join(", "));
    out
}

fn print_action(action: &ActionFact) -> String {
    let args: Vec<String> = action
        .args
        .iter()
        .map(|arg| match arg {
            // The empty bitstring prints as '' here: bare <> in action
            // argument position reads back as an empty tuple.
            ActionArg::Term(crate::term::Term::BitLit(b)) if b.is_empty() => "''".into(),
            ActionArg::Term(t) => t.to_string(),
            ActionArg::Tuple(items) => {
                let inner: Vec<String> = items.iter().map(|t| t.to_string()).collect();
                format!("<{}>", inner.join(", "))
            }
        })
        .collect();
    format!("{}({})", action.name, args.join(", "))
}

#[cfg(test)]
mod tests {
    use super::super::parse_spec;
    use super::*;
    use std::collections::BTreeSet;

    fn roundtrip(src: &str, flags: &[&str]) {
        let flags: BTreeSet<String> = flags.iter().map(|s| s.to_string()).collect();
        let first = parse_spec(src, &flags).unwrap();
        let printed = print_spec(&first);
        let second = parse_spec(&printed, &flags).unwrap_or_else(|e| {
            panic!("printed spec failed to parse: {e}\n---\n{printed}");
        });
        assert_eq!(first.name, second.name, "---\n{printed}");
        assert_eq!(first.functions, second.functions);
        assert_eq!(first.equations, second.equations);
        assert_eq!(first.formats, second.formats);
        assert_eq!(first.mode, second.mode);
        assert_eq!(first.rules, second.rules, "---\n{printed}");
    }

    #[test]
    fn round_trips_the_server_snippet() {
        roundtrip(
            r#"
functions: hmac/2, payload/3, data/2
equations: payload(t, m, b) = <t, m, b>, data(t, m) = <t, m>
#ifdef MONITOR
macros:
  payload(t,m,h) = cat(int(l,'8'),byte(t,'1'),string(m,l),byte(h)),
  data(t, m) = cat(int(l, '8'), byte(t, '1'), string(m, l))
#endif
rule Server [role=Server]:
  let  p = payload('0x02', m, h)
      hp = hmac('secret', data('0x02', m)) in
  [ In(p) ] --[ ServerAccept(m), Eq(h, hp) ]-> [ Accept(h, hp) ]
"#,
            &["MONITOR"],
        );
    }

    #[test]
    fn round_trips_sorts_literals_and_triggers() {
        roundtrip(
            r#"
theory Kitchen
begin
functions: f/1, g/2
macros:
  hdr(m) = cat(byte('0x0102'), byte(l, '2'), byte(m, reverse(l))),
  ctr(n) = cat(int(n + 1, '4'), int(n, '4'), int('0x07', '1'))
mode: rewrite
rule A [role=R]:
  [ Fr(~k), !P($v, %n) ] --[ Trig('h', <~k, 'lit'>, r), E(x, <x, ~k>) ]-> [ S(~k, r), Out(<>) ]
rule B:
  [ S(~k, x) ] --[ Hint('h', <x>, y), Emit('send', <x>, ''), Eq(x, ~k) ]-> [ T(~k) ]
end
"#,
            &[],
        );
    }

    #[test]
    fn round_trips_empty_and_minimal() {
        roundtrip("", &[]);
        roundtrip("rule R: [] --> []", &[]);
    }
}
