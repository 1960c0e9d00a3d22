//! Random generation of small well-formed specifications.
//!
//! The generated theories stay inside the fragment both the monitor and
//! the symbolic executor handle: linear state facts over variables, an
//! optional fresh-name premise, uninterpreted computations nested at most
//! two deep, at least one computation and at least one emitted event per
//! rule, and optional equality constraints. Rule premises only use fact
//! symbols produced by earlier rules, so every rule is reachable.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

const CONSTS: [&str; 3] = ["'a'", "'b'", "'c'"];

struct Gen {
    rng: ChaCha20Rng,
    use_g: bool,
    /// Conclusion fact symbols produced so far, with their arities.
    produced: Vec<(String, usize)>,
    next_fact: usize,
}

impl Gen {
    fn pick_const(&mut self) -> String {
        CONSTS[self.rng.gen_range(0..CONSTS.len())].to_string()
    }

    /// A computation-free term over the bound variables.
    fn leaf(&mut self, vars: &[String]) -> String {
        if !vars.is_empty() && self.rng.gen_bool(0.7) {
            vars[self.rng.gen_range(0..vars.len())].clone()
        } else {
            self.pick_const()
        }
    }

    /// A term of nesting depth at most two with at least `min_apps`
    /// applications when forced.
    fn term(&mut self, vars: &[String], force_app: bool) -> String {
        let roll = self.rng.gen_range(0..100);
        if !force_app && roll < 40 {
            return self.leaf(vars);
        }
        if self.use_g && roll >= 70 {
            let a = if self.rng.gen_bool(0.3) {
                format!("h({})", self.leaf(vars))
            } else {
                self.leaf(vars)
            };
            let b = self.leaf(vars);
            format!("g({a}, {b})")
        } else {
            let inner = if self.rng.gen_bool(0.25) {
                format!("h({})", self.leaf(vars))
            } else {
                self.leaf(vars)
            };
            format!("h({inner})")
        }
    }

    fn fact_symbol(&mut self) -> (String, usize) {
        if !self.produced.is_empty() && self.rng.gen_bool(0.4) {
            self.produced[self.rng.gen_range(0..self.produced.len())].clone()
        } else {
            let symbol = format!("P{}", self.next_fact);
            self.next_fact += 1;
            let arity = self.rng.gen_range(1..=2);
            self.produced.push((symbol.clone(), arity));
            self.produced.last().unwrap().clone()
        }
    }
}

/// Renders one random theory as specification source. The same seed
/// always yields the same text.
pub fn gen_spec(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha20Rng::seed_from_u64(seed),
        use_g: false,
        produced: Vec::new(),
        next_fact: 0,
    };
    g.use_g = g.rng.gen_bool(0.5);

    let n_rules = g.rng.gen_range(2..=3);
    let mut out = String::new();
    out.push_str(&format!("theory Gen{seed} begin\n\n"));
    if g.use_g {
        out.push_str("functions: h/1, g/2\n\n");
    } else {
        out.push_str("functions: h/1\n\n");
    }

    let mut next_event = 0usize;
    for i in 0..n_rules {
        let mut vars: Vec<String> = Vec::new();
        let mut premise: Vec<String> = Vec::new();

        if i > 0 && !g.produced.is_empty() {
            let n_facts = g.rng.gen_range(1..=2usize.min(g.produced.len()));
            for _ in 0..n_facts {
                let (symbol, arity) = g.produced[g.rng.gen_range(0..g.produced.len())].clone();
                let mut args = Vec::new();
                for _ in 0..arity {
                    if !vars.is_empty() && g.rng.gen_bool(0.25) {
                        args.push(vars[g.rng.gen_range(0..vars.len())].clone());
                    } else {
                        let v = format!("v{}", vars.len() + i * 10);
                        vars.push(v.clone());
                        args.push(v);
                    }
                }
                premise.push(format!("{symbol}({})", args.join(", ")));
            }
        }
        if premise.is_empty() || g.rng.gen_bool(0.35) {
            let v = format!("~f{i}");
            premise.push(format!("Fr({v})"));
            vars.push(v);
        }

        // Conclusion: new or recycled symbols, with at least one
        // computation somewhere in the rule.
        let n_conc = g.rng.gen_range(1..=2);
        let mut conclusion: Vec<String> = Vec::new();
        let mut has_app = false;
        for _ in 0..n_conc {
            let (symbol, arity) = g.fact_symbol();
            let mut args = Vec::new();
            for _ in 0..arity {
                let t = g.term(&vars, false);
                if t.contains('(') {
                    has_app = true;
                }
                args.push(t);
            }
            conclusion.push(format!("{symbol}({})", args.join(", ")));
        }
        if !has_app {
            let forced = g.term(&vars, true);
            let (symbol, arity) = g.fact_symbol();
            let mut args = vec![forced];
            for _ in 1..arity {
                args.push(g.leaf(&vars));
            }
            conclusion.push(format!("{symbol}({})", args.join(", ")));
        }

        // Applications appearing in the conclusion may be referenced by
        // events and equalities (computed values are observable).
        let apps: Vec<String> = conclusion
            .iter()
            .flat_map(|f| collect_app_texts(f))
            .collect();

        let mut actions: Vec<String> = Vec::new();
        let n_events = g.rng.gen_range(1..=2);
        for _ in 0..n_events {
            let name = format!("E{next_event}");
            next_event += 1;
            let n_args = g.rng.gen_range(0..=2);
            let mut args = Vec::new();
            for _ in 0..n_args {
                let roll = g.rng.gen_range(0..100);
                if roll < 35 && !apps.is_empty() {
                    args.push(apps[g.rng.gen_range(0..apps.len())].clone());
                } else {
                    args.push(g.leaf(&vars));
                }
            }
            actions.push(format!("{name}({})", args.join(", ")));
        }
        if !vars.is_empty() && g.rng.gen_bool(0.3) {
            let lhs = vars[g.rng.gen_range(0..vars.len())].clone();
            let rhs = match g.rng.gen_range(0..3) {
                0 if !apps.is_empty() => apps[g.rng.gen_range(0..apps.len())].clone(),
                1 => g.leaf(&vars),
                _ => g.pick_const(),
            };
            if lhs != rhs {
                actions.push(format!("Eq({lhs}, {rhs})"));
            }
        }

        out.push_str(&format!(
            "rule R{i}:\n  [ {} ] --[ {} ]-> [ {} ]\n\n",
            premise.join(", "),
            actions.join(", "),
            conclusion.join(", ")
        ));
    }
    out.push_str("end\n");
    out
}

/// Extracts the application subterm renderings from a rendered fact:
/// every balanced `h(...)` or `g(...)` slice.
fn collect_app_texts(fact: &str) -> Vec<String> {
    let bytes = fact.as_bytes();
    let mut out = Vec::new();
    for (i, w) in bytes.windows(2).enumerate() {
        if (w[0] == b'h' || w[0] == b'g') && w[1] == b'(' {
            // Only at a token boundary: start of string or after , or space or (.
            if i > 0 && !matches!(bytes[i - 1], b' ' | b',' | b'(') {
                continue;
            }
            let mut depth = 0usize;
            for (j, &c) in bytes.iter().enumerate().skip(i + 1) {
                match c {
                    b'(' => depth += 1,
                    b')' => {
                        depth -= 1;
                        if depth == 0 {
                            out.push(fact[i..=j].to_string());
                            break;
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}
