//! Wire-format strings: declarative byte layouts with constant fields,
//! variable fields and length prefixes.
//!
//! A format definition is a sequence of fields concatenated in order.
//! Integers are encoded big-endian by default; a `reverse` marker on a
//! length reference flips the referenced field to little-endian. Formats
//! are constructed from variable bindings and parsed back in a single
//! deterministic pass, so every registered parseable format is a prefix
//! code over its own field structure.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;

use crate::term::Value;

/// Maximum width of any single field, in bytes.
pub const MAX_FIELD_WIDTH: usize = (1 << 31) - 1;
/// Maximum width of a field that is referenced as a length, in bytes.
pub const MAX_LENGTH_FIELD_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeTag {
    Int,
    Byte,
    Str,
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeTag::Int => write!(f, "int"),
            TypeTag::Byte => write!(f, "byte"),
            TypeTag::Str => write!(f, "string"),
        }
    }
}

/// Field width: fixed, taken from an earlier field variable, or the
/// remainder of the input (last field only).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LengthSpec {
    Const(usize),
    Var { label: String, reverse: bool },
    Rest,
}

/// Construction-only arithmetic over naturals and bitwise combination of
/// equal-length byte strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValueExpr {
    Var(String),
    Bytes(Vec<u8>),
    Nat(BigUint),
    Add(Box<ValueExpr>, Box<ValueExpr>),
    And(Box<ValueExpr>, Box<ValueExpr>),
    Or(Box<ValueExpr>, Box<ValueExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FieldContent {
    Const(Vec<u8>),
    Var(String),
    Expr(ValueExpr),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FormatField {
    pub content: FieldContent,
    pub tag: TypeTag,
    pub length: LengthSpec,
}

/// A named format definition over a parameter list. Field variables that
/// are not parameters (typically length prefixes) stay internal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatDef {
    pub name: String,
    pub params: Vec<String>,
    pub fields: Vec<FormatField>,
    parseable: bool,
    /// Field variables referenced as lengths, with their byte-order flag.
    length_roles: BTreeMap<String, bool>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("unknown format {0}")]
    Unknown(String),
    #[error("format {0} is construction-only and cannot be parsed")]
    NotParseable(String),
    #[error("format {format}: {reason}")]
    BadDefinition { format: String, reason: String },
    #[error("format {format}: parameter {param} is unbound")]
    UnboundParam { format: String, param: String },
    #[error("format {format}: field {field} expects {expected} bytes, value has {got}")]
    WidthMismatch { format: String, field: String, expected: usize, got: usize },
    #[error("format {format}: length {var} is {expected} but payload has {got} bytes")]
    LengthConflict { format: String, var: String, expected: usize, got: usize },
    #[error("format {format}: field {field}: {detail}")]
    TypeMismatch { format: String, field: String, detail: String },
    #[error("format {0}: value of {1} does not fit in {2} bytes")]
    NatTooWide(String, String, usize),
    #[error("input matches both format {first} and format {second}; formats must be disjoint")]
    Ambiguous { first: String, second: String },
}

impl FormatDef {
    /// Builds and validates a definition.
    pub fn new(
        name: impl Into<String>,
        params: Vec<String>,
        fields: Vec<FormatField>,
    ) -> Result<Self, FormatError> {
        let name = name.into();
        let bad = |reason: String| FormatError::BadDefinition { format: name.clone(), reason };

        let mut field_vars: Vec<&str> = Vec::new();
        let mut length_roles: BTreeMap<String, bool> = BTreeMap::new();
        let mut parseable = true;

        for (i, field) in fields.iter().enumerate() {
            let last = i + 1 == fields.len();
            match &field.length {
                LengthSpec::Rest if !last => {
                    return Err(bad("only the last field may omit its length".into()));
                }
                LengthSpec::Rest => {}
                LengthSpec::Const(w) => {
                    if *w > MAX_FIELD_WIDTH {
                        return Err(bad(format!("field width {w} exceeds the maximum")));
                    }
                }
                LengthSpec::Var { label, reverse } => {
                    if !field_vars.contains(&label.as_str()) {
                        return Err(bad(format!(
                            "length reference {label} does not name an earlier field variable"
                        )));
                    }
                    match length_roles.get(label) {
                        Some(r) if r != reverse => {
                            return Err(bad(format!(
                                "length {label} is referenced with conflicting byte orders"
                            )));
                        }
                        _ => {
                            length_roles.insert(label.clone(), *reverse);
                        }
                    }
                }
            }
            match &field.content {
                FieldContent::Const(bytes) => {
                    if let LengthSpec::Const(w) = field.length {
                        if w != bytes.len() {
                            return Err(bad(format!(
                                "constant field has {} bytes but declares width {w}",
                                bytes.len()
                            )));
                        }
                    }
                }
                FieldContent::Var(label) => {
                    field_vars.push(label);
                }
                FieldContent::Expr(expr) => {
                    parseable = false;
                    let mut vars = Vec::new();
                    expr_vars(expr, &mut vars);
                    for v in vars {
                        if !field_vars.contains(&v) && !params.iter().any(|p| p == v) {
                            return Err(bad(format!("expression uses undeclared variable {v}")));
                        }
                    }
                }
            }
        }
        for (label, _) in &length_roles {
            let field = fields
                .iter()
                .find(|f| matches!(&f.content, FieldContent::Var(v) if v == label))
                .expect("length role names a field variable");
            match field.length {
                LengthSpec::Const(w) if w <= MAX_LENGTH_FIELD_WIDTH => {}
                LengthSpec::Const(w) => {
                    return Err(bad(format!(
                        "length field {label} is {w} bytes wide; at most {MAX_LENGTH_FIELD_WIDTH} are supported"
                    )));
                }
                _ => {
                    return Err(bad(format!("length field {label} must have a fixed width")));
                }
            }
        }
        for p in &params {
            if !field_vars.contains(&p.as_str()) {
                return Err(bad(format!("parameter {p} does not appear in any field")));
            }
        }
        for field in &fields {
            if let FieldContent::Var(label) = &field.content {
                if !params.iter().any(|p| p == label) && !length_roles.contains_key(label) {
                    return Err(bad(format!(
                        "field variable {label} is neither a parameter nor a length"
                    )));
                }
            }
        }
        Ok(FormatDef { name, params, fields, parseable, length_roles })
    }

    pub fn parseable(&self) -> bool {
        self.parseable
    }

    pub fn is_length_role(&self, label: &str) -> Option<bool> {
        self.length_roles.get(label).copied()
    }

    /// Constructs the byte string for the given bindings. Length variables
    /// left unbound are computed from their payload field.
    pub fn construct(&self, bindings: &BTreeMap<String, Value>) -> Result<Vec<u8>, FormatError> {
        let mut lengths: BTreeMap<String, BigUint> = BTreeMap::new();
        for (label, _) in &self.length_roles {
            let resolved = match bindings.get(label) {
                Some(Value::Nat(n)) => n.clone(),
                Some(Value::Bytes(_)) => {
                    return Err(FormatError::TypeMismatch {
                        format: self.name.clone(),
                        field: label.clone(),
                        detail: "length variable bound to bytes, expected a natural".into(),
                    });
                }
                None => {
                    let payload = self
                        .fields
                        .iter()
                        .find(
                            |f| matches!(&f.length, LengthSpec::Var { label: l, .. } if l == label),
                        )
                        .expect("validated length reference");
                    BigUint::from(self.content_bytes_len(payload, bindings)?)
                }
            };
            lengths.insert(label.clone(), resolved);
        }

        let mut out = Vec::new();
        for field in &self.fields {
            let width = match &field.length {
                LengthSpec::Const(w) => Some(*w),
                LengthSpec::Var { label, .. } => {
                    let n = &lengths[label];
                    Some(nat_to_usize(n).ok_or_else(|| FormatError::TypeMismatch {
                        format: self.name.clone(),
                        field: label.clone(),
                        detail: "length does not fit in a field width".into(),
                    })?)
                }
                LengthSpec::Rest => None,
            };
            let rendered = match &field.content {
                FieldContent::Const(bytes) => bytes.clone(),
                FieldContent::Var(label) => {
                    if let Some(reverse) = self.is_length_role(label) {
                        let w = width.expect("length fields have fixed width");
                        let mut enc = encode_nat(&lengths[label], w).ok_or_else(|| {
                            FormatError::NatTooWide(self.name.clone(), label.clone(), w)
                        })?;
                        if reverse {
                            enc.reverse();
                        }
                        enc
                    } else {
                        let value = bindings.get(label).ok_or_else(|| {
                            FormatError::UnboundParam {
                                format: self.name.clone(),
                                param: label.clone(),
                            }
                        })?;
                        self.render_value(field, value, width)?
                    }
                }
                FieldContent::Expr(expr) => {
                    let value = eval_expr(expr, bindings, &lengths, &self.name)?;
                    self.render_value(field, &value, width)?
                }
            };
            if let Some(w) = width {
                if rendered.len() != w {
                    return Err(match &field.length {
                        LengthSpec::Var { label, .. } => FormatError::LengthConflict {
                            format: self.name.clone(),
                            var: label.clone(),
                            expected: w,
                            got: rendered.len(),
                        },
                        _ => FormatError::WidthMismatch {
                            format: self.name.clone(),
                            field: field_label(field),
                            expected: w,
                            got: rendered.len(),
                        },
                    });
                }
            }
            out.extend_from_slice(&rendered);
        }
        Ok(out)
    }

    fn content_bytes_len(
        &self,
        field: &FormatField,
        bindings: &BTreeMap<String, Value>,
    ) -> Result<usize, FormatError> {
        match &field.content {
            FieldContent::Const(bytes) => Ok(bytes.len()),
            FieldContent::Var(label) => match bindings.get(label) {
                Some(Value::Bytes(b)) => Ok(b.len()),
                Some(Value::Nat(_)) => Err(FormatError::TypeMismatch {
                    format: self.name.clone(),
                    field: label.clone(),
                    detail: "cannot take the byte length of a natural".into(),
                }),
                None => Err(FormatError::UnboundParam {
                    format: self.name.clone(),
                    param: label.clone(),
                }),
            },
            FieldContent::Expr(expr) => {
                match eval_expr(expr, bindings, &BTreeMap::new(), &self.name)? {
                    Value::Bytes(b) => Ok(b.len()),
                    Value::Nat(_) => Err(FormatError::TypeMismatch {
                        format: self.name.clone(),
                        field: field_label(field),
                        detail: "cannot take the byte length of a natural".into(),
                    }),
                }
            }
        }
    }

    fn render_value(
        &self,
        field: &FormatField,
        value: &Value,
        width: Option<usize>,
    ) -> Result<Vec<u8>, FormatError> {
        match (field.tag, value) {
            (TypeTag::Int, Value::Nat(n)) => {
                let w = width.unwrap_or_else(|| (n.bits() as usize).div_ceil(8).max(1));
                encode_nat(n, w).ok_or_else(|| {
                    FormatError::NatTooWide(self.name.clone(), field_label(field), w)
                })
            }
            (TypeTag::Int, Value::Bytes(_)) => Err(FormatError::TypeMismatch {
                format: self.name.clone(),
                field: field_label(field),
                detail: "int field expects a natural".into(),
            }),
            (_, Value::Bytes(b)) => Ok(b.clone()),
            (_, Value::Nat(_)) => Err(FormatError::TypeMismatch {
                format: self.name.clone(),
                field: field_label(field),
                detail: "byte field expects a byte string".into(),
            }),
        }
    }

    /// Parses a byte string. `Ok(None)` means no match; bindings cover all
    /// field variables, including internal length prefixes.
    pub fn parse(&self, data: &[u8]) -> Result<Option<BTreeMap<String, Value>>, FormatError> {
        if !self.parseable {
            return Err(FormatError::NotParseable(self.name.clone()));
        }
        let mut bindings: BTreeMap<String, Value> = BTreeMap::new();
        let mut cursor = 0usize;
        for field in &self.fields {
            let width = match &field.length {
                LengthSpec::Const(w) => *w,
                LengthSpec::Var { label, .. } => match bindings.get(label) {
                    Some(Value::Nat(n)) => match nat_to_usize(n) {
                        Some(w) => w,
                        None => return Ok(None),
                    },
                    _ => return Ok(None),
                },
                LengthSpec::Rest => data.len() - cursor,
            };
            if data.len() - cursor < width {
                return Ok(None);
            }
            let chunk = &data[cursor..cursor + width];
            cursor += width;
            match &field.content {
                FieldContent::Const(bytes) => {
                    if chunk != bytes.as_slice() {
                        return Ok(None);
                    }
                }
                FieldContent::Var(label) => {
                    let value = if let Some(reverse) = self.is_length_role(label) {
                        let mut raw = chunk.to_vec();
                        if reverse {
                            raw.reverse();
                        }
                        Value::Nat(BigUint::from_bytes_be(&raw))
                    } else if field.tag == TypeTag::Int {
                        Value::Nat(BigUint::from_bytes_be(chunk))
                    } else {
                        Value::Bytes(chunk.to_vec())
                    };
                    match bindings.get(label) {
                        Some(existing) if *existing != value => return Ok(None),
                        Some(_) => {}
                        None => {
                            bindings.insert(label.clone(), value);
                        }
                    }
                }
                FieldContent::Expr(_) => unreachable!("expr fields are never parseable"),
            }
        }
        if cursor != data.len() {
            return Ok(None);
        }
        Ok(Some(bindings))
    }
}

fn field_label(field: &FormatField) -> String {
    match &field.content {
        FieldContent::Const(b) => format!("0x{}", hex::encode(b)),
        FieldContent::Var(v) => v.clone(),
        FieldContent::Expr(_) => "<expr>".into(),
    }
}

fn expr_vars<'a>(expr: &'a ValueExpr, out: &mut Vec<&'a str>) {
    match expr {
        ValueExpr::Var(v) => out.push(v),
        ValueExpr::Add(a, b) | ValueExpr::And(a, b) | ValueExpr::Or(a, b) => {
            expr_vars(a, out);
            expr_vars(b, out);
        }
        ValueExpr::Bytes(_) | ValueExpr::Nat(_) => {}
    }
}

fn eval_expr(
    expr: &ValueExpr,
    bindings: &BTreeMap<String, Value>,
    lengths: &BTreeMap<String, BigUint>,
    format: &str,
) -> Result<Value, FormatError> {
    let err = |detail: &str| FormatError::TypeMismatch {
        format: format.to_string(),
        field: "<expr>".into(),
        detail: detail.into(),
    };
    match expr {
        ValueExpr::Var(v) => {
            if let Some(n) = lengths.get(v) {
                return Ok(Value::Nat(n.clone()));
            }
            bindings.get(v).cloned().ok_or_else(|| FormatError::UnboundParam {
                format: format.to_string(),
                param: v.clone(),
            })
        }
        ValueExpr::Bytes(b) => Ok(Value::Bytes(b.clone())),
        ValueExpr::Nat(n) => Ok(Value::Nat(n.clone())),
        ValueExpr::Add(a, b) => {
            match (
                eval_expr(a, bindings, lengths, format)?,
                eval_expr(b, bindings, lengths, format)?,
            ) {
                (Value::Nat(x), Value::Nat(y)) => Ok(Value::Nat(x + y)),
                _ => Err(err("add expects naturals")),
            }
        }
        ValueExpr::And(a, b) | ValueExpr::Or(a, b) => {
            let is_and = matches!(expr, ValueExpr::And(_, _));
            match (
                eval_expr(a, bindings, lengths, format)?,
                eval_expr(b, bindings, lengths, format)?,
            ) {
                (Value::Bytes(x), Value::Bytes(y)) if x.len() == y.len() => Ok(Value::Bytes(
                    x.iter()
                        .zip(&y)
                        .map(|(p, q)| if is_and { p & q } else { p | q })
                        .collect(),
                )),
                _ => Err(err("bitwise operators expect equal-length byte strings")),
            }
        }
    }
}

fn encode_nat(n: &BigUint, width: usize) -> Option<Vec<u8>> {
    let raw = n.to_bytes_be();
    let raw = if raw == [0] { Vec::new() } else { raw };
    if raw.len() > width {
        return None;
    }
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    Some(out)
}

fn nat_to_usize(n: &BigUint) -> Option<usize> {
    u64::try_from(n).ok().and_then(|v| usize::try_from(v).ok())
}

/// Named collection of format definitions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FormatRegistry {
    defs: BTreeMap<String, FormatDef>,
}

impl FormatRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, def: FormatDef) -> Result<(), FormatError> {
        if self.defs.contains_key(&def.name) {
            return Err(FormatError::BadDefinition {
                format: def.name.clone(),
                reason: "duplicate format definition".into(),
            });
        }
        self.defs.insert(def.name.clone(), def);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&FormatDef, FormatError> {
        self.defs.get(name).ok_or_else(|| FormatError::Unknown(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.defs.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FormatDef> {
        self.defs.values()
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn construct(
        &self,
        name: &str,
        bindings: &BTreeMap<String, Value>,
    ) -> Result<Vec<u8>, FormatError> {
        self.get(name)?.construct(bindings)
    }

    pub fn parse(
        &self,
        name: &str,
        data: &[u8],
    ) -> Result<Option<BTreeMap<String, Value>>, FormatError> {
        self.get(name)?.parse(data)
    }

    /// Finds the unique format matching the data, if any. Two matches are
    /// a disjointness violation.
    pub fn identify(
        &self,
        data: &[u8],
    ) -> Result<Option<(&FormatDef, BTreeMap<String, Value>)>, FormatError> {
        let mut hit: Option<(&FormatDef, BTreeMap<String, Value>)> = None;
        for def in self.defs.values().filter(|d| d.parseable()) {
            if let Some(bindings) = def.parse(data)? {
                if let Some((first, _)) = hit {
                    return Err(FormatError::Ambiguous {
                        first: first.name.clone(),
                        second: def.name.clone(),
                    });
                }
                hit = Some((def, bindings));
            }
        }
        Ok(hit)
    }

    /// Best-effort static disjointness check: warns for pairs of parseable
    /// formats that are not separated by their leading constant bytes.
    pub fn lint_disjoint(&self) -> Vec<String> {
        let defs: Vec<&FormatDef> = self.defs.values().filter(|d| d.parseable()).collect();
        let mut warnings = Vec::new();
        for (i, a) in defs.iter().enumerate() {
            for b in &defs[i + 1..] {
                let pa = leading_const(a);
                let pb = leading_const(b);
                if pa.starts_with(&pb) || pb.starts_with(&pa) {
                    warnings.push(format!(
                        "formats {} and {} are not distinguished by leading constants; \
                         disjointness must be ensured by construction",
                        a.name, b.name
                    ));
                }
            }
        }
        warnings
    }
}

fn leading_const(def: &FormatDef) -> Vec<u8> {
    let mut out = Vec::new();
    for field in &def.fields {
        match &field.content {
            FieldContent::Const(bytes) => out.extend_from_slice(bytes),
            _ => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_field(bytes: &[u8]) -> FormatField {
        FormatField {
            content: FieldContent::Const(bytes.to_vec()),
            tag: TypeTag::Byte,
            length: LengthSpec::Const(bytes.len()),
        }
    }

    fn var_field(label: &str, tag: TypeTag, length: LengthSpec) -> FormatField {
        FormatField { content: FieldContent::Var(label.into()), tag, length }
    }

    /// cat(byte(0x01), byte(l, 2), byte(m, l))
    fn msg_def(reverse: bool) -> FormatDef {
        FormatDef::new(
            "msg",
            vec!["m".into()],
            vec![
                const_field(&[0x01]),
                var_field("l", TypeTag::Byte, LengthSpec::Const(2)),
                var_field("m", TypeTag::Byte, LengthSpec::Var { label: "l".into(), reverse }),
            ],
        )
        .unwrap()
    }

    /// cat(int(l, '8'), byte(t, '1'), string(m, l), byte(h))
    fn payload_def() -> FormatDef {
        FormatDef::new(
            "payload",
            vec!["t".into(), "m".into(), "h".into()],
            vec![
                var_field("l", TypeTag::Int, LengthSpec::Const(8)),
                var_field("t", TypeTag::Byte, LengthSpec::Const(1)),
                var_field("m", TypeTag::Str, LengthSpec::Var { label: "l".into(), reverse: false }),
                var_field("h", TypeTag::Byte, LengthSpec::Rest),
            ],
        )
        .unwrap()
    }

    fn bind(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn msg_constructs_big_endian_by_default() {
        let def = msg_def(false);
        let out = def.construct(&bind(&[("m", Value::bytes(vec![0xca, 0xfe]))])).unwrap();
        assert_eq!(out, vec![0x01, 0x00, 0x02, 0xca, 0xfe]);
    }

    #[test]
    fn msg_reversed_length_is_little_endian() {
        let def = msg_def(true);
        let out = def.construct(&bind(&[("m", Value::bytes(vec![0xca, 0xfe]))])).unwrap();
        assert_eq!(out, vec![0x01, 0x02, 0x00, 0xca, 0xfe]);
    }

    #[test]
    fn reverse_twice_restores_default() {
        let forward = msg_def(false);
        let double = msg_def(false);
        let m = bind(&[("m", Value::bytes(vec![0xab; 5]))]);
        assert_eq!(forward.construct(&m).unwrap(), double.construct(&m).unwrap());
    }

    #[test]
    fn msg_parses_and_binds_length() {
        let def = msg_def(false);
        let bindings = def.parse(&[0x01, 0x00, 0x02, 0xca, 0xfe]).unwrap().unwrap();
        assert_eq!(bindings["l"], Value::nat(2));
        assert_eq!(bindings["m"], Value::bytes(vec![0xca, 0xfe]));
    }

    #[test]
    fn msg_rejects_short_payload() {
        let def = msg_def(false);
        assert_eq!(def.parse(&[0x01, 0x00, 0x03, 0xca, 0xfe]).unwrap(), None);
    }

    #[test]
    fn msg_rejects_trailing_bytes() {
        let def = msg_def(false);
        assert_eq!(def.parse(&[0x01, 0x00, 0x02, 0xca, 0xfe, 0x99]).unwrap(), None);
    }

    #[test]
    fn payload_matches_reference_layout() {
        let def = payload_def();
        let out = def
            .construct(&bind(&[
                ("t", Value::bytes(vec![0x02])),
                ("m", Value::bytes(vec![0x68, 0x69])),
                ("h", Value::bytes(vec![0xff])),
            ]))
            .unwrap();
        let expected = [
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, 0x02, 0x68, 0x69, 0xff,
        ];
        assert_eq!(out, expected);
        let parsed = def.parse(&expected).unwrap().unwrap();
        assert_eq!(parsed["t"], Value::bytes(vec![0x02]));
        assert_eq!(parsed["m"], Value::bytes(vec![0x68, 0x69]));
        assert_eq!(parsed["h"], Value::bytes(vec![0xff]));
        assert_eq!(parsed["l"], Value::nat(2));
    }

    #[test]
    fn bound_length_must_agree() {
        let def = msg_def(false);
        let err = def
            .construct(&bind(&[
                ("m", Value::bytes(vec![0xca, 0xfe])),
                ("l", Value::nat(3)),
            ]))
            .unwrap_err();
        assert!(matches!(err, FormatError::LengthConflict { .. }));
    }

    #[test]
    fn fixed_width_overflow_is_rejected() {
        let def = FormatDef::new(
            "fixed",
            vec!["x".into()],
            vec![var_field("x", TypeTag::Byte, LengthSpec::Const(2))],
        )
        .unwrap();
        let err = def.construct(&bind(&[("x", Value::bytes(vec![1, 2, 3]))])).unwrap_err();
        assert!(matches!(err, FormatError::WidthMismatch { .. }));
    }

    #[test]
    fn undeclared_field_variables_are_rejected() {
        let err = FormatDef::new(
            "loose",
            vec!["m".into()],
            vec![
                var_field("z", TypeTag::Byte, LengthSpec::Const(1)),
                var_field("m", TypeTag::Byte, LengthSpec::Rest),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::BadDefinition { .. }));
    }

    #[test]
    fn length_reference_must_point_back() {
        let err = FormatDef::new(
            "bad",
            vec!["m".into()],
            vec![var_field("m", TypeTag::Byte, LengthSpec::Var { label: "l".into(), reverse: false })],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::BadDefinition { .. }));
    }

    #[test]
    fn wide_length_fields_are_rejected() {
        let err = FormatDef::new(
            "wide",
            vec!["m".into()],
            vec![
                var_field("l", TypeTag::Int, LengthSpec::Const(9)),
                var_field("m", TypeTag::Byte, LengthSpec::Var { label: "l".into(), reverse: false }),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::BadDefinition { .. }));
    }

    #[test]
    fn rest_only_in_last_position() {
        let err = FormatDef::new(
            "bad",
            vec!["a".into(), "b".into()],
            vec![
                var_field("a", TypeTag::Byte, LengthSpec::Rest),
                var_field("b", TypeTag::Byte, LengthSpec::Const(1)),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::BadDefinition { .. }));
    }

    #[test]
    fn identify_flags_overlapping_formats() {
        let mut reg = FormatRegistry::new();
        // Both match 0x01 0x01 0xaa: one takes the remainder, the other a
        // one-byte length prefix.
        reg.insert(
            FormatDef::new(
                "fmt_rest",
                vec!["m".into()],
                vec![const_field(&[0x01]), var_field("m", TypeTag::Byte, LengthSpec::Rest)],
            )
            .unwrap(),
        )
        .unwrap();
        reg.insert(
            FormatDef::new(
                "fmt_len",
                vec!["m".into()],
                vec![
                    const_field(&[0x01]),
                    var_field("l", TypeTag::Byte, LengthSpec::Const(1)),
                    var_field("m", TypeTag::Byte, LengthSpec::Var { label: "l".into(), reverse: false }),
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let err = reg.identify(&[0x01, 0x01, 0xaa]).unwrap_err();
        assert!(matches!(err, FormatError::Ambiguous { .. }));
    }

    #[test]
    fn identify_unique_match() {
        let mut reg = FormatRegistry::new();
        reg.insert(msg_def(false)).unwrap();
        reg.insert(payload_def()).unwrap();
        let (def, bindings) = reg.identify(&[0x01, 0x00, 0x01, 0x7a]).unwrap().unwrap();
        assert_eq!(def.name, "msg");
        assert_eq!(bindings["m"], Value::bytes(vec![0x7a]));
        assert!(reg.identify(&[0x42]).unwrap().is_none());
    }

    #[test]
    fn disjointness_lint() {
        let mut reg = FormatRegistry::new();
        assert!(reg.lint_disjoint().is_empty());

        let tag = |name: &str, byte: u8| {
            FormatDef::new(
                name,
                vec!["m".into()],
                vec![const_field(&[byte]), var_field("m", TypeTag::Byte, LengthSpec::Rest)],
            )
            .unwrap()
        };
        reg.insert(tag("a", 0x01)).unwrap();
        reg.insert(tag("b", 0x02)).unwrap();
        assert!(reg.lint_disjoint().is_empty());

        reg.insert(tag("c", 0x01)).unwrap();
        assert_eq!(reg.lint_disjoint().len(), 1);
    }

    #[test]
    fn construction_only_expressions() {
        let def = FormatDef::new(
            "ctr",
            vec!["n".into()],
            vec![
                FormatField {
                    content: FieldContent::Expr(ValueExpr::Add(
                        Box::new(ValueExpr::Var("n".into())),
                        Box::new(ValueExpr::Nat(BigUint::from(1u32))),
                    )),
                    tag: TypeTag::Int,
                    length: LengthSpec::Const(4),
                },
                var_field("n", TypeTag::Int, LengthSpec::Const(4)),
            ],
        )
        .unwrap();
        assert!(!def.parseable());
        let out = def.construct(&bind(&[("n", Value::nat(7))])).unwrap();
        assert_eq!(out, vec![0, 0, 0, 8, 0, 0, 0, 7]);
        assert!(matches!(def.parse(&out), Err(FormatError::NotParseable(_))));
    }

    /// Brute force: enumerate every split of the input into contiguous
    /// chunks and keep assignments satisfying all field constraints. A
    /// parseable format must admit at most one such split, and it must
    /// agree with the single-pass parser.
    fn all_parses(def: &FormatDef, data: &[u8]) -> Vec<BTreeMap<String, Value>> {
        let mut out = Vec::new();
        split(def, data, 0, 0, &mut BTreeMap::new(), &mut out);
        return out;

        fn split(
            def: &FormatDef,
            data: &[u8],
            field_idx: usize,
            pos: usize,
            bound: &mut BTreeMap<String, Value>,
            out: &mut Vec<BTreeMap<String, Value>>,
        ) {
            if field_idx == def.fields.len() {
                if pos == data.len() {
                    out.push(bound.clone());
                }
                return;
            }
            let field = &def.fields[field_idx];
            for end in pos..=data.len() {
                let chunk = &data[pos..end];
                let width_ok = match &field.length {
                    LengthSpec::Const(w) => chunk.len() == *w,
                    LengthSpec::Var { label, .. } => match bound.get(label) {
                        Some(Value::Nat(n)) => BigUint::from(chunk.len()) == *n,
                        _ => false,
                    },
                    LengthSpec::Rest => end == data.len(),
                };
                if !width_ok {
                    continue;
                }
                let value = match &field.content {
                    FieldContent::Const(bytes) => {
                        if chunk != bytes.as_slice() {
                            continue;
                        }
                        None
                    }
                    FieldContent::Var(label) => {
                        let v = if let Some(rev) = def.is_length_role(label) {
                            let mut raw = chunk.to_vec();
                            if rev {
                                raw.reverse();
                            }
                            Value::Nat(BigUint::from_bytes_be(&raw))
                        } else if field.tag == TypeTag::Int {
                            Value::Nat(BigUint::from_bytes_be(chunk))
                        } else {
                            Value::Bytes(chunk.to_vec())
                        };
                        match bound.get(label) {
                            Some(existing) if *existing != v => continue,
                            Some(_) => None,
                            None => Some((label.clone(), v)),
                        }
                    }
                    FieldContent::Expr(_) => continue,
                };
                if let Some((label, v)) = &value {
                    bound.insert(label.clone(), v.clone());
                }
                split(def, data, field_idx + 1, end, bound, out);
                if let Some((label, _)) = value {
                    bound.remove(&label);
                }
            }
        }
    }

    #[test]
    fn single_pass_parse_is_the_only_parse() {
        let defs = [msg_def(false), msg_def(true), payload_def()];
        for def in &defs {
            for len in 0..=8usize {
                let mut data = vec![0u8; len];
                // A couple of deterministic fillings per length.
                for fill in [0x00u8, 0x01, 0x02, 0xff] {
                    data.iter_mut().enumerate().for_each(|(i, b)| *b = fill.wrapping_add(i as u8));
                    let brute = all_parses(def, &data);
                    assert!(brute.len() <= 1, "ambiguous parse for {}", def.name);
                    let fast = def.parse(&data).unwrap();
                    assert_eq!(fast, brute.into_iter().next(), "format {} data {data:?}", def.name);
                }
            }
        }
    }
}
