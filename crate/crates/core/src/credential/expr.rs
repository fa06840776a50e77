//! Licensee and condition expression trees.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::action::ActionAttributeSet;
use super::key::PublicKeyId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrincipalExpr {
    Key(PublicKeyId),
    And(Vec<PrincipalExpr>),
    Or(Vec<PrincipalExpr>),
    Anyone,
}

impl PrincipalExpr {
    /// Builds a conjunction, flattening nested conjunctions and collapsing
    /// singletons so that `And` always has at least two children.
    pub fn and(children: Vec<PrincipalExpr>) -> PrincipalExpr {
        Self::join(children, true)
    }

    pub fn or(children: Vec<PrincipalExpr>) -> PrincipalExpr {
        Self::join(children, false)
    }

    fn join(children: Vec<PrincipalExpr>, conjunction: bool) -> PrincipalExpr {
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match child {
                PrincipalExpr::And(inner) if conjunction => flat.extend(inner),
                PrincipalExpr::Or(inner) if !conjunction => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => PrincipalExpr::Anyone,
            1 => flat.pop().expect("one element"),
            _ if conjunction => PrincipalExpr::And(flat),
            _ => PrincipalExpr::Or(flat),
        }
    }

    /// Evaluates the expression given which keys are currently authorized.
    pub fn satisfied_by(&self, authorized: &dyn Fn(&PublicKeyId) -> bool) -> bool {
        match self {
            PrincipalExpr::Key(k) => authorized(k),
            PrincipalExpr::And(children) => children.iter().all(|c| c.satisfied_by(authorized)),
            PrincipalExpr::Or(children) => children.iter().any(|c| c.satisfied_by(authorized)),
            PrincipalExpr::Anyone => true,
        }
    }

    pub fn keys(&self) -> BTreeSet<&PublicKeyId> {
        let mut out = BTreeSet::new();
        self.collect_keys(&mut out);
        out
    }

    fn collect_keys<'a>(&'a self, out: &mut BTreeSet<&'a PublicKeyId>) {
        match self {
            PrincipalExpr::Key(k) => {
                out.insert(k);
            }
            PrincipalExpr::And(c) | PrincipalExpr::Or(c) => {
                c.iter().for_each(|e| e.collect_keys(out));
            }
            PrincipalExpr::Anyone => {}
        }
    }

    /// `Some(key)` if the expression is exactly one key.
    pub fn single_key(&self) -> Option<&PublicKeyId> {
        match self {
            PrincipalExpr::Key(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

/// Attribute reference; `numeric` records the `&` prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrRef {
    pub name: String,
    pub numeric: bool,
}

impl AttrRef {
    pub fn string(name: &str) -> Self {
        AttrRef {
            name: name.to_string(),
            numeric: false,
        }
    }

    pub fn numeric(name: &str) -> Self {
        AttrRef {
            name: name.to_string(),
            numeric: true,
        }
    }
}

/// Right-hand literal, kept in its source spelling (`3.00` stays `3.00`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Literal {
    Str(String),
    Num(String),
}

impl Literal {
    pub fn text(&self) -> &str {
        match self {
            Literal::Str(s) | Literal::Num(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionExpr {
    Compare {
        attr: AttrRef,
        op: CmpOp,
        literal: Literal,
    },
    And(Vec<ConditionExpr>),
    Or(Vec<ConditionExpr>),
    Not(Box<ConditionExpr>),
    /// `test -> "true"` or `test -> "false"`.
    Clause {
        test: Box<ConditionExpr>,
        result: bool,
    },
    Const(bool),
}

impl ConditionExpr {
    pub fn compare(attr: AttrRef, op: CmpOp, literal: Literal) -> Self {
        ConditionExpr::Compare { attr, op, literal }
    }

    /// `name == "value"`.
    pub fn str_eq(name: &str, value: &str) -> Self {
        Self::compare(AttrRef::string(name), CmpOp::Eq, Literal::Str(value.to_string()))
    }

    pub fn and(children: Vec<ConditionExpr>) -> Self {
        Self::join(children, true)
    }

    pub fn or(children: Vec<ConditionExpr>) -> Self {
        Self::join(children, false)
    }

    pub fn not(inner: ConditionExpr) -> Self {
        ConditionExpr::Not(Box::new(inner))
    }

    pub fn clause(test: ConditionExpr, result: bool) -> Self {
        ConditionExpr::Clause {
            test: Box::new(test),
            result,
        }
    }

    fn join(children: Vec<ConditionExpr>, conjunction: bool) -> Self {
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match child {
                ConditionExpr::And(inner) if conjunction => flat.extend(inner),
                ConditionExpr::Or(inner) if !conjunction => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => ConditionExpr::Const(conjunction),
            1 => flat.pop().expect("one element"),
            _ if conjunction => ConditionExpr::And(flat),
            _ => ConditionExpr::Or(flat),
        }
    }

    /// Total evaluation: malformed or unsatisfiable comparisons are false.
    pub fn eval(&self, action: &ActionAttributeSet) -> bool {
        match self {
            ConditionExpr::Compare { attr, op, literal } => {
                let Some(value) = action.get(&attr.name) else {
                    return false;
                };
                if attr.numeric {
                    let (Some(lhs), Some(rhs)) =
                        (numeric_prefix(value), numeric_prefix(literal.text()))
                    else {
                        return false;
                    };
                    op.holds(lhs.cmp_value(&rhs))
                } else {
                    op.holds(value.as_bytes().cmp(literal.text().as_bytes()))
                }
            }
            ConditionExpr::And(children) => children.iter().all(|c| c.eval(action)),
            ConditionExpr::Or(children) => children.iter().any(|c| c.eval(action)),
            ConditionExpr::Not(inner) => !inner.eval(action),
            ConditionExpr::Clause { test, result } => *result && test.eval(action),
            ConditionExpr::Const(b) => *b,
        }
    }

    /// The top-level conjuncts of the first `-> "true"` clause. Used to
    /// read structured facts (prices, dates, link names) back out of
    /// credentials whose conditions follow a flat conjunctive shape.
    pub fn conjuncts(&self) -> Vec<&ConditionExpr> {
        let body = match self {
            ConditionExpr::Clause { test, result: true } => test.as_ref(),
            ConditionExpr::Or(children) => match children.iter().find_map(|c| match c {
                ConditionExpr::Clause { test, result: true } => Some(test.as_ref()),
                _ => None,
            }) {
                Some(t) => t,
                None => return Vec::new(),
            },
            other => other,
        };
        match body {
            ConditionExpr::And(children) => children.iter().collect(),
            single => vec![single],
        }
    }

    /// Finds a top-level comparison on `name` with operator `op`.
    pub fn find_comparison(&self, name: &str, op: CmpOp) -> Option<(&AttrRef, &Literal)> {
        self.conjuncts().into_iter().find_map(|c| match c {
            ConditionExpr::Compare {
                attr,
                op: o,
                literal,
            } if attr.name == name && *o == op => Some((attr, literal)),
            _ => None,
        })
    }
}

/// Exact decimal value read from the longest numeric prefix of a string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericPrefix {
    negative: bool,
    /// Integer digits without leading zeros.
    int_digits: String,
    /// Fraction digits without trailing zeros.
    frac_digits: String,
}

impl NumericPrefix {
    fn is_zero(&self) -> bool {
        self.int_digits.is_empty() && self.frac_digits.is_empty()
    }

    fn cmp_magnitude(&self, other: &Self) -> Ordering {
        self.int_digits
            .len()
            .cmp(&other.int_digits.len())
            .then_with(|| self.int_digits.cmp(&other.int_digits))
            .then_with(|| self.frac_digits.cmp(&other.frac_digits))
    }

    pub fn cmp_value(&self, other: &Self) -> Ordering {
        let self_neg = self.negative && !self.is_zero();
        let other_neg = other.negative && !other.is_zero();
        match (self_neg, other_neg) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => self.cmp_magnitude(other),
            (true, true) => other.cmp_magnitude(self),
        }
    }

    /// Integer value, when the prefix is a non-negative whole number that
    /// fits in `u64`.
    pub fn as_whole(&self) -> Option<u64> {
        if self.negative && !self.is_zero() || !self.frac_digits.is_empty() {
            return None;
        }
        if self.int_digits.is_empty() {
            return Some(0);
        }
        self.int_digits.parse().ok()
    }
}

/// Longest prefix matching `-?[0-9]+(\.[0-9]+)?`: `"50Mbps"` reads as 50,
/// `"4.25"` as 4.25; no digits at the start yields `None`.
pub fn numeric_prefix(text: &str) -> Option<NumericPrefix> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let negative = bytes.first() == Some(&b'-');
    if negative {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == int_start {
        return None;
    }
    let int_digits = text[int_start..i].trim_start_matches('0').to_string();
    let mut frac_digits = String::new();
    if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
        let frac_start = i + 1;
        let mut j = frac_start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        frac_digits = text[frac_start..j].trim_end_matches('0').to_string();
    }
    Some(NumericPrefix {
        negative,
        int_digits,
        frac_digits,
    })
}
