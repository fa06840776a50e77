//! Canonical text rendering.
//!
//! Layout (byte-exact, see `docs/credential-format.md`):
//!
//! ```text
//! Keynote-Version: 2\n
//! Local-Constants: NAME = "value" NAME2 = "value2"\n
//! Authorizer: POLICY | "<alg>:<base64>"\n
//! Licensees: <principal expression>\n
//! Conditions: <test> -> "true"; ...\n
//! ```
//!
//! Every field line is present. An empty value renders as `Name:` with no
//! trailing space. Tokens are separated by a single space; constants are
//! sorted by name; keys always appear as quoted literals.

use std::fmt::Write as _;

use super::expr::{AttrRef, ConditionExpr, Literal, PrincipalExpr};
use super::{Credential, Principal};

pub(crate) fn canonical_text(cred: &Credential) -> String {
    let mut out = String::new();
    writeln!(out, "Keynote-Version: {}", cred.version).expect("string write");
    out.push_str("Local-Constants:");
    for (name, value) in &cred.local_constants {
        write!(out, " {name} = {}", quote(value)).expect("string write");
    }
    out.push('\n');
    match &cred.authorizer {
        Principal::Policy => out.push_str("Authorizer: POLICY\n"),
        Principal::Key(k) => {
            writeln!(out, "Authorizer: {}", quote(&k.to_string())).expect("string write")
        }
    }
    push_field(&mut out, "Licensees", &principal(&cred.licensees, false));
    push_field(&mut out, "Conditions", &program(&cred.conditions));
    out
}

pub(crate) fn full_text(cred: &Credential) -> String {
    let mut out = canonical_text(cred);
    if let Some(sig) = &cred.signature {
        writeln!(out, "Signature: {}", quote(&format!("{}:{}", sig.algorithm, sig.value)))
            .expect("string write");
    }
    out
}

fn push_field(out: &mut String, name: &str, value: &str) {
    out.push_str(name);
    out.push(':');
    if !value.is_empty() {
        out.push(' ');
        out.push_str(value);
    }
    out.push('\n');
}

pub(crate) fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            q.push('\\');
        }
        q.push(c);
    }
    q.push('"');
    q
}

fn principal(expr: &PrincipalExpr, nested_in_and: bool) -> String {
    match expr {
        PrincipalExpr::Anyone => String::new(),
        PrincipalExpr::Key(k) => quote(&k.to_string()),
        PrincipalExpr::And(children) => children
            .iter()
            .map(|c| principal(c, true))
            .collect::<Vec<_>>()
            .join(" && "),
        PrincipalExpr::Or(children) => {
            let body = children
                .iter()
                .map(|c| principal(c, false))
                .collect::<Vec<_>>()
                .join(" || ");
            if nested_in_and {
                format!("({body})")
            } else {
                body
            }
        }
    }
}

fn program(expr: &ConditionExpr) -> String {
    match expr {
        ConditionExpr::Const(true) => String::new(),
        ConditionExpr::Clause { .. } => clause(expr),
        ConditionExpr::Or(children)
            if children.iter().all(|c| matches!(c, ConditionExpr::Clause { .. })) =>
        {
            children.iter().map(clause).collect::<Vec<_>>().join(" ")
        }
        test => format!("{} -> \"true\";", condition(test, false)),
    }
}

fn clause(expr: &ConditionExpr) -> String {
    match expr {
        ConditionExpr::Clause { test, result } => {
            format!("{} -> \"{}\";", condition(test, false), result)
        }
        other => format!("{} -> \"true\";", condition(other, false)),
    }
}

fn condition(expr: &ConditionExpr, nested_in_and: bool) -> String {
    match expr {
        ConditionExpr::Compare { attr, op, literal } => {
            format!("{} {} {}", attr_ref(attr), op.symbol(), lit(literal))
        }
        ConditionExpr::And(children) => children
            .iter()
            .map(|c| condition(c, true))
            .collect::<Vec<_>>()
            .join(" && "),
        ConditionExpr::Or(children) => {
            let body = children
                .iter()
                .map(|c| condition(c, false))
                .collect::<Vec<_>>()
                .join(" || ");
            if nested_in_and {
                format!("({body})")
            } else {
                body
            }
        }
        ConditionExpr::Not(inner) => format!("!({})", condition(inner, false)),
        ConditionExpr::Clause { test, result } => {
            if *result {
                format!("({})", condition(test, false))
            } else {
                "false".to_string()
            }
        }
        ConditionExpr::Const(b) => b.to_string(),
    }
}

fn attr_ref(attr: &AttrRef) -> String {
    if attr.numeric {
        format!("&{}", attr.name)
    } else {
        attr.name.clone()
    }
}

fn lit(literal: &Literal) -> String {
    match literal {
        Literal::Str(s) => quote(s),
        Literal::Num(n) => n.clone(),
    }
}
