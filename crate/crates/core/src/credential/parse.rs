//! Credential text parser.
//!
//! A credential block is a sequence of `Name: value` header lines in the
//! fixed order `Keynote-Version`, `Local-Constants`, `Authorizer`,
//! `Licensees`, `Conditions`, `Signature`. A value continues onto following
//! lines that begin with a space or tab. Lines starting with `#` are
//! comments. An empty line ends the block. The grammar is spelled out in
//! `docs/credential-format.md`.

use std::collections::BTreeMap;

use super::expr::{AttrRef, CmpOp, ConditionExpr, Literal, PrincipalExpr};
use super::key::{PublicKeyId, POLICY};
use super::{Credential, CredentialError, Principal, Signature, KEYNOTE_VERSION};

/// How strictly keys and signatures are checked while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Keys and signature values must be canonical base64.
    #[default]
    Checked,
    /// Accepts truncated key and signature material. Only meant for
    /// fixture text that can never verify.
    Unchecked,
}

const FIELD_ORDER: [&str; 6] = [
    "Keynote-Version",
    "Local-Constants",
    "Authorizer",
    "Licensees",
    "Conditions",
    "Signature",
];

pub fn parse_credential(text: &str) -> Result<Credential, CredentialError> {
    parse_credential_with(text, ParseMode::Checked)
}

pub fn parse_credential_with(text: &str, mode: ParseMode) -> Result<Credential, CredentialError> {
    let fields = split_fields(text)?;
    let mut version = KEYNOTE_VERSION;
    let mut constants = BTreeMap::new();
    let mut authorizer = None;
    let mut licensees = PrincipalExpr::Anyone;
    let mut conditions = ConditionExpr::Const(true);
    let mut signature = None;

    for field in &fields {
        let mut lx = Lexer::new(text, &field.segments);
        match field.index {
            0 => version = parse_version(&mut lx)?,
            1 => constants = parse_constants(&mut lx)?,
            2 => authorizer = Some(parse_authorizer(&mut lx, &constants, mode)?),
            3 => licensees = parse_licensees(&mut lx, &constants, mode)?,
            4 => conditions = parse_program(&mut lx)?,
            5 => signature = Some(parse_signature(&mut lx, mode)?),
            _ => unreachable!("field index out of range"),
        }
    }

    let authorizer = authorizer.ok_or_else(|| {
        syntax_at(text, text.len(), "an `Authorizer:` field", "end of credential")
    })?;
    if authorizer == Principal::Policy && signature.is_some() {
        let pos = fields.iter().find(|f| f.index == 5).map_or(0, |f| f.header_offset);
        return Err(syntax_at(text, pos, "no signature on a POLICY assertion", "`Signature:`"));
    }

    Ok(Credential {
        version,
        local_constants: constants,
        authorizer,
        licensees,
        conditions,
        signature,
        source: Some(text.to_string()),
    })
}

/// Splits text holding several credentials separated by empty lines.
pub fn parse_credentials(text: &str, mode: ParseMode) -> Result<Vec<Credential>, CredentialError> {
    split_blocks(text)
        .into_iter()
        .map(|block| parse_credential_with(block, mode))
        .collect()
}

/// Returns the non-empty blocks of `text`, split on empty lines.
pub fn split_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut start: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.is_empty() {
            if let Some(s) = start.take() {
                blocks.push(&text[s..offset]);
            }
        } else if start.is_none() {
            start = Some(offset);
        }
        offset += line.len();
    }
    if let Some(s) = start {
        blocks.push(&text[s..]);
    }
    blocks
}

struct Field {
    index: usize,
    header_offset: usize,
    /// (offset into the original text, content) for the value portion of
    /// each physical line.
    segments: Vec<(usize, String)>,
}

fn split_fields(text: &str) -> Result<Vec<Field>, CredentialError> {
    let mut fields: Vec<Field> = Vec::new();
    let mut offset = 0;
    let mut seen_content = false;
    let mut ended_at: Option<usize> = None;

    for raw in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw.len();
        let line = raw
            .strip_suffix('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .unwrap_or(raw);

        if line.is_empty() {
            if seen_content {
                ended_at.get_or_insert(line_offset);
            }
            continue;
        }
        if ended_at.is_some() {
            return Err(syntax_at(text, line_offset, "end of credential", "text after an empty line"));
        }
        seen_content = true;
        if line.starts_with('#') {
            continue;
        }
        if line.starts_with([' ', '\t']) {
            let Some(field) = fields.last_mut() else {
                return Err(syntax_at(text, line_offset, "a field name", "a continuation line"));
            };
            field.segments.push((line_offset, line.to_string()));
            continue;
        }
        let Some(colon) = line.find(':') else {
            return Err(syntax_at(text, line_offset, "`Name:` header", "a line without `:`"));
        };
        let name = &line[..colon];
        let Some(index) = FIELD_ORDER.iter().position(|f| *f == name) else {
            return Err(syntax_at(text, line_offset, "a known field name", name));
        };
        if let Some(prev) = fields.last() {
            if index <= prev.index {
                return Err(syntax_at(
                    text,
                    line_offset,
                    &format!("a field after `{}`", FIELD_ORDER[prev.index]),
                    name,
                ));
            }
        }
        fields.push(Field {
            index,
            header_offset: line_offset,
            segments: vec![(line_offset + colon + 1, line[colon + 1..].to_string())],
        });
    }
    Ok(fields)
}

fn syntax_at(text: &str, offset: usize, expected: &str, found: &str) -> CredentialError {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    CredentialError::Syntax {
        line,
        column,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    NumAttr(String),
    Str(String),
    Num(String),
    Cmp(CmpOp),
    AndAnd,
    OrOr,
    Bang,
    LParen,
    RParen,
    Arrow,
    Semi,
    Assign,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::NumAttr(s) => format!("`&{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::AndAnd => "`&&`".into(),
            Tok::OrOr => "`||`".into(),
            Tok::Bang => "`!`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Eof => "end of field".into(),
        }
    }
}

/// Tokenizer over the value segments of one field. Positions are mapped
/// back to offsets in the original text.
struct Lexer<'a> {
    text: &'a str,
    /// Characters with their original offsets; segments are joined by a
    /// synthetic newline carrying the offset of the following segment.
    chars: Vec<(usize, char)>,
    pos: usize,
    end_offset: usize,
    peeked: Option<(usize, Tok)>,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str, segments: &[(usize, String)]) -> Self {
        let mut chars = Vec::new();
        for (i, (offset, content)) in segments.iter().enumerate() {
            if i > 0 {
                chars.push((*offset, '\n'));
            }
            chars.extend(content.char_indices().map(|(j, c)| (offset + j, c)));
        }
        let end_offset = segments
            .last()
            .map_or(0, |(o, c)| o + c.len());
        Lexer {
            text,
            chars,
            pos: 0,
            end_offset,
            peeked: None,
        }
    }

    fn offset_of(&self, idx: usize) -> usize {
        self.chars.get(idx).map_or(self.end_offset, |(o, _)| *o)
    }

    fn error(&self, offset: usize, expected: &str, found: &str) -> CredentialError {
        syntax_at(self.text, offset, expected, found)
    }

    fn peek(&mut self) -> Result<&Tok, CredentialError> {
        if self.peeked.is_none() {
            let t = self.lex()?;
            self.peeked = Some(t);
        }
        Ok(&self.peeked.as_ref().expect("peeked").1)
    }

    fn next(&mut self) -> Result<(usize, Tok), CredentialError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), CredentialError> {
        let (offset, tok) = self.next()?;
        if &tok == want {
            Ok(())
        } else {
            Err(self.error(offset, what, &tok.describe()))
        }
    }

    fn at_eof(&mut self) -> Result<bool, CredentialError> {
        Ok(matches!(self.peek()?, Tok::Eof))
    }

    fn expect_eof(&mut self) -> Result<(), CredentialError> {
        self.expect(&Tok::Eof, "end of field")
    }

    fn ch(&self, idx: usize) -> Option<char> {
        self.chars.get(idx).map(|(_, c)| *c)
    }

    fn lex(&mut self) -> Result<(usize, Tok), CredentialError> {
        while matches!(self.ch(self.pos), Some(' ' | '\t' | '\n')) {
            self.pos += 1;
        }
        let start = self.offset_of(self.pos);
        let Some(c) = self.ch(self.pos) else {
            return Ok((start, Tok::Eof));
        };
        let next = self.ch(self.pos + 1);
        let tok = match c {
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            ';' => {
                self.pos += 1;
                Tok::Semi
            }
            '&' if next == Some('&') => {
                self.pos += 2;
                Tok::AndAnd
            }
            '&' => {
                self.pos += 1;
                match self.ch(self.pos) {
                    Some(c) if c.is_ascii_alphabetic() || c == '_' => Tok::NumAttr(self.ident()),
                    other => {
                        return Err(self.error(
                            self.offset_of(self.pos),
                            "attribute name after `&`",
                            &other.map_or("end of field".into(), |c| format!("`{c}`")),
                        ))
                    }
                }
            }
            '|' if next == Some('|') => {
                self.pos += 2;
                Tok::OrOr
            }
            '=' if next == Some('=') => {
                self.pos += 2;
                Tok::Cmp(CmpOp::Eq)
            }
            '=' => {
                self.pos += 1;
                Tok::Assign
            }
            '!' if next == Some('=') => {
                self.pos += 2;
                Tok::Cmp(CmpOp::Ne)
            }
            '!' => {
                self.pos += 1;
                Tok::Bang
            }
            '<' if next == Some('=') => {
                self.pos += 2;
                Tok::Cmp(CmpOp::Le)
            }
            '<' => {
                self.pos += 1;
                Tok::Cmp(CmpOp::Lt)
            }
            '>' if next == Some('=') => {
                self.pos += 2;
                Tok::Cmp(CmpOp::Ge)
            }
            '>' => {
                self.pos += 1;
                Tok::Cmp(CmpOp::Gt)
            }
            '-' if next == Some('>') => {
                self.pos += 2;
                Tok::Arrow
            }
            '-' if next.is_some_and(|c| c.is_ascii_digit()) => {
                self.pos += 1;
                Tok::Num(format!("-{}", self.number()))
            }
            '"' => Tok::Str(self.string(start)?),
            c if c.is_ascii_digit() => Tok::Num(self.number()),
            c if c.is_ascii_alphabetic() || c == '_' => Tok::Ident(self.ident()),
            other => {
                return Err(self.error(start, "a token", &format!("character {other:?}")));
            }
        };
        Ok((start, tok))
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.ch(self.pos) {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.pos += 1;
            } else {
                break;
            }
        }
        s
    }

    fn number(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.ch(self.pos).filter(char::is_ascii_digit) {
            s.push(c);
            self.pos += 1;
        }
        if self.ch(self.pos) == Some('.') && self.ch(self.pos + 1).is_some_and(|c| c.is_ascii_digit()) {
            s.push('.');
            self.pos += 1;
            while let Some(c) = self.ch(self.pos).filter(char::is_ascii_digit) {
                s.push(c);
                self.pos += 1;
            }
        }
        s
    }

    fn string(&mut self, start: usize) -> Result<String, CredentialError> {
        self.pos += 1;
        let mut s = String::new();
        loop {
            match self.ch(self.pos) {
                None | Some('\n') => {
                    return Err(self.error(start, "closing `\"`", "unterminated string"));
                }
                Some('"') => {
                    self.pos += 1;
                    return Ok(s);
                }
                Some('\\') => match self.ch(self.pos + 1) {
                    Some(c) if c != '\n' => {
                        s.push(c);
                        self.pos += 2;
                    }
                    _ => return Err(self.error(start, "closing `\"`", "unterminated string")),
                },
                Some(c) => {
                    s.push(c);
                    self.pos += 1;
                }
            }
        }
    }
}

fn parse_version(lx: &mut Lexer) -> Result<u32, CredentialError> {
    let (offset, tok) = lx.next()?;
    let Tok::Num(n) = tok else {
        return Err(lx.error(offset, "a version number", &tok.describe()));
    };
    let version: u32 = n
        .parse()
        .ok()
        .filter(|v: &u32| v.to_string() == n)
        .ok_or_else(|| lx.error(offset, "an integer version", &format!("`{n}`")))?;
    lx.expect_eof()?;
    if version != KEYNOTE_VERSION {
        return Err(CredentialError::UnknownVersion(version));
    }
    Ok(version)
}

fn parse_constants(lx: &mut Lexer) -> Result<BTreeMap<String, String>, CredentialError> {
    let mut out = BTreeMap::new();
    while !lx.at_eof()? {
        let (offset, tok) = lx.next()?;
        let Tok::Ident(name) = tok else {
            return Err(lx.error(offset, "a constant name", &tok.describe()));
        };
        if name == POLICY {
            return Err(lx.error(offset, "a constant name other than POLICY", "`POLICY`"));
        }
        lx.expect(&Tok::Assign, "`=`")?;
        let (voff, vtok) = lx.next()?;
        let Tok::Str(value) = vtok else {
            return Err(lx.error(voff, "a quoted constant value", &vtok.describe()));
        };
        if out.insert(name.clone(), value).is_some() {
            return Err(lx.error(offset, "a new constant name", &format!("duplicate `{name}`")));
        }
    }
    Ok(out)
}

fn resolve_key(
    lx: &Lexer,
    offset: usize,
    tok: Tok,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<PublicKeyId, CredentialError> {
    let text = match tok {
        Tok::Ident(name) => constants
            .get(&name)
            .cloned()
            .ok_or(CredentialError::UnresolvedConstant(name))?,
        Tok::Str(s) => s,
        other => return Err(lx.error(offset, "a key or constant name", &other.describe())),
    };
    match mode {
        ParseMode::Checked => PublicKeyId::parse(&text),
        ParseMode::Unchecked => PublicKeyId::parse_lenient(&text),
    }
}

fn parse_authorizer(
    lx: &mut Lexer,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<Principal, CredentialError> {
    let (offset, tok) = lx.next()?;
    let principal = match tok {
        Tok::Ident(ref name) if name == POLICY => Principal::Policy,
        Tok::Eof => return Err(lx.error(offset, "an authorizer", "end of field")),
        other => Principal::Key(resolve_key(lx, offset, other, constants, mode)?),
    };
    lx.expect_eof()?;
    Ok(principal)
}

fn parse_licensees(
    lx: &mut Lexer,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<PrincipalExpr, CredentialError> {
    if lx.at_eof()? {
        return Ok(PrincipalExpr::Anyone);
    }
    let expr = principal_or(lx, constants, mode)?;
    lx.expect_eof()?;
    Ok(expr)
}

fn principal_or(
    lx: &mut Lexer,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<PrincipalExpr, CredentialError> {
    let mut terms = vec![principal_and(lx, constants, mode)?];
    while matches!(lx.peek()?, Tok::OrOr) {
        lx.next()?;
        terms.push(principal_and(lx, constants, mode)?);
    }
    Ok(PrincipalExpr::or(terms))
}

fn principal_and(
    lx: &mut Lexer,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<PrincipalExpr, CredentialError> {
    let mut terms = vec![principal_primary(lx, constants, mode)?];
    while matches!(lx.peek()?, Tok::AndAnd) {
        lx.next()?;
        terms.push(principal_primary(lx, constants, mode)?);
    }
    Ok(PrincipalExpr::and(terms))
}

fn principal_primary(
    lx: &mut Lexer,
    constants: &BTreeMap<String, String>,
    mode: ParseMode,
) -> Result<PrincipalExpr, CredentialError> {
    let (offset, tok) = lx.next()?;
    match tok {
        Tok::LParen => {
            let inner = principal_or(lx, constants, mode)?;
            lx.expect(&Tok::RParen, "`)`")?;
            Ok(inner)
        }
        Tok::Ident(ref name) if name == POLICY => {
            Err(lx.error(offset, "a licensee key", "`POLICY`"))
        }
        other => Ok(PrincipalExpr::Key(resolve_key(lx, offset, other, constants, mode)?)),
    }
}

fn parse_program(lx: &mut Lexer) -> Result<ConditionExpr, CredentialError> {
    let mut clauses = Vec::new();
    while !lx.at_eof()? {
        let test = cond_or(lx)?;
        let result = if matches!(lx.peek()?, Tok::Arrow) {
            lx.next()?;
            let (offset, tok) = lx.next()?;
            match tok {
                Tok::Str(ref s) if s == "true" => true,
                Tok::Str(ref s) if s == "false" => false,
                other => {
                    return Err(lx.error(offset, "\"true\" or \"false\"", &other.describe()));
                }
            }
        } else {
            true
        };
        clauses.push(ConditionExpr::clause(test, result));
        match lx.peek()? {
            Tok::Semi => {
                lx.next()?;
            }
            Tok::Eof => {}
            _ => {
                let (offset, tok) = lx.next()?;
                return Err(lx.error(offset, "`->`, `;` or end of conditions", &tok.describe()));
            }
        }
    }
    Ok(match clauses.len() {
        0 => ConditionExpr::Const(true),
        1 => clauses.pop().expect("one clause"),
        _ => ConditionExpr::Or(clauses),
    })
}

fn cond_or(lx: &mut Lexer) -> Result<ConditionExpr, CredentialError> {
    let mut terms = vec![cond_and(lx)?];
    while matches!(lx.peek()?, Tok::OrOr) {
        lx.next()?;
        terms.push(cond_and(lx)?);
    }
    Ok(ConditionExpr::or(terms))
}

fn cond_and(lx: &mut Lexer) -> Result<ConditionExpr, CredentialError> {
    let mut terms = vec![cond_unary(lx)?];
    while matches!(lx.peek()?, Tok::AndAnd) {
        lx.next()?;
        terms.push(cond_unary(lx)?);
    }
    Ok(ConditionExpr::and(terms))
}

fn cond_unary(lx: &mut Lexer) -> Result<ConditionExpr, CredentialError> {
    if matches!(lx.peek()?, Tok::Bang) {
        lx.next()?;
        return Ok(ConditionExpr::not(cond_unary(lx)?));
    }
    let (offset, tok) = lx.next()?;
    match tok {
        Tok::LParen => {
            let inner = cond_or(lx)?;
            lx.expect(&Tok::RParen, "`)`")?;
            Ok(inner)
        }
        Tok::Ident(ref name) if name == "true" => Ok(ConditionExpr::Const(true)),
        Tok::Ident(ref name) if name == "false" => Ok(ConditionExpr::Const(false)),
        Tok::Ident(name) => comparison(lx, AttrRef { name, numeric: false }),
        Tok::NumAttr(name) => comparison(lx, AttrRef { name, numeric: true }),
        other => Err(lx.error(offset, "a comparison", &other.describe())),
    }
}

fn comparison(lx: &mut Lexer, attr: AttrRef) -> Result<ConditionExpr, CredentialError> {
    let (offset, tok) = lx.next()?;
    let Tok::Cmp(op) = tok else {
        return Err(lx.error(offset, "a comparison operator", &tok.describe()));
    };
    let (offset, tok) = lx.next()?;
    let literal = match tok {
        Tok::Str(s) => Literal::Str(s),
        Tok::Num(n) => Literal::Num(n),
        other => return Err(lx.error(offset, "a string or number literal", &other.describe())),
    };
    Ok(ConditionExpr::compare(attr, op, literal))
}

fn parse_signature(lx: &mut Lexer, mode: ParseMode) -> Result<Signature, CredentialError> {
    let (offset, tok) = lx.next()?;
    let Tok::Str(text) = tok else {
        return Err(lx.error(offset, "a quoted signature", &tok.describe()));
    };
    lx.expect_eof()?;
    let Some((algorithm, value)) = text.split_once(':') else {
        return Err(lx.error(offset, "`<algorithm>:<value>`", &format!("\"{text}\"")));
    };
    if algorithm.is_empty() || value.is_empty() {
        return Err(lx.error(offset, "`<algorithm>:<value>`", &format!("\"{text}\"")));
    }
    let sig = Signature {
        algorithm: algorithm.to_string(),
        value: value.to_string(),
    };
    if mode == ParseMode::Checked && sig.decode().is_none() {
        return Err(lx.error(offset, "canonical base64 signature bytes", &format!("\"{text}\"")));
    }
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_split_on_empty_lines() {
        let text = "a\nb\n\n\nc\n";
        assert_eq!(split_blocks(text), vec!["a\nb\n", "c\n"]);
        assert!(split_blocks("\n\n").is_empty());
    }

    #[test]
    fn syntax_error_positions_are_line_and_column() {
        let text = "Authorizer: POLICY\nConditions: a == \n";
        match parse_credential(text) {
            Err(CredentialError::Syntax { line, column, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(column, 18);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fields_must_follow_the_fixed_order() {
        let text = "Licensees:\nAuthorizer: POLICY\n";
        assert!(matches!(parse_credential(text), Err(CredentialError::Syntax { .. })));
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(matches!(
            parse_credential("Authorizer: POLICY\nComment: hi\n"),
            Err(CredentialError::Syntax { .. })
        ));
    }

    #[test]
    fn precedence_and_flattening() {
        let cred = parse_credential(
            "Authorizer: POLICY\nConditions: a == \"1\" || b == \"2\" && (c == \"3\" && d == \"4\");\n",
        )
        .unwrap();
        let ConditionExpr::Clause { test, result: true } = cred.conditions() else {
            panic!("expected single clause");
        };
        match test.as_ref() {
            ConditionExpr::Or(children) => {
                assert_eq!(children.len(), 2);
                assert!(matches!(&children[1], ConditionExpr::And(c) if c.len() == 3));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_clause_result_rejected() {
        assert!(parse_credential("Authorizer: POLICY\nConditions: a == \"1\" -> \"maybe\";\n").is_err());
    }
}
