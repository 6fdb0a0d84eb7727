//! The assertion language.
//!
//! ```text
//! function f(x: integer:INR) -> real:USD = x * 0.012;
//! equivalence S1.employee ~ S2.employee { empno ≡ number; salary ≡ f(salary); key id ≡ id }
//! containment S1.grads < S2.persons { id ≡ id as pid }
//! homonymy A.bank ~ B.bank;
//! ```
//!
//! `==` may stand for `≡`. In a containment, `~` and `<` put the left class
//! inside the right one, `>` the other way round. `as` names the global
//! attribute when it differs from the left attribute.

use std::fmt::Write as _;

use super::{
    classify_pair, derive_attributes, AssertionSet, AttributeCorrespondence, Builtin, ConversionFunction,
    CorrespondenceAssertion, CorrespondenceError, CorrespondenceMember, Expr, RelationKind, Side,
};
use crate::schema::{fold, is_identifier, same_name, ClassRef, Registry};
use crate::value::SemanticType;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: [&str; 17] = ["->", "==", "≡", "{", "}", "(", ")", ";", ",", ".", "~", ":", "=", "*", "/", "+", "-"];

fn lex(text: &str) -> Result<Vec<Token>, CorrespondenceError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (line, column) = (li + 1, i + 1);
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok =
                if c.is_ascii_alphabetic() || c == '_' {
                    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    Tok::Ident(chars[start..i].iter().collect())
                } else if c.is_ascii_digit() {
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    if i < chars.len() && matches!(chars[i], 'e' | 'E') {
                        i += 1;
                        if i < chars.len() && matches!(chars[i], '+' | '-') {
                            i += 1;
                        }
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    let s: String = chars[start..i].iter().collect();
                    Tok::Number(s.parse().map_err(|_| CorrespondenceError::Parse {
                        line,
                        column,
                        message: format!("malformed number `{s}`"),
                    })?)
                } else if c == '<' || c == '>' {
                    i += 1;
                    Tok::Sym(if c == '<' { "<" } else { ">" })
                } else {
                    let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                    let sym = SYMBOLS.iter().find(|s| rest.starts_with(**s)).ok_or_else(|| {
                        CorrespondenceError::Parse { line, column, message: format!("unexpected character `{c}`") }
                    })?;
                    i += sym.chars().count();
                    Tok::Sym(sym)
                };
            out.push(Token { tok, line, column });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

type PResult<T> = Result<T, CorrespondenceError>;

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + n).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.tokens.get(self.pos).map(|t| (t.line, t.column)).unwrap_or(self.end)
    }

    fn error<T>(&self, message: impl Into<String>) -> PResult<T> {
        let (line, column) = self.here();
        Err(CorrespondenceError::Parse { line, column, message: message.into() })
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Number(n)) => format!("`{n}`"),
            Some(Tok::Sym(s)) => format!("`{s}`"),
        }
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> PResult<()> {
        if self.eat(sym) {
            Ok(())
        } else {
            self.error(format!("expected `{sym}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn is_word(&self, n: usize, word: &str) -> bool {
        matches!(self.peek_at(n), Some(Tok::Ident(s)) if s == word)
    }

    fn semantic_type(&mut self) -> PResult<SemanticType> {
        let (line, column) = self.here();
        let mut spec = self.ident("a type")?;
        if matches!(self.peek(), Some(Tok::Sym(":"))) && matches!(self.peek_at(1), Some(Tok::Ident(_))) {
            self.pos += 1;
            spec.push(':');
            spec.push_str(&self.ident("a unit")?);
        }
        spec.parse().map_err(|e| CorrespondenceError::Parse { line, column, message: format!("{e}") })
    }

    fn class_ref(&mut self) -> PResult<ClassRef> {
        let site = self.ident("a site")?;
        self.expect(".")?;
        let class = self.ident("a class")?;
        Ok(ClassRef::new(site, class))
    }

    fn function(&mut self) -> PResult<ConversionFunction> {
        let (line, column) = self.here();
        self.pos += 1;
        let name = self.ident("a function name")?;
        if Builtin::from_name(&name).is_some() {
            return Err(CorrespondenceError::Parse { line, column, message: format!("`{name}` is a built-in") });
        }
        self.expect("(")?;
        let param = self.ident("a parameter name")?;
        self.expect(":")?;
        let input = self.semantic_type()?;
        self.expect(")")?;
        self.expect("->")?;
        let output = self.semantic_type()?;
        self.expect("=")?;
        let body = self.expr(&param)?;
        self.expect(";")?;
        ConversionFunction::new(name.clone(), param, input, output, body).map_err(|message| {
            CorrespondenceError::Parse { line, column, message: format!("function `{name}`: {message}") }
        })
    }

    fn expr(&mut self, param: &str) -> PResult<Expr> {
        let mut lhs = self.term(param)?;
        loop {
            if self.eat("+") {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term(param)?));
            } else if self.eat("-") {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term(param)?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self, param: &str) -> PResult<Expr> {
        let mut lhs = self.unary(param)?;
        loop {
            if self.eat("*") {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary(param)?));
            } else if self.eat("/") {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary(param)?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self, param: &str) -> PResult<Expr> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary(param)?)));
        }
        match self.peek().cloned() {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                Ok(Expr::Number(n))
            }
            Some(Tok::Sym("(")) => {
                self.pos += 1;
                let e = self.expr(param)?;
                self.expect(")")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) if matches!(self.peek_at(1), Some(Tok::Sym("("))) => {
                let Some(b) = Builtin::from_name(&name) else {
                    return self.error(format!("unknown built-in `{name}`"));
                };
                self.pos += 2;
                let arg = self.expr(param)?;
                self.expect(")")?;
                Ok(Expr::Call(b, Box::new(arg)))
            }
            Some(Tok::Ident(name)) if name == param => {
                self.pos += 1;
                Ok(Expr::Param)
            }
            Some(Tok::Ident(name)) => self.error(format!("`{name}` is not the parameter `{param}`")),
            _ => self.error(format!("expected an expression, found {}", self.describe())),
        }
    }

    fn member(&mut self, side: Side) -> PResult<CorrespondenceMember> {
        let first = self.ident("an attribute")?;
        if self.eat("(") {
            let attribute = self.ident("an attribute")?;
            self.expect(")")?;
            Ok(CorrespondenceMember { side, attribute, conversion: Some(first) })
        } else {
            Ok(CorrespondenceMember { side, attribute: first, conversion: None })
        }
    }

    fn assertion(&mut self) -> PResult<(CorrespondenceAssertion, usize)> {
        let line = self.here().0;
        let keyword = self.ident("a relation")?;
        let relation = match keyword.as_str() {
            "equivalence" => RelationKind::Equivalence,
            "synonymy" => RelationKind::Synonymy,
            "containment" => RelationKind::Containment { contained: Side::Left },
            "homonymy" => RelationKind::Homonymy,
            _ => {
                self.pos -= 1;
                return self.error(format!("expected `function` or a relation, found `{keyword}`"));
            }
        };
        let left = self.class_ref()?;
        let containment = matches!(relation, RelationKind::Containment { .. });
        let relation = if self.eat("~") || (containment && self.eat("<")) {
            relation
        } else if containment && self.eat(">") {
            RelationKind::Containment { contained: Side::Right }
        } else {
            return self.error(format!("expected `~`, found {}", self.describe()));
        };
        let right = self.class_ref()?;
        let mut correspondences = Vec::new();
        let mut key_link = None;
        if matches!(self.peek(), Some(Tok::Sym("{"))) {
            if relation == RelationKind::Homonymy {
                return self.error("homonymy assertions cannot carry attribute correspondences");
            }
            self.pos += 1;
            while !self.eat("}") {
                if self.peek().is_none() {
                    return self.error("unterminated `{`");
                }
                if self.eat(";") {
                    continue;
                }
                let is_key = self.is_word(0, "key") && matches!(self.peek_at(1), Some(Tok::Ident(_)));
                if is_key {
                    if key_link.is_some() {
                        return self.error("only one key link per assertion");
                    }
                    self.pos += 1;
                    key_link = Some(correspondences.len());
                }
                let l = self.member(Side::Left)?;
                if !(self.eat("≡") || self.eat("==")) {
                    return self.error(format!("expected `≡`, found {}", self.describe()));
                }
                let r = self.member(Side::Right)?;
                let global_name = if self.is_word(0, "as") && matches!(self.peek_at(1), Some(Tok::Ident(_))) {
                    self.pos += 1;
                    self.ident("a global name")?
                } else {
                    l.attribute.clone()
                };
                correspondences.push(AttributeCorrespondence { global_name, members: vec![l, r] });
                if !matches!(self.peek(), Some(Tok::Sym("}"))) {
                    self.expect(";")?;
                }
            }
        }
        self.eat(";");
        Ok((CorrespondenceAssertion { relation, left, right, correspondences, key_link }, line))
    }
}

/// Parses and validates an assertion document. Conversion functions may be
/// defined in the document or passed in as `known`.
pub fn parse_assertions(
    text: &str,
    registry: &Registry,
    known: &[ConversionFunction],
) -> Result<AssertionSet, CorrespondenceError> {
    let tokens = lex(text)?;
    let end = (text.lines().count().max(1), text.lines().last().map_or(1, |l| l.chars().count() + 1));
    let mut p = Parser { tokens, pos: 0, end };
    let mut set = AssertionSet::default();
    let mut lines = Vec::new();
    while p.peek().is_some() {
        if p.is_word(0, "function") {
            let f = p.function()?;
            if set.function(&f.name).is_some() || known.iter().any(|k| same_name(&k.name, &f.name)) {
                return Err(CorrespondenceError::InvalidAssertion(format!("function `{}` defined twice", f.name)));
            }
            set.functions.push(f);
        } else {
            let (a, line) = p.assertion()?;
            set.assertions.push(a);
            lines.push(line);
        }
    }
    let functions: Vec<ConversionFunction> = known.iter().chain(&set.functions).cloned().collect();
    for (a, line) in set.assertions.iter().zip(lines) {
        validate(a, registry, &functions).map_err(|e| at_line(e, line))?;
    }
    Ok(set)
}

fn at_line(e: CorrespondenceError, line: usize) -> CorrespondenceError {
    match e {
        CorrespondenceError::UnknownReference(m) => CorrespondenceError::UnknownReference(format!("line {line}: {m}")),
        CorrespondenceError::TypeMismatch(m) => CorrespondenceError::TypeMismatch(format!("line {line}: {m}")),
        CorrespondenceError::InvalidAssertion(m) => CorrespondenceError::InvalidAssertion(format!("line {line}: {m}")),
        CorrespondenceError::Inconsistent { condition } => {
            CorrespondenceError::Inconsistent { condition: format!("line {line}: {condition}") }
        }
        CorrespondenceError::Ambiguous(m) => CorrespondenceError::Ambiguous(format!("line {line}: {m}")),
        CorrespondenceError::KeyLinkBroken(m) => CorrespondenceError::InvalidAssertion(format!("line {line}: {m}")),
        e => e,
    }
}

fn validate(
    a: &CorrespondenceAssertion,
    registry: &Registry,
    functions: &[ConversionFunction],
) -> Result<(), CorrespondenceError> {
    if a.left.same_as(&a.right) {
        return Err(CorrespondenceError::InvalidAssertion(format!("{} is related to itself", a.left)));
    }
    let view = |c: &ClassRef| {
        registry.class_view(c).ok_or_else(|| CorrespondenceError::UnknownReference(format!("class {c}")))
    };
    let (lv, rv) = (view(&a.left)?, view(&a.right)?);
    let mut used: Vec<(Side, String)> = Vec::new();
    for c in &a.correspondences {
        if !is_identifier(&c.global_name) {
            return Err(CorrespondenceError::InvalidAssertion(format!("`{}` is not an identifier", c.global_name)));
        }
        for m in &c.members {
            let v = if m.side == Side::Left { &lv } else { &rv };
            if v.class.attribute(&m.attribute).is_none() {
                return Err(CorrespondenceError::UnknownReference(format!(
                    "attribute {}.{}",
                    v.class_ref(),
                    m.attribute
                )));
            }
            if let Some(f) = &m.conversion {
                if !functions.iter().any(|x| same_name(&x.name, f)) {
                    return Err(CorrespondenceError::UnknownReference(format!("function `{f}`")));
                }
            }
            if used.iter().any(|(s, n)| *s == m.side && same_name(n, &m.attribute)) {
                return Err(CorrespondenceError::InvalidAssertion(format!(
                    "{}.{} appears in two correspondences",
                    v.class_ref(),
                    m.attribute
                )));
            }
            used.push((m.side, fold(&m.attribute)));
        }
    }
    let global: Vec<String> = a.correspondences.iter().map(|c| fold(&c.global_name)).collect();
    if (1..global.len()).any(|i| global[..i].contains(&global[i])) {
        return Err(CorrespondenceError::InvalidAssertion("two correspondences share a global name".into()));
    }
    if let Some(k) = a.key_correspondence() {
        for m in &k.members {
            let v = if m.side == Side::Left { &lv } else { &rv };
            if !v.class.is_sole_key(&m.attribute) {
                return Err(CorrespondenceError::InvalidAssertion(format!(
                    "key link `{}` is not the key of {}",
                    m.attribute,
                    v.class_ref()
                )));
            }
        }
    }
    classify_pair(&lv.class, &rv.class, a.relation, &a.correspondences)?;
    derive_attributes(&[lv, rv], &[a], functions)?;
    Ok(())
}

fn write_member(out: &mut String, m: &CorrespondenceMember) {
    match &m.conversion {
        Some(f) => {
            let _ = write!(out, "{f}({})", m.attribute);
        }
        None => out.push_str(&m.attribute),
    }
}

/// Renders a set so that parsing it again yields the same set.
pub fn pretty_print(set: &AssertionSet) -> String {
    let mut out = String::new();
    for f in &set.functions {
        let _ = writeln!(out, "{f}");
    }
    for a in &set.assertions {
        let arrow = match a.relation {
            RelationKind::Containment { contained: Side::Right } => ">",
            RelationKind::Containment { .. } => "<",
            _ => "~",
        };
        let _ = write!(out, "{} {} {arrow} {}", a.relation, a.left, a.right);
        if a.correspondences.is_empty() {
            out.push_str(";\n");
            continue;
        }
        out.push_str(" {\n");
        for (i, c) in a.correspondences.iter().enumerate() {
            out.push_str("    ");
            if a.key_link == Some(i) {
                out.push_str("key ");
            }
            let (Some(l), Some(r)) = (c.member(Side::Left), c.member(Side::Right)) else { continue };
            write_member(&mut out, l);
            out.push_str(" ≡ ");
            write_member(&mut out, r);
            if c.global_name != l.attribute {
                let _ = write!(out, " as {}", c.global_name);
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_schema, SiteId};

    fn registry() -> Registry {
        let mut r = Registry::new();
        let s1 = "class employee\nempno:integer\nsalary:integer:USD\nkey: empno\nclass bank\nx:text\n\
                  class grads\nid:integer\nname:text\nthesis:text\n";
        let s2 = "class employee\nnumber:integer\nsalary:integer:INR\nkey: number\nclass bank\ny:text\n\
                  class persons\nid:integer\nname:text\n";
        r.register_schema(parse_schema(SiteId::new("S1"), s1).unwrap()).unwrap();
        r.register_schema(parse_schema(SiteId::new("S2"), s2).unwrap()).unwrap();
        r
    }

    const DOC: &str = "function f(x: integer:INR) -> real:USD = x * 0.012;\n\
                       equivalence S1.employee ~ S2.employee { empno ≡ number; salary ≡ f(salary) }\n";

    #[test]
    fn parses_documented_example() {
        let set = parse_assertions(DOC, &registry(), &[]).unwrap();
        assert_eq!(set.assertions.len(), 1);
        let a = &set.assertions[0];
        assert_eq!(a.correspondences.len(), 2);
        assert_eq!(a.correspondences[1].member(Side::Right).unwrap().conversion.as_deref(), Some("f"));
        assert_eq!(a.key_link, None);
    }

    #[test]
    fn empty_document() {
        assert_eq!(parse_assertions("", &registry(), &[]).unwrap(), AssertionSet::default());
        assert_eq!(parse_assertions("# nothing\n\n", &registry(), &[]).unwrap(), AssertionSet::default());
    }

    #[test]
    fn homonymy_with_correspondences_is_a_parse_error() {
        let err = parse_assertions("homonymy S1.bank ~ S2.bank { x ≡ y }", &registry(), &[]).unwrap_err();
        assert!(matches!(err, CorrespondenceError::Parse { line: 1, column: 28, .. }), "{err:?}");
        assert!(parse_assertions("homonymy S1.bank ~ S2.bank;", &registry(), &[]).is_ok());
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_assertions("\nequivalence S1.employee S2.employee", &registry(), &[]).unwrap_err();
        assert_eq!(err, CorrespondenceError::Parse { line: 2, column: 25, message: "expected `~`, found `S2`".into() });
        let err = parse_assertions("equivalence S1.employee ~ S2.employee { empno ≡ }", &registry(), &[]).unwrap_err();
        assert!(matches!(err, CorrespondenceError::Parse { line: 1, column: 49, .. }), "{err:?}");
    }

    #[test]
    fn semantic_errors() {
        let r = registry();
        let unknown = parse_assertions("equivalence S1.employee ~ S3.employee;", &r, &[]);
        assert!(matches!(unknown, Err(CorrespondenceError::UnknownReference(_))));
        let attr = parse_assertions("equivalence S1.employee ~ S2.employee { nope ≡ number }", &r, &[]);
        assert!(matches!(attr, Err(CorrespondenceError::UnknownReference(_))));
        let units = parse_assertions("equivalence S1.employee ~ S2.employee { salary ≡ salary }", &r, &[]);
        assert!(matches!(units, Err(CorrespondenceError::TypeMismatch(_))), "{units:?}");
        let twice =
            parse_assertions("equivalence S1.employee ~ S2.employee { empno ≡ number; empno ≡ salary }", &r, &[]);
        assert!(matches!(twice, Err(CorrespondenceError::InvalidAssertion(_))));
        let syn = parse_assertions("synonymy S1.employee ~ S2.employee;", &r, &[]);
        assert!(matches!(syn, Err(CorrespondenceError::Inconsistent { .. })));
        let same = parse_assertions("equivalence S1.employee ~ S1.EMPLOYEE;", &r, &[]);
        assert!(matches!(same, Err(CorrespondenceError::InvalidAssertion(_))));
        let key = parse_assertions("equivalence S1.employee ~ S2.employee { key salary ≡ f(salary) }", &r, &[]);
        assert!(key.is_err());
    }

    #[test]
    fn known_functions_resolve() {
        let r = registry();
        let f = parse_assertions("function f(x: integer:INR) -> real:USD = x / 80;", &r, &[]).unwrap().functions;
        let set = parse_assertions("equivalence S1.employee ~ S2.employee { salary ≡ f(salary) }", &r, &f).unwrap();
        assert_eq!(set.functions.len(), 0);
        assert!(parse_assertions("function f(x: real) -> real = x;", &r, &f).is_err());
    }

    #[test]
    fn round_trip() {
        let r = registry();
        let doc = "function f(x: integer:INR) -> real:USD = -(x - 3) * 2 / 4;\n\
                   function u(s: text) -> text = upper(s);\n\
                   equivalence S1.employee ~ S2.employee { key empno == number as id; f(salary) ≡ salary }\n\
                   containment S1.grads < S2.persons { id ≡ id; name ≡ name }\n\
                   containment S2.persons > S1.grads { id ≡ id; u(name) ≡ name }\n\
                   homonymy S1.bank ~ S2.bank\n";
        let set = parse_assertions(doc, &r, &[]);
        // f(salary) on the left converts USD... integer:USD is not INR, so this must fail.
        assert!(matches!(set, Err(CorrespondenceError::TypeMismatch(_))), "{set:?}");
        let doc = doc.replace("f(salary) ≡ salary", "salary ≡ f(salary)");
        let set = parse_assertions(&doc, &r, &[]).unwrap();
        let printed = pretty_print(&set);
        let again = parse_assertions(&printed, &r, &[]).unwrap();
        assert_eq!(again, set, "{printed}");
        assert_eq!(pretty_print(&again), printed);
        assert_eq!(set.assertions[0].correspondences[0].global_name, "id");
        assert_eq!(set.assertions[2].relation, RelationKind::Containment { contained: Side::Right });
    }
}
