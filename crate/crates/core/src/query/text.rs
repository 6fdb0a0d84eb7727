//! `select <a, b, ... | *> from <virtual class> [where <attr> <op> <literal> [and ...]]`

use super::{GlobalQuery, QueryError};
use crate::predicate::{Comparator, Comparison};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Literal(Value),
    Op(Comparator),
    Comma,
    Star,
}

fn lex(text: &str) -> Result<Vec<Tok>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let syntax = |m: String| QueryError::Syntax(m);
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == ',' {
            out.push(Tok::Comma);
            i += 1;
        } else if c == '*' {
            out.push(Tok::Star);
            i += 1;
        } else if c == '\'' || c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(syntax("unterminated string literal".into())),
                    Some(&q) if q == c && chars.get(i + 1) == Some(&c) => {
                        s.push(c);
                        i += 2;
                    }
                    Some(&q) if q == c => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Literal(Value::Text(s)));
        } else if "=!<>".contains(c) {
            let start = i;
            while i < chars.len() && "=!<>".contains(chars[i]) {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Op(s.parse().map_err(syntax)?));
        } else if c.is_ascii_digit() || ((c == '-' || c == '+') && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = if let Ok(n) = s.parse::<i64>() {
                Value::Integer(n)
            } else if let Ok(x) = s.parse::<f64>() {
                Value::Real(x)
            } else {
                return Err(syntax(format!("malformed number `{s}`")));
            };
            out.push(Tok::Literal(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            return Err(syntax(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

fn keyword(tok: Option<&Tok>, word: &str) -> bool {
    matches!(tok, Some(Tok::Word(w)) if w.eq_ignore_ascii_case(word))
}

pub fn parse_query(text: &str) -> Result<GlobalQuery, QueryError> {
    let tokens = lex(text)?;
    let mut it = tokens.iter().peekable();
    let err = |m: &str| Err(QueryError::Syntax(m.to_string()));
    if !keyword(it.next(), "select") {
        return err("expected `select`");
    }
    let mut projection = Vec::new();
    if it.peek() == Some(&&Tok::Star) {
        it.next();
    } else {
        loop {
            match it.next() {
                Some(Tok::Word(w)) if !w.eq_ignore_ascii_case("from") => projection.push(w.clone()),
                _ => return err("expected an attribute name or `*`"),
            }
            if it.peek() != Some(&&Tok::Comma) {
                break;
            }
            it.next();
        }
    }
    if !keyword(it.next(), "from") {
        return err("expected `from`");
    }
    let Some(Tok::Word(virtual_class)) = it.next() else { return err("expected a virtual class name") };
    let mut predicate = Vec::new();
    if it.peek().is_some() {
        if !keyword(it.next(), "where") {
            return err("expected `where`");
        }
        loop {
            let (Some(Tok::Word(a)), Some(Tok::Op(op))) = (it.next(), it.next()) else {
                return err("expected `<attribute> <comparator> <literal>`");
            };
            let literal = match it.next() {
                Some(Tok::Literal(v)) => v.clone(),
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("null") => Value::Null,
                _ => return err("expected a literal"),
            };
            predicate.push(Comparison::new(a.clone(), *op, literal));
            match it.next() {
                None => break,
                Some(t) if keyword(Some(t), "and") => continue,
                _ => return err("expected `and` or end of query"),
            }
        }
    }
    Ok(GlobalQuery { virtual_class: virtual_class.clone(), projection, predicate })
}
