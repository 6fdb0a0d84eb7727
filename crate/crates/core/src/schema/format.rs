//! Line-oriented schema and extent files.
//!
//! Schema file:
//!
//! ```text
//! # comment
//! class employees
//!   employeecode:integer
//!   phone:text?
//!   salary:real:USD
//!   key: employeecode
//! ```
//!
//! A `key:` line needs whitespace after the colon; `key:integer` declares an
//! attribute named `key`.
//!
//! Extent file, one object per line under a `[class]` header:
//!
//! ```text
//! [employees]
//! employeecode=1 name=john phone=NULL designation="Asst Prof"
//! ```
//!
//! Omitted attributes are null. Quote a value to keep spaces or to store
//! the literal text `NULL`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{fold, Attribute, ClassRef, LocalClass, LocalSchema, ObjectInstance, SchemaError, SiteId};
use crate::value::{parse_date, BaseType, DateFormat, Value};

fn syntax(line: usize, message: impl Into<String>) -> SchemaError {
    SchemaError::Syntax { line, message: message.into() }
}

fn content(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

pub fn parse_schema(site: SiteId, text: &str) -> Result<LocalSchema, SchemaError> {
    let mut classes: Vec<LocalClass> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("class ") {
            classes.push(LocalClass { name: name.trim().to_string(), attributes: Vec::new(), key: None });
            continue;
        }
        let current = classes.last_mut().ok_or_else(|| syntax(line_no, "expected `class <name>`"))?;
        if let Some(rest) = line.strip_prefix("key:").filter(|r| r.starts_with(char::is_whitespace)) {
            if current.key.is_some() {
                return Err(syntax(line_no, "second key line"));
            }
            current.key = Some(rest.split(',').map(|k| k.trim().to_string()).collect());
            continue;
        }
        let attr = Attribute::parse_spec(line).map_err(|e| syntax(line_no, e.to_string()))?;
        current.attributes.push(attr);
    }
    LocalSchema::new(site, classes)
}

pub fn print_schema(schema: &LocalSchema) -> String {
    let mut out = String::new();
    for class in &schema.classes {
        let _ = writeln!(out, "class {}", class.name);
        for a in &class.attributes {
            let _ = writeln!(out, "  {}", a.spec());
        }
        if let Some(key) = &class.key {
            let _ = writeln!(out, "  key: {}", key.join(", "));
        }
    }
    out
}

/// Objects read from an extent file plus the date layout each date
/// attribute used, keyed by folded class and attribute names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extents {
    pub objects: Vec<ObjectInstance>,
    pub date_formats: BTreeMap<String, BTreeMap<String, DateFormat>>,
}

fn split_pairs(line: &str, line_no: usize) -> Result<Vec<(String, Option<String>)>, SchemaError> {
    let mut pairs = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.next_if(|c| c.is_whitespace()).is_some() {}
        if chars.peek().is_none() {
            break;
        }
        let mut name = String::new();
        while let Some(c) = chars.next_if(|&c| c != '=' && !c.is_whitespace()) {
            name.push(c);
        }
        if chars.next() != Some('=') {
            return Err(syntax(line_no, format!("expected `=` after `{name}`")));
        }
        // None marks the bare NULL literal.
        let value = if chars.next_if_eq(&'"').is_some() {
            let mut v = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(c) => v.push(c),
                        None => return Err(syntax(line_no, "dangling escape")),
                    },
                    Some(c) => v.push(c),
                    None => return Err(syntax(line_no, "unterminated quote")),
                }
            }
            Some(v)
        } else {
            let mut v = String::new();
            while let Some(c) = chars.next_if(|c| !c.is_whitespace()) {
                v.push(c);
            }
            (v != "NULL").then_some(v)
        };
        pairs.push((name, value));
    }
    Ok(pairs)
}

/// Reads an extent file against a schema. Every object is validated and
/// key values must be unique within a class.
pub fn parse_extents(schema: &LocalSchema, text: &str) -> Result<Extents, SchemaError> {
    let mut extents = Extents::default();
    let mut current: Option<&LocalClass> = None;
    let mut seen_keys: BTreeMap<String, Vec<Vec<Value>>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let class =
                schema.class(name.trim()).ok_or_else(|| syntax(line_no, format!("unknown class `{}`", name.trim())))?;
            current = Some(class);
            continue;
        }
        let class = current.ok_or_else(|| syntax(line_no, "object before any `[class]` header"))?;
        let mut values = BTreeMap::new();
        for (name, literal) in split_pairs(line, line_no)? {
            let attr = class
                .attribute(&name)
                .ok_or_else(|| syntax(line_no, format!("unknown attribute `{name}` in `{}`", class.name)))?;
            let value = match literal {
                None => Value::Null,
                Some(text) => {
                    if attr.ty.base() == BaseType::Date {
                        if let Some((_, fmt)) = parse_date(text.trim()) {
                            extents
                                .date_formats
                                .entry(fold(&class.name))
                                .or_default()
                                .entry(fold(&attr.name))
                                .or_insert(fmt);
                        }
                    }
                    Value::parse_as(&text, &attr.ty).map_err(|e| syntax(line_no, e.to_string()))?
                }
            };
            if values.insert(attr.name.clone(), value).is_some() {
                return Err(syntax(line_no, format!("attribute `{name}` given twice")));
            }
        }
        let object = ObjectInstance { class: ClassRef::new(schema.site.clone(), class.name.clone()), values };
        object.validate(class).map_err(|e| syntax(line_no, e.to_string()))?;
        if let Some(key) = &class.key {
            let row = object.row(class);
            let key_values: Vec<Value> =
                key.iter().map(|k| row[class.position(k).expect("validated key")].clone()).collect();
            let seen = seen_keys.entry(fold(&class.name)).or_default();
            if seen.contains(&key_values) {
                return Err(syntax(line_no, format!("duplicate key in `{}`", class.name)));
            }
            seen.push(key_values);
        }
        extents.objects.push(object);
    }
    Ok(extents)
}

fn quote(value: &str) -> String {
    let plain = !value.is_empty()
        && value != "NULL"
        && !value.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\' || c == '=' || c == '#');
    if plain {
        value.to_string()
    } else {
        let mut out = String::from("\"");
        for c in value.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
        out
    }
}

pub fn print_extents(schema: &LocalSchema, extents: &Extents) -> String {
    let mut out = String::new();
    for class in &schema.classes {
        let objects: Vec<_> = extents.objects.iter().filter(|o| o.class.class == class.name).collect();
        let _ = writeln!(out, "[{}]", class.name);
        for obj in objects {
            let row = obj.row(class);
            let cells: Vec<String> = class
                .attributes
                .iter()
                .zip(row)
                .map(|(a, v)| {
                    let text = match &v {
                        Value::Null => "NULL".to_string(),
                        Value::Date(_) => {
                            let fmt = extents
                                .date_formats
                                .get(&fold(&class.name))
                                .and_then(|m| m.get(&fold(&a.name)))
                                .copied()
                                .unwrap_or_default();
                            quote(&v.render(fmt))
                        }
                        other => quote(&other.to_string()),
                    };
                    format!("{}={}", a.name, text)
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
    out
}
