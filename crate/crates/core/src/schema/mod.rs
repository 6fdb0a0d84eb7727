//! The common object-oriented data model that every component schema is
//! transformed into before integration.
//!
//! Names of classes and attributes are stored as written but compared
//! case-insensitively everywhere.

mod format;
mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::SchemaChange;
use crate::value::{SemanticType, Value};

pub use format::{parse_extents, parse_schema, print_extents, print_schema, Extents};
pub use registry::{ClassView, GdmRename, Registry, Restructuring, SchemaSummary, SiteEntry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("site `{0}` is already registered")]
    DuplicateSite(SiteId),
    #[error("unknown site `{0}`")]
    UnknownSite(SiteId),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown attribute `{attribute}` in class `{class}`")]
    UnknownAttribute { class: String, attribute: String },
    #[error("name `{0}` already in use")]
    NameCollision(String),
    #[error("invalid change: {0}")]
    InvalidChange(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Case-insensitive name equality.
pub fn same_name(a: &str, b: &str) -> bool {
    a.eq_ignore_ascii_case(b)
}

/// The comparison key for a name.
pub fn fold(name: &str) -> String {
    name.to_ascii_lowercase()
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_identifier(what: &str, name: &str) -> Result<(), SchemaError> {
    if is_identifier(name) {
        Ok(())
    } else {
        Err(SchemaError::InvalidSchema(format!("{what} name `{name}` is not an identifier")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(String);

impl SiteId {
    pub fn new(id: impl Into<String>) -> Self {
        SiteId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for SiteId {
    fn from(s: String) -> Self {
        SiteId(s)
    }
}

impl From<&str> for SiteId {
    fn from(s: &str) -> Self {
        SiteId::new(s)
    }
}

/// `site.class`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassRef {
    pub site: SiteId,
    pub class: String,
}

impl ClassRef {
    pub fn new(site: impl Into<SiteId>, class: impl Into<String>) -> Self {
        Self { site: site.into(), class: class.into() }
    }

    pub fn same_as(&self, other: &ClassRef) -> bool {
        self.site == other.site && same_name(&self.class, &other.class)
    }
}

impl fmt::Display for ClassRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.site, self.class)
    }
}

/// `site.class.attribute`
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeRef {
    pub class: ClassRef,
    pub attribute: String,
}

impl AttributeRef {
    pub fn new(class: ClassRef, attribute: impl Into<String>) -> Self {
        Self { class, attribute: attribute.into() }
    }
}

impl fmt::Display for AttributeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub ty: SemanticType,
    pub nullable: bool,
}

impl Attribute {
    pub fn new(name: impl Into<String>, ty: SemanticType, nullable: bool) -> Self {
        Self { name: name.into(), ty, nullable }
    }

    /// Reads `name:type[:unit][?]`.
    pub fn parse_spec(spec: &str) -> Result<Attribute, SchemaError> {
        let invalid = |m: String| SchemaError::InvalidSchema(m);
        let (name, ty) = spec.split_once(':').ok_or_else(|| invalid(format!("attribute `{spec}` lacks a type")))?;
        let (ty, nullable) = parse_type_spec(ty).map_err(invalid)?;
        check_identifier("attribute", name)?;
        Ok(Attribute::new(name, ty, nullable))
    }

    /// Inverse of [`Attribute::parse_spec`].
    pub fn spec(&self) -> String {
        format!("{}:{}", self.name, type_spec(&self.ty, self.nullable))
    }
}

/// Reads `type[:unit][?]`.
pub fn parse_type_spec(spec: &str) -> Result<(SemanticType, bool), String> {
    let (ty, nullable) = match spec.strip_suffix('?') {
        Some(t) => (t, true),
        None => (spec, false),
    };
    let ty = ty.parse::<SemanticType>().map_err(|e| e.to_string())?;
    Ok((ty, nullable))
}

pub fn type_spec(ty: &SemanticType, nullable: bool) -> String {
    format!("{ty}{}", if nullable { "?" } else { "" })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClass {
    pub name: String,
    pub attributes: Vec<Attribute>,
    pub key: Option<Vec<String>>,
}

impl LocalClass {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<Attribute>,
        key: Option<Vec<String>>,
    ) -> Result<Self, SchemaError> {
        let class = Self { name: name.into(), attributes, key };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        check_identifier("class", &self.name)?;
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            check_identifier("attribute", &a.name)?;
            if !seen.insert(fold(&a.name)) {
                return Err(SchemaError::InvalidSchema(format!(
                    "duplicate attribute `{}` in class `{}`",
                    a.name, self.name
                )));
            }
        }
        if let Some(key) = &self.key {
            if key.is_empty() {
                return Err(SchemaError::InvalidSchema(format!("empty key in class `{}`", self.name)));
            }
            let mut key_seen = BTreeSet::new();
            for k in key {
                if !seen.contains(&fold(k)) || !key_seen.insert(fold(k)) {
                    return Err(SchemaError::InvalidSchema(format!(
                        "key attribute `{k}` invalid in class `{}`",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| same_name(&a.name, name))
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.position(name).map(|i| &self.attributes[i])
    }

    pub fn is_key_attribute(&self, name: &str) -> bool {
        self.key.iter().flatten().any(|k| same_name(k, name))
    }

    /// True when `name` alone identifies objects of this class.
    pub fn is_sole_key(&self, name: &str) -> bool {
        matches!(self.key.as_deref(), Some([k]) if same_name(k, name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalSchema {
    pub site: SiteId,
    pub classes: Vec<LocalClass>,
}

/// What a schema change did beyond the change itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChangeEffect {
    pub key_dropped: bool,
}

impl LocalSchema {
    pub fn new(site: SiteId, classes: Vec<LocalClass>) -> Result<Self, SchemaError> {
        let schema = Self { site, classes };
        schema.validate()?;
        Ok(schema)
    }

    pub fn empty(site: SiteId) -> Self {
        Self { site, classes: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        check_identifier("site", self.site.as_str())?;
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            c.validate()?;
            if !seen.insert(fold(&c.name)) {
                return Err(SchemaError::InvalidSchema(format!(
                    "duplicate class `{}` at site `{}`",
                    c.name, self.site
                )));
            }
        }
        Ok(())
    }

    pub fn class(&self, name: &str) -> Option<&LocalClass> {
        self.classes.iter().find(|c| same_name(&c.name, name))
    }

    pub fn class_mut(&mut self, name: &str) -> Option<&mut LocalClass> {
        self.classes.iter_mut().find(|c| same_name(&c.name, name))
    }

    pub fn attribute_count(&self) -> usize {
        self.classes.iter().map(|c| c.attributes.len()).sum()
    }

    /// Applies a change to the schema only. Extents are handled by the
    /// owner of the data.
    pub fn apply_change(&mut self, change: &SchemaChange) -> Result<ChangeEffect, SchemaError> {
        let invalid = |m: String| SchemaError::InvalidChange(m);
        let mut effect = ChangeEffect::default();
        match change {
            SchemaChange::AddClass { class } => {
                check_identifier("class", class).map_err(|e| invalid(e.to_string()))?;
                if self.class(class).is_some() {
                    return Err(invalid(format!("class `{class}` already exists")));
                }
                self.classes.push(LocalClass { name: class.clone(), attributes: Vec::new(), key: None });
            }
            SchemaChange::DropClass { class } => {
                let pos = self
                    .classes
                    .iter()
                    .position(|c| same_name(&c.name, class))
                    .ok_or_else(|| invalid(format!("unknown class `{class}`")))?;
                self.classes.remove(pos);
            }
            SchemaChange::RenameClass { class, new_name } => {
                check_identifier("class", new_name).map_err(|e| invalid(e.to_string()))?;
                if self.class(class).is_none() {
                    return Err(invalid(format!("unknown class `{class}`")));
                }
                if !same_name(class, new_name) && self.class(new_name).is_some() {
                    return Err(invalid(format!("class `{new_name}` already exists")));
                }
                self.class_mut(class).expect("checked").name = new_name.clone();
            }
            SchemaChange::AddAttribute { class, attribute } => {
                check_identifier("attribute", &attribute.name).map_err(|e| invalid(e.to_string()))?;
                let c = self.class_mut(class).ok_or_else(|| invalid(format!("unknown class `{class}`")))?;
                if c.attribute(&attribute.name).is_some() {
                    return Err(invalid(format!("attribute `{}` already exists in `{class}`", attribute.name)));
                }
                c.attributes.push(attribute.clone());
            }
            SchemaChange::DropAttribute { class, attribute } => {
                let c = self.class_mut(class).ok_or_else(|| invalid(format!("unknown class `{class}`")))?;
                let pos = c
                    .position(attribute)
                    .ok_or_else(|| invalid(format!("unknown attribute `{attribute}` in `{class}`")))?;
                c.attributes.remove(pos);
                if let Some(key) = &mut c.key {
                    let before = key.len();
                    key.retain(|k| !same_name(k, attribute));
                    effect.key_dropped = key.len() != before;
                    if key.is_empty() {
                        c.key = None;
                    }
                }
            }
            SchemaChange::RenameAttribute { class, attribute, new_name } => {
                check_identifier("attribute", new_name).map_err(|e| invalid(e.to_string()))?;
                let c = self.class_mut(class).ok_or_else(|| invalid(format!("unknown class `{class}`")))?;
                let pos = c
                    .position(attribute)
                    .ok_or_else(|| invalid(format!("unknown attribute `{attribute}` in `{class}`")))?;
                if !same_name(attribute, new_name) && c.attribute(new_name).is_some() {
                    return Err(invalid(format!("attribute `{new_name}` already exists in `{class}`")));
                }
                c.attributes[pos].name = new_name.clone();
                for k in c.key.iter_mut().flatten() {
                    if same_name(k, attribute) {
                        *k = new_name.clone();
                    }
                }
            }
            SchemaChange::ChangeAttributeType { class, attribute, new_type } => {
                let c = self.class_mut(class).ok_or_else(|| invalid(format!("unknown class `{class}`")))?;
                let pos = c
                    .position(attribute)
                    .ok_or_else(|| invalid(format!("unknown attribute `{attribute}` in `{class}`")))?;
                let old = &c.attributes[pos].ty;
                if !old.base().widens_to(new_type.base()) {
                    return Err(invalid(format!(
                        "cannot change `{attribute}` from {old} to {new_type} without losing values"
                    )));
                }
                c.attributes[pos].ty = new_type.clone();
            }
        }
        Ok(effect)
    }
}

/// One object of a local class. Values are keyed by attribute name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub class: ClassRef,
    pub values: BTreeMap<String, Value>,
}

impl ObjectInstance {
    pub fn validate(&self, class: &LocalClass) -> Result<(), SchemaError> {
        let bad = |m: String| SchemaError::InvalidData(format!("object of `{}`: {m}", class.name));
        for (name, value) in &self.values {
            let attr = class.attribute(name).ok_or_else(|| bad(format!("unknown attribute `{name}`")))?;
            if !value.conforms_to(&attr.ty) {
                return Err(bad(format!("value `{value}` does not conform to {}", attr.ty)));
            }
        }
        for attr in &class.attributes {
            if attr.nullable {
                continue;
            }
            let present = self.values.iter().any(|(n, v)| same_name(n, &attr.name) && !v.is_null());
            if !present {
                return Err(bad(format!("non-nullable attribute `{}` is null", attr.name)));
            }
        }
        Ok(())
    }

    /// Lays the values out in attribute order.
    pub fn row(&self, class: &LocalClass) -> Vec<Value> {
        class
            .attributes
            .iter()
            .map(|a| {
                self.values.iter().find(|(n, _)| same_name(n, &a.name)).map(|(_, v)| v.clone()).unwrap_or(Value::Null)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::BaseType;

    fn attr(spec: &str) -> Attribute {
        Attribute::parse_spec(spec).unwrap()
    }

    fn employees() -> LocalClass {
        LocalClass::new(
            "employees",
            vec![attr("employeecode:integer"), attr("name:text"), attr("country:text"), attr("age:integer")],
            Some(vec!["employeecode".into()]),
        )
        .unwrap()
    }

    #[test]
    fn attribute_spec_round_trip() {
        let a = attr("salary:integer:INR?");
        assert_eq!(a.ty.base(), BaseType::Integer);
        assert_eq!(a.ty.unit(), Some("INR"));
        assert!(a.nullable);
        assert_eq!(a.spec(), "salary:integer:INR?");
        assert!(Attribute::parse_spec("salary").is_err());
        assert!(Attribute::parse_spec("bad name:text").is_err());
    }

    #[test]
    fn duplicate_attribute_names_rejected_case_insensitively() {
        let err = LocalClass::new("c", vec![attr("Age:integer"), attr("age:integer")], None).unwrap_err();
        assert!(matches!(err, SchemaError::InvalidSchema(_)));
    }

    #[test]
    fn key_must_be_nonempty_subset() {
        assert!(LocalClass::new("c", vec![attr("a:text")], Some(vec![])).is_err());
        assert!(LocalClass::new("c", vec![attr("a:text")], Some(vec!["b".into()])).is_err());
        assert!(LocalClass::new("c", vec![attr("a:text")], Some(vec!["A".into()])).is_ok());
    }

    #[test]
    fn duplicate_class_names_rejected() {
        let err = LocalSchema::new(SiteId::new("S"), vec![employees(), employees()]).unwrap_err();
        assert!(matches!(err, SchemaError::InvalidSchema(_)));
    }

    #[test]
    fn object_validation() {
        let c = employees();
        let mut values = BTreeMap::new();
        values.insert("employeecode".to_string(), Value::Integer(1));
        values.insert("name".to_string(), Value::text("john"));
        values.insert("country".to_string(), Value::text("NY"));
        values.insert("age".to_string(), Value::Integer(25));
        let obj = ObjectInstance { class: ClassRef::new("A", "employees"), values };
        obj.validate(&c).unwrap();

        let mut missing = obj.clone();
        missing.values.remove("age");
        assert!(missing.validate(&c).is_err());

        let mut wrong = obj.clone();
        wrong.values.insert("age".into(), Value::text("old"));
        assert!(wrong.validate(&c).is_err());
    }

    #[test]
    fn drop_key_attribute_flags_and_clears_key() {
        let mut s = LocalSchema::new(SiteId::new("S"), vec![employees()]).unwrap();
        let effect = s
            .apply_change(&SchemaChange::DropAttribute { class: "employees".into(), attribute: "EmployeeCode".into() })
            .unwrap();
        assert!(effect.key_dropped);
        assert_eq!(s.class("employees").unwrap().key, None);
    }

    #[test]
    fn narrowing_type_change_rejected() {
        let mut s = LocalSchema::new(SiteId::new("S"), vec![employees()]).unwrap();
        let to_real = SchemaChange::ChangeAttributeType {
            class: "employees".into(),
            attribute: "age".into(),
            new_type: SemanticType::real(),
        };
        s.apply_change(&to_real).unwrap();
        let back = SchemaChange::ChangeAttributeType {
            class: "employees".into(),
            attribute: "age".into(),
            new_type: SemanticType::integer(),
        };
        assert!(matches!(s.apply_change(&back), Err(SchemaError::InvalidChange(_))));
    }
}
