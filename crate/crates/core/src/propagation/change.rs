//! Schema change vocabulary and its line encodings.
//!
//! Log line (append-only, one entry per line):
//!
//! ```text
//! seq=<n> kind=<K> class=<c> [attr=<a>] [new=<x>] [type=<t>] [flag=key-dropped]
//! ```
//!
//! `type` uses the schema file syntax `base[:unit][?]`. A change line, as
//! typed on the command line, is a log line without `seq`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{parse_type_spec, type_spec, Attribute, SiteId};
use crate::value::SemanticType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad change line `{line}`: {message}")]
pub struct LineError {
    pub line: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaChange {
    AddClass { class: String },
    DropClass { class: String },
    RenameClass { class: String, new_name: String },
    AddAttribute { class: String, attribute: Attribute },
    DropAttribute { class: String, attribute: String },
    RenameAttribute { class: String, attribute: String, new_name: String },
    ChangeAttributeType { class: String, attribute: String, new_type: SemanticType },
}

impl SchemaChange {
    pub fn kind(&self) -> &'static str {
        match self {
            SchemaChange::AddClass { .. } => "AddClass",
            SchemaChange::DropClass { .. } => "DropClass",
            SchemaChange::RenameClass { .. } => "RenameClass",
            SchemaChange::AddAttribute { .. } => "AddAttribute",
            SchemaChange::DropAttribute { .. } => "DropAttribute",
            SchemaChange::RenameAttribute { .. } => "RenameAttribute",
            SchemaChange::ChangeAttributeType { .. } => "ChangeAttributeType",
        }
    }

    /// The class the change targets, by its name before the change.
    pub fn class(&self) -> &str {
        match self {
            SchemaChange::AddClass { class }
            | SchemaChange::DropClass { class }
            | SchemaChange::RenameClass { class, .. }
            | SchemaChange::AddAttribute { class, .. }
            | SchemaChange::DropAttribute { class, .. }
            | SchemaChange::RenameAttribute { class, .. }
            | SchemaChange::ChangeAttributeType { class, .. } => class,
        }
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let mut f = vec![("kind", self.kind().to_string()), ("class", self.class().to_string())];
        match self {
            SchemaChange::AddClass { .. } | SchemaChange::DropClass { .. } => {}
            SchemaChange::RenameClass { new_name, .. } => f.push(("new", new_name.clone())),
            SchemaChange::AddAttribute { attribute, .. } => {
                f.push(("attr", attribute.name.clone()));
                f.push(("type", type_spec(&attribute.ty, attribute.nullable)));
            }
            SchemaChange::DropAttribute { attribute, .. } => f.push(("attr", attribute.clone())),
            SchemaChange::RenameAttribute { attribute, new_name, .. } => {
                f.push(("attr", attribute.clone()));
                f.push(("new", new_name.clone()));
            }
            SchemaChange::ChangeAttributeType { attribute, new_type, .. } => {
                f.push(("attr", attribute.clone()));
                f.push(("type", new_type.to_string()));
            }
        }
        f
    }

    fn from_fields(fields: &mut BTreeMap<String, String>) -> Result<SchemaChange, String> {
        let mut take = |k: &str| fields.remove(k).ok_or_else(|| format!("missing `{k}`"));
        let kind = take("kind")?;
        let class = take("class")?;
        Ok(match kind.as_str() {
            "AddClass" => SchemaChange::AddClass { class },
            "DropClass" => SchemaChange::DropClass { class },
            "RenameClass" => SchemaChange::RenameClass { class, new_name: take("new")? },
            "AddAttribute" => {
                let name = take("attr")?;
                let (ty, nullable) = parse_type_spec(&take("type")?)?;
                SchemaChange::AddAttribute { class, attribute: Attribute::new(name, ty, nullable) }
            }
            "DropAttribute" => SchemaChange::DropAttribute { class, attribute: take("attr")? },
            "RenameAttribute" => {
                SchemaChange::RenameAttribute { class, attribute: take("attr")?, new_name: take("new")? }
            }
            "ChangeAttributeType" => {
                let attribute = take("attr")?;
                let (new_type, nullable) = parse_type_spec(&take("type")?)?;
                if nullable {
                    return Err("type changes keep nullability; drop the `?`".into());
                }
                SchemaChange::ChangeAttributeType { class, attribute, new_type }
            }
            other => return Err(format!("unknown kind `{other}`")),
        })
    }

    /// Parses a change line (`kind=... class=... ...`).
    pub fn parse_line(line: &str) -> Result<SchemaChange, LineError> {
        let err = |message: String| LineError { line: line.to_string(), message };
        let mut fields = split_fields(line).map_err(err)?;
        let change = SchemaChange::from_fields(&mut fields).map_err(err)?;
        reject_leftovers(&fields).map_err(err)?;
        Ok(change)
    }
}

impl fmt::Display for SchemaChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

fn split_fields(line: &str) -> Result<BTreeMap<String, String>, String> {
    let mut fields = BTreeMap::new();
    for token in line.split_whitespace() {
        let (k, v) = token.split_once('=').ok_or_else(|| format!("`{token}` is not key=value"))?;
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("`{k}` given twice"));
        }
    }
    Ok(fields)
}

fn reject_leftovers(fields: &BTreeMap<String, String>) -> Result<(), String> {
    match fields.keys().next() {
        Some(k) => Err(format!("unexpected field `{k}`")),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeFlag {
    /// The change removed an attribute that was part of the class key.
    KeyDropped,
}

impl ChangeFlag {
    fn as_str(self) -> &'static str {
        match self {
            ChangeFlag::KeyDropped => "key-dropped",
        }
    }
}

/// One entry of a site's outbound schema update log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeLogEntry {
    pub site: SiteId,
    pub seq: u64,
    pub change: SchemaChange,
    /// Acknowledged by the mediator.
    pub applied: bool,
    pub flags: Vec<ChangeFlag>,
}

impl ChangeLogEntry {
    /// The log-file line for this entry.
    pub fn to_log_line(&self) -> String {
        let mut line = format!("seq={} {}", self.seq, self.change);
        for flag in &self.flags {
            line.push_str(" flag=");
            line.push_str(flag.as_str());
        }
        line
    }

    pub fn parse_log_line(site: &SiteId, line: &str) -> Result<ChangeLogEntry, LineError> {
        let err = |message: String| LineError { line: line.to_string(), message };
        let mut flags = Vec::new();
        let mut rest = Vec::new();
        for token in line.split_whitespace() {
            match token.strip_prefix("flag=") {
                Some("key-dropped") => flags.push(ChangeFlag::KeyDropped),
                Some(other) => return Err(err(format!("unknown flag `{other}`"))),
                None => rest.push(token),
            }
        }
        let mut fields = split_fields(&rest.join(" ")).map_err(err)?;
        let seq = fields
            .remove("seq")
            .ok_or_else(|| err("missing `seq`".into()))?
            .parse::<u64>()
            .map_err(|e| err(format!("bad seq: {e}")))?;
        if seq == 0 {
            return Err(err("sequence numbers start at 1".into()));
        }
        let change = SchemaChange::from_fields(&mut fields).map_err(err)?;
        reject_leftovers(&fields).map_err(err)?;
        Ok(ChangeLogEntry { site: site.clone(), seq, change, applied: false, flags })
    }

    /// Relay message: the log line prefixed with the origin site.
    pub fn to_wire(&self) -> String {
        format!("site={} {}", self.site, self.to_log_line())
    }

    pub fn parse_wire(message: &str) -> Result<ChangeLogEntry, LineError> {
        let (site, rest) = message
            .strip_prefix("site=")
            .and_then(|m| m.split_once(' '))
            .ok_or_else(|| LineError { line: message.to_string(), message: "missing `site=`".into() })?;
        ChangeLogEntry::parse_log_line(&SiteId::new(site), rest)
    }
}

/// Reads a mediator high-water-mark file (`site=<id> applied=<n>` lines).
pub fn parse_high_water_marks(text: &str) -> Result<BTreeMap<SiteId, u64>, LineError> {
    let mut marks = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let err = |message: String| LineError { line: line.to_string(), message };
        let mut fields = split_fields(line).map_err(err)?;
        let site = fields.remove("site").ok_or_else(|| err("missing `site`".into()))?;
        let applied = fields
            .remove("applied")
            .ok_or_else(|| err("missing `applied`".into()))?
            .parse::<u64>()
            .map_err(|e| err(e.to_string()))?;
        reject_leftovers(&fields).map_err(err)?;
        marks.insert(SiteId::new(site), applied);
    }
    Ok(marks)
}

pub fn print_high_water_marks(marks: &BTreeMap<SiteId, u64>) -> String {
    marks.iter().map(|(site, n)| format!("site={site} applied={n}\n")).collect()
}
