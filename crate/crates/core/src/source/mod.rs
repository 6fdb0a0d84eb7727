//! Simulated autonomous component databases.
//!
//! A [`SourceAdapter`] holds one site's schema and extents, answers
//! subqueries in the site's own names, evolves its schema on its own, and
//! records each schema change in its replication agent's log.

mod fault;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::predicate::Comparison;
use crate::propagation::{ChangeFlag, ReplicationAgent, SchemaChange};
use crate::schema::{fold, same_name, ClassRef, Extents, LocalClass, LocalSchema, ObjectInstance, SchemaError, SiteId};
use crate::value::{DateFormat, Value};

pub use fault::{parse_fault_script, FaultAction, FaultEvent};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SourceError {
    #[error("site `{0}` is offline")]
    SiteOffline(SiteId),
    #[error("unknown site `{0}`")]
    UnknownSite(SiteId),
    #[error("unknown class `{class}` at site `{site}`")]
    UnknownClass { site: SiteId, class: String },
    #[error("unknown attribute `{attribute}` in `{site}.{class}`")]
    UnknownAttribute { site: SiteId, class: String, attribute: String },
    #[error("invalid change at `{site}`: {message}")]
    InvalidChange { site: SiteId, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// A request in the site's own terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub class: String,
    pub projection: Vec<String>,
    pub predicate: Vec<Comparison>,
}

impl SubQuery {
    pub fn scan(class: impl Into<String>, projection: Vec<String>) -> Self {
        Self { class: class.into(), projection, predicate: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubResult {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAdapter {
    schema: LocalSchema,
    /// Rows aligned with each class's attribute order, keyed by folded
    /// class name.
    extents: BTreeMap<String, Vec<Vec<Value>>>,
    date_formats: BTreeMap<String, BTreeMap<String, DateFormat>>,
    online: bool,
    version: u64,
    #[serde(skip, default = "placeholder_agent")]
    agent: ReplicationAgent,
}

fn placeholder_agent() -> ReplicationAgent {
    ReplicationAgent::new(SiteId::new("_"))
}

impl SourceAdapter {
    pub fn new(schema: LocalSchema, extents: Extents) -> Result<Self, SourceError> {
        schema.validate()?;
        let mut rows: BTreeMap<String, Vec<Vec<Value>>> =
            schema.classes.iter().map(|c| (fold(&c.name), Vec::new())).collect();
        for object in &extents.objects {
            let class = schema.class(&object.class.class).ok_or_else(|| SourceError::UnknownClass {
                site: schema.site.clone(),
                class: object.class.class.clone(),
            })?;
            object.validate(class)?;
            rows.get_mut(&fold(&class.name)).expect("initialized").push(object.row(class));
        }
        let agent = ReplicationAgent::new(schema.site.clone());
        let adapter =
            Self { schema, extents: rows, date_formats: extents.date_formats, online: true, version: 0, agent };
        adapter.validate_extents()?;
        Ok(adapter)
    }

    pub fn site(&self) -> &SiteId {
        &self.schema.site
    }

    pub fn schema(&self) -> &LocalSchema {
        &self.schema
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn agent(&self) -> &ReplicationAgent {
        &self.agent
    }

    /// The agent alone. Relaying works through this handle, which cannot
    /// reach the site's schema or data.
    pub fn agent_mut(&mut self) -> &mut ReplicationAgent {
        &mut self.agent
    }

    pub(crate) fn restore_agent(&mut self, agent: ReplicationAgent) {
        self.agent = agent;
    }

    pub fn date_format(&self, class: &str, attribute: &str) -> Option<DateFormat> {
        self.date_formats.get(&fold(class))?.get(&fold(attribute)).copied()
    }

    /// The full extent of a class as object instances.
    pub fn objects(&self, class: &str) -> Option<Vec<ObjectInstance>> {
        let c = self.schema.class(class)?;
        let rows = &self.extents[&fold(&c.name)];
        Some(
            rows.iter()
                .map(|row| ObjectInstance {
                    class: ClassRef::new(self.site().clone(), c.name.clone()),
                    values: c.attributes.iter().map(|a| a.name.clone()).zip(row.iter().cloned()).collect(),
                })
                .collect(),
        )
    }

    pub fn extents(&self) -> Extents {
        Extents {
            objects: self.schema.classes.iter().flat_map(|c| self.objects(&c.name).unwrap_or_default()).collect(),
            date_formats: self.date_formats.clone(),
        }
    }

    /// Checks every stored object against its class.
    pub fn validate_extents(&self) -> Result<(), SchemaError> {
        for class in &self.schema.classes {
            let rows = self
                .extents
                .get(&fold(&class.name))
                .ok_or_else(|| SchemaError::InvalidData(format!("missing extent for `{}`", class.name)))?;
            for obj in self.objects(&class.name).unwrap_or_default() {
                obj.validate(class)?;
            }
            if let Some(key) = &class.key {
                let idx: Vec<usize> = key.iter().filter_map(|k| class.position(k)).collect();
                let mut seen: Vec<Vec<&Value>> = rows.iter().map(|r| idx.iter().map(|&i| &r[i]).collect()).collect();
                seen.sort();
                if seen.windows(2).any(|w| w[0] == w[1]) {
                    return Err(SchemaError::InvalidData(format!("duplicate key in `{}`", class.name)));
                }
            }
        }
        Ok(())
    }

    fn class(&self, name: &str) -> Result<&LocalClass, SourceError> {
        self.schema
            .class(name)
            .ok_or_else(|| SourceError::UnknownClass { site: self.site().clone(), class: name.to_string() })
    }

    pub fn execute_subquery(&self, q: &SubQuery) -> Result<SubResult, SourceError> {
        if !self.online {
            return Err(SourceError::SiteOffline(self.site().clone()));
        }
        let class = self.class(&q.class)?;
        let position = |name: &str| {
            class.position(name).ok_or_else(|| SourceError::UnknownAttribute {
                site: self.site().clone(),
                class: class.name.clone(),
                attribute: name.to_string(),
            })
        };
        let projection = q.projection.iter().map(|a| position(a)).collect::<Result<Vec<_>, _>>()?;
        let filters =
            q.predicate.iter().map(|c| Ok((position(&c.attribute)?, c))).collect::<Result<Vec<_>, SourceError>>()?;
        let rows = self.extents[&fold(&class.name)]
            .iter()
            .filter(|row| filters.iter().all(|(i, c)| c.holds_for(&row[*i])))
            .map(|row| projection.iter().map(|&i| row[i].clone()).collect())
            .collect();
        Ok(SubResult { header: projection.iter().map(|&i| class.attributes[i].name.clone()).collect(), rows })
    }

    /// Applies an autonomous schema change, online or not, and appends it
    /// to the outbound log. Returns the new schema version.
    pub fn apply_local_change(&mut self, change: SchemaChange) -> Result<u64, SourceError> {
        let site = self.site().clone();
        let invalid = |e: SchemaError| SourceError::InvalidChange { site: site.clone(), message: e.to_string() };
        let mut schema = self.schema.clone();
        let effect = schema.apply_change(&change).map_err(invalid)?;
        let mut extents = self.extents.clone();
        let mut formats = self.date_formats.clone();
        match &change {
            SchemaChange::AddClass { class } => {
                extents.insert(fold(class), Vec::new());
            }
            SchemaChange::DropClass { class } => {
                extents.remove(&fold(class));
                formats.remove(&fold(class));
            }
            SchemaChange::RenameClass { class, new_name } => {
                if let Some(rows) = extents.remove(&fold(class)) {
                    extents.insert(fold(new_name), rows);
                }
                if let Some(f) = formats.remove(&fold(class)) {
                    formats.insert(fold(new_name), f);
                }
            }
            SchemaChange::AddAttribute { class, attribute } => {
                let fill = if attribute.nullable { Value::Null } else { Value::default_for(&attribute.ty) };
                for row in extents.get_mut(&fold(class)).into_iter().flatten() {
                    row.push(fill.clone());
                }
            }
            SchemaChange::DropAttribute { class, attribute } => {
                let pos = self.class(class)?.position(attribute).expect("checked by schema");
                for row in extents.get_mut(&fold(class)).into_iter().flatten() {
                    row.remove(pos);
                }
                if let Some(f) = formats.get_mut(&fold(class)) {
                    f.remove(&fold(attribute));
                }
            }
            SchemaChange::RenameAttribute { class, attribute, new_name } => {
                if let Some(f) = formats.get_mut(&fold(class)) {
                    if let Some(v) = f.remove(&fold(attribute)) {
                        f.insert(fold(new_name), v);
                    }
                }
            }
            SchemaChange::ChangeAttributeType { class, attribute, new_type } => {
                let pos = self.class(class)?.position(attribute).expect("checked by schema");
                for row in extents.get_mut(&fold(class)).into_iter().flatten() {
                    row[pos] = row[pos].coerce_to(new_type).expect("widening coercion");
                }
                if new_type.base() != crate::value::BaseType::Date {
                    if let Some(f) = formats.get_mut(&fold(class)) {
                        f.remove(&fold(attribute));
                    }
                }
            }
        }
        let candidate = SourceAdapter {
            schema,
            extents,
            date_formats: formats,
            online: self.online,
            version: self.version + 1,
            agent: placeholder_agent(),
        };
        candidate.validate_extents()?;
        let agent = std::mem::replace(&mut self.agent, placeholder_agent());
        *self = SourceAdapter { agent, ..candidate };
        let flags = if effect.key_dropped { vec![ChangeFlag::KeyDropped] } else { Vec::new() };
        self.agent.append(change, flags);
        Ok(self.version)
    }

    /// Returns the previous state.
    pub fn set_connectivity(&mut self, online: bool) -> bool {
        std::mem::replace(&mut self.online, online)
    }

    /// Number of stored objects of a class.
    pub fn cardinality(&self, class: &str) -> Option<usize> {
        let c = self.schema.class(class)?;
        Some(self.extents[&fold(&c.name)].len())
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.schema.classes.iter().any(|c| same_name(&c.name, class))
    }
}
