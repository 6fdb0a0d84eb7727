//! The mediator: registry of component schemas, correspondence assertions,
//! the global schema, and the per-site high-water marks of applied log
//! entries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{parse_assertions, AssertionSet, CorrespondenceError};
use crate::integration::{integrate, GlobalSchema, IntegrationError, VcStatus, VirtualClassDef};
use crate::propagation::ChangeLogEntry;
use crate::schema::{same_name, GdmRename, LocalSchema, Registry, SchemaError, SchemaSummary, SiteId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediatorError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error("corrupt mediator snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApplyError {
    #[error("entry {seq} from `{site}` already applied (through {applied_through})")]
    StaleEntry { site: SiteId, seq: u64, applied_through: u64 },
    #[error("entry {seq} from `{site}` buffered until {expected} arrives")]
    GapBuffered { site: SiteId, seq: u64, expected: u64 },
    #[error("unknown site `{0}`")]
    UnknownSite(SiteId),
}

/// What one accepted entry (plus any buffered successors) did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyOutcome {
    pub applied: Vec<u64>,
    /// Entries consumed without effect because the mirror refused them.
    pub rejected: Vec<(u64, String)>,
    pub affected: Vec<(String, VcStatus)>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    registry: Registry,
    assertions: AssertionSet,
    definitions: Vec<VirtualClassDef>,
    high_water: BTreeMap<SiteId, u64>,
}

#[derive(Debug, Clone, Default)]
pub struct Mediator {
    registry: Registry,
    assertions: AssertionSet,
    global: GlobalSchema,
    high_water: BTreeMap<SiteId, u64>,
    buffered: BTreeMap<SiteId, BTreeMap<u64, ChangeLogEntry>>,
}

impl Mediator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn assertions(&self) -> &AssertionSet {
        &self.assertions
    }

    pub fn global(&self) -> &GlobalSchema {
        &self.global
    }

    pub fn high_water(&self, site: &SiteId) -> u64 {
        self.high_water.get(site).copied().unwrap_or(0)
    }

    pub fn high_water_marks(&self) -> &BTreeMap<SiteId, u64> {
        &self.high_water
    }

    pub fn buffered_count(&self) -> usize {
        self.buffered.values().map(BTreeMap::len).sum()
    }

    /// Registers a site whose log entries up to `applied_through` are
    /// already reflected in `schema`.
    pub fn register_site(&mut self, schema: LocalSchema, applied_through: u64) -> Result<SchemaSummary, MediatorError> {
        let site = schema.site.clone();
        let summary = self.registry.register_schema(schema)?;
        self.high_water.insert(site, applied_through);
        self.revalidate_all();
        Ok(summary)
    }

    /// Parses and adds an assertion document.
    pub fn add_assertions(&mut self, text: &str) -> Result<usize, MediatorError> {
        let set = parse_assertions(text, &self.registry, &self.assertions.functions)?;
        let n = set.assertions.len();
        self.assertions.extend(set)?;
        self.revalidate_all();
        Ok(n)
    }

    /// Adds virtual classes. Every definition must integrate cleanly or
    /// nothing is added.
    pub fn integrate(&mut self, defs: &[VirtualClassDef]) -> Result<Vec<String>, MediatorError> {
        let mut next = self.global.clone();
        let mut names = Vec::new();
        for def in defs {
            let vc = integrate(def, &self.registry, &self.assertions)?;
            names.extend(vc.warnings.iter().map(|w| format!("{}: {w}", def.name)));
            next.insert(vc)?;
        }
        self.global = next;
        Ok(names)
    }

    pub fn rename_class(
        &mut self,
        site: &SiteId,
        old: &str,
        new: &str,
    ) -> Result<Vec<(String, VcStatus)>, MediatorError> {
        let ev = self.registry.rename_class(site, old, new)?;
        Ok(self.follow(site, ev.into_iter().collect()))
    }

    pub fn rename_attribute(
        &mut self,
        site: &SiteId,
        class: &str,
        old: &str,
        new: &str,
    ) -> Result<Vec<(String, VcStatus)>, MediatorError> {
        let ev = self.registry.rename_attribute(site, class, old, new)?;
        Ok(self.follow(site, ev.into_iter().collect()))
    }

    fn follow(&mut self, site: &SiteId, renames: Vec<GdmRename>) -> Vec<(String, VcStatus)> {
        for ev in &renames {
            self.assertions.apply_rename(ev);
            self.global.apply_rename(ev);
        }
        self.global.revalidate_where(&self.registry, &self.assertions, |d| d.references_site(site))
    }

    fn revalidate_all(&mut self) {
        self.global.revalidate_where(&self.registry, &self.assertions, |_| true);
    }

    /// Applies a relayed entry exactly once, in sequence order per site.
    pub fn mediator_apply(&mut self, entry: ChangeLogEntry) -> Result<ApplyOutcome, ApplyError> {
        let site = entry.site.clone();
        if !self.registry.contains_site(&site) {
            return Err(ApplyError::UnknownSite(site));
        }
        let applied_through = self.high_water(&site);
        if entry.seq <= applied_through {
            return Err(ApplyError::StaleEntry { site, seq: entry.seq, applied_through });
        }
        let expected = applied_through + 1;
        if entry.seq > expected {
            let seq = entry.seq;
            self.buffered.entry(site.clone()).or_default().insert(seq, entry);
            return Err(ApplyError::GapBuffered { site, seq, expected });
        }
        let mut outcome = ApplyOutcome::default();
        let mut next = Some(entry);
        while let Some(e) = next {
            self.apply_one(e, &mut outcome);
            let want = self.high_water(&site) + 1;
            let buffer = self.buffered.entry(site.clone()).or_default();
            buffer.retain(|seq, _| *seq >= want);
            next = buffer.remove(&want);
        }
        Ok(outcome)
    }

    fn apply_one(&mut self, entry: ChangeLogEntry, outcome: &mut ApplyOutcome) {
        match self.registry.apply_change(&entry.site, &entry.change) {
            Ok((_, renames)) => {
                let affected = self.follow(&entry.site, renames);
                for (name, status) in affected {
                    match outcome.affected.iter_mut().find(|(n, _)| same_name(n, &name)) {
                        Some(slot) => slot.1 = status,
                        None => outcome.affected.push((name, status)),
                    }
                }
                outcome.applied.push(entry.seq);
            }
            Err(e) => outcome.rejected.push((entry.seq, e.to_string())),
        }
        self.high_water.insert(entry.site, entry.seq);
    }

    /// Serialized state: registry, assertions, definitions and high-water
    /// marks. The global schema is derived again on load.
    pub fn to_json(&self) -> String {
        let snapshot = Snapshot {
            registry: self.registry.clone(),
            assertions: self.assertions.clone(),
            definitions: self.global.definitions(),
            high_water: self.high_water.clone(),
        };
        serde_json::to_string_pretty(&snapshot).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Mediator, MediatorError> {
        let s: Snapshot = serde_json::from_str(text).map_err(|e| MediatorError::Snapshot(e.to_string()))?;
        let global = GlobalSchema::build(&s.definitions, &s.registry, &s.assertions);
        Ok(Mediator {
            registry: s.registry,
            assertions: s.assertions,
            global,
            high_water: s.high_water,
            buffered: BTreeMap::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integration::Operator;
    use crate::propagation::{ChangeFlag, SchemaChange};
    use crate::schema::{parse_schema, Attribute, ClassRef};
    use crate::value::SemanticType;

    fn mediator() -> Mediator {
        let mut m = Mediator::new();
        let a = "class employees\nemployeecode:integer\nname:text\nkey: employeecode\n";
        let b = "class employees\nemployeecode:integer\nname:text\nphone:integer?\nkey: employeecode\n";
        m.register_site(parse_schema(SiteId::new("A"), a).unwrap(), 0).unwrap();
        m.register_site(parse_schema(SiteId::new("B"), b).unwrap(), 0).unwrap();
        m.add_assertions("equivalence A.employees ~ B.employees { key employeecode ≡ employeecode; name ≡ name }")
            .unwrap();
        let def = VirtualClassDef::new(
            "employees",
            Operator::Union,
            vec![ClassRef::new("A", "employees"), ClassRef::new("B", "employees")],
        );
        m.integrate(&[def]).unwrap();
        m
    }

    fn entry(site: &str, seq: u64, change: SchemaChange) -> ChangeLogEntry {
        ChangeLogEntry { site: SiteId::new(site), seq, change, applied: false, flags: Vec::<ChangeFlag>::new() }
    }

    fn fax(seq: u64, name: &str) -> ChangeLogEntry {
        let attribute = Attribute::new(name, SemanticType::integer(), true);
        entry("B", seq, SchemaChange::AddAttribute { class: "employees".into(), attribute })
    }

    #[test]
    fn applies_in_order_and_deduplicates() {
        let mut m = mediator();
        let out = m.mediator_apply(fax(1, "fax")).unwrap();
        assert_eq!(out.applied, [1]);
        assert_eq!(out.affected, vec![("employees".to_string(), VcStatus::Valid)]);
        assert_eq!(m.global().get("employees").unwrap().attribute_names(), ["employeecode", "name", "phone", "fax"]);
        assert!(matches!(m.mediator_apply(fax(1, "fax")), Err(ApplyError::StaleEntry { seq: 1, .. })));
        assert!(matches!(m.mediator_apply(fax(3, "telex")), Err(ApplyError::GapBuffered { seq: 3, expected: 2, .. })));
        let out = m.mediator_apply(fax(2, "pager")).unwrap();
        assert_eq!(out.applied, [2, 3]);
        assert_eq!(m.high_water(&SiteId::new("B")), 3);
        assert_eq!(m.buffered_count(), 0);
        assert!(matches!(m.mediator_apply(fax(1, "x").clone()), Err(ApplyError::StaleEntry { .. })));
        let mut unknown = fax(1, "x");
        unknown.site = SiteId::new("Z");
        assert_eq!(m.mediator_apply(unknown), Err(ApplyError::UnknownSite(SiteId::new("Z"))));
    }

    #[test]
    fn snapshot_round_trip() {
        let mut m = mediator();
        m.mediator_apply(fax(1, "fax")).unwrap();
        m.rename_class(&SiteId::new("A"), "employees", "staff").unwrap();
        let restored = Mediator::from_json(&m.to_json()).unwrap();
        assert_eq!(restored.to_json(), m.to_json());
        assert_eq!(restored.global().export(), m.global().export());
        assert!(Mediator::from_json("{").is_err());
    }

    #[test]
    fn class_rename_followed_by_definitions() {
        let mut m = mediator();
        let out = m
            .mediator_apply(entry(
                "A",
                1,
                SchemaChange::RenameClass { class: "employees".into(), new_name: "staff".into() },
            ))
            .unwrap();
        // Equivalence needs equal names; the rename breaks it.
        assert!(matches!(out.affected[0].1, VcStatus::Invalidated(IntegrationError::AssertionBroken { .. })));
        m.rename_class(&SiteId::new("A"), "staff", "employees").unwrap();
        assert!(m.global().get("employees").unwrap().status.is_valid());
        assert_eq!(m.global().get("employees").unwrap().constituents[0].source_class, "staff");
    }

    #[test]
    fn failed_integration_changes_nothing() {
        let mut m = mediator();
        let good = VirtualClassDef::new("a", Operator::Import, vec![ClassRef::new("A", "employees")]);
        let bad = VirtualClassDef::new("b", Operator::Import, vec![ClassRef::new("A", "nope")]);
        assert!(m.integrate(&[good.clone(), bad]).is_err());
        assert!(m.global().get("a").is_none());
        m.integrate(std::slice::from_ref(&good)).unwrap();
        assert!(matches!(m.integrate(&[good]), Err(MediatorError::Integration(IntegrationError::DuplicateName(_)))));
    }
}
