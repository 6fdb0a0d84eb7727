//! The mediator's registry of component schemas.
//!
//! Each site entry mirrors the schema exactly as the component database
//! names it, plus a restructuring layer of DBA renames. Integration and
//! querying see the renamed view; subqueries sent back to a site are
//! translated to the site's own names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_identifier, fold, same_name, ChangeEffect, ClassRef, LocalClass, LocalSchema, SchemaError, SiteId};
use crate::propagation::SchemaChange;

/// DBA renames layered over a mirrored schema. Keys are folded source
/// names; values are the names used by the global model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Restructuring {
    classes: BTreeMap<String, String>,
    attributes: BTreeMap<String, BTreeMap<String, String>>,
}

impl Restructuring {
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty() && self.attributes.is_empty()
    }

    fn class_name<'a>(&'a self, source: &'a str) -> &'a str {
        self.classes.get(&fold(source)).map(String::as_str).unwrap_or(source)
    }

    fn attribute_name<'a>(&'a self, class: &str, source: &'a str) -> &'a str {
        self.attributes.get(&fold(class)).and_then(|m| m.get(&fold(source))).map(String::as_str).unwrap_or(source)
    }

    fn rekey_class(&mut self, old: &str, new: &str) {
        if let Some(v) = self.classes.remove(&fold(old)) {
            self.classes.insert(fold(new), v);
        }
        if let Some(v) = self.attributes.remove(&fold(old)) {
            self.attributes.insert(fold(new), v);
        }
    }

    fn rekey_attribute(&mut self, class: &str, old: &str, new: &str) {
        if let Some(m) = self.attributes.get_mut(&fold(class)) {
            if let Some(v) = m.remove(&fold(old)) {
                m.insert(fold(new), v);
            }
        }
    }

    /// Drops entries for vanished names, identity entries, and entries whose
    /// renamed name collides with another name in the view. The component
    /// site's own naming wins a collision.
    fn normalize(&mut self, schema: &LocalSchema) {
        self.classes.retain(|src, gdm| match schema.class(src) {
            Some(c) => c.name != *gdm,
            None => false,
        });
        self.attributes.retain(|src_class, attrs| {
            let Some(c) = schema.class(src_class) else { return false };
            attrs.retain(|src, gdm| matches!(c.attribute(src), Some(a) if a.name != *gdm));
            !attrs.is_empty()
        });

        loop {
            let names: Vec<(String, String)> =
                schema.classes.iter().map(|c| (fold(&c.name), fold(self.class_name(&c.name)))).collect();
            let culprit = names
                .iter()
                .filter(|(src, gdm)| {
                    self.classes.contains_key(src) && names.iter().filter(|(_, g)| g == gdm).count() > 1
                })
                .map(|(src, _)| src.clone())
                .min();
            match culprit {
                Some(src) => {
                    self.classes.remove(&src);
                }
                None => break,
            }
        }

        for class in &schema.classes {
            let key = fold(&class.name);
            while let Some(entries) = self.attributes.get_mut(&key) {
                let names: Vec<(String, String)> = class
                    .attributes
                    .iter()
                    .map(|a| {
                        let src = fold(&a.name);
                        let gdm = entries.get(&src).map(|g| fold(g)).unwrap_or_else(|| src.clone());
                        (src, gdm)
                    })
                    .collect();
                let culprit = names
                    .iter()
                    .filter(|(src, gdm)| {
                        entries.contains_key(src) && names.iter().filter(|(_, g)| g == gdm).count() > 1
                    })
                    .map(|(src, _)| src.clone())
                    .min();
                match culprit {
                    Some(src) => {
                        entries.remove(&src);
                    }
                    None => break,
                }
            }
            if self.attributes.get(&key).is_some_and(BTreeMap::is_empty) {
                self.attributes.remove(&key);
            }
        }
    }
}

/// A class as the global model sees it, with the way back to the site's
/// own names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassView {
    pub site: SiteId,
    /// Renamed class; attribute and key names are renamed too.
    pub class: LocalClass,
    pub source_class: String,
    /// Site names, aligned with `class.attributes`.
    pub source_attributes: Vec<String>,
}

impl ClassView {
    pub fn class_ref(&self) -> ClassRef {
        ClassRef::new(self.site.clone(), self.class.name.clone())
    }

    pub fn source_attribute(&self, name: &str) -> Option<&str> {
        self.class.position(name).map(|i| self.source_attributes[i].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteEntry {
    /// Mirror of the component schema in the site's own names.
    pub schema: LocalSchema,
    pub restructuring: Restructuring,
}

impl SiteEntry {
    fn effective(&self) -> Restructuring {
        let mut r = self.restructuring.clone();
        r.normalize(&self.schema);
        r
    }

    fn view_with(&self, r: &Restructuring) -> Vec<ClassView> {
        self.schema
            .classes
            .iter()
            .map(|c| {
                let attributes = c
                    .attributes
                    .iter()
                    .map(|a| {
                        let mut a = a.clone();
                        a.name = r.attribute_name(&c.name, &a.name).to_string();
                        a
                    })
                    .collect();
                let key = c.key.as_ref().map(|k| k.iter().map(|n| r.attribute_name(&c.name, n).to_string()).collect());
                ClassView {
                    site: self.schema.site.clone(),
                    class: LocalClass { name: r.class_name(&c.name).to_string(), attributes, key },
                    source_class: c.name.clone(),
                    source_attributes: c.attributes.iter().map(|a| a.name.clone()).collect(),
                }
            })
            .collect()
    }

    pub fn view(&self) -> Vec<ClassView> {
        self.view_with(&self.effective())
    }
}

/// Name changes in the global model caused by a rename, either a DBA
/// restructuring or a relayed site change. Definitions that mention the
/// old name follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GdmRename {
    Class {
        site: SiteId,
        from: String,
        to: String,
    },
    /// `class` is the class name after any class rename in the same batch.
    Attribute {
        site: SiteId,
        class: String,
        from: String,
        to: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaSummary {
    pub site: SiteId,
    pub classes: usize,
    pub attributes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    sites: BTreeMap<SiteId, SiteEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_schema(&mut self, schema: LocalSchema) -> Result<SchemaSummary, SchemaError> {
        if self.sites.contains_key(&schema.site) {
            return Err(SchemaError::DuplicateSite(schema.site));
        }
        schema.validate()?;
        let summary = SchemaSummary {
            site: schema.site.clone(),
            classes: schema.classes.len(),
            attributes: schema.attribute_count(),
        };
        self.sites.insert(schema.site.clone(), SiteEntry { schema, restructuring: Restructuring::default() });
        Ok(summary)
    }

    pub fn site(&self, site: &SiteId) -> Option<&SiteEntry> {
        self.sites.get(site)
    }

    pub fn sites(&self) -> impl Iterator<Item = (&SiteId, &SiteEntry)> {
        self.sites.iter()
    }

    pub fn contains_site(&self, site: &SiteId) -> bool {
        self.sites.contains_key(site)
    }

    /// The renamed schema of a site.
    pub fn view(&self, site: &SiteId) -> Option<LocalSchema> {
        let entry = self.sites.get(site)?;
        Some(LocalSchema { site: site.clone(), classes: entry.view().into_iter().map(|v| v.class).collect() })
    }

    pub fn class_view(&self, class: &ClassRef) -> Option<ClassView> {
        self.sites.get(&class.site)?.view().into_iter().find(|v| same_name(&v.class.name, &class.class))
    }

    /// A registry with the same restructuring over other mirrored schemas.
    /// Sites missing from `schemas` are dropped.
    pub fn with_schemas(&self, schemas: impl IntoIterator<Item = LocalSchema>) -> Registry {
        let sites = schemas
            .into_iter()
            .map(|schema| {
                let restructuring = self.sites.get(&schema.site).map(|e| e.restructuring.clone()).unwrap_or_default();
                (schema.site.clone(), SiteEntry { schema, restructuring })
            })
            .collect();
        Registry { sites }
    }

    fn entry_mut(&mut self, site: &SiteId) -> Result<&mut SiteEntry, SchemaError> {
        self.sites.get_mut(site).ok_or_else(|| SchemaError::UnknownSite(site.clone()))
    }

    /// Renames a class in the global model's view of `site`. Returns `None`
    /// when the new name is the current one.
    pub fn rename_class(&mut self, site: &SiteId, old: &str, new: &str) -> Result<Option<GdmRename>, SchemaError> {
        let entry = self.entry_mut(site)?;
        let view = entry.view();
        let target = view
            .iter()
            .find(|v| same_name(&v.class.name, old))
            .ok_or_else(|| SchemaError::UnknownClass(old.to_string()))?;
        if target.class.name == new {
            return Ok(None);
        }
        check_identifier("class", new)?;
        if view.iter().any(|v| v.source_class != target.source_class && same_name(&v.class.name, new)) {
            return Err(SchemaError::NameCollision(new.to_string()));
        }
        let from = target.class.name.clone();
        let source = target.source_class.clone();
        entry.restructuring.classes.insert(fold(&source), new.to_string());
        let schema = entry.schema.clone();
        entry.restructuring.normalize(&schema);
        Ok(Some(GdmRename::Class { site: site.clone(), from, to: new.to_string() }))
    }

    pub fn rename_attribute(
        &mut self,
        site: &SiteId,
        class: &str,
        old: &str,
        new: &str,
    ) -> Result<Option<GdmRename>, SchemaError> {
        let entry = self.entry_mut(site)?;
        let view = entry.view();
        let target = view
            .iter()
            .find(|v| same_name(&v.class.name, class))
            .ok_or_else(|| SchemaError::UnknownClass(class.to_string()))?;
        let pos = target
            .class
            .position(old)
            .ok_or_else(|| SchemaError::UnknownAttribute { class: class.to_string(), attribute: old.to_string() })?;
        if target.class.attributes[pos].name == new {
            return Ok(None);
        }
        check_identifier("attribute", new)?;
        if target.class.position(new).is_some_and(|p| p != pos) {
            return Err(SchemaError::NameCollision(new.to_string()));
        }
        let from = target.class.attributes[pos].name.clone();
        let class_name = target.class.name.clone();
        let source_class = fold(&target.source_class);
        let source_attr = fold(&target.source_attributes[pos]);
        entry.restructuring.attributes.entry(source_class).or_default().insert(source_attr, new.to_string());
        let schema = entry.schema.clone();
        entry.restructuring.normalize(&schema);
        Ok(Some(GdmRename::Attribute { site: site.clone(), class: class_name, from, to: new.to_string() }))
    }

    /// Applies a relayed site change to the mirror and reports the resulting
    /// name changes in the global model.
    pub fn apply_change(
        &mut self,
        site: &SiteId,
        change: &SchemaChange,
    ) -> Result<(ChangeEffect, Vec<GdmRename>), SchemaError> {
        let entry = self.entry_mut(site)?;
        let before = entry.view();
        let effect = entry.schema.apply_change(change)?;
        match change {
            SchemaChange::RenameClass { class, new_name } => entry.restructuring.rekey_class(class, new_name),
            SchemaChange::RenameAttribute { class, attribute, new_name } => {
                entry.restructuring.rekey_attribute(class, attribute, new_name)
            }
            _ => {}
        }
        let schema = entry.schema.clone();
        entry.restructuring.normalize(&schema);
        let after = entry.view();

        let mut class_renames = Vec::new();
        let mut attr_renames = Vec::new();
        for old in &before {
            let source = match change {
                SchemaChange::RenameClass { class, new_name } if same_name(class, &old.source_class) => {
                    new_name.as_str()
                }
                _ => old.source_class.as_str(),
            };
            let Some(new) = after.iter().find(|v| same_name(&v.source_class, source)) else { continue };
            if old.class.name != new.class.name {
                class_renames.push(GdmRename::Class {
                    site: site.clone(),
                    from: old.class.name.clone(),
                    to: new.class.name.clone(),
                });
            }
            for (i, old_attr) in old.class.attributes.iter().enumerate() {
                let src = match change {
                    SchemaChange::RenameAttribute { class, attribute, new_name }
                        if same_name(class, &new.source_class) && same_name(attribute, &old.source_attributes[i]) =>
                    {
                        new_name.as_str()
                    }
                    _ => old.source_attributes[i].as_str(),
                };
                let Some(j) = new.source_attributes.iter().position(|s| same_name(s, src)) else { continue };
                let new_attr = &new.class.attributes[j];
                if old_attr.name != new_attr.name {
                    attr_renames.push(GdmRename::Attribute {
                        site: site.clone(),
                        class: new.class.name.clone(),
                        from: old_attr.name.clone(),
                        to: new_attr.name.clone(),
                    });
                }
            }
        }
        class_renames.extend(attr_renames);
        Ok((effect, class_renames))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Attribute;

    fn schema() -> LocalSchema {
        let a = |s: &str| Attribute::parse_spec(s).unwrap();
        LocalSchema::new(
            SiteId::new("S2"),
            vec![
                LocalClass::new("Employee", vec![a("number:integer"), a("name:text")], Some(vec!["number".into()]))
                    .unwrap(),
                LocalClass::new("dept", vec![a("code:text")], None).unwrap(),
            ],
        )
        .unwrap()
    }

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_schema(schema()).unwrap();
        r
    }

    fn s2() -> SiteId {
        SiteId::new("S2")
    }

    #[test]
    fn register_round_trips() {
        let r = registry();
        assert_eq!(r.site(&s2()).unwrap().schema, schema());
        assert_eq!(r.view(&s2()).unwrap(), schema());
    }

    #[test]
    fn duplicate_site_rejected() {
        let mut r = registry();
        assert_eq!(r.register_schema(schema()), Err(SchemaError::DuplicateSite(s2())));
    }

    #[test]
    fn empty_schema_registers() {
        let mut r = Registry::new();
        let summary = r.register_schema(LocalSchema::empty(SiteId::new("E"))).unwrap();
        assert_eq!((summary.classes, summary.attributes), (0, 0));
    }

    #[test]
    fn rename_class_changes_view_not_mirror() {
        let mut r = registry();
        let ev = r.rename_class(&s2(), "Employee", "employees").unwrap();
        assert_eq!(ev, Some(GdmRename::Class { site: s2(), from: "Employee".into(), to: "employees".into() }));
        let view = r.class_view(&ClassRef::new("S2", "employees")).unwrap();
        assert_eq!(view.source_class, "Employee");
        assert!(r.class_view(&ClassRef::new("S2", "EMPLOYEES")).is_some(), "case-insensitive lookup");
        assert!(r.class_view(&ClassRef::new("S2", "Employee")).is_none());
        assert_eq!(r.site(&s2()).unwrap().schema, schema());
    }

    #[test]
    fn rename_then_inverse_restores() {
        let mut r = registry();
        let orig = r.clone();
        r.rename_class(&s2(), "Employee", "staff").unwrap();
        r.rename_class(&s2(), "staff", "Employee").unwrap();
        assert_eq!(r, orig);
        r.rename_attribute(&s2(), "Employee", "number", "empno").unwrap();
        r.rename_attribute(&s2(), "Employee", "empno", "number").unwrap();
        assert_eq!(r, orig);
    }

    #[test]
    fn rename_to_own_name_is_noop() {
        let mut r = registry();
        assert_eq!(r.rename_class(&s2(), "Employee", "Employee").unwrap(), None);
        assert_eq!(r.rename_attribute(&s2(), "Employee", "name", "name").unwrap(), None);
    }

    #[test]
    fn rename_collisions_and_unknowns() {
        let mut r = registry();
        assert_eq!(r.rename_class(&s2(), "Employee", "DEPT"), Err(SchemaError::NameCollision("DEPT".into())));
        assert_eq!(r.rename_class(&s2(), "nope", "x"), Err(SchemaError::UnknownClass("nope".into())));
        assert!(matches!(
            r.rename_attribute(&s2(), "Employee", "salary", "pay"),
            Err(SchemaError::UnknownAttribute { .. })
        ));
        assert_eq!(
            r.rename_attribute(&s2(), "Employee", "number", "Name"),
            Err(SchemaError::NameCollision("Name".into()))
        );
    }

    #[test]
    fn renamed_key_follows() {
        let mut r = registry();
        r.rename_attribute(&s2(), "Employee", "number", "empno").unwrap();
        let v = r.class_view(&ClassRef::new("S2", "Employee")).unwrap();
        assert_eq!(v.class.key, Some(vec!["empno".to_string()]));
        assert_eq!(v.source_attribute("EMPNO"), Some("number"));
    }

    #[test]
    fn site_rename_of_restructured_class_keeps_global_name() {
        let mut r = registry();
        r.rename_class(&s2(), "Employee", "employees").unwrap();
        let change = SchemaChange::RenameClass { class: "Employee".into(), new_name: "Worker".into() };
        let (_, renames) = r.apply_change(&s2(), &change).unwrap();
        assert!(renames.is_empty());
        let v = r.class_view(&ClassRef::new("S2", "employees")).unwrap();
        assert_eq!(v.source_class, "Worker");
    }

    #[test]
    fn site_rename_of_plain_class_renames_global_name() {
        let mut r = registry();
        let change = SchemaChange::RenameClass { class: "dept".into(), new_name: "division".into() };
        let (_, renames) = r.apply_change(&s2(), &change).unwrap();
        assert_eq!(renames, vec![GdmRename::Class { site: s2(), from: "dept".into(), to: "division".into() }]);
        let change =
            SchemaChange::RenameAttribute { class: "division".into(), attribute: "code".into(), new_name: "id".into() };
        let (_, renames) = r.apply_change(&s2(), &change).unwrap();
        assert_eq!(
            renames,
            vec![GdmRename::Attribute { site: s2(), class: "division".into(), from: "code".into(), to: "id".into() }]
        );
    }

    #[test]
    fn site_naming_wins_collision_with_restructuring() {
        let mut r = registry();
        r.rename_class(&s2(), "dept", "unit").unwrap();
        let (_, renames) = r.apply_change(&s2(), &SchemaChange::AddClass { class: "Unit".into() }).unwrap();
        assert_eq!(renames, vec![GdmRename::Class { site: s2(), from: "unit".into(), to: "dept".into() }]);
        assert!(r.site(&s2()).unwrap().restructuring.is_empty());
    }
}
