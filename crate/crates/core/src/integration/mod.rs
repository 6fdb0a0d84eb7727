//! Integration operators and the global schema of virtual classes.

mod definition;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correspondence::{
    classify_pair, derive_attributes, AssertionSet, ConversionFunction, CorrespondenceAssertion, CorrespondenceError,
    RelationKind,
};
use crate::schema::{fold, same_name, ClassRef, ClassView, GdmRename, Registry};
use crate::value::SemanticType;

pub use definition::{parse_definitions, print_definitions};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntegrationError {
    #[error("unknown class {0}")]
    UnknownClass(ClassRef),
    #[error("{operator} takes {expected} constituents, got {got}")]
    Arity { operator: Operator, expected: &'static str, got: usize },
    #[error("{0} is listed twice")]
    DuplicateConstituent(ClassRef),
    #[error("{left} and {right} are homonymous and cannot be merged into a common virtual class")]
    HomonymyForbidden { left: ClassRef, right: ClassRef },
    #[error("no assertion relates {left} and {right}")]
    MissingAssertion { left: ClassRef, right: ClassRef },
    #[error("{operator} does not apply to {relation} classes {left} and {right}")]
    InapplicableRelation { operator: Operator, relation: RelationKind, left: ClassRef, right: ClassRef },
    #[error("assertion between {left} and {right} no longer holds: {reason}")]
    AssertionBroken { left: ClassRef, right: ClassRef, reason: String },
    #[error("specialize needs a key link spanning every constituent")]
    MissingKeyLink,
    #[error("key link broken: {0}")]
    KeyLinkBroken(String),
    #[error(transparent)]
    Correspondence(CorrespondenceError),
    #[error("virtual class `{0}` is defined twice")]
    DuplicateName(String),
    #[error("line {line}: {message}")]
    Definition { line: usize, message: String },
}

impl From<CorrespondenceError> for IntegrationError {
    fn from(e: CorrespondenceError) -> Self {
        match e {
            CorrespondenceError::KeyLinkBroken(m) => IntegrationError::KeyLinkBroken(m),
            e => IntegrationError::Correspondence(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    Union,
    Generalize,
    Specialize,
    Import,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Union, Operator::Generalize, Operator::Specialize, Operator::Import];

    fn allows(self, relation: RelationKind) -> bool {
        match relation {
            RelationKind::Equivalence | RelationKind::Synonymy => true,
            RelationKind::Containment { .. } => matches!(self, Operator::Generalize | Operator::Specialize),
            RelationKind::Homonymy => false,
        }
    }

    /// Whether objects of every constituent appear in the virtual extent.
    pub fn unions_extents(self) -> bool {
        !matches!(self, Operator::Specialize)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Union => "union",
            Operator::Generalize => "generalize",
            Operator::Specialize => "specialize",
            Operator::Import => "import",
        })
    }
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operator::ALL.into_iter().find(|o| o.to_string() == s).ok_or_else(|| format!("unknown operator `{s}`"))
    }
}

/// What the DBA wrote: operator, name and constituents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClassDef {
    pub name: String,
    pub operator: Operator,
    pub constituents: Vec<ClassRef>,
}

impl VirtualClassDef {
    pub fn new(name: impl Into<String>, operator: Operator, constituents: Vec<ClassRef>) -> Self {
        Self { name: name.into(), operator, constituents }
    }

    pub fn apply_rename(&mut self, rename: &GdmRename) {
        if let GdmRename::Class { site, from, to } = rename {
            for c in &mut self.constituents {
                if c.site == *site && same_name(&c.class, from) {
                    c.class = to.clone();
                }
            }
        }
    }

    pub fn references_site(&self, site: &crate::schema::SiteId) -> bool {
        self.constituents.iter().any(|c| c.site == *site)
    }
}

/// How one constituent supplies a global attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMapping {
    /// Name in the global model's view of the class.
    pub attribute: String,
    /// Name at the component site.
    pub source_attribute: String,
    pub local_type: SemanticType,
    pub conversion: Option<ConversionFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalAttribute {
    pub name: String,
    pub ty: SemanticType,
    /// One entry per constituent.
    pub mapping: Vec<Option<AttributeMapping>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constituent {
    pub class: ClassRef,
    /// Class name at the component site.
    pub source_class: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VcStatus {
    Valid,
    Invalidated(IntegrationError),
}

impl VcStatus {
    pub fn is_valid(&self) -> bool {
        *self == VcStatus::Valid
    }
}

impl fmt::Display for VcStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VcStatus::Valid => f.write_str("valid"),
            VcStatus::Invalidated(e) => write!(f, "invalidated({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualClass {
    pub def: VirtualClassDef,
    /// Resolved constituents; empty while the class is invalidated.
    pub constituents: Vec<Constituent>,
    pub attributes: Vec<GlobalAttribute>,
    /// Index into `attributes` of the identity key.
    pub key: Option<usize>,
    pub status: VcStatus,
    pub warnings: Vec<String>,
}

impl VirtualClass {
    pub fn name(&self) -> &str {
        &self.def.name
    }

    pub fn operator(&self) -> Operator {
        self.def.operator
    }

    pub fn attribute(&self, name: &str) -> Option<&GlobalAttribute> {
        self.attributes.iter().find(|a| same_name(&a.name, name))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| same_name(&a.name, name))
    }

    pub fn key_attribute(&self) -> Option<&GlobalAttribute> {
        self.key.map(|k| &self.attributes[k])
    }

    pub fn attribute_names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    fn invalid(def: &VirtualClassDef, err: IntegrationError) -> VirtualClass {
        VirtualClass {
            def: def.clone(),
            constituents: Vec::new(),
            attributes: Vec::new(),
            key: None,
            status: VcStatus::Invalidated(err),
            warnings: Vec::new(),
        }
    }
}

fn resolve(def: &VirtualClassDef, registry: &Registry) -> Result<Vec<ClassView>, IntegrationError> {
    let n = def.constituents.len();
    let arity_ok = match def.operator {
        Operator::Import => n == 1,
        _ => n >= 2,
    };
    if !arity_ok {
        let expected = if def.operator == Operator::Import { "exactly 1" } else { "at least 2" };
        return Err(IntegrationError::Arity { operator: def.operator, expected, got: n });
    }
    for (i, c) in def.constituents.iter().enumerate() {
        if def.constituents[..i].iter().any(|d| d.same_as(c)) {
            return Err(IntegrationError::DuplicateConstituent(c.clone()));
        }
    }
    def.constituents
        .iter()
        .map(|c| registry.class_view(c).ok_or_else(|| IntegrationError::UnknownClass(c.clone())))
        .collect()
}

/// The assertions governing every constituent pair.
fn governing<'a>(
    def: &VirtualClassDef,
    views: &[ClassView],
    assertions: &'a AssertionSet,
) -> Result<Vec<&'a CorrespondenceAssertion>, IntegrationError> {
    let refs: Vec<ClassRef> = views.iter().map(ClassView::class_ref).collect();
    let mut pairs = Vec::new();
    for i in 0..refs.len() {
        for j in i + 1..refs.len() {
            pairs.push((i, j, assertions.between(&refs[i], &refs[j])));
        }
    }
    // Homonymy is reported before anything else a pair may lack.
    for &(i, j, a) in &pairs {
        let same = same_name(&views[i].class.name, &views[j].class.name);
        let homonymous = match a {
            Some(a) => a.relation == RelationKind::Homonymy || (a.relation == RelationKind::Synonymy && same),
            None => false,
        };
        if homonymous {
            return Err(IntegrationError::HomonymyForbidden { left: refs[i].clone(), right: refs[j].clone() });
        }
    }
    let mut out = Vec::new();
    for (i, j, a) in pairs {
        let (left, right) = (refs[i].clone(), refs[j].clone());
        let Some(a) = a else { return Err(IntegrationError::MissingAssertion { left, right }) };
        if !def.operator.allows(a.relation) {
            return Err(IntegrationError::InapplicableRelation {
                operator: def.operator,
                relation: a.relation,
                left,
                right,
            });
        }
        let (lv, rv) = if a.left.same_as(&refs[i]) { (&views[i], &views[j]) } else { (&views[j], &views[i]) };
        if let Err(e) = classify_pair(&lv.class, &rv.class, a.relation, &a.correspondences) {
            let reason = match e {
                CorrespondenceError::Inconsistent { condition } => condition,
                e => e.to_string(),
            };
            return Err(IntegrationError::AssertionBroken { left, right, reason });
        }
        out.push(a);
    }
    Ok(out)
}

/// Builds a virtual class, failing on any violated precondition.
pub fn integrate(
    def: &VirtualClassDef,
    registry: &Registry,
    assertions: &AssertionSet,
) -> Result<VirtualClass, IntegrationError> {
    let views = resolve(def, registry)?;
    let governing = match def.operator {
        Operator::Import => Vec::new(),
        _ => governing(def, &views, assertions)?,
    };
    let derived = derive_attributes(&views, &governing, &assertions.functions)?;
    let mut warnings = derived.warnings;
    let mut key = derived.key;
    if def.operator == Operator::Specialize && key.is_none() {
        return Err(IntegrationError::MissingKeyLink);
    }
    let keep: Vec<bool> =
        derived.attributes.iter().map(|a| def.operator != Operator::Generalize || a.present_in_all()).collect();
    if let Some(k) = key {
        key = Some(keep[..k].iter().filter(|x| **x).count());
    }
    let attributes: Vec<GlobalAttribute> = derived
        .attributes
        .into_iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(a, _)| GlobalAttribute {
            name: a.name,
            ty: a.ty,
            mapping: a
                .bindings
                .into_iter()
                .zip(&views)
                .map(|(b, v)| {
                    b.map(|b| AttributeMapping {
                        source_attribute: v.source_attribute(&b.attribute).unwrap_or(&b.attribute).to_string(),
                        attribute: b.attribute,
                        local_type: b.local_type,
                        conversion: b.conversion,
                    })
                })
                .collect(),
        })
        .collect();
    if def.operator == Operator::Generalize && attributes.is_empty() {
        warnings.push(format!("virtual class `{}` has no attribute common to all constituents", def.name));
    }
    Ok(VirtualClass {
        def: def.clone(),
        constituents: views
            .iter()
            .map(|v| Constituent { class: v.class_ref(), source_class: v.source_class.clone() })
            .collect(),
        attributes,
        key,
        status: VcStatus::Valid,
        warnings,
    })
}

fn checked(
    name: &str,
    operator: Operator,
    constituents: Vec<ClassRef>,
    registry: &Registry,
    assertions: &AssertionSet,
) -> Result<VirtualClass, IntegrationError> {
    integrate(&VirtualClassDef::new(name, operator, constituents), registry, assertions)
}

pub fn union(
    name: &str,
    constituents: Vec<ClassRef>,
    registry: &Registry,
    assertions: &AssertionSet,
) -> Result<VirtualClass, IntegrationError> {
    checked(name, Operator::Union, constituents, registry, assertions)
}

pub fn generalize(
    name: &str,
    constituents: Vec<ClassRef>,
    registry: &Registry,
    assertions: &AssertionSet,
) -> Result<VirtualClass, IntegrationError> {
    checked(name, Operator::Generalize, constituents, registry, assertions)
}

pub fn specialize(
    name: &str,
    constituents: Vec<ClassRef>,
    registry: &Registry,
    assertions: &AssertionSet,
) -> Result<VirtualClass, IntegrationError> {
    checked(name, Operator::Specialize, constituents, registry, assertions)
}

pub fn import(name: &str, constituent: ClassRef, registry: &Registry) -> Result<VirtualClass, IntegrationError> {
    checked(name, Operator::Import, vec![constituent], registry, &AssertionSet::default())
}

/// Derives a virtual class; a violated precondition becomes its status.
pub fn derive(def: &VirtualClassDef, registry: &Registry, assertions: &AssertionSet) -> VirtualClass {
    integrate(def, registry, assertions).unwrap_or_else(|e| VirtualClass::invalid(def, e))
}

/// Recomputes a virtual class against the current schemas.
pub fn revalidate(vc: &VirtualClass, registry: &Registry, assertions: &AssertionSet) -> VirtualClass {
    derive(&vc.def, registry, assertions)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalSchema {
    classes: Vec<VirtualClass>,
}

impl GlobalSchema {
    /// Derives every definition. Definitions that fail are kept as
    /// invalidated classes.
    pub fn build(defs: &[VirtualClassDef], registry: &Registry, assertions: &AssertionSet) -> GlobalSchema {
        GlobalSchema { classes: defs.iter().map(|d| derive(d, registry, assertions)).collect() }
    }

    pub fn classes(&self) -> &[VirtualClass] {
        &self.classes
    }

    pub fn get(&self, name: &str) -> Option<&VirtualClass> {
        self.classes.iter().find(|c| same_name(c.name(), name))
    }

    pub fn definitions(&self) -> Vec<VirtualClassDef> {
        self.classes.iter().map(|c| c.def.clone()).collect()
    }

    /// Adds a class; its name must be new.
    pub fn insert(&mut self, vc: VirtualClass) -> Result<(), IntegrationError> {
        if self.get(vc.name()).is_some() {
            return Err(IntegrationError::DuplicateName(vc.name().to_string()));
        }
        self.classes.push(vc);
        Ok(())
    }

    /// Revalidates the classes selected by `affected`, returning their names
    /// and new statuses.
    pub fn revalidate_where(
        &mut self,
        registry: &Registry,
        assertions: &AssertionSet,
        mut affected: impl FnMut(&VirtualClassDef) -> bool,
    ) -> Vec<(String, VcStatus)> {
        let mut out = Vec::new();
        for vc in &mut self.classes {
            if affected(&vc.def) {
                *vc = revalidate(vc, registry, assertions);
                out.push((vc.name().to_string(), vc.status.clone()));
            }
        }
        out
    }

    pub fn apply_rename(&mut self, rename: &GdmRename) {
        for vc in &mut self.classes {
            vc.def.apply_rename(rename);
        }
    }

    /// Canonical text rendering, ordered by class name.
    pub fn export(&self) -> String {
        let mut classes: Vec<&VirtualClass> = self.classes.iter().collect();
        classes.sort_by_key(|c| (fold(c.name()), c.name().to_string()));
        let mut out = String::new();
        for vc in classes {
            out.push_str(&export_class(vc));
        }
        out
    }
}

fn export_class(vc: &VirtualClass) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let constituents: Vec<String> = vc.def.constituents.iter().map(ToString::to_string).collect();
    let _ = writeln!(out, "virtual {} = {}({})", vc.name(), vc.operator(), constituents.join(", "));
    let _ = writeln!(out, "  status {}", vc.status);
    if let Some(k) = vc.key_attribute() {
        let _ = writeln!(out, "  key {}", k.name);
    }
    for a in &vc.attributes {
        let _ = writeln!(out, "  attribute {} {}", a.name, a.ty);
        for (m, c) in a.mapping.iter().zip(&vc.constituents) {
            let Some(m) = m else { continue };
            let _ = write!(out, "    {}.{} {}", c.class, m.attribute, m.local_type);
            if c.source_class != c.class.class || m.source_attribute != m.attribute {
                let _ = write!(out, " local {}.{}", c.source_class, m.source_attribute);
            }
            if let Some(f) = &m.conversion {
                let _ = write!(out, " via {}", f.name);
            }
            out.push('\n');
        }
    }
    for w in &vc.warnings {
        let _ = writeln!(out, "  warning {w}");
    }
    out
}
