//! Correspondence assertions between local classes, and the derivation of
//! global attributes from them.

mod conversion;
mod dsl;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{fold, same_name, AttributeRef, ClassRef, ClassView, GdmRename, LocalClass, Registry};
use crate::value::SemanticType;

pub use conversion::{Builtin, ConversionFunction, Expr};
pub use dsl::{parse_assertions, pretty_print};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorrespondenceError {
    #[error("{line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown reference: {0}")]
    UnknownReference(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid assertion: {0}")]
    InvalidAssertion(String),
    #[error("inconsistent assertion: {condition}")]
    Inconsistent { condition: String },
    #[error("ambiguous correspondence: {0}")]
    Ambiguous(String),
    #[error("key link broken: {0}")]
    KeyLinkBroken(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Equivalence,
    Synonymy,
    /// `contained` names the side whose extent is a subset of the other's.
    Containment {
        contained: Side,
    },
    Homonymy,
}

impl RelationKind {
    pub fn keyword(self) -> &'static str {
        match self {
            RelationKind::Equivalence => "equivalence",
            RelationKind::Synonymy => "synonymy",
            RelationKind::Containment { .. } => "containment",
            RelationKind::Homonymy => "homonymy",
        }
    }

    /// The same relation seen with the sides swapped.
    pub fn flipped(self) -> RelationKind {
        match self {
            RelationKind::Containment { contained } => RelationKind::Containment { contained: contained.other() },
            r => r,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceMember {
    pub side: Side,
    /// Attribute name in the global model's view of the class.
    pub attribute: String,
    pub conversion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCorrespondence {
    pub global_name: String,
    pub members: Vec<CorrespondenceMember>,
}

impl AttributeCorrespondence {
    pub fn member(&self, side: Side) -> Option<&CorrespondenceMember> {
        self.members.iter().find(|m| m.side == side)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceAssertion {
    pub relation: RelationKind,
    pub left: ClassRef,
    pub right: ClassRef,
    pub correspondences: Vec<AttributeCorrespondence>,
    /// Index into `correspondences` of the identity key.
    pub key_link: Option<usize>,
}

impl CorrespondenceAssertion {
    pub fn class(&self, side: Side) -> &ClassRef {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn member_ref(&self, member: &CorrespondenceMember) -> AttributeRef {
        AttributeRef::new(self.class(member.side).clone(), member.attribute.clone())
    }

    /// Whether the assertion relates `a` and `b`, in either order.
    pub fn relates(&self, a: &ClassRef, b: &ClassRef) -> bool {
        (self.left.same_as(a) && self.right.same_as(b)) || (self.left.same_as(b) && self.right.same_as(a))
    }

    pub fn mentions(&self, c: &ClassRef) -> bool {
        self.left.same_as(c) || self.right.same_as(c)
    }

    /// The assertion with left and right exchanged.
    pub fn flipped(&self) -> CorrespondenceAssertion {
        let mut out = self.clone();
        std::mem::swap(&mut out.left, &mut out.right);
        out.relation = self.relation.flipped();
        for c in &mut out.correspondences {
            for m in &mut c.members {
                m.side = m.side.other();
            }
        }
        out
    }

    pub fn key_correspondence(&self) -> Option<&AttributeCorrespondence> {
        self.key_link.and_then(|i| self.correspondences.get(i))
    }

    fn apply_rename(&mut self, rename: &GdmRename) {
        match rename {
            GdmRename::Class { site, from, to } => {
                for c in [&mut self.left, &mut self.right] {
                    if c.site == *site && same_name(&c.class, from) {
                        c.class = to.clone();
                    }
                }
            }
            GdmRename::Attribute { site, class, from, to } => {
                let hit = |c: &ClassRef| c.site == *site && same_name(&c.class, class);
                let (left, right) = (hit(&self.left), hit(&self.right));
                for m in self.correspondences.iter_mut().flat_map(|c| c.members.iter_mut()) {
                    let side_hit = match m.side {
                        Side::Left => left,
                        Side::Right => right,
                    };
                    if side_hit && same_name(&m.attribute, from) {
                        m.attribute = to.clone();
                    }
                }
            }
        }
    }
}

/// Conversion functions plus the assertions that use them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssertionSet {
    pub functions: Vec<ConversionFunction>,
    pub assertions: Vec<CorrespondenceAssertion>,
}

impl AssertionSet {
    pub fn is_empty(&self) -> bool {
        self.functions.is_empty() && self.assertions.is_empty()
    }

    pub fn function(&self, name: &str) -> Option<&ConversionFunction> {
        self.functions.iter().find(|f| same_name(&f.name, name))
    }

    /// The assertion governing a pair of classes.
    pub fn between(&self, a: &ClassRef, b: &ClassRef) -> Option<&CorrespondenceAssertion> {
        self.assertions.iter().find(|x| x.relates(a, b))
    }

    /// Adds another set. Function names and asserted pairs must be new.
    pub fn extend(&mut self, other: AssertionSet) -> Result<(), CorrespondenceError> {
        for f in &other.functions {
            if self.function(&f.name).is_some() {
                return Err(CorrespondenceError::InvalidAssertion(format!("function `{}` already defined", f.name)));
            }
        }
        for (i, a) in other.assertions.iter().enumerate() {
            if self.between(&a.left, &a.right).is_some()
                || other.assertions[..i].iter().any(|b| b.relates(&a.left, &a.right))
            {
                return Err(CorrespondenceError::InvalidAssertion(format!(
                    "{} and {} are already related by an assertion",
                    a.left, a.right
                )));
            }
        }
        self.functions.extend(other.functions);
        self.assertions.extend(other.assertions);
        Ok(())
    }

    /// Follows a rename in the global model's names. Global attribute
    /// names are kept, so queries written against them stay valid.
    pub fn apply_rename(&mut self, rename: &GdmRename) {
        for a in &mut self.assertions {
            a.apply_rename(rename);
        }
    }
}

/// Checks the structural conditions of an asserted relation.
pub fn classify_pair(
    left: &LocalClass,
    right: &LocalClass,
    asserted: RelationKind,
    correspondences: &[AttributeCorrespondence],
) -> Result<RelationKind, CorrespondenceError> {
    let same = same_name(&left.name, &right.name);
    let fail = |condition: String| Err(CorrespondenceError::Inconsistent { condition });
    match asserted {
        RelationKind::Equivalence if !same => {
            fail(format!("equivalence requires the same class name, got `{}` and `{}`", left.name, right.name))
        }
        RelationKind::Synonymy if same => {
            fail(format!("synonymy requires different class names, both are `{}`", left.name))
        }
        RelationKind::Homonymy if !same => {
            fail(format!("homonymy requires the same class name, got `{}` and `{}`", left.name, right.name))
        }
        RelationKind::Containment { contained } => {
            let (sub, sup) = match contained {
                Side::Left => (left, right),
                Side::Right => (right, left),
            };
            let sup_side = contained.other();
            for a in &sup.attributes {
                let mapped = correspondences.iter().any(|c| {
                    c.member(sup_side).is_some_and(|m| same_name(&m.attribute, &a.name))
                        && c.member(contained).is_some_and(|m| sub.attribute(&m.attribute).is_some())
                });
                if !mapped {
                    return fail(format!(
                        "containment requires `{}` to cover every attribute of `{}`, `{}` is not mapped",
                        sub.name, sup.name, a.name
                    ));
                }
            }
            Ok(asserted)
        }
        _ => Ok(asserted),
    }
}

/// How one constituent supplies a global attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    /// Attribute name in the global model's view of the class.
    pub attribute: String,
    pub local_type: SemanticType,
    pub conversion: Option<ConversionFunction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedAttribute {
    pub name: String,
    pub ty: SemanticType,
    /// One entry per constituent, in constituent order.
    pub bindings: Vec<Option<Binding>>,
}

impl DerivedAttribute {
    pub fn present_in_all(&self) -> bool {
        self.bindings.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub attributes: Vec<DerivedAttribute>,
    /// Index into `attributes` of the identity key spanning every
    /// constituent, if the key links establish one.
    pub key: Option<usize>,
    pub warnings: Vec<String>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.0[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.0[x] = r;
        r
    }

    /// Links so that the smaller root wins, which keeps the earliest-named
    /// node as the representative.
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.0[hi] = lo;
    }
}

/// Groups the attributes of `classes` into global attributes.
///
/// Correspondences link attributes; correspondences sharing a global name
/// (across assertions) land in the same group. Attributes no
/// correspondence mentions become global attributes of their own under
/// their local name, suffixed when that name is already taken. Members
/// naming attributes that no longer exist are skipped, except in a key
/// link.
pub fn derive_attributes(
    classes: &[ClassView],
    assertions: &[&CorrespondenceAssertion],
    functions: &[ConversionFunction],
) -> Result<Derivation, CorrespondenceError> {
    // Name nodes come first so that a group's smallest node is its
    // first-seen global name.
    let mut names: Vec<String> = Vec::new();
    let mut name_index: BTreeMap<String, usize> = BTreeMap::new();
    for a in assertions {
        for c in &a.correspondences {
            name_index.entry(fold(&c.global_name)).or_insert_with(|| {
                names.push(c.global_name.clone());
                names.len() - 1
            });
        }
    }
    let mut slot_base = Vec::with_capacity(classes.len());
    let mut total = names.len();
    for c in classes {
        slot_base.push(total);
        total += c.class.attributes.len();
    }
    let mut uf = UnionFind((0..total).collect());
    let mut conversions: BTreeMap<usize, Option<String>> = BTreeMap::new();
    let mut key_roots = Vec::new();
    let mut all_keyed = !assertions.is_empty();

    let index_of = |r: &ClassRef| classes.iter().position(|v| v.class_ref().same_as(r));
    for a in assertions {
        let (Some(li), Some(ri)) = (index_of(&a.left), index_of(&a.right)) else { continue };
        let idx = |side: Side| if side == Side::Left { li } else { ri };
        if a.key_link.is_none() {
            all_keyed = false;
        }
        for (ci, c) in a.correspondences.iter().enumerate() {
            let is_key = a.key_link == Some(ci);
            let node = name_index[&fold(&c.global_name)];
            for m in &c.members {
                let class = &classes[idx(m.side)];
                let pos = class.class.position(&m.attribute);
                if is_key && !(pos.is_some() && class.class.is_sole_key(&m.attribute)) {
                    return Err(CorrespondenceError::KeyLinkBroken(format!(
                        "`{}` is not the key of {}",
                        m.attribute,
                        class.class_ref()
                    )));
                }
                let Some(pos) = pos else { continue };
                let slot = slot_base[idx(m.side)] + pos;
                match conversions.get(&slot) {
                    Some(prev) if !option_same(prev.as_deref(), m.conversion.as_deref()) => {
                        return Err(CorrespondenceError::Ambiguous(format!(
                            "{}.{} is converted differently by two correspondences",
                            class.class_ref(),
                            m.attribute
                        )));
                    }
                    _ => {
                        conversions.insert(slot, m.conversion.clone());
                    }
                }
                uf.union(slot, node);
            }
            if is_key {
                key_roots.push(node);
            }
        }
    }

    struct Group {
        root: usize,
        slots: Vec<(usize, usize)>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (ci, c) in classes.iter().enumerate() {
        for ai in 0..c.class.attributes.len() {
            let root = uf.find(slot_base[ci] + ai);
            match groups.iter_mut().find(|g| g.root == root) {
                Some(g) => {
                    if g.slots.iter().any(|&(gc, _)| gc == ci) {
                        return Err(CorrespondenceError::Ambiguous(format!(
                            "two attributes of {} map to one global attribute",
                            c.class_ref()
                        )));
                    }
                    g.slots.push((ci, ai));
                }
                None => groups.push(Group { root, slots: vec![(ci, ai)] }),
            }
        }
    }

    let mut warnings = Vec::new();
    let mut taken: BTreeMap<String, usize> = BTreeMap::new();
    let mut group_names: Vec<Option<String>> =
        groups.iter().map(|g| (g.root < names.len()).then(|| names[g.root].clone())).collect();
    for n in group_names.iter().flatten() {
        taken.insert(fold(n), 1);
    }
    let mut wanted: BTreeMap<String, usize> = BTreeMap::new();
    for (g, n) in groups.iter().zip(&group_names) {
        if n.is_none() {
            let (ci, ai) = g.slots[0];
            *wanted.entry(fold(&classes[ci].class.attributes[ai].name)).or_default() += 1;
        }
    }
    for (g, n) in groups.iter().zip(group_names.iter_mut()) {
        if n.is_some() {
            continue;
        }
        let (ci, ai) = g.slots[0];
        let view = &classes[ci];
        let local = &view.class.attributes[ai].name;
        let clash = taken.contains_key(&fold(local)) || wanted[&fold(local)] > 1;
        let chosen = if clash {
            let site = view.site.as_str();
            let mut candidates = vec![format!("{local}_{site}"), format!("{local}_{site}_{}", view.class.name)];
            let mut k = 2;
            loop {
                if let Some(c) =
                    candidates.iter().find(|c| !taken.contains_key(&fold(c)) && !wanted.contains_key(&fold(c)))
                {
                    break c.clone();
                }
                candidates = vec![format!("{local}_{site}_{}_{k}", view.class.name)];
                k += 1;
            }
        } else {
            local.clone()
        };
        if clash {
            warnings.push(format!(
                "attribute `{local}` of {} is exposed as `{chosen}` to avoid a name collision",
                view.class_ref()
            ));
        }
        taken.insert(fold(&chosen), 1);
        *n = Some(chosen);
    }

    let mut attributes = Vec::with_capacity(groups.len());
    for (g, name) in groups.iter().zip(group_names) {
        let name = name.expect("every group is named");
        let mut bindings: Vec<Option<Binding>> = vec![None; classes.len()];
        let mut ty: Option<SemanticType> = None;
        for &(ci, ai) in &g.slots {
            let attr = &classes[ci].class.attributes[ai];
            let conversion = match conversions.get(&(slot_base[ci] + ai)).cloned().flatten() {
                Some(fname) => Some(
                    functions
                        .iter()
                        .find(|f| same_name(&f.name, &fname))
                        .cloned()
                        .ok_or_else(|| CorrespondenceError::UnknownReference(format!("function `{fname}`")))?,
                ),
                None => None,
            };
            let post = match &conversion {
                Some(f) => {
                    if !attr.ty.coercible_to(&f.input) {
                        return Err(CorrespondenceError::TypeMismatch(format!(
                            "{}.{} has type {}, function `{}` expects {}",
                            classes[ci].class_ref(),
                            attr.name,
                            attr.ty,
                            f.name,
                            f.input
                        )));
                    }
                    f.output.clone()
                }
                None => attr.ty.clone(),
            };
            ty = Some(match ty {
                None => post,
                Some(t) => t.join(&post).ok_or_else(|| {
                    CorrespondenceError::TypeMismatch(format!("global attribute `{name}`: {t} and {post} do not join"))
                })?,
            });
            bindings[ci] = Some(Binding { attribute: attr.name.clone(), local_type: attr.ty.clone(), conversion });
        }
        attributes.push(DerivedAttribute { name, ty: ty.expect("groups are non-empty"), bindings });
    }

    let key = if all_keyed && !key_roots.is_empty() {
        let roots: Vec<usize> = key_roots.iter().map(|&n| uf.find(n)).collect();
        let root = roots[0];
        let group = groups.iter().position(|g| g.root == root);
        match group {
            Some(gi) if roots.iter().all(|&r| r == root) && attributes[gi].present_in_all() => Some(gi),
            _ => None,
        }
    } else {
        None
    };
    Ok(Derivation { attributes, key, warnings })
}

fn option_same(a: Option<&str>, b: Option<&str>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => same_name(a, b),
        _ => false,
    }
}

/// The global attributes a single assertion yields over its two classes.
pub fn global_attribute_set(
    assertion: &CorrespondenceAssertion,
    registry: &Registry,
    functions: &[ConversionFunction],
) -> Result<Vec<(String, SemanticType)>, CorrespondenceError> {
    let view = |c: &ClassRef| {
        registry.class_view(c).ok_or_else(|| CorrespondenceError::UnknownReference(format!("class {c}")))
    };
    let classes = [view(&assertion.left)?, view(&assertion.right)?];
    let d = derive_attributes(&classes, &[assertion], functions)?;
    Ok(d.attributes.into_iter().map(|a| (a.name, a.ty)).collect())
}
