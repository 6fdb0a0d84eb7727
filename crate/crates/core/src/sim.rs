//! Seeded generators for randomized federations, queries and schema
//! evolution. Used by the scenario runner and the test suites.
//!
//! A generated federation starts from a table of concepts and a table of
//! entities holding the true value of each concept. Every site stores some
//! of the entities and some of the concepts, possibly under another name
//! and through an exact conversion, so the expected answer of any query can
//! be computed from the truth table alone.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::federation::{Federation, FederationError};
use crate::predicate::{Comparator, Comparison};
use crate::query::GlobalQuery;
use crate::schema::{Attribute, ClassRef, Extents, LocalClass, LocalSchema, ObjectInstance, SiteId};
use crate::source::SourceAdapter;
use crate::value::{BaseType, SemanticType, Value};

const TEXT_POOL: [&str; 8] = ["ALPHA", "BRAVO", "CHARLIE", "DELTA", "ECHO", "FOXTROT", "GOLF", "HOTEL"];
const SCALES: [f64; 5] = [2.0, 0.5, 4.0, 0.25, -1.0];
/// Concepts besides the key.
pub const CONCEPTS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub name: String,
    pub ty: SemanticType,
    pub nullable: bool,
}

/// How a site's stored value maps to the true value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conversion {
    /// true = stored * scale + offset
    Affine { scale: f64, offset: f64 },
    /// true = upper(stored)
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteAttribute {
    pub concept: usize,
    pub name: String,
    /// Function name and what it does.
    pub conversion: Option<(String, Conversion)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteModel {
    pub site: SiteId,
    pub class: String,
    pub attributes: Vec<SiteAttribute>,
    /// Entities stored here, as indexes into the truth table.
    pub entities: Vec<usize>,
}

impl SiteModel {
    pub fn holds(&self, concept: usize) -> Option<&SiteAttribute> {
        self.attributes.iter().find(|a| a.concept == concept)
    }

    pub fn class_ref(&self) -> ClassRef {
        ClassRef::new(self.site.clone(), self.class.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub min_sites: usize,
    pub max_sites: usize,
    /// Upper bound on attributes per class, key included.
    pub max_attributes: usize,
    pub max_objects: usize,
    pub conversions: bool,
}

impl Shape {
    /// Attribute sets only, no data.
    pub const SETS: Shape =
        Shape { min_sites: 2, max_sites: 5, max_attributes: 12, max_objects: 0, conversions: false };
    pub const QUERIES: Shape =
        Shape { min_sites: 2, max_sites: 4, max_attributes: 8, max_objects: 50, conversions: true };
    pub const EVOLUTION: Shape =
        Shape { min_sites: 3, max_sites: 3, max_attributes: 6, max_objects: 10, conversions: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationModel {
    /// Index 0 is the key concept `k`.
    pub concepts: Vec<Concept>,
    /// Whether classes declare `k` as key and assertions link it.
    pub keyed: bool,
    /// Entity by concept.
    pub truth: Vec<Vec<Value>>,
    pub sites: Vec<SiteModel>,
    /// Equivalence between equally named classes, else synonymy.
    pub same_class_names: bool,
    pub assertions: String,
    pub definitions: String,
}

fn random_case(rng: &mut impl Rng, name: &str) -> String {
    match rng.gen_range(0..4) {
        0 => name.to_ascii_uppercase(),
        1 => {
            let mut c = name.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        }
        _ => name.to_string(),
    }
}

fn random_value(rng: &mut impl Rng, ty: &SemanticType) -> Value {
    match ty.base() {
        BaseType::Integer => Value::Integer(rng.gen_range(-50..=50)),
        BaseType::Real => Value::Real(rng.gen_range(-80..=80) as f64 / 4.0),
        BaseType::Text | BaseType::Identifier => Value::text(*TEXT_POOL.choose(rng).expect("non-empty")),
        BaseType::Date => {
            let epoch = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
            Value::Date(epoch + Duration::days(rng.gen_range(0..3650)))
        }
    }
}

fn random_type(rng: &mut impl Rng) -> SemanticType {
    match rng.gen_range(0..4) {
        0 => SemanticType::integer(),
        1 => SemanticType::real(),
        2 => SemanticType::text(),
        _ => SemanticType::date(),
    }
}

impl FederationModel {
    pub fn generate(rng: &mut impl Rng, shape: Shape) -> FederationModel {
        let keyed = rng.gen_bool(0.7);
        let mut concepts = vec![Concept { name: "k".into(), ty: SemanticType::integer(), nullable: false }];
        for i in 0..CONCEPTS {
            concepts.push(Concept { name: format!("c{i}"), ty: random_type(rng), nullable: rng.gen_bool(0.4) });
        }
        let entity_count = if shape.max_objects == 0 { 0 } else { rng.gen_range(1..=shape.max_objects + 10) };
        let truth: Vec<Vec<Value>> = (0..entity_count)
            .map(|e| {
                concepts
                    .iter()
                    .enumerate()
                    .map(|(c, concept)| match c {
                        0 => Value::Integer(e as i64 * 3 + 1),
                        _ if concept.nullable && rng.gen_bool(0.15) => Value::Null,
                        _ => random_value(rng, &concept.ty),
                    })
                    .collect()
            })
            .collect();

        let site_count = rng.gen_range(shape.min_sites..=shape.max_sites);
        let same_class_names = rng.gen_bool(0.5);
        let mut sites = Vec::new();
        for s in 0..site_count {
            let site = SiteId::new(format!("S{s}"));
            let class = if same_class_names { random_case(rng, "item") } else { format!("item{s}") };
            let size =
                if keyed { rng.gen_range(1..=shape.max_attributes) } else { rng.gen_range(0..=shape.max_attributes) };
            let mut chosen: Vec<usize> = (1..=CONCEPTS).collect();
            chosen.shuffle(rng);
            let mut picked: Vec<usize> = if keyed {
                std::iter::once(0).chain(chosen.into_iter().take(size - 1)).collect()
            } else {
                // Unkeyed classes may still carry `k` as plain data.
                let mut all: Vec<usize> = (0..=CONCEPTS).collect();
                all.shuffle(rng);
                all.into_iter().take(size).collect()
            };
            picked.shuffle(rng);
            let attributes = picked
                .into_iter()
                .map(|c| {
                    let concept = &concepts[c];
                    let name = if rng.gen_bool(0.25) {
                        format!("{}x{s}", concept.name)
                    } else {
                        random_case(rng, &concept.name)
                    };
                    let conversion = if shape.conversions && rng.gen_bool(0.3) {
                        let f = format!("f_{s}_{}", concept.name);
                        match concept.ty.base() {
                            BaseType::Real => Some((
                                f,
                                Conversion::Affine {
                                    scale: *SCALES.choose(rng).expect("non-empty"),
                                    offset: rng.gen_range(-3..=3) as f64,
                                },
                            )),
                            BaseType::Integer => {
                                let scale = if c != 0 && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                                let offset = [-2.0, -1.0, 1.0, 2.0, 5.0].choose(rng).copied().expect("non-empty");
                                Some((f, Conversion::Affine { scale, offset }))
                            }
                            BaseType::Text => Some((f, Conversion::Upper)),
                            _ => None,
                        }
                    } else {
                        None
                    };
                    SiteAttribute { concept: c, name, conversion }
                })
                .collect();
            let entities = (0..entity_count).filter(|_| rng.gen_bool(0.6)).collect();
            sites.push(SiteModel { site, class, attributes, entities });
        }
        // A conversion only takes effect through a correspondence.
        let counts: Vec<usize> =
            (0..concepts.len()).map(|c| sites.iter().filter(|m| m.holds(c).is_some()).count()).collect();
        for m in &mut sites {
            for a in &mut m.attributes {
                if counts[a.concept] < 2 {
                    a.conversion = None;
                }
            }
        }
        let mut model = FederationModel {
            concepts,
            keyed,
            truth,
            sites,
            same_class_names,
            assertions: String::new(),
            definitions: String::new(),
        };
        model.assertions = model.assertion_text();
        model.definitions = model.definition_text();
        model
    }

    /// The value site `s` stores for concept attribute `a` of entity `e`.
    pub fn local_value(&self, s: usize, a: usize, e: usize) -> Value {
        let attr = &self.sites[s].attributes[a];
        let t = &self.truth[e][attr.concept];
        match (&attr.conversion, t) {
            (_, Value::Null) | (None, _) => t.clone(),
            (Some((_, Conversion::Affine { scale, offset })), Value::Integer(i)) => {
                Value::Integer(((*i as f64 - offset) / scale) as i64)
            }
            (Some((_, Conversion::Affine { scale, offset })), Value::Real(r)) => Value::Real((r - offset) / scale),
            (Some((_, Conversion::Upper)), Value::Text(s)) => Value::text(s.to_ascii_lowercase()),
            (Some(_), v) => v.clone(),
        }
    }

    fn local_type(&self, attr: &SiteAttribute) -> SemanticType {
        self.concepts[attr.concept].ty.clone()
    }

    pub fn schema(&self, s: usize) -> LocalSchema {
        let m = &self.sites[s];
        let attributes = m
            .attributes
            .iter()
            .map(|a| Attribute::new(a.name.clone(), self.local_type(a), self.concepts[a.concept].nullable))
            .collect();
        let key = if self.keyed { m.holds(0).map(|a| vec![a.name.clone()]) } else { None };
        let class = LocalClass::new(m.class.clone(), attributes, key).expect("generated class is valid");
        LocalSchema::new(m.site.clone(), vec![class]).expect("generated schema is valid")
    }

    pub fn adapter(&self, s: usize) -> SourceAdapter {
        let m = &self.sites[s];
        let objects = m
            .entities
            .iter()
            .map(|&e| ObjectInstance {
                class: m.class_ref(),
                values: (0..m.attributes.len())
                    .map(|a| (m.attributes[a].name.clone(), self.local_value(s, a, e)))
                    .collect(),
            })
            .collect();
        let extents = Extents { objects, date_formats: BTreeMap::new() };
        SourceAdapter::new(self.schema(s), extents).expect("generated data is valid")
    }

    fn function_text(name: &str, conversion: Conversion, ty: &SemanticType) -> String {
        let body = match conversion {
            Conversion::Upper => "upper(x)".to_string(),
            Conversion::Affine { scale, offset } => {
                let scaled = if scale == 1.0 {
                    "x".to_string()
                } else if scale == -1.0 {
                    "-x".to_string()
                } else {
                    format!("x * {scale}")
                };
                match offset {
                    o if o > 0.0 => format!("{scaled} + {o}"),
                    o if o < 0.0 => format!("{scaled} - {}", -o),
                    _ => scaled,
                }
            }
        };
        format!("function {name}(x: {ty}) -> {ty} = {body};\n")
    }

    fn assertion_text(&self) -> String {
        let mut out = String::new();
        for m in &self.sites {
            for a in &m.attributes {
                if let Some((f, conv)) = &a.conversion {
                    out.push_str(&Self::function_text(f, *conv, &self.local_type(a)));
                }
            }
        }
        let relation = if self.same_class_names { "equivalence" } else { "synonymy" };
        let side = |a: &SiteAttribute| match &a.conversion {
            Some((f, _)) => format!("{f}({})", a.name),
            None => a.name.clone(),
        };
        for (i, left) in self.sites.iter().enumerate() {
            for right in &self.sites[i + 1..] {
                let mut items = Vec::new();
                for a in &left.attributes {
                    if let Some(b) = right.holds(a.concept) {
                        let key = if self.keyed && a.concept == 0 { "key " } else { "" };
                        items.push(format!("{key}{} ≡ {} as {}", side(a), side(b), self.concepts[a.concept].name));
                    }
                }
                out.push_str(&format!(
                    "{relation} {}.{} ~ {}.{} {{ {} }}\n",
                    left.site,
                    left.class,
                    right.site,
                    right.class,
                    items.join("; ")
                ));
            }
        }
        out
    }

    fn definition_text(&self) -> String {
        let all: Vec<String> = self.sites.iter().map(|m| format!("{}.{}", m.site, m.class)).collect();
        let mut out = format!("union u = {}\ngeneralize g = {}\n", all.join(", "), all.join(", "));
        if self.keyed {
            out.push_str(&format!("specialize s = {}\n", all.join(", ")));
        }
        for (i, c) in all.iter().enumerate() {
            out.push_str(&format!("import i{i} = {c}\n"));
        }
        out
    }

    /// Registers every site, loads the assertions and integrates.
    pub fn build(&self) -> Result<Federation, FederationError> {
        let mut f = Federation::new();
        for s in 0..self.sites.len() {
            f.register_adapter(self.adapter(s))?;
        }
        f.assert(&self.assertions)?;
        f.integrate(&self.definitions)?;
        Ok(f)
    }

    /// Names of the virtual classes the definitions create.
    pub fn virtual_classes(&self) -> Vec<String> {
        let mut names = vec!["u".to_string(), "g".to_string()];
        if self.keyed {
            names.push("s".into());
        }
        names.extend((0..self.sites.len()).map(|i| format!("i{i}")));
        names
    }

    /// Concept sets per site.
    pub fn concept_sets(&self) -> Vec<BTreeSet<usize>> {
        self.sites.iter().map(|m| m.attributes.iter().map(|a| a.concept).collect()).collect()
    }

    /// The global name a concept gets in a merged class: its own name when
    /// two or more constituents share it, else the one local spelling.
    pub fn global_name(&self, concept: usize) -> String {
        let holders: Vec<&SiteAttribute> = self.sites.iter().filter_map(|m| m.holds(concept)).collect();
        match holders.as_slice() {
            [only] => only.name.clone(),
            _ => self.concepts[concept].name.clone(),
        }
    }

    /// A random query over one of the virtual classes, with literals drawn
    /// mostly from stored values so predicates select something.
    pub fn random_query(&self, rng: &mut impl Rng, vc: &str, header: &[(String, SemanticType)]) -> GlobalQuery {
        let mut q = GlobalQuery::all(vc);
        if !header.is_empty() && rng.gen_bool(0.5) {
            let mut names: Vec<String> = header.iter().map(|(n, _)| n.clone()).collect();
            names.shuffle(rng);
            names.truncate(rng.gen_range(1..=names.len()));
            q.projection = names;
        }
        let conjuncts = if header.is_empty() { 0 } else { rng.gen_range(0..=3) };
        for _ in 0..conjuncts {
            let (name, ty) = header.choose(rng).expect("non-empty").clone();
            let op = *[Comparator::Eq, Comparator::Ne, Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge]
                .choose(rng)
                .expect("non-empty");
            let literal = if rng.gen_bool(0.05) {
                Value::Null
            } else if !self.truth.is_empty() && rng.gen_bool(0.7) {
                let concept = self.concepts.iter().position(|c| c.ty == ty).unwrap_or(0);
                let from_truth = self.truth.choose(rng).expect("non-empty")[concept].clone();
                if from_truth.is_null() || from_truth.base() != Some(ty.base()) {
                    random_value(rng, &ty)
                } else {
                    from_truth
                }
            } else {
                random_value(rng, &ty)
            };
            q.predicate.push(Comparison::new(random_case(rng, &name), op, literal));
        }
        q
    }
}

/// One step of an evolution plan.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Change { site: SiteId, change: crate::propagation::SchemaChange },
    Link { site: SiteId, up: bool },
    Relay(SiteId),
}

/// A random change that is valid against `schema`. `names` feeds renames so
/// that some of them collide with names used elsewhere.
pub fn random_change(
    rng: &mut impl Rng,
    schema: &LocalSchema,
    names: &[String],
    fresh: &mut u32,
) -> crate::propagation::SchemaChange {
    use crate::propagation::SchemaChange as C;
    let mut next_fresh = |rng: &mut dyn rand::RngCore| {
        *fresh += 1;
        if !names.is_empty() && rng.gen_bool(0.3) {
            names.choose(rng).expect("non-empty").clone()
        } else {
            format!("n{fresh}")
        }
    };
    for _ in 0..32 {
        let class = schema.classes.choose(rng);
        let change = match (rng.gen_range(0..100), class) {
            (0..=7, _) | (_, None) => C::AddClass { class: next_fresh(rng) },
            (8..=11, Some(c)) => C::DropClass { class: c.name.clone() },
            (12..=21, Some(c)) => C::RenameClass { class: c.name.clone(), new_name: next_fresh(rng) },
            (22..=49, Some(c)) => {
                let ty = random_type(rng);
                C::AddAttribute {
                    class: c.name.clone(),
                    attribute: Attribute::new(next_fresh(rng), ty, rng.gen_bool(0.6)),
                }
            }
            (50..=61, Some(c)) => match c.attributes.choose(rng) {
                Some(a) => C::DropAttribute { class: c.name.clone(), attribute: a.name.clone() },
                None => continue,
            },
            (62..=83, Some(c)) => match c.attributes.choose(rng) {
                Some(a) => {
                    C::RenameAttribute { class: c.name.clone(), attribute: a.name.clone(), new_name: next_fresh(rng) }
                }
                None => continue,
            },
            (_, Some(c)) => match c.attributes.choose(rng) {
                Some(a) => {
                    let target = match a.ty.base() {
                        BaseType::Integer if rng.gen_bool(0.7) => SemanticType::real(),
                        _ => SemanticType::text(),
                    };
                    C::ChangeAttributeType { class: c.name.clone(), attribute: a.name.clone(), new_type: target }
                }
                None => continue,
            },
        };
        if schema.clone().apply_change(&change).is_ok() {
            return change;
        }
    }
    C::AddClass {
        class: format!("z{}", {
            *fresh += 1;
            *fresh
        }),
    }
}

/// Plans `changes` random changes over the given schemas, with sites going
/// offline and coming back and relays interleaved. The plan ends with
/// every site online.
pub fn plan_evolution(
    rng: &mut impl Rng,
    schemas: &BTreeMap<SiteId, LocalSchema>,
    changes: usize,
    names: &[String],
    online: &BTreeMap<SiteId, bool>,
) -> Vec<Step> {
    let mut schemas = schemas.clone();
    let mut online = online.clone();
    let sites: Vec<SiteId> = schemas.keys().cloned().collect();
    let mut steps = Vec::new();
    let mut fresh = 0;
    if sites.is_empty() {
        return steps;
    }
    for _ in 0..changes {
        if rng.gen_bool(0.15) {
            let site = sites.choose(rng).expect("non-empty").clone();
            let up = !online.get(&site).copied().unwrap_or(true);
            online.insert(site.clone(), up);
            steps.push(Step::Link { site, up });
        }
        let site = sites.choose(rng).expect("non-empty").clone();
        let schema = schemas.get_mut(&site).expect("known site");
        let change = random_change(rng, schema, names, &mut fresh);
        schema.apply_change(&change).expect("random_change checks validity");
        steps.push(Step::Change { site, change });
        if rng.gen_bool(0.35) {
            steps.push(Step::Relay(sites.choose(rng).expect("non-empty").clone()));
        }
    }
    for (site, up) in online {
        if !up {
            steps.push(Step::Link { site, up: true });
        }
    }
    steps
}

pub fn run_step(f: &mut Federation, step: &Step) -> Result<(), FederationError> {
    match step {
        Step::Change { site, change } => f.change(site, change.clone()).map(drop),
        Step::Link { site, up } => f.set_link(site, *up).map(drop),
        Step::Relay(site) => f.relay(site).map(drop),
    }
}

/// Relays until nothing is pending. Fails after `max_rounds` full passes,
/// which only happens when a site stays offline.
pub fn settle(f: &mut Federation, max_rounds: usize) -> Result<(), String> {
    for _ in 0..max_rounds {
        if f.pending() == 0 {
            return Ok(());
        }
        f.relay_all().map_err(|e| e.to_string())?;
    }
    if f.pending() == 0 {
        Ok(())
    } else {
        Err(format!("{} log entries still pending", f.pending()))
    }
}

/// Names worth reusing in renames: every class and attribute name present.
pub fn name_pool(schemas: &BTreeMap<SiteId, LocalSchema>) -> Vec<String> {
    let mut names = BTreeSet::new();
    for s in schemas.values() {
        for c in &s.classes {
            names.insert(c.name.clone());
            names.extend(c.attributes.iter().map(|a| a.name.clone()));
        }
    }
    names.into_iter().collect()
}
