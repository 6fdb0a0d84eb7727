//! Queries against virtual classes: decomposition into per-site subqueries,
//! and composition of the answers.

mod render;
mod text;

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::integration::{GlobalSchema, Operator, VcStatus, VirtualClass};
use crate::predicate::Comparison;
use crate::schema::{same_name, SiteId};
use crate::source::{SourceAdapter, SourceError, SubQuery, SubResult};
use crate::value::{parse_date, BaseType, DateFormat, SemanticType, Value};

pub use render::{render_table, render_tsv};
pub use text::parse_query;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query syntax: {0}")]
    Syntax(String),
    #[error("unknown virtual class `{0}`")]
    UnknownVirtualClass(String),
    #[error("virtual class `{name}` is invalidated: {reason}")]
    InvalidatedVirtualClass { name: String, reason: String },
    #[error("unknown attribute `{attribute}` in `{virtual_class}`")]
    UnknownAttribute { virtual_class: String, attribute: String },
    #[error("partial result: answered by [{}], missing [{}]", join(.answered), join(.missing))]
    PartialResult { answered: Vec<SiteId>, missing: Vec<SiteId> },
    #[error(transparent)]
    Source(SourceError),
}

fn join(sites: &[SiteId]) -> String {
    sites.iter().map(SiteId::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalQuery {
    pub virtual_class: String,
    /// Empty selects every attribute.
    pub projection: Vec<String>,
    pub predicate: Vec<Comparison>,
}

impl GlobalQuery {
    pub fn all(virtual_class: impl Into<String>) -> Self {
        Self { virtual_class: virtual_class.into(), projection: Vec::new(), predicate: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    /// Evaluate eligible conjuncts at the sites.
    pub pushdown: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self { pushdown: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub header: Vec<String>,
    pub types: Vec<SemanticType>,
    pub rows: Vec<Vec<Value>>,
    pub warnings: Vec<String>,
    /// How each column's dates were written at their source.
    pub date_formats: Vec<DateFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Merge {
    Concat,
    OuterByKey,
    IntersectByKey,
}

fn merge_mode(vc: &VirtualClass) -> Merge {
    match (vc.operator(), vc.key) {
        (Operator::Specialize, _) => Merge::IntersectByKey,
        (Operator::Import, _) | (_, None) => Merge::Concat,
        (_, Some(_)) => Merge::OuterByKey,
    }
}

/// Subqueries for each constituent, in constituent order, plus what is
/// left for the mediator.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub subqueries: Vec<(SiteId, SubQuery)>,
    /// Conjuncts evaluated after composition.
    pub residual: Vec<Comparison>,
    /// Per constituent: the virtual-class attribute index of each projected
    /// column.
    columns: Vec<Vec<usize>>,
    /// Attribute indexes of the result, in output order.
    output: Vec<usize>,
    predicate: Vec<(usize, Comparison)>,
}

fn literal_for(ty: &SemanticType, literal: &Value) -> Value {
    match (ty.base(), literal) {
        (BaseType::Date, Value::Text(s)) => {
            parse_date(s).map(|(d, _)| Value::Date(d)).unwrap_or_else(|| literal.clone())
        }
        _ => literal.clone(),
    }
}

fn comparable_bases(local: BaseType, global: BaseType) -> bool {
    let textual = |b| matches!(b, BaseType::Text | BaseType::Identifier);
    local == global || (local.is_numeric() && global.is_numeric()) || (textual(local) && textual(global))
}

fn valid_class<'a>(schema: &'a GlobalSchema, name: &str) -> Result<&'a VirtualClass, QueryError> {
    let vc = schema.get(name).ok_or_else(|| QueryError::UnknownVirtualClass(name.to_string()))?;
    match &vc.status {
        VcStatus::Valid => Ok(vc),
        VcStatus::Invalidated(e) => {
            Err(QueryError::InvalidatedVirtualClass { name: vc.name().to_string(), reason: e.to_string() })
        }
    }
}

/// Splits a query into subqueries. Subqueries are listed per constituent
/// because one site may hold several constituents.
pub fn decompose(q: &GlobalQuery, vc: &VirtualClass, options: QueryOptions) -> Result<Plan, QueryError> {
    if let VcStatus::Invalidated(e) = &vc.status {
        return Err(QueryError::InvalidatedVirtualClass { name: vc.name().to_string(), reason: e.to_string() });
    }
    let position = |name: &str| {
        vc.position(name).ok_or_else(|| QueryError::UnknownAttribute {
            virtual_class: vc.name().to_string(),
            attribute: name.to_string(),
        })
    };
    let output: Vec<usize> = if q.projection.is_empty() {
        (0..vc.attributes.len()).collect()
    } else {
        q.projection.iter().map(|a| position(a)).collect::<Result<_, _>>()?
    };
    let predicate: Vec<(usize, Comparison)> = q
        .predicate
        .iter()
        .map(|c| {
            let i = position(&c.attribute)?;
            let a = &vc.attributes[i];
            Ok((i, Comparison::new(a.name.clone(), c.op, literal_for(&a.ty, &c.literal))))
        })
        .collect::<Result<_, QueryError>>()?;

    let mode = merge_mode(vc);
    let mut needed: Vec<usize> = output.clone();
    needed.extend(predicate.iter().map(|(i, _)| *i));
    if mode != Merge::Concat {
        needed.extend(vc.key);
    }
    needed.sort_unstable();
    needed.dedup();

    let mut subqueries = Vec::new();
    let mut columns = Vec::new();
    let mut pushed_everywhere = vec![true; predicate.len()];
    for (ci, constituent) in vc.constituents.iter().enumerate() {
        let mut projection = Vec::new();
        let mut cols = Vec::new();
        for &ai in &needed {
            if let Some(m) = &vc.attributes[ai].mapping[ci] {
                projection.push(m.source_attribute.clone());
                cols.push(ai);
            }
        }
        let mut local = Vec::new();
        for (pi, (ai, c)) in predicate.iter().enumerate() {
            let attr = &vc.attributes[*ai];
            let eligible = options.pushdown && (mode == Merge::Concat || vc.key == Some(*ai));
            let pushed = attr.mapping[ci].as_ref().filter(|_| eligible).and_then(|m| {
                let post = m.conversion.as_ref().map_or(m.local_type.base(), |f| f.output.base());
                if !comparable_bases(post, attr.ty.base()) {
                    return None;
                }
                let (op, literal) = match &m.conversion {
                    Some(f) => f.invert_comparison(c.op, &c.literal)?,
                    None => (c.op, c.literal.clone()),
                };
                Some(Comparison::new(m.source_attribute.clone(), op, literal))
            });
            match pushed {
                Some(cmp) => local.push(cmp),
                None => pushed_everywhere[pi] = false,
            }
        }
        subqueries.push((
            constituent.class.site.clone(),
            SubQuery { class: constituent.source_class.clone(), projection, predicate: local },
        ));
        columns.push(cols);
    }
    let residual =
        predicate.iter().zip(&pushed_everywhere).filter(|(_, pushed)| !**pushed).map(|((_, c), _)| c.clone()).collect();
    Ok(Plan { subqueries, residual, columns, output, predicate })
}

/// Composes sub-results (`None` for a constituent that did not answer).
pub fn compose(
    results: &[Option<SubResult>],
    plan: &Plan,
    vc: &VirtualClass,
    date_formats: Vec<DateFormat>,
) -> Result<QueryResult, QueryError> {
    let mode = merge_mode(vc);
    let answered: Vec<SiteId> =
        plan.subqueries.iter().zip(results).filter(|(_, r)| r.is_some()).map(|((s, _), _)| s.clone()).collect();
    let missing: Vec<SiteId> =
        plan.subqueries.iter().zip(results).filter(|(_, r)| r.is_none()).map(|((s, _), _)| s.clone()).collect();
    let mut warnings = vc.warnings.clone();
    if !missing.is_empty() {
        if answered.is_empty() || mode == Merge::IntersectByKey {
            return Err(QueryError::PartialResult { answered, missing });
        }
        warnings.push(format!("partial result: no answer from {}", join(&missing)));
    }

    let width = vc.attributes.len();
    let mut tuples: Vec<(usize, Vec<Value>)> = Vec::new();
    for (ci, result) in results.iter().enumerate() {
        let Some(result) = result else { continue };
        for row in &result.rows {
            let mut tuple = vec![Value::Null; width];
            for (&ai, value) in plan.columns[ci].iter().zip(row) {
                let attr = &vc.attributes[ai];
                let m = attr.mapping[ci].as_ref().expect("projected columns are mapped");
                let converted = match &m.conversion {
                    Some(f) => f.apply(value),
                    None => Some(value.clone()),
                };
                tuple[ai] = match converted.and_then(|v| v.coerce_to(&attr.ty)) {
                    Some(v) => v,
                    None => {
                        warnings.push(format!(
                            "value `{value}` of {} does not fit `{}`",
                            vc.constituents[ci].class, attr.name
                        ));
                        Value::Null
                    }
                };
            }
            tuples.push((ci, tuple));
        }
    }

    let rows: Vec<Vec<Value>> = match (mode, vc.key) {
        (Merge::Concat, _) | (_, None) => tuples.into_iter().map(|(_, t)| t).collect(),
        (_, Some(k)) => {
            let mut order: Vec<Vec<Value>> = Vec::new();
            let mut seen_in: Vec<Vec<bool>> = Vec::new();
            let mut index: HashMap<Value, usize> = HashMap::new();
            for (ci, t) in tuples {
                let slot = if t[k].is_null() { None } else { index.get(&t[k]).copied() };
                match slot {
                    Some(i) => {
                        seen_in[i][ci] = true;
                        for (a, v) in t.into_iter().enumerate() {
                            let current = &mut order[i][a];
                            if current.is_null() {
                                *current = v;
                            } else if !v.is_null() && *current != v {
                                warnings.push(format!(
                                    "value conflict for {}={} on `{}`: kept `{}`, {} has `{}`",
                                    vc.attributes[k].name,
                                    order[i][k],
                                    vc.attributes[a].name,
                                    order[i][a],
                                    vc.constituents[ci].class,
                                    v
                                ));
                            }
                        }
                    }
                    None => {
                        if !t[k].is_null() {
                            index.insert(t[k].clone(), order.len());
                        }
                        let mut seen = vec![false; results.len()];
                        seen[ci] = true;
                        seen_in.push(seen);
                        order.push(t);
                    }
                }
            }
            if mode == Merge::IntersectByKey {
                order.into_iter().zip(seen_in).filter(|(_, s)| s.iter().all(|x| *x)).map(|(t, _)| t).collect()
            } else {
                order
            }
        }
    };

    let rows = rows
        .into_iter()
        .filter(|t| plan.predicate.iter().all(|(ai, c)| c.holds_for(&t[*ai])))
        .map(|t| plan.output.iter().map(|&ai| t[ai].clone()).collect())
        .collect();
    Ok(QueryResult {
        header: plan.output.iter().map(|&ai| vc.attributes[ai].name.clone()).collect(),
        types: plan.output.iter().map(|&ai| vc.attributes[ai].ty.clone()).collect(),
        rows,
        warnings,
        date_formats,
    })
}

/// Where subqueries go.
pub trait Sources {
    fn execute_subquery(&self, site: &SiteId, q: &SubQuery) -> Result<SubResult, SourceError>;
    fn date_format(&self, site: &SiteId, class: &str, attribute: &str) -> Option<DateFormat>;
}

impl Sources for BTreeMap<SiteId, SourceAdapter> {
    fn execute_subquery(&self, site: &SiteId, q: &SubQuery) -> Result<SubResult, SourceError> {
        self.get(site).ok_or_else(|| SourceError::UnknownSite(site.clone()))?.execute_subquery(q)
    }

    fn date_format(&self, site: &SiteId, class: &str, attribute: &str) -> Option<DateFormat> {
        self.get(site)?.date_format(class, attribute)
    }
}

fn column_formats(plan: &Plan, vc: &VirtualClass, sources: &impl Sources) -> Vec<DateFormat> {
    plan.output
        .iter()
        .map(|&ai| {
            vc.attributes[ai]
                .mapping
                .iter()
                .zip(&vc.constituents)
                .filter_map(|(m, c)| {
                    let m = m.as_ref()?;
                    sources.date_format(&c.class.site, &c.source_class, &m.source_attribute)
                })
                .next()
                .unwrap_or(DateFormat::Iso)
        })
        .collect()
}

/// Runs a query end to end.
pub fn execute(
    q: &GlobalQuery,
    schema: &GlobalSchema,
    sources: &impl Sources,
    options: QueryOptions,
) -> Result<QueryResult, QueryError> {
    let vc = valid_class(schema, &q.virtual_class)?;
    let plan = decompose(q, vc, options)?;
    let mut results = Vec::with_capacity(plan.subqueries.len());
    for (site, sub) in &plan.subqueries {
        match sources.execute_subquery(site, sub) {
            Ok(r) => results.push(Some(r)),
            Err(SourceError::SiteOffline(_)) => results.push(None),
            Err(e) => return Err(QueryError::Source(e)),
        }
    }
    let formats = column_formats(&plan, vc, sources);
    compose(&results, &plan, vc, formats)
}

/// Sorts rows by the given column, then by the whole row.
pub fn sort_rows_by(result: &mut QueryResult, column: &str) {
    let k = result.header.iter().position(|h| same_name(h, column));
    result.rows.sort_by(|a, b| match k {
        Some(k) => a[k].cmp(&b[k]).then_with(|| a.cmp(b)),
        None => a.cmp(b),
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::parse_assertions;
    use crate::integration::{integrate, VirtualClassDef};
    use crate::predicate::Comparator;
    use crate::schema::{parse_extents, parse_schema, ClassRef, Registry};

    struct Fed {
        registry: Registry,
        sites: BTreeMap<SiteId, SourceAdapter>,
    }

    fn fed(sites: &[(&str, &str, &str)]) -> Fed {
        let mut registry = Registry::new();
        let mut map = BTreeMap::new();
        for (id, schema, data) in sites {
            let s = parse_schema(SiteId::new(*id), schema).unwrap();
            let e = parse_extents(&s, data).unwrap();
            registry.register_schema(s.clone()).unwrap();
            map.insert(SiteId::new(*id), SourceAdapter::new(s, e).unwrap());
        }
        Fed { registry, sites: map }
    }

    fn schema_with(f: &Fed, doc: &str, def: VirtualClassDef) -> GlobalSchema {
        let set = parse_assertions(doc, &f.registry, &[]).unwrap();
        let vc = integrate(&def, &f.registry, &set).unwrap();
        let mut gs = GlobalSchema::default();
        gs.insert(vc).unwrap();
        gs
    }

    const PAY_A: &str = "class pay\nid:integer\nsalary:integer:USD\nkey: id\n";
    const PAY_B: &str = "class pay\nid:integer\nsalary:integer:INR\ngrade:text\nkey: id\n";
    const ROWS_A: &str = "[pay]\nid=1 salary=100\nid=2 salary=300\n";
    const ROWS_B: &str = "[pay]\nid=3 salary=8000 grade=x\nid=4 salary=40000 grade=y\nid=1 salary=8000 grade=z\n";
    const DOC: &str = "function f(x: integer:INR) -> real:USD = x / 80;\n\
                       equivalence A.pay ~ B.pay { key id ≡ id; salary ≡ f(salary) }";

    fn pay(op: Operator) -> (Fed, GlobalSchema) {
        let f = fed(&[("A", PAY_A, ROWS_A), ("B", PAY_B, ROWS_B)]);
        let def = VirtualClassDef::new("pay", op, vec![ClassRef::new("A", "pay"), ClassRef::new("B", "pay")]);
        let gs = schema_with(&f, DOC, def);
        (f, gs)
    }

    #[test]
    fn converts_and_merges_by_key() {
        let (f, gs) = pay(Operator::Union);
        let mut r = execute(&GlobalQuery::all("pay"), &gs, &f.sites, QueryOptions::default()).unwrap();
        sort_rows_by(&mut r, "id");
        assert_eq!(r.header, ["id", "salary", "grade"]);
        let expect = vec![
            vec![Value::Integer(1), Value::Real(100.0), Value::text("z")],
            vec![Value::Integer(2), Value::Real(300.0), Value::Null],
            vec![Value::Integer(3), Value::Real(100.0), Value::text("x")],
            vec![Value::Integer(4), Value::Real(500.0), Value::text("y")],
        ];
        assert_eq!(r.rows, expect);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn specialize_keeps_common_keys() {
        let (f, gs) = pay(Operator::Specialize);
        let r = execute(&GlobalQuery::all("pay"), &gs, &f.sites, QueryOptions::default()).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Integer(1), Value::Real(100.0), Value::text("z")]]);
    }

    #[test]
    fn pushdown_plan_and_soundness() {
        let (f, gs) = pay(Operator::Union);
        let vc = gs.get("pay").unwrap();
        let q = GlobalQuery {
            virtual_class: "pay".into(),
            projection: vec!["grade".into()],
            predicate: vec![
                Comparison::new("id", Comparator::Ge, Value::Integer(2)),
                Comparison::new("salary", Comparator::Gt, Value::Integer(200)),
            ],
        };
        let plan = decompose(&q, vc, QueryOptions::default()).unwrap();
        // Key conjunct goes to both sites, the salary one stays (merge by key).
        assert_eq!(plan.subqueries[0].1.predicate, vec![Comparison::new("id", Comparator::Ge, Value::Integer(2))]);
        assert_eq!(plan.residual, vec![Comparison::new("salary", Comparator::Gt, Value::Integer(200))]);
        assert_eq!(plan.subqueries[1].1.projection, ["id", "salary", "grade"]);
        let with = execute(&q, &gs, &f.sites, QueryOptions::default()).unwrap();
        let without = execute(&q, &gs, &f.sites, QueryOptions { pushdown: false }).unwrap();
        assert_eq!(with.rows, without.rows);
        assert_eq!(with.rows, vec![vec![Value::Null], vec![Value::text("y")]]);
    }

    #[test]
    fn inverted_conversion_pushed_when_concatenating() {
        let f = fed(&[("A", PAY_A, ROWS_A), ("B", PAY_B, ROWS_B)]);
        let doc = "function f(x: integer:INR) -> real:USD = x / 80;\n\
                   equivalence A.pay ~ B.pay { id ≡ id; salary ≡ f(salary) }";
        let def =
            VirtualClassDef::new("pay", Operator::Union, vec![ClassRef::new("A", "pay"), ClassRef::new("B", "pay")]);
        let gs = schema_with(&f, doc, def);
        let q = GlobalQuery {
            virtual_class: "pay".into(),
            projection: vec!["id".into()],
            predicate: vec![Comparison::new("salary", Comparator::Le, Value::Integer(100))],
        };
        let plan = decompose(&q, gs.get("pay").unwrap(), QueryOptions::default()).unwrap();
        assert_eq!(
            plan.subqueries[1].1.predicate,
            vec![Comparison::new("salary", Comparator::Le, Value::Real(8000.0))]
        );
        assert!(plan.residual.is_empty());
        let r = execute(&q, &gs, &f.sites, QueryOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 3, "{r:?}");
    }

    #[test]
    fn offline_sites() {
        let (mut f, gs) = pay(Operator::Union);
        f.sites.get_mut(&SiteId::new("B")).unwrap().set_connectivity(false);
        let r = execute(&GlobalQuery::all("pay"), &gs, &f.sites, QueryOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.warnings.len(), 1);
        let (mut f, gs) = pay(Operator::Specialize);
        f.sites.get_mut(&SiteId::new("B")).unwrap().set_connectivity(false);
        let err = execute(&GlobalQuery::all("pay"), &gs, &f.sites, QueryOptions::default()).unwrap_err();
        assert_eq!(
            err,
            QueryError::PartialResult { answered: vec![SiteId::new("A")], missing: vec![SiteId::new("B")] }
        );
    }

    #[test]
    fn value_conflict_keeps_first() {
        let a = "class t\nId:integer\nd:text\nkey: Id\n";
        let f = fed(&[("A", a, "[t]\nId=3 d=Prof\n"), ("B", a, "[t]\nId=3 d=prof\n")]);
        let def =
            VirtualClassDef::new("t", Operator::Specialize, vec![ClassRef::new("A", "t"), ClassRef::new("B", "t")]);
        let gs = schema_with(&f, "equivalence A.t ~ B.t { key Id ≡ Id; d ≡ d }", def);
        let r = execute(&GlobalQuery::all("t"), &gs, &f.sites, QueryOptions::default()).unwrap();
        assert_eq!(r.rows, vec![vec![Value::Integer(3), Value::text("Prof")]]);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn unknown_names() {
        let (f, gs) = pay(Operator::Union);
        let q = GlobalQuery { virtual_class: "pay".into(), projection: vec!["nope".into()], predicate: vec![] };
        assert!(matches!(
            execute(&q, &gs, &f.sites, QueryOptions::default()),
            Err(QueryError::UnknownAttribute { .. })
        ));
        let q = GlobalQuery::all("none");
        assert!(matches!(execute(&q, &gs, &f.sites, QueryOptions::default()), Err(QueryError::UnknownVirtualClass(_))));
    }
}
