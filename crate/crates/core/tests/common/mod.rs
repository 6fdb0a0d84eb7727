//! Shared helpers for the integration tests: fixture loading and an
//! oracle that answers queries straight from a generated truth table.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::PathBuf;

use mdbs::federation::Federation;
use mdbs::predicate::{Comparator, Comparison};
use mdbs::query::{GlobalQuery, QueryResult};
use mdbs::schema::{fold, SiteId};
use mdbs::sim::FederationModel;
use mdbs::value::Value;

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn read_fixture(example: &str, file: &str) -> String {
    let path = fixture_dir(example).join(file);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Sites A and B of an example, its assertions and its definitions.
pub fn example_federation(example: &str) -> Federation {
    let mut f = Federation::new();
    for site in ["a", "b"] {
        let id = SiteId::new(site.to_ascii_uppercase());
        f.register(
            id,
            &read_fixture(example, &format!("{site}.schema")),
            &read_fixture(example, &format!("{site}.data")),
        )
        .unwrap();
    }
    f.assert(&read_fixture(example, "assertions.txt")).unwrap();
    f.integrate(&read_fixture(example, "global.txt")).unwrap();
    f
}

/// The expected table: header and cells, empty cells standing for null.
pub fn expected_table(example: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = read_fixture(example, "expected.tsv");
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split('\t').map(String::from).collect();
    let rows = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
    (header, rows)
}

/// Result cells as displayed, null as the empty string.
pub fn displayed(result: &QueryResult) -> Vec<Vec<String>> {
    result.rows.iter().map(|row| row.iter().zip(&result.date_formats).map(|(v, f)| v.render(*f)).collect()).collect()
}

/// Predicate comparison written out case by case.
fn oracle_compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Integer(x), Value::Integer(y)) => Some(x.cmp(y)),
        (Value::Integer(x), Value::Real(y)) => (*x as f64).partial_cmp(y),
        (Value::Real(x), Value::Integer(y)) => x.partial_cmp(&(*y as f64)),
        (Value::Real(x), Value::Real(y)) => x.partial_cmp(y),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::Date(x), Value::Date(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn oracle_holds(c: &Comparison, v: &Value) -> bool {
    let Some(o) = oracle_compare(v, &c.literal) else { return false };
    match c.op {
        Comparator::Eq => o == Ordering::Equal,
        Comparator::Ne => o != Ordering::Equal,
        Comparator::Lt => o == Ordering::Less,
        Comparator::Le => o != Ordering::Greater,
        Comparator::Gt => o == Ordering::Greater,
        Comparator::Ge => o != Ordering::Less,
    }
}

/// Materializes a virtual class of a generated federation centrally, as
/// (folded column name, value) rows.
pub fn materialize(model: &FederationModel, vc: &str) -> Vec<Vec<(String, Value)>> {
    if let Some(i) = vc.strip_prefix('i') {
        let s: usize = i.parse().unwrap();
        let site = &model.sites[s];
        return site
            .entities
            .iter()
            .map(|&e| {
                (0..site.attributes.len())
                    .map(|a| (fold(&site.attributes[a].name), model.local_value(s, a, e)))
                    .collect()
            })
            .collect();
    }
    let sets = model.concept_sets();
    let mut concepts: BTreeSet<usize> = sets[0].clone();
    for s in &sets[1..] {
        concepts =
            if vc == "g" { concepts.intersection(s).copied().collect() } else { concepts.union(s).copied().collect() };
    }
    let row = |e: usize, holders: &[usize]| -> Vec<(String, Value)> {
        concepts
            .iter()
            .map(|&c| {
                let held = holders.iter().any(|&s| sets[s].contains(&c));
                let v = if held { model.truth[e][c].clone() } else { Value::Null };
                (fold(&model.global_name(c)), v)
            })
            .collect()
    };
    if !model.keyed {
        let mut rows = Vec::new();
        for (s, site) in model.sites.iter().enumerate() {
            rows.extend(site.entities.iter().map(|&e| row(e, &[s])));
        }
        return rows;
    }
    let mut entities: BTreeSet<usize> = model.sites[0].entities.iter().copied().collect();
    for site in &model.sites[1..] {
        let here: BTreeSet<usize> = site.entities.iter().copied().collect();
        entities = if vc == "s" {
            entities.intersection(&here).copied().collect()
        } else {
            entities.union(&here).copied().collect()
        };
    }
    entities
        .into_iter()
        .map(|e| {
            let holders: Vec<usize> =
                (0..model.sites.len()).filter(|&s| model.sites[s].entities.contains(&e)).collect();
            row(e, &holders)
        })
        .collect()
}

/// Filters and projects centrally materialized rows, laid out in `header`
/// order and sorted.
pub fn oracle_answer(model: &FederationModel, q: &GlobalQuery, header: &[String]) -> Vec<Vec<Value>> {
    let lookup = |row: &[(String, Value)], name: &str| -> Value {
        row.iter().find(|(n, _)| *n == fold(name)).map(|(_, v)| v.clone()).unwrap_or_else(|| panic!("no column {name}"))
    };
    let mut rows: Vec<Vec<Value>> = materialize(model, &q.virtual_class)
        .into_iter()
        .filter(|row| q.predicate.iter().all(|c| oracle_holds(c, &lookup(row, &c.attribute))))
        .map(|row| header.iter().map(|h| lookup(&row, h)).collect())
        .collect();
    rows.sort();
    rows
}

/// Folded attribute names of a virtual class by plain set algebra over
/// the concepts each site holds.
pub fn oracle_attribute_names(model: &FederationModel, vc: &str) -> BTreeSet<String> {
    if let Some(i) = vc.strip_prefix('i') {
        let site = &model.sites[i.parse::<usize>().unwrap()];
        return site.attributes.iter().map(|a| fold(&a.name)).collect();
    }
    let sets = model.concept_sets();
    let mut acc = sets[0].clone();
    for s in &sets[1..] {
        acc = if vc == "g" { &acc & s } else { &acc | s };
    }
    acc.into_iter().map(|c| fold(&model.global_name(c))).collect()
}

pub fn sorted_rows(result: &QueryResult) -> Vec<Vec<Value>> {
    let mut rows = result.rows.clone();
    rows.sort();
    rows
}
