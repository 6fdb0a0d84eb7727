//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use mdbs::correspondence::{parse_assertions, AssertionSet};
use mdbs::federation::Federation;
use mdbs::integration::{generalize, specialize, union, IntegrationError, Operator, VcStatus, VirtualClassDef};
use mdbs::mediator::Mediator;
use mdbs::propagation::{FaultRates, Mailbox, SchemaChange};
use mdbs::query::{decompose, execute, sort_rows_by, GlobalQuery, QueryOptions};
use mdbs::schema::{fold, parse_schema, ClassRef, LocalSchema, Registry, SiteId};
use mdbs::sim::{name_pool, plan_evolution, run_step, settle, FederationModel, Shape, Step};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = fn() -> Result<String, String>;

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn golden(example: &str, query: &str, key: &str) -> Result<String, String> {
    let start = Instant::now();
    let f = example_federation(example);
    let mut result = f.query(query, QueryOptions::default()).map_err(|e| e.to_string())?;
    sort_rows_by(&mut result, key);
    let took = within(start, Duration::from_secs(1))?;
    let (header, rows) = expected_table(example);
    if result.header != header {
        return Err(format!("header {:?}, expected {header:?}", result.header));
    }
    let got = displayed(&result);
    if got != rows {
        return Err(format!("rows {got:?}, expected {rows:?}"));
    }
    Ok(format!("{} rows match in {took:.2?}", rows.len()))
}

fn example1() -> Result<String, String> {
    let detail = golden("example1", "select * from employees", "employeecode")?;
    let f = example_federation("example1");
    let r = f.query("select * from employees", QueryOptions::default()).unwrap();
    let phone = r.header.iter().position(|h| h == "phone").unwrap();
    let nulls: BTreeSet<String> =
        r.rows.iter().filter(|row| row[phone].is_null()).map(|row| row[0].to_string()).collect();
    if nulls != BTreeSet::from(["1".to_string(), "2".into(), "3".into()]) {
        return Err(format!("phone null for {nulls:?}"));
    }
    Ok(detail)
}

fn example2() -> Result<String, String> {
    golden("example2", "select * from persons", "id")
}

fn example3() -> Result<String, String> {
    golden("example3", "select * from professor", "Id")
}

fn set_formula() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for case in 0..1000 {
        let model = FederationModel::generate(&mut rng, Shape::SETS);
        let f = model.build().map_err(|e| format!("case {case}: {e}"))?;
        for vc in model.virtual_classes() {
            let class = f.mediator().global().get(&vc).unwrap();
            if !class.status.is_valid() {
                return Err(format!("case {case}: {vc} {}", class.status));
            }
            let got: BTreeSet<String> = class.attribute_names().into_iter().map(fold).collect();
            let want = oracle_attribute_names(&model, &vc);
            if got != want {
                return Err(format!("case {case} {vc}: {got:?} != {want:?}"));
            }
            checked += 1;
        }
    }
    Ok(format!("1000 cases, {checked} derivations equal the set oracle"))
}

/// Runs the shared query corpus; `check` sees each query with both plans'
/// answers and the oracle's.
fn query_corpus(
    mut check: impl FnMut(&FederationModel, &GlobalQuery, &[String], &Federation) -> Result<(), String>,
) -> Result<(usize, Duration), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut queries = 0;
    for fed in 0..200 {
        let model = FederationModel::generate(&mut rng, Shape::QUERIES);
        let f = model.build().map_err(|e| format!("federation {fed}: {e}"))?;
        let names = model.virtual_classes();
        for _ in 0..12 {
            let vc = &names[rng.gen_range(0..names.len())];
            let class = f.mediator().global().get(vc).unwrap();
            let header: Vec<_> = class.attributes.iter().map(|a| (a.name.clone(), a.ty.clone())).collect();
            let q = model.random_query(&mut rng, vc, &header);
            let columns: Vec<String> = if q.projection.is_empty() {
                header.iter().map(|(n, _)| n.clone()).collect()
            } else {
                q.projection.clone()
            };
            check(&model, &q, &columns, &f).map_err(|e| format!("federation {fed}, {q:?}: {e}"))?;
            queries += 1;
        }
    }
    Ok((queries, start.elapsed()))
}

fn centralized_oracle() -> Result<String, String> {
    let (queries, took) = query_corpus(|model, q, columns, f| {
        let r = execute(q, f.mediator().global(), f.sites(), QueryOptions::default()).map_err(|e| e.to_string())?;
        if r.header.iter().map(|h| fold(h)).collect::<Vec<_>>() != columns.iter().map(|h| fold(h)).collect::<Vec<_>>() {
            return Err(format!("header {:?}, expected {columns:?}", r.header));
        }
        let want = oracle_answer(model, q, columns);
        let got = sorted_rows(&r);
        if got != want {
            return Err(format!("got {got:?}\nwant {want:?}"));
        }
        Ok(())
    })?;
    if took >= Duration::from_secs(60) {
        return Err(format!("took {took:.2?}"));
    }
    Ok(format!("{queries} queries over 200 federations equal the oracle in {took:.2?}"))
}

fn pushdown_soundness() -> Result<String, String> {
    let mut pushed = 0;
    let (queries, _) = query_corpus(|_, q, _, f| {
        let global = f.mediator().global();
        let on = execute(q, global, f.sites(), QueryOptions { pushdown: true }).map_err(|e| e.to_string())?;
        let off = execute(q, global, f.sites(), QueryOptions { pushdown: false }).map_err(|e| e.to_string())?;
        let plan = decompose(q, global.get(&q.virtual_class).unwrap(), QueryOptions { pushdown: true }).unwrap();
        if plan.subqueries.iter().any(|(_, s)| !s.predicate.is_empty()) {
            pushed += 1;
        }
        if sorted_rows(&on) != sorted_rows(&off) {
            return Err(format!("pushdown {:?} vs mediator-only {:?}", sorted_rows(&on), sorted_rows(&off)));
        }
        Ok(())
    })?;
    Ok(format!("{queries} queries identical with and without pushdown ({pushed} pushed a conjunct)"))
}

fn evolution_setup(seed: u64) -> (FederationModel, Vec<Step>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = FederationModel::generate(&mut rng, Shape::EVOLUTION);
    let schemas: BTreeMap<SiteId, LocalSchema> =
        (0..model.sites.len()).map(|s| (model.sites[s].site.clone(), model.schema(s))).collect();
    let online = schemas.keys().map(|s| (s.clone(), true)).collect();
    let mut names = name_pool(&schemas);
    names.extend(["item".to_string(), "u".into(), "k".into()]);
    let steps = plan_evolution(&mut rng, &schemas, 50, &names, &online);
    (model, steps)
}

const FAULTS: FaultRates = FaultRates { reorder: 0.3, duplicate: 0.2, lose_ack: 0.2 };

fn convergence() -> Result<String, String> {
    let start = Instant::now();
    let mut invalidated = 0;
    let mut diverged_midway = 0;
    for scenario in 0..100u64 {
        let (model, steps) = evolution_setup(700 + scenario);
        let mut f = model.build().map_err(|e| e.to_string())?.with_mailbox(Mailbox::faulty(scenario, FAULTS));
        for step in &steps {
            run_step(&mut f, step).map_err(|e| format!("scenario {scenario}: {e}"))?;
        }
        if !f.check_convergence().equal {
            diverged_midway += 1;
        }
        settle(&mut f, 64).map_err(|e| format!("scenario {scenario}: {e}"))?;
        let report = f.check_convergence();
        if !report.equal {
            return Err(format!("scenario {scenario}: {:?}", report.diff));
        }
        invalidated += f.mediator().global().classes().iter().filter(|c| !c.status.is_valid()).count();
    }
    let took = within(start, Duration::from_secs(120))?;
    Ok(format!(
        "100 scenarios converged in {took:.2?} ({diverged_midway} stale before the final relay, {invalidated} classes invalidated)"
    ))
}

fn exactly_once() -> Result<String, String> {
    let mut duplicates = 0;
    let mut rewinds = 0;
    for trial in 0..50u64 {
        let (model, steps) = evolution_setup(900 + trial);

        let mut plain = model.build().map_err(|e| e.to_string())?;
        for step in &steps {
            run_step(&mut plain, step).map_err(|e| e.to_string())?;
        }
        settle(&mut plain, 64)?;

        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let restart_at = rng.gen_range(0..steps.len());
        let mut snapshot: Option<String> = None;
        let mut f = model.build().map_err(|e| e.to_string())?.with_mailbox(Mailbox::faulty(trial, FAULTS));
        for (i, step) in steps.iter().enumerate() {
            run_step(&mut f, step).map_err(|e| e.to_string())?;
            if rng.gen_bool(0.3) {
                let site = &model.sites[rng.gen_range(0..model.sites.len())].site;
                duplicates += f.relay(site).map_err(|e| e.to_string())?.skipped_duplicates;
            }
            if i == restart_at / 2 {
                snapshot = Some(f.mediator().to_json());
            }
            if i == restart_at {
                f.save(dir.path()).map_err(|e| e.to_string())?;
                f = Federation::load(dir.path())
                    .map_err(|e| e.to_string())?
                    .with_mailbox(Mailbox::faulty(trial, FAULTS));
                if rng.gen_bool(0.5) {
                    // Mediator restored from an older snapshot.
                    let older = Mediator::from_json(snapshot.as_deref().unwrap()).map_err(|e| e.to_string())?;
                    f.replace_mediator(older);
                    rewinds += 1;
                }
            }
        }
        settle(&mut f, 64)?;
        for site in &model.sites {
            let r = f.replay_log(&site.site).map_err(|e| e.to_string())?;
            if r.delivered != 0 {
                return Err(format!("trial {trial}: replay applied {} entries again", r.delivered));
            }
            duplicates += r.skipped_duplicates;
        }
        settle(&mut f, 64)?;
        if f.mediator().to_json() != plain.mediator().to_json() || f.export() != plain.export() {
            return Err(format!("trial {trial}: state differs from the uninterrupted run"));
        }
    }
    Ok(format!("50 trials equal the uninterrupted run ({duplicates} duplicates skipped, {rewinds} snapshot rewinds)"))
}

fn registry_for(names: &[String]) -> Registry {
    let mut r = Registry::new();
    for (i, n) in names.iter().enumerate() {
        let text = format!("class {n}\n  id:integer\n  v{i}:text\n  key: id\n");
        r.register_schema(parse_schema(SiteId::new(format!("S{i}")), &text).unwrap()).unwrap();
    }
    r
}

fn homonymy_refusal() -> Result<String, String> {
    let ident = "[a-z][a-z0-9_]{0,8}";
    let strategy = (ident, prop::collection::vec(ident, 0..3), any::<u64>());
    let mut runner = TestRunner::new(Config { cases: 300, failure_persistence: None, ..Config::default() });
    let renamed = std::cell::Cell::new(0);
    runner
        .run(&strategy, |(name, others, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let twin: String =
                name.chars().map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c }).collect();
            let mut names = vec![name.clone(), twin];
            // Extra constituents, distinct from the pair and each other.
            for (i, o) in others.iter().enumerate() {
                names.push(format!("{o}_x{i}"));
            }
            let distinct: BTreeSet<String> = names[1..].iter().map(|n| fold(n)).collect();
            prop_assume!(distinct.len() == names.len() - 1);
            let registry = registry_for(&names);
            let mut doc = String::new();
            for i in 0..names.len() {
                for j in i + 1..names.len() {
                    let rel = if i == 0 && j == 1 { "homonymy" } else { "synonymy" };
                    let body = if rel == "homonymy" { String::new() } else { " { key id ≡ id }".into() };
                    doc.push_str(&format!("{rel} S{i}.{} ~ S{j}.{}{body}\n", names[i], names[j]));
                }
            }
            let assertions = parse_assertions(&doc, &registry, &[]).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let classes: Vec<ClassRef> =
                names.iter().enumerate().map(|(i, n)| ClassRef::new(format!("S{i}"), n.clone())).collect();
            type Op = fn(
                &str,
                Vec<ClassRef>,
                &Registry,
                &AssertionSet,
            ) -> Result<mdbs::integration::VirtualClass, IntegrationError>;
            for (op, f) in [("union", union as Op), ("generalize", generalize as Op), ("specialize", specialize as Op)]
            {
                let mut order = classes.clone();
                let turn = rng.gen_range(0..order.len());
                order.rotate_left(turn);
                match f("v", order, &registry, &assertions) {
                    Err(IntegrationError::HomonymyForbidden { .. }) => {}
                    other => return Err(TestCaseError::fail(format!("{op}: {other:?}"))),
                }
            }

            // A rename that makes a synonymous pair share a name.
            let mut m = Mediator::new();
            let a = format!("class {name}\n  id:integer\n  key: id\n");
            let b = format!("class other_{name}\n  id:integer\n  key: id\n");
            m.register_site(parse_schema(SiteId::new("A"), &a).unwrap(), 0).unwrap();
            m.register_site(parse_schema(SiteId::new("B"), &b).unwrap(), 0).unwrap();
            m.add_assertions(&format!("synonymy A.{name} ~ B.other_{name} {{ key id ≡ id }}")).unwrap();
            let defs: Vec<VirtualClassDef> = [Operator::Union, Operator::Generalize, Operator::Specialize]
                .into_iter()
                .enumerate()
                .map(|(i, op)| {
                    VirtualClassDef::new(
                        format!("v{i}"),
                        op,
                        vec![ClassRef::new("A", name.clone()), ClassRef::new("B", format!("other_{name}"))],
                    )
                })
                .collect();
            m.integrate(&defs).unwrap();
            let change = SchemaChange::RenameClass { class: format!("other_{name}"), new_name: name.to_uppercase() };
            let entry = mdbs::propagation::ChangeLogEntry {
                site: SiteId::new("B"),
                seq: 1,
                change,
                applied: false,
                flags: Vec::new(),
            };
            let outcome = m.mediator_apply(entry).unwrap();
            prop_assert_eq!(outcome.affected.len(), 3);
            for (vc, status) in outcome.affected {
                prop_assert!(
                    matches!(status, VcStatus::Invalidated(IntegrationError::HomonymyForbidden { .. })),
                    "{} {}",
                    vc,
                    status
                );
            }
            renamed.set(renamed.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("300 random pairs rejected by union, generalize and specialize; {} renames invalidated", renamed.get()))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("golden Example 1 (union)", example1),
        ("golden Example 2 (generalize)", example2),
        ("golden Example 3 (specialize)", example3),
        ("set-formula oracle", set_formula),
        ("centralized-oracle query equivalence", centralized_oracle),
        ("pushdown soundness", pushdown_soundness),
        ("convergence under evolution", convergence),
        ("exactly-once replay", exactly_once),
        ("homonymy refusal", homonymy_refusal),
    ];
    let mut failures = 0;
    for (n, (name, check)) in checks.into_iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", n + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL {} {name}: {why}", n + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
