//! Schema change propagation from sites to the mediator.
//!
//! Changes only flow up: a relay reads a site's replication agent and
//! writes to the mediator. Nothing here touches a site's schema or data.

mod agent;
mod change;
mod mailbox;

use std::collections::BTreeSet;

pub use agent::ReplicationAgent;
pub use change::{parse_high_water_marks, print_high_water_marks, ChangeFlag, ChangeLogEntry, LineError, SchemaChange};
pub use mailbox::{FaultRates, Mailbox};

use crate::integration::{GlobalSchema, VcStatus};
use crate::mediator::{ApplyError, Mediator};
use crate::schema::{same_name, LocalClass, LocalSchema, SiteId};

/// Send/ack exchanges per relay call. A faulty mailbox may need several.
const MAX_ROUNDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayReport {
    pub site: SiteId,
    pub link_up: bool,
    /// Entries consumed by the mediator, rejected ones included.
    pub delivered: usize,
    pub skipped_duplicates: usize,
    /// Arrivals held back because an earlier entry had not arrived yet.
    pub buffered: usize,
    /// Entries the mediator's mirror refused, with the reason.
    pub rejected: Vec<(u64, String)>,
    pub affected_virtual_classes: Vec<(String, VcStatus)>,
    /// Entries still unacknowledged when the call returned.
    pub pending: usize,
}

/// Sends an agent's unacknowledged entries to the mediator.
///
/// When the agent believes more was applied than the mediator records (a
/// mediator restored from an older snapshot), the agent is rewound first.
pub fn relay(
    agent: &mut ReplicationAgent,
    link_up: bool,
    mediator: &mut Mediator,
    mailbox: &mut Mailbox,
) -> Result<RelayReport, ApplyError> {
    let site = agent.site().clone();
    if !mediator.registry().contains_site(&site) {
        return Err(ApplyError::UnknownSite(site));
    }
    let mut report = RelayReport {
        site: site.clone(),
        link_up,
        delivered: 0,
        skipped_duplicates: 0,
        buffered: 0,
        rejected: Vec::new(),
        affected_virtual_classes: Vec::new(),
        pending: 0,
    };
    if !link_up {
        report.pending = agent.pending_count();
        return Ok(report);
    }
    let hwm = mediator.high_water(&site);
    if agent.entries().iter().any(|e| e.applied && e.seq > hwm) {
        agent.acknowledge(hwm);
    }
    for _ in 0..MAX_ROUNDS {
        let batch: Vec<String> = agent.pending().map(ChangeLogEntry::to_wire).collect();
        if batch.is_empty() {
            break;
        }
        for message in mailbox.transmit(batch) {
            let entry = ChangeLogEntry::parse_wire(&message).expect("wire messages come from to_wire");
            match mediator.mediator_apply(entry) {
                Ok(outcome) => {
                    report.delivered += outcome.applied.len() + outcome.rejected.len();
                    report.rejected.extend(outcome.rejected);
                    for (name, status) in outcome.affected {
                        match report.affected_virtual_classes.iter_mut().find(|(n, _)| same_name(n, &name)) {
                            Some(slot) => slot.1 = status,
                            None => report.affected_virtual_classes.push((name, status)),
                        }
                    }
                }
                Err(ApplyError::StaleEntry { .. }) => report.skipped_duplicates += 1,
                Err(ApplyError::GapBuffered { .. }) => report.buffered += 1,
                Err(e @ ApplyError::UnknownSite(_)) => return Err(e),
            }
        }
        if mailbox.deliver_ack() {
            agent.acknowledge(mediator.high_water(&site));
        }
    }
    report.pending = agent.pending_count();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceReport {
    pub equal: bool,
    /// One line per difference; empty when equal.
    pub diff: Vec<String>,
}

/// Compares the incrementally maintained global schema with one rebuilt
/// from scratch over the sites' actual schemas, and the mediator's mirrors
/// with those schemas.
pub fn convergence_check<'a>(
    mediator: &Mediator,
    actual: impl IntoIterator<Item = &'a LocalSchema>,
) -> ConvergenceReport {
    let actual: Vec<LocalSchema> = actual.into_iter().cloned().collect();
    let mut diff = Vec::new();
    for schema in &actual {
        match mediator.registry().site(&schema.site) {
            Some(entry) => diff_schema(&entry.schema, schema, &mut diff),
            None => diff.push(format!("site {} not registered", schema.site)),
        }
    }
    for (site, _) in mediator.registry().sites() {
        if !actual.iter().any(|s| &s.site == site) {
            diff.push(format!("site {site} registered but not present"));
        }
    }
    let fresh_registry = mediator.registry().with_schemas(actual);
    let fresh = GlobalSchema::build(&mediator.global().definitions(), &fresh_registry, mediator.assertions()).export();
    let current = mediator.global().export();
    diff_lines(&current, &fresh, &mut diff);
    ConvergenceReport { equal: diff.is_empty(), diff }
}

fn diff_schema(mirror: &LocalSchema, actual: &LocalSchema, diff: &mut Vec<String>) {
    let site = &actual.site;
    for class in &actual.classes {
        match mirror.class(&class.name) {
            None => diff.push(format!("{site}.{}: class missing from mirror", class.name)),
            Some(m) => diff_class(site, m, class, diff),
        }
    }
    for class in &mirror.classes {
        if actual.class(&class.name).is_none() {
            diff.push(format!("{site}.{}: stale class, gone at site", class.name));
        }
    }
}

fn diff_class(site: &SiteId, mirror: &LocalClass, actual: &LocalClass, diff: &mut Vec<String>) {
    let before = diff.len();
    if mirror.name != actual.name {
        diff.push(format!("{site}.{}: mirror spells it `{}`", actual.name, mirror.name));
    }
    for a in &actual.attributes {
        match mirror.attribute(&a.name) {
            None => diff.push(format!("{site}.{}.{}: attribute missing from mirror", actual.name, a.name)),
            Some(m) if m != a => diff.push(format!(
                "{site}.{}.{}: stale attribute, mirror {} site {}",
                actual.name,
                a.name,
                m.spec(),
                a.spec()
            )),
            Some(_) => {}
        }
    }
    for m in &mirror.attributes {
        if actual.attribute(&m.name).is_none() {
            diff.push(format!("{site}.{}.{}: stale attribute, gone at site", actual.name, m.name));
        }
    }
    if mirror.key != actual.key {
        diff.push(format!("{site}.{}: key differs", actual.name));
    }
    if diff.len() == before && mirror != actual {
        diff.push(format!("{site}.{}: attribute order differs", actual.name));
    }
}

fn diff_lines(current: &str, fresh: &str, diff: &mut Vec<String>) {
    let ours: BTreeSet<(usize, &str)> = current.lines().enumerate().collect();
    let theirs: BTreeSet<(usize, &str)> = fresh.lines().enumerate().collect();
    let removed: Vec<_> = ours.difference(&theirs).collect();
    let added: Vec<_> = theirs.difference(&ours).collect();
    for (i, line) in removed {
        diff.push(format!("global line {}: - {}", i + 1, line.trim()));
    }
    for (i, line) in added {
        diff.push(format!("global line {}: + {}", i + 1, line.trim()));
    }
}
