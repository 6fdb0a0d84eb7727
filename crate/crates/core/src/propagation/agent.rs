//! Per-site replication agent: owns the outbound schema update log.

use serde::{Deserialize, Serialize};

use super::{ChangeFlag, ChangeLogEntry, SchemaChange};
use crate::schema::SiteId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationAgent {
    site: SiteId,
    entries: Vec<ChangeLogEntry>,
}

impl ReplicationAgent {
    pub fn new(site: SiteId) -> Self {
        Self { site, entries: Vec::new() }
    }

    /// Rebuilds an agent from log entries; they must be gap-free from 1.
    pub fn from_entries(site: SiteId, entries: Vec<ChangeLogEntry>) -> Result<Self, String> {
        for (i, e) in entries.iter().enumerate() {
            if e.seq != i as u64 + 1 || e.site != site {
                return Err(format!("log of `{site}` broken at entry {}", i + 1));
            }
        }
        Ok(Self { site, entries })
    }

    pub fn site(&self) -> &SiteId {
        &self.site
    }

    pub fn entries(&self) -> &[ChangeLogEntry] {
        &self.entries
    }

    pub fn last_seq(&self) -> u64 {
        self.entries.len() as u64
    }

    pub(crate) fn append(&mut self, change: SchemaChange, flags: Vec<ChangeFlag>) -> u64 {
        let seq = self.last_seq() + 1;
        self.entries.push(ChangeLogEntry { site: self.site.clone(), seq, change, applied: false, flags });
        seq
    }

    /// Entries the mediator has not acknowledged, in sequence order.
    pub fn pending(&self) -> impl Iterator<Item = &ChangeLogEntry> {
        self.entries.iter().filter(|e| !e.applied)
    }

    pub fn pending_count(&self) -> usize {
        self.pending().count()
    }

    /// Records the mediator's high-water mark. Entries above it are marked
    /// pending again, which covers a mediator restored from an older
    /// snapshot.
    pub fn acknowledge(&mut self, applied_through: u64) {
        for e in &mut self.entries {
            e.applied = e.seq <= applied_through;
        }
    }

    /// Forgets every acknowledgement so the whole log is resent.
    pub fn reset_acknowledgements(&mut self) {
        for e in &mut self.entries {
            e.applied = false;
        }
    }
}
