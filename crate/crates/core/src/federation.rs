//! A whole federation: component sites, the mediator and the channel
//! between them, with on-disk state so separate processes can drive it.
//!
//! State directory layout:
//!
//! ```text
//! sites.json      adapters (schema, data, connectivity) and acknowledged marks
//! logs/<site>.log append-only outbound change log per site
//! mediator.json   registry, assertions, definitions, high-water marks
//! hwm             `site=<id> applied=<n>` lines
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integration::{parse_definitions, VcStatus};
use crate::mediator::{ApplyError, Mediator, MediatorError};
use crate::propagation::{
    convergence_check, print_high_water_marks, relay, ChangeLogEntry, ConvergenceReport, Mailbox, RelayReport,
    ReplicationAgent, SchemaChange,
};
use crate::query::{execute, parse_query, QueryError, QueryOptions, QueryResult};
use crate::schema::{parse_extents, parse_schema, SchemaSummary, SiteId};
use crate::source::{SourceAdapter, SourceError};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    State { path: PathBuf, message: String },
}

impl FederationError {
    pub fn is_io(&self) -> bool {
        matches!(self, FederationError::Io { .. })
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> FederationError + '_ {
    move |source| FederationError::Io { path: path.to_path_buf(), source }
}

#[derive(Serialize, Deserialize)]
struct SiteState {
    adapter: SourceAdapter,
    /// Highest sequence number the agent holds as acknowledged.
    acknowledged: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Federation {
    sites: BTreeMap<SiteId, SourceAdapter>,
    mediator: Mediator,
    mailbox: Mailbox,
}

impl Federation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mailbox(mut self, mailbox: Mailbox) -> Self {
        self.mailbox = mailbox;
        self
    }

    pub fn sites(&self) -> &BTreeMap<SiteId, SourceAdapter> {
        &self.sites
    }

    pub fn site(&self, site: &SiteId) -> Result<&SourceAdapter, FederationError> {
        self.sites.get(site).ok_or_else(|| SourceError::UnknownSite(site.clone()).into())
    }

    fn site_mut(&mut self, site: &SiteId) -> Result<&mut SourceAdapter, FederationError> {
        self.sites.get_mut(site).ok_or_else(|| SourceError::UnknownSite(site.clone()).into())
    }

    pub fn mediator(&self) -> &Mediator {
        &self.mediator
    }

    /// Registers a component database from its schema and extent files.
    pub fn register(&mut self, site: SiteId, schema: &str, data: &str) -> Result<SchemaSummary, FederationError> {
        let schema = parse_schema(site, schema).map_err(SourceError::from)?;
        let extents = parse_extents(&schema, data).map_err(SourceError::from)?;
        self.register_adapter(SourceAdapter::new(schema, extents)?)
    }

    pub fn register_adapter(&mut self, adapter: SourceAdapter) -> Result<SchemaSummary, FederationError> {
        let site = adapter.site().clone();
        if self.sites.contains_key(&site) {
            return Err(MediatorError::from(crate::schema::SchemaError::DuplicateSite(site)).into());
        }
        let summary = self.mediator.register_site(adapter.schema().clone(), adapter.agent().last_seq())?;
        let mut adapter = adapter;
        let last = adapter.agent().last_seq();
        adapter.agent_mut().acknowledge(last);
        self.sites.insert(site, adapter);
        Ok(summary)
    }

    pub fn assert(&mut self, text: &str) -> Result<usize, FederationError> {
        Ok(self.mediator.add_assertions(text)?)
    }

    /// Adds the virtual classes of a definition file; returns warnings.
    pub fn integrate(&mut self, text: &str) -> Result<Vec<String>, FederationError> {
        let defs = parse_definitions(text).map_err(MediatorError::from)?;
        Ok(self.mediator.integrate(&defs)?)
    }

    pub fn export(&self) -> String {
        self.mediator.global().export()
    }

    pub fn query(&self, text: &str, options: QueryOptions) -> Result<QueryResult, FederationError> {
        let q = parse_query(text)?;
        Ok(execute(&q, self.mediator.global(), &self.sites, options)?)
    }

    /// Applies an autonomous change at a site; returns the new version.
    pub fn change(&mut self, site: &SiteId, change: SchemaChange) -> Result<u64, FederationError> {
        Ok(self.site_mut(site)?.apply_local_change(change)?)
    }

    /// Returns the previous connectivity.
    pub fn set_link(&mut self, site: &SiteId, up: bool) -> Result<bool, FederationError> {
        Ok(self.site_mut(site)?.set_connectivity(up))
    }

    pub fn relay(&mut self, site: &SiteId) -> Result<RelayReport, FederationError> {
        let adapter = self.sites.get_mut(site).ok_or_else(|| SourceError::UnknownSite(site.clone()))?;
        let up = adapter.is_online();
        Ok(relay(adapter.agent_mut(), up, &mut self.mediator, &mut self.mailbox)?)
    }

    pub fn relay_all(&mut self) -> Result<Vec<RelayReport>, FederationError> {
        let sites: Vec<SiteId> = self.sites.keys().cloned().collect();
        sites.iter().map(|s| self.relay(s)).collect()
    }

    /// Forgets a site's acknowledgements and relays its whole log again.
    pub fn replay_log(&mut self, site: &SiteId) -> Result<RelayReport, FederationError> {
        self.site_mut(site)?.agent_mut().reset_acknowledgements();
        self.relay(site)
    }

    /// Unacknowledged log entries over all sites.
    pub fn pending(&self) -> usize {
        self.sites.values().map(|a| a.agent().pending_count()).sum()
    }

    pub fn check_convergence(&self) -> ConvergenceReport {
        convergence_check(&self.mediator, self.sites.values().map(SourceAdapter::schema))
    }

    pub fn rename_class(
        &mut self,
        site: &SiteId,
        old: &str,
        new: &str,
    ) -> Result<Vec<(String, VcStatus)>, FederationError> {
        Ok(self.mediator.rename_class(site, old, new)?)
    }

    pub fn rename_attribute(
        &mut self,
        site: &SiteId,
        class: &str,
        old: &str,
        new: &str,
    ) -> Result<Vec<(String, VcStatus)>, FederationError> {
        Ok(self.mediator.rename_attribute(site, class, old, new)?)
    }

    /// Replaces the mediator, as after a restart from an older snapshot.
    pub fn replace_mediator(&mut self, mediator: Mediator) -> Mediator {
        std::mem::replace(&mut self.mediator, mediator)
    }

    /// Reads a state directory. A missing directory is an empty federation.
    pub fn load(dir: &Path) -> Result<Federation, FederationError> {
        let sites_path = dir.join("sites.json");
        if !sites_path.exists() {
            return Ok(Federation::new());
        }
        let text = fs::read_to_string(&sites_path).map_err(io_error(&sites_path))?;
        let states: BTreeMap<SiteId, SiteState> = serde_json::from_str(&text)
            .map_err(|e| FederationError::State { path: sites_path.clone(), message: e.to_string() })?;
        let mut sites = BTreeMap::new();
        for (id, state) in states {
            let mut adapter = state.adapter;
            let agent = read_log(&log_path(dir, &id), &id)?;
            let mut agent = agent;
            agent.acknowledge(state.acknowledged);
            adapter.restore_agent(agent);
            sites.insert(id, adapter);
        }
        let mediator_path = dir.join("mediator.json");
        let text = fs::read_to_string(&mediator_path).map_err(io_error(&mediator_path))?;
        let mediator = Mediator::from_json(&text)
            .map_err(|e| FederationError::State { path: mediator_path.clone(), message: e.to_string() })?;
        Ok(Federation { sites, mediator, mailbox: Mailbox::reliable() })
    }

    pub fn save(&self, dir: &Path) -> Result<(), FederationError> {
        let logs = dir.join("logs");
        fs::create_dir_all(&logs).map_err(io_error(&logs))?;
        for (id, adapter) in &self.sites {
            append_log(&log_path(dir, id), adapter.agent())?;
        }
        let states: BTreeMap<&SiteId, SiteState> = self
            .sites
            .iter()
            .map(|(id, a)| {
                let acknowledged = a.agent().entries().iter().take_while(|e| e.applied).count() as u64;
                (id, SiteState { adapter: a.clone(), acknowledged })
            })
            .collect();
        let sites_json = serde_json::to_string_pretty(&states).expect("site state serializes");
        write_atomic(&dir.join("sites.json"), &sites_json)?;
        write_atomic(&dir.join("mediator.json"), &self.mediator.to_json())?;
        write_atomic(&dir.join("hwm"), &print_high_water_marks(self.mediator.high_water_marks()))
    }
}

fn log_path(dir: &Path, site: &SiteId) -> PathBuf {
    dir.join("logs").join(format!("{site}.log"))
}

fn read_log(path: &Path, site: &SiteId) -> Result<ReplicationAgent, FederationError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_error(path)(e)),
    };
    let state = |message: String| FederationError::State { path: path.to_path_buf(), message };
    let entries = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| ChangeLogEntry::parse_log_line(site, l).map_err(|e| state(format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<_>, _>>()?;
    ReplicationAgent::from_entries(site.clone(), entries).map_err(state)
}

/// Appends entries the file does not have yet. Existing lines are never
/// rewritten.
fn append_log(path: &Path, agent: &ReplicationAgent) -> Result<(), FederationError> {
    let on_disk = read_log(path, agent.site())?;
    let have = on_disk.entries().len();
    if have > agent.entries().len() || on_disk.entries().iter().zip(agent.entries()).any(|(a, b)| a.change != b.change)
    {
        return Err(FederationError::State {
            path: path.to_path_buf(),
            message: "log on disk diverges from the site's log".into(),
        });
    }
    if have == agent.entries().len() {
        return Ok(());
    }
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_error(path))?;
    let mut text = String::new();
    for e in &agent.entries()[have..] {
        text.push_str(&e.to_log_line());
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(io_error(path))?;
    file.sync_data().map_err(io_error(path))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), FederationError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}
