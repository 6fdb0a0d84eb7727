//! Scenario scripts: one subcommand per line, plus fault schedules and
//! random evolution.
//!
//! Fault lines read `t=<k> site=<id> online|offline|change <change-line>`
//! and fire just before the k-th change of the script. They may appear
//! inline or in a file loaded with `faults <file>`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mdbs::federation::Federation;
use mdbs::propagation::{FaultRates, Mailbox, SchemaChange};
use mdbs::schema::{LocalSchema, SiteId};
use mdbs::sim::{name_pool, random_change};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{execute, read_file, CliError, Command, Session};

#[derive(Debug, Parser)]
#[command(no_binary_name = true, disable_help_flag = true, disable_version_flag = true)]
struct ScriptLine {
    #[command(subcommand)]
    step: Step,
}

#[derive(Debug, Subcommand)]
enum Step {
    /// Load a fault schedule.
    Faults { file: PathBuf },
    /// Apply random valid changes, relaying now and then.
    Evolve { changes: usize },
    /// Swap the channel between agents and the mediator.
    Mailbox {
        #[arg(value_parser = ["reliable", "faulty"])]
        mode: String,
        #[arg(long, default_value_t = 0.0)]
        reorder: f64,
        #[arg(long, default_value_t = 0.0)]
        duplicate: f64,
        #[arg(long, default_value_t = 0.0)]
        lose_ack: f64,
    },
    #[command(flatten)]
    Base(Command),
}

#[derive(Debug, Clone)]
enum FaultAction {
    Online,
    Offline,
    Change(SchemaChange),
}

#[derive(Debug, Clone)]
struct Fault {
    t: u64,
    site: SiteId,
    action: FaultAction,
}

fn parse_fault(line: &str) -> Result<Fault, String> {
    let mut tokens = line.split_whitespace();
    let mut field = |key: &str| {
        tokens
            .next()
            .and_then(|t| t.strip_prefix(key)?.strip_prefix('='))
            .map(str::to_string)
            .ok_or_else(|| format!("expected `{key}=...`"))
    };
    let t = field("t")?.parse::<u64>().map_err(|e| format!("bad tick: {e}"))?;
    let site = SiteId::new(field("site")?);
    let rest: Vec<&str> = tokens.collect();
    let action = match rest.split_first() {
        Some((&"online", [])) => FaultAction::Online,
        Some((&"offline", [])) => FaultAction::Offline,
        Some((&"change", change)) => {
            FaultAction::Change(SchemaChange::parse_line(&change.join(" ")).map_err(|e| e.to_string())?)
        }
        _ => return Err("expected online, offline or change <change-line>".into()),
    };
    Ok(Fault { t, site, action })
}

struct Runner {
    seed: u64,
    rng: ChaCha8Rng,
    /// Changes made so far by `change` and `evolve` steps.
    tick: u64,
    faults: Vec<Fault>,
    fresh: u32,
}

impl Runner {
    fn add_faults(&mut self, new: Vec<Fault>) {
        self.faults.extend(new);
        self.faults.sort_by_key(|f| f.t);
    }

    /// Advances to the next change and fires what is due before it.
    fn next_tick(&mut self, s: &mut Session<'_>) -> Result<(), CliError> {
        self.tick += 1;
        let due = self.faults.iter().take_while(|f| f.t <= self.tick).count();
        for fault in self.faults.drain(..due).collect::<Vec<_>>() {
            let site = &fault.site;
            match fault.action {
                FaultAction::Online => drop(s.fed.set_link(site, true)?),
                FaultAction::Offline => drop(s.fed.set_link(site, false)?),
                FaultAction::Change(change) => drop(s.fed.change(site, change)?),
            }
            writeln!(s.out, "fault t={} {site}: fired", fault.t)?;
        }
        Ok(())
    }

    fn evolve(&mut self, s: &mut Session<'_>, changes: usize) -> Result<(), CliError> {
        let ids: Vec<SiteId> = s.fed.sites().keys().cloned().collect();
        if ids.is_empty() {
            return Err(CliError::Validation("evolve needs at least one registered site".into()));
        }
        let mut relays = 0;
        for _ in 0..changes {
            self.next_tick(s)?;
            let schemas: BTreeMap<SiteId, LocalSchema> =
                s.fed.sites().iter().map(|(id, a)| (id.clone(), a.schema().clone())).collect();
            let site = &ids[self.rng.next_u32() as usize % ids.len()];
            let change = random_change(&mut self.rng, &schemas[site], &name_pool(&schemas), &mut self.fresh);
            s.fed.change(site, change)?;
            if self.rng.next_u32() % 100 < 35 {
                s.fed.relay(&ids[self.rng.next_u32() as usize % ids.len()])?;
                relays += 1;
            }
        }
        writeln!(s.out, "evolved {changes} changes, {relays} relays")?;
        Ok(())
    }

    fn step(&mut self, s: &mut Session<'_>, step: Step) -> Result<(), CliError> {
        match step {
            Step::Faults { file } => {
                let path = s.base.join(file);
                let faults = parse_faults(&read_file(&path)?, &path)?;
                writeln!(s.out, "{} faults scheduled", faults.len())?;
                self.add_faults(faults);
            }
            Step::Evolve { changes } => self.evolve(s, changes)?,
            Step::Mailbox { mode, reorder, duplicate, lose_ack } => {
                let mailbox = if mode == "reliable" {
                    Mailbox::reliable()
                } else {
                    Mailbox::faulty(self.seed, FaultRates { reorder, duplicate, lose_ack })
                };
                s.fed = std::mem::take(&mut s.fed).with_mailbox(mailbox);
            }
            Step::Base(command @ Command::Change { .. }) => {
                self.next_tick(s)?;
                execute(s, &command)?;
            }
            Step::Base(command) => execute(s, &command)?,
        }
        Ok(())
    }
}

fn parse_faults(text: &str, path: &Path) -> Result<Vec<Fault>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !is_blank(l))
        .map(|(i, l)| parse_fault(l.trim()).map_err(|e| located(path, i, CliError::Validation(e))))
        .collect()
}

fn is_blank(line: &str) -> bool {
    let line = line.trim();
    line.is_empty() || line.starts_with('#')
}

fn located(path: &Path, index: usize, e: CliError) -> CliError {
    let at = |m: String| format!("{}:{}: {m}", path.display(), index + 1);
    match e {
        CliError::Validation(m) => CliError::Validation(at(m)),
        CliError::Io(m) => CliError::Io(at(m)),
        CliError::Diverged => CliError::Diverged,
    }
}

/// Runs a script against an empty federation. Paths inside the script are
/// relative to the script's directory.
pub(crate) fn run_script(script: &Path, seed: u64, out: &mut dyn Write) -> Result<Federation, CliError> {
    let text = read_file(script)?;
    let base = script.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut session = Session { fed: Federation::new(), base, out };
    let mut runner = Runner { seed, rng: ChaCha8Rng::seed_from_u64(seed), tick: 0, faults: Vec::new(), fresh: 0 };
    for (i, line) in text.lines().enumerate() {
        if is_blank(line) {
            continue;
        }
        let line = line.trim();
        writeln!(session.out, "$ {line}")?;
        let outcome = if line.starts_with("t=") {
            parse_fault(line).map(|f| runner.add_faults(vec![f])).map_err(CliError::Validation)
        } else {
            let words = shlex::split(line).ok_or_else(|| CliError::Validation("unbalanced quotes".into()));
            words
                .and_then(|w| {
                    ScriptLine::try_parse_from(w)
                        .map_err(|e| CliError::Validation(e.render().to_string().trim().into()))
                })
                .and_then(|parsed| runner.step(&mut session, parsed.step))
        };
        outcome.map_err(|e| located(script, i, e))?;
    }
    for f in &runner.faults {
        eprintln!("warning: fault t={} for {} never fired; the script made {} changes", f.t, f.site, runner.tick);
    }
    Ok(session.fed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_lines() {
        let f = parse_fault("t=3 site=B change kind=DropClass class=x").unwrap();
        assert_eq!((f.t, f.site.to_string()), (3, "B".to_string()));
        assert!(matches!(f.action, FaultAction::Change(SchemaChange::DropClass { .. })));
        assert!(matches!(parse_fault("t=1 site=A offline").unwrap().action, FaultAction::Offline));
        assert!(parse_fault("t=1 site=A offline now").is_err());
        assert!(parse_fault("site=A t=1 online").is_err());
        assert!(parse_fault("t=x site=A online").is_err());
    }

    #[test]
    fn faults_fire_in_tick_order() {
        let mut r = Runner { seed: 0, rng: ChaCha8Rng::seed_from_u64(0), tick: 0, faults: Vec::new(), fresh: 0 };
        r.add_faults(vec![parse_fault("t=2 site=A online").unwrap(), parse_fault("t=1 site=A offline").unwrap()]);
        assert_eq!(r.faults.iter().map(|f| f.t).collect::<Vec<_>>(), [1, 2]);
    }
}
