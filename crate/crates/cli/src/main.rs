//! `mdbs`: drives a federation kept in a state directory.

mod scenario;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdbs::federation::{Federation, FederationError};
use mdbs::integration::VcStatus;
use mdbs::propagation::{RelayReport, SchemaChange};
use mdbs::query::{render_table, render_tsv, QueryOptions};
use mdbs::schema::SiteId;

#[derive(Debug, Parser)]
#[command(name = "mdbs", version, about = "Mediates queries and schema changes across component databases")]
struct Cli {
    /// Directory holding the federation between invocations.
    #[arg(long, global = true, env = "MDBS_STATE_DIR", default_value = ".mdbs")]
    state_dir: PathBuf,
    /// Seed for everything random in scenarios.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Register a component database from its schema and extent files.
    Register { site: String, schema_file: PathBuf, data_file: PathBuf },
    /// Load correspondence assertions.
    Assert { dsl_file: PathBuf },
    /// Define virtual classes.
    Integrate { def_file: PathBuf },
    /// Print the global schema.
    ShowGlobal {
        /// Write the canonical export to a file instead.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Run a global query.
    Query {
        text: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Evaluate every predicate at the mediator.
        #[arg(long)]
        no_pushdown: bool,
    },
    /// Apply an autonomous schema change at a site, e.g.
    /// `change B kind=AddAttribute class=employees attr=fax type=text?`.
    Change {
        site: String,
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        change: Vec<String>,
    },
    /// Bring a site's link up or down.
    Link { site: String, state: LinkState },
    /// Send unacknowledged log entries to the mediator.
    Relay(RelayArgs),
    /// Compare the mediator's mirrors with the sites; exit 3 when they differ.
    #[command(alias = "check")]
    CheckConvergence,
    /// Rename a class (`<class>`) or attribute (`<class>.<attr>`) in the
    /// mediator's view of a site. The site itself is untouched.
    Rename { site: String, target: String, new_name: String },
    /// Replay a scenario script against a fresh federation.
    RunScenario {
        script: PathBuf,
        /// Persist the resulting federation to the state directory.
        #[arg(long)]
        save: bool,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub(crate) struct RelayArgs {
    site: Option<String>,
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum Format {
    Table,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum LinkState {
    Up,
    Down,
}

#[derive(Debug)]
pub(crate) enum CliError {
    Validation(String),
    Io(String),
    Diverged,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Diverged => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
            CliError::Diverged => f.write_str("mediator and sites differ"),
        }
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Io { .. } | FederationError::State { .. } => CliError::Io(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Where a command runs: the federation plus how to resolve paths.
pub(crate) struct Session<'a> {
    pub fed: Federation,
    pub base: PathBuf,
    pub out: &'a mut dyn Write,
}

impl Session<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}

/// Runs one state-changing or read-only command.
pub(crate) fn execute(s: &mut Session<'_>, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Register { site, schema_file, data_file } => {
            let schema = read_file(&s.path(schema_file))?;
            let data = read_file(&s.path(data_file))?;
            let summary = s.fed.register(SiteId::new(site), &schema, &data)?;
            writeln!(
                s.out,
                "registered {}: {} classes, {} attributes",
                summary.site, summary.classes, summary.attributes
            )?;
        }
        Command::Assert { dsl_file } => {
            let n = s.fed.assert(&read_file(&s.path(dsl_file))?)?;
            writeln!(s.out, "{n} assertions loaded")?;
        }
        Command::Integrate { def_file } => {
            let warnings = s.fed.integrate(&read_file(&s.path(def_file))?)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            for vc in s.fed.mediator().global().classes() {
                writeln!(s.out, "{}: {}", vc.def.name, vc.status)?;
            }
        }
        Command::ShowGlobal { export: None } => write!(s.out, "{}", s.fed.export())?,
        Command::ShowGlobal { export: Some(file) } => {
            let path = s.path(file);
            fs::write(&path, s.fed.export()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Command::Query { text, format, no_pushdown } => {
            let result = s.fed.query(text, QueryOptions { pushdown: !no_pushdown })?;
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let rendered = match format {
                Format::Table => render_table(&result),
                Format::Tsv => render_tsv(&result),
            };
            write!(s.out, "{rendered}")?;
        }
        Command::Change { site, change } => {
            let change =
                SchemaChange::parse_line(&change.join(" ")).map_err(|e| CliError::Validation(e.to_string()))?;
            let version = s.fed.change(&SiteId::new(site), change)?;
            writeln!(s.out, "{site}: schema version {version}")?;
        }
        Command::Link { site, state } => {
            let up = *state == LinkState::Up;
            let was = s.fed.set_link(&SiteId::new(site), up)?;
            writeln!(s.out, "{site}: link {} (was {})", updown(up), updown(was))?;
        }
        Command::Relay(RelayArgs { site: Some(site), .. }) => {
            let report = s.fed.relay(&SiteId::new(site))?;
            print_report(s.out, &report)?;
        }
        Command::Relay(RelayArgs { site: None, .. }) => {
            for report in s.fed.relay_all()? {
                print_report(s.out, &report)?;
            }
        }
        Command::CheckConvergence => {
            let report = s.fed.check_convergence();
            if !report.equal {
                for line in &report.diff {
                    writeln!(s.out, "{line}")?;
                }
                return Err(CliError::Diverged);
            }
            writeln!(s.out, "equal")?;
        }
        Command::Rename { site, target, new_name } => {
            let site = SiteId::new(site);
            let affected = match target.split_once('.') {
                Some((class, attr)) => s.fed.rename_attribute(&site, class, attr, new_name)?,
                None => s.fed.rename_class(&site, target, new_name)?,
            };
            print_affected(s.out, &affected)?;
        }
        Command::RunScenario { .. } => {
            return Err(CliError::Validation("run-scenario cannot be nested".into()));
        }
    }
    Ok(())
}

fn updown(up: bool) -> &'static str {
    if up {
        "up"
    } else {
        "down"
    }
}

fn print_report(out: &mut dyn Write, r: &RelayReport) -> io::Result<()> {
    if !r.link_up {
        return writeln!(out, "{}: link down, {} pending", r.site, r.pending);
    }
    writeln!(
        out,
        "{}: delivered {}, duplicates {}, buffered {}, pending {}",
        r.site, r.delivered, r.skipped_duplicates, r.buffered, r.pending
    )?;
    for (seq, reason) in &r.rejected {
        writeln!(out, "  rejected seq {seq}: {reason}")?;
    }
    print_affected(out, &r.affected_virtual_classes)
}

fn print_affected(out: &mut dyn Write, affected: &[(String, VcStatus)]) -> io::Result<()> {
    for (name, status) in affected {
        writeln!(out, "  {name}: {status}")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Command::RunScenario { script, save } = &cli.command {
        let fed = scenario::run_script(script, cli.seed, &mut out)?;
        if *save {
            fed.save(&cli.state_dir)?;
        }
        return Ok(());
    }
    let fed = Federation::load(&cli.state_dir)?;
    let mut session = Session { fed, base: PathBuf::new(), out: &mut out };
    let outcome = execute(&mut session, &cli.command);
    // Read-only commands leave the state directory alone.
    let mutates =
        !matches!(cli.command, Command::ShowGlobal { .. } | Command::Query { .. } | Command::CheckConvergence);
    if mutates && outcome.is_ok() {
        session.fed.save(&cli.state_dir)?;
    }
    outcome
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage mistakes are validation errors; exit 2 is kept for I/O.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e {
                CliError::Diverged => eprintln!("{e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
