//! The `infoflow` command: run the server, check a registry, call services
//! headlessly and drive workbook files.
//!
//! Exit statuses: 0 success, 1 usage, 2 validation, 3 network or server,
//! 4 data. Failures print one `error: code=... message=...` line on stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use infoflow_core::protocol::{self, ServiceRequest, ServiceResponse};
use infoflow_core::workbook::{
    check_status, CellAddress, EditOutcome, HttpGateway, Mode, ParamSource, ServiceGateway, Workbook,
    DEFAULT_AUDIT_DEPTH,
};
use infoflow_core::{load_registry, RegistryError, Timestamp, Value, ValueType};
use infoflow_server::{ServerConfig, CONFIG_ENV};

pub mod error;
pub mod render;
pub mod session;
pub mod workbook_file;

pub use error::{CliError, Exit};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";
pub const DEFAULT_SESSION_LISTEN: &str = "127.0.0.1:8090";

#[derive(Debug, Parser)]
#[command(name = "infoflow", version, about = "Information services: server, registry tools, client and workbook driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the information server.
    Serve {
        /// Server configuration file (TOML).
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Registry tools.
    #[command(subcommand)]
    Registry(RegistryCommand),
    /// List the services the token may use.
    Directory {
        #[command(flatten)]
        conn: Connection,
    },
    /// Invoke a service and print the result.
    Invoke {
        /// Service name, as listed by `directory`.
        service: String,
        /// Key parameter as NAME=VALUE; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        /// Print the raw XML response instead of a table.
        #[arg(long)]
        xml: bool,
        #[command(flatten)]
        conn: Connection,
    },
    /// Workbook files.
    #[command(subcommand)]
    Wb(WbCommand),
}

#[derive(Debug, Subcommand)]
pub enum RegistryCommand {
    /// Load and check every definition in a registry directory.
    Validate {
        /// Directory of resource and service XML files.
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Connection {
    /// Server base URL.
    #[arg(long, env = "INFOFLOW_SERVER", default_value = DEFAULT_SERVER)]
    pub server: String,
    /// Bearer token.
    #[arg(long, env = "INFOFLOW_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

impl Connection {
    fn gateway(&self) -> HttpGateway {
        HttpGateway::new(&self.server, self.token.clone())
    }
}

#[derive(Debug, Clone, Args)]
pub struct UserArg {
    /// Name recorded in cell audit history.
    #[arg(long, env = "INFOFLOW_USER", default_value = "local")]
    pub user: String,
}

#[derive(Debug, Subcommand)]
pub enum WbCommand {
    /// Create an empty workbook file.
    New {
        file: PathBuf,
        /// Change records kept per cell.
        #[arg(long, default_value_t = DEFAULT_AUDIT_DEPTH)]
        audit_depth: usize,
        /// Replace an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Bind a service to a block whose header row starts at --at.
    Bind {
        file: PathBuf,
        service: String,
        /// Top-left cell of the block, e.g. B2 or Sheet2!C5.
        #[arg(long)]
        at: CellAddress,
        /// NAME=VALUE for a literal, NAME=@CELL to read the value from a cell.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        /// read-only or writable.
        #[arg(long, default_value = "read-only")]
        mode: Mode,
        #[command(flatten)]
        conn: Connection,
    },
    /// Re-invoke bound services and write their results.
    Refresh {
        file: PathBuf,
        /// Binding id.
        #[arg(required_unless_present = "all")]
        id: Option<u32>,
        /// Refresh every binding in id order.
        #[arg(long, conflicts_with = "id")]
        all: bool,
        #[command(flatten)]
        conn: Connection,
        #[command(flatten)]
        user: UserArg,
    },
    /// Set one cell. Empty VALUE clears it.
    Edit {
        file: PathBuf,
        address: CellAddress,
        value: String,
        /// Value type; defaults to the bound column's type, else text.
        #[arg(long = "type")]
        ty: Option<ValueType>,
        #[command(flatten)]
        user: UserArg,
    },
    /// Send a writable binding's pending edits to the server.
    Push {
        file: PathBuf,
        id: u32,
        #[command(flatten)]
        conn: Connection,
        #[command(flatten)]
        user: UserArg,
    },
    /// Print the grid and bindings.
    Show { file: PathBuf },
    /// Print a cell's change history, newest first.
    Audit { file: PathBuf, address: CellAddress },
    /// Save the current state under a label.
    Checkpoint {
        file: PathBuf,
        #[arg(default_value = "")]
        label: String,
    },
    /// List checkpoints.
    Checkpoints { file: PathBuf },
    /// Return to a checkpoint.
    Restore {
        file: PathBuf,
        id: u32,
        #[command(flatten)]
        user: UserArg,
    },
    /// Host the JSON session API for the grid UI.
    ServeSession {
        file: PathBuf,
        /// Address for the session API.
        #[arg(long, default_value = DEFAULT_SESSION_LISTEN)]
        listen: String,
        #[command(flatten)]
        conn: Connection,
        #[command(flatten)]
        user: UserArg,
    },
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected NAME=VALUE, got {s:?}")),
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return Exit::Usage as i32;
            }
            let _ = write!(out, "{}", e.render());
            return Exit::Ok as i32;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => Exit::Ok as i32,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit as i32
        }
    }
}

fn write_out(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::data("io", e))
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Serve { config } => serve(&config, out),
        Command::Registry(RegistryCommand::Validate { dir }) => validate(&dir, out),
        Command::Directory { conn } => directory(&conn, out),
        Command::Invoke {
            service,
            params,
            xml,
            conn,
        } => invoke(&conn, &service, &params, xml, out),
        Command::Wb(wb) => workbook(wb, out),
    }
}

fn serve(config: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = ServerConfig::load(config).map_err(|e| CliError::new(Exit::Validation, "config", e))?;
    infoflow_server::run(&cfg, |addr| {
        let _ = writeln!(out, "listening on http://{addr}");
        let _ = out.flush();
    })
    .map_err(|e| match e {
        infoflow_server::ServerError::Registry(r) => CliError::new(Exit::Validation, "validation-failed", r),
        infoflow_server::ServerError::Config(c) => CliError::new(Exit::Validation, "config", c),
        other => CliError::new(Exit::Server, "server", other),
    })
}

fn validate(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    match load_registry(dir) {
        Ok(reg) => write_out(out, &format!("{} services ok\n", reg.service_count())),
        Err(RegistryError::Validation(files)) => {
            let mut text = String::new();
            let mut count = 0;
            for f in &files {
                for v in &f.violations {
                    text.push_str(&format!("{}: {}: {}\n", f.file.display(), v.field, v.message));
                    count += 1;
                }
            }
            write_out(out, &text)?;
            Err(CliError::new(Exit::Validation, "validation-failed", format!("{count} violations")))
        }
        Err(e @ RegistryError::Parse(_)) => Err(CliError::new(Exit::Validation, "parse", e)),
        Err(e @ RegistryError::Io { .. }) => Err(CliError::data("io", e)),
    }
}

fn directory(conn: &Connection, out: &mut dyn Write) -> Result<(), CliError> {
    let entries = conn.gateway().directory()?;
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let keys = e
                .keys
                .iter()
                .map(|k| format!("{}:{}{}", k.name, k.ty, if k.required { "" } else { "?" }))
                .collect::<Vec<_>>()
                .join(" ");
            vec![e.name.clone(), e.version.to_string(), keys, e.description.clone()]
        })
        .collect();
    write_out(out, &render::text_table(&["service", "version", "keys", "description"], &rows))
}

fn invoke(conn: &Connection, service: &str, params: &[(String, String)], xml: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut request = ServiceRequest::new(service);
    for (k, v) in params {
        request = request.param(k, v);
    }
    let (status, body) = conn.gateway().invoke_raw(&request)?;
    check_status(status, &body)?;
    if xml {
        return out.write_all(&body).and_then(|_| out.flush()).map_err(|e| CliError::data("io", e));
    }
    match protocol::decode_response(&body)? {
        ServiceResponse::Ok { table, .. } => write_out(out, &render::result_table(&table)),
        ServiceResponse::Error { code, message } => Err(CliError::new(Exit::Server, code, message)),
    }
}

fn now() -> Timestamp {
    Timestamp::now()
}

/// Type of the bound column under `a`, if `a` is a data cell of a binding.
fn column_type_at(wb: &Workbook, a: &CellAddress) -> Option<ValueType> {
    let b = wb.binding_at(a)?;
    if a.row == b.origin.row {
        return None;
    }
    b.schema.columns.get((a.col - b.origin.col) as usize).map(|c| c.ty)
}

fn bind_params(
    gw: &dyn ServiceGateway,
    service: &str,
    params: &[(String, String)],
) -> Result<BTreeMap<String, ParamSource>, CliError> {
    let schema = gw.schema(service)?;
    let mut out = BTreeMap::new();
    for (name, raw) in params {
        let source = if let Some(cell) = raw.strip_prefix('@') {
            let a = cell
                .parse()
                .map_err(|e| CliError::new(Exit::Usage, "bad-address", format!("--param {name}: {e}")))?;
            ParamSource::Cell(a)
        } else {
            let ty = schema.keys.iter().find(|k| &k.name == name).map_or(ValueType::Text, |k| k.ty);
            let v = Value::decode(ty, raw).map_err(|e| CliError::data("bad-param", format!("--param {name}: {e}")))?;
            ParamSource::Literal(v)
        };
        out.insert(name.clone(), source);
    }
    Ok(out)
}

fn staleness_label(s: infoflow_core::workbook::Staleness) -> &'static str {
    use infoflow_core::workbook::Staleness::*;
    match s {
        Fresh => "fresh",
        Stale => "stale",
        NeverRefreshed => "never-refreshed",
        Error => "error",
    }
}

fn show(wb: &Workbook) -> String {
    let cells: Vec<Vec<String>> = wb
        .grid_view()
        .into_iter()
        .map(|c| {
            let mut flags = Vec::new();
            if c.header {
                flags.push("header");
            }
            if c.protected {
                flags.push("protected");
            }
            if c.writable {
                flags.push("writable");
            }
            if c.dirty {
                flags.push("dirty");
            }
            vec![
                c.address.to_string(),
                render::cell(&c.value),
                c.value.tag().to_string(),
                c.binding.map(|b| b.to_string()).unwrap_or_default(),
                flags.join(","),
            ]
        })
        .collect();
    let bindings: Vec<Vec<String>> = session::binding_views(wb, now())
        .into_iter()
        .map(|b| {
            vec![
                b.id.to_string(),
                b.service,
                b.origin.to_string(),
                b.mode.as_str().to_string(),
                b.rows.to_string(),
                staleness_label(b.staleness).to_string(),
            ]
        })
        .collect();
    let mut s = render::text_table(&["cell", "value", "type", "binding", "flags"], &cells);
    s.push('\n');
    s.push_str(&render::text_table(&["binding", "service", "origin", "mode", "rows", "status"], &bindings));
    s
}

fn workbook(cmd: WbCommand, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        WbCommand::New {
            file,
            audit_depth,
            force,
        } => {
            if file.exists() && !force {
                return Err(CliError::data("exists", format!("{} exists; pass --force to replace it", file.display())));
            }
            workbook_file::save(&file, &Workbook::new(audit_depth))?;
            write_out(out, &format!("created {}\n", file.display()))
        }
        WbCommand::Bind {
            file,
            service,
            at,
            params,
            mode,
            conn,
        } => {
            let mut wb = workbook_file::load(&file)?;
            let gw = conn.gateway();
            let params = bind_params(&gw, &service, &params)?;
            let id = wb.bind(&gw, at.clone(), &service, params, mode)?;
            workbook_file::save(&file, &wb)?;
            write_out(out, &format!("binding {id}: {service} at {at} ({})\n", mode.as_str()))
        }
        WbCommand::Refresh {
            file,
            id,
            all: _,
            conn,
            user,
        } => {
            let mut wb = workbook_file::load(&file)?;
            let gw = conn.gateway();
            let ids: Vec<u32> = match id {
                Some(id) => vec![id],
                None => wb.bindings().keys().copied().collect(),
            };
            let mut text = String::new();
            let mut first_err = None;
            for id in ids {
                match wb.refresh(&gw, id, &user.user, now()) {
                    Ok(o) => text.push_str(&format!("binding {id}: {} rows, {} cells changed\n", o.rows, o.changed)),
                    Err(e) => {
                        text.push_str(&format!("binding {id}: failed ({})\n", e.code()));
                        first_err.get_or_insert(e);
                    }
                }
            }
            // Error state on failed bindings is worth keeping.
            workbook_file::save(&file, &wb)?;
            write_out(out, &text)?;
            first_err.map_or(Ok(()), |e| Err(e.into()))
        }
        WbCommand::Edit {
            file,
            address,
            value,
            ty,
            user,
        } => {
            let mut wb = workbook_file::load(&file)?;
            let ty = ty.or_else(|| column_type_at(&wb, &address)).unwrap_or(ValueType::Text);
            let v = Value::decode_field(ty, &value).map_err(|e| CliError::data("bad-value", e))?;
            let outcome = wb.edit_cell(&address, v, &user.user, now())?;
            workbook_file::save(&file, &wb)?;
            let word = match outcome {
                EditOutcome::Changed => "changed",
                EditOutcome::Unchanged => "unchanged",
            };
            write_out(out, &format!("{address} {word}\n"))
        }
        WbCommand::Push { file, id, conn, user } => {
            let mut wb = workbook_file::load(&file)?;
            let applied = wb.push_updates(&conn.gateway(), id, &user.user, now())?;
            workbook_file::save(&file, &wb)?;
            write_out(out, &format!("binding {id}: {applied} rows applied\n"))
        }
        WbCommand::Show { file } => write_out(out, &show(&workbook_file::load(&file)?)),
        WbCommand::Audit { file, address } => {
            let wb = workbook_file::load(&file)?;
            let rows: Vec<Vec<String>> = wb
                .audit_of(&address)
                .iter()
                .map(|r| {
                    vec![
                        r.timestamp.to_string(),
                        r.user.clone(),
                        r.origin.as_str().to_string(),
                        render::cell(&r.previous),
                        render::cell(&r.new),
                    ]
                })
                .collect();
            write_out(out, &render::text_table(&["timestamp", "user", "origin", "previous", "new"], &rows))
        }
        WbCommand::Checkpoint { file, label } => {
            let mut wb = workbook_file::load(&file)?;
            let id = wb.checkpoint(&label, now());
            workbook_file::save(&file, &wb)?;
            write_out(out, &format!("checkpoint {id}\n"))
        }
        WbCommand::Checkpoints { file } => {
            let wb = workbook_file::load(&file)?;
            let rows: Vec<Vec<String>> = wb
                .list_checkpoints()
                .into_iter()
                .map(|c| vec![c.id.to_string(), c.label, c.timestamp.to_string()])
                .collect();
            write_out(out, &render::text_table(&["id", "label", "timestamp"], &rows))
        }
        WbCommand::Restore { file, id, user } => {
            let mut wb = workbook_file::load(&file)?;
            let changed = wb.restore(id, &user.user, now())?;
            workbook_file::save(&file, &wb)?;
            write_out(out, &format!("restored checkpoint {id}: {changed} cells changed\n"))
        }
        WbCommand::ServeSession {
            file,
            listen,
            conn,
            user,
        } => {
            let wb = workbook_file::load(&file)?;
            let s = session::Session {
                path: file,
                workbook: wb,
                gateway: Arc::new(conn.gateway()),
                user: user.user,
            };
            session::serve(s, &listen, |addr| {
                let _ = writeln!(out, "session on http://{addr}");
                let _ = out.flush();
            })
            .map_err(|e| CliError::new(Exit::Server, "listen", e))
        }
    }
}
