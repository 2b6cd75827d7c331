//! `biteleop`: command-line front end.
//!
//! Batch commands (`replay`, `metrics`, `gen-trace`) are requests to a
//! gateway server. With `--server URL` they go to a running one;
//! otherwise the CLI starts a private in-process server on a loopback
//! port for the duration of the command.
//!
//! Exit codes: 0 success, 1 usage (or a failure outside the categories
//! below), 2 config error, 3 trace or log error.

use anyhow::Context;
use biteleop_client::{ClientError, HttpClient};
use biteleop_core::api::{GenTraceRequest, LabelledLog, MetricsRequest, ReplayRequest};
use biteleop_core::coordination::ReferencePoseLibrary;
use biteleop_core::session::SessionConfig;
use biteleop_server::{start, Gateway, ServerOptions};
use clap::{Parser, Subcommand};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tokio::io::{AsyncBufReadExt, BufReader};
use tracing_subscriber::filter::LevelFilter;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TRACE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "biteleop", version, about = "Bimanual teleoperation: replay, metrics, trace generation and the live gateway")]
struct Cli {
    /// Send batch requests to this server instead of an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a trace through a fresh session and write its log.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-tick wall-clock times (µs), one per line.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Summarize one or more logs as CSV (one column per log).
    Metrics {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Column labels, in log order. Defaults to the file stems.
        #[arg(long = "label")]
        labels: Vec<String>,
        /// Timing files written by `replay --timing`, in log order.
        #[arg(long = "timing")]
        timings: Vec<PathBuf>,
        /// Per-tick series of the first log.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Write a synthetic trace: line, arc, spike, step, wave or fuzz.
    GenTrace {
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the live gateway.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the config's gateway port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<IpAddr>,
        /// Write `trace.txt` and `session.log` of the live session here.
        #[arg(long, value_name = "DIR")]
        record: Option<PathBuf>,
    },
    /// Serve the gateway in capture mode. Drive the arms from the cockpit,
    /// then type a label and press enter to store the current pose pair.
    /// End with EOF or `quit`.
    RecordRef {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<IpAddr>,
        /// Library file to append to. Defaults to the config's library.
        #[arg(long)]
        library: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure::new(EXIT_USAGE, error)
}

/// Maps a server-side error to the exit code of its category.
fn from_client(e: ClientError) -> Failure {
    let code = match e.api_kind() {
        Some("config") => EXIT_CONFIG,
        Some("trace") | Some("log") => EXIT_TRACE,
        _ => EXIT_USAGE,
    };
    Failure::new(code, e)
}

fn read(path: &Path, code: u8, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(code, anyhow::anyhow!("cannot read {what} {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| usage(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

/// Config text and the directory its relative paths resolve against.
fn config_text(path: Option<&Path>) -> Result<(Option<String>, Option<String>), Failure> {
    let Some(path) = path else { return Ok((None, None)) };
    let text = read(path, EXIT_CONFIG, "config")?;
    let dir = path
        .parent()
        .map(|d| if d.as_os_str().is_empty() { Path::new(".") } else { d })
        .and_then(|d| std::fs::canonicalize(d).ok())
        .map(|d| d.display().to_string());
    Ok((Some(text), dir))
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig, Failure> {
    match path {
        None => Ok(SessionConfig::default()),
        Some(p) => SessionConfig::load(p).map_err(|e| Failure::new(EXIT_CONFIG, e)),
    }
}

/// A client for `--server`, or an embedded batch server and its client.
async fn backend(server: Option<&str>) -> Result<(HttpClient, Option<Gateway>), Failure> {
    match server {
        Some(url) => Ok((HttpClient::new(url), None)),
        None => {
            let addr: SocketAddr = (std::net::Ipv4Addr::LOCALHOST, 0).into();
            let gw = start(ServerOptions::batch(SessionConfig::default()), addr)
                .await
                .map_err(usage)?;
            Ok((HttpClient::new(gw.base_url()), Some(gw)))
        }
    }
}

async fn replay(server: Option<&str>, trace: &Path, config: Option<&Path>, out: &Path, timing: Option<&Path>) -> Outcome {
    let (config, config_dir) = config_text(config)?;
    let trace = read(trace, EXIT_TRACE, "trace")?;
    let (client, gw) = backend(server).await?;
    let result = client
        .replay(&ReplayRequest {
            trace,
            config,
            config_dir,
        })
        .await;
    if let Some(gw) = gw {
        gw.shutdown().await;
    }
    let r = result.map_err(from_client)?;
    write(out, &r.log)?;
    if let Some(path) = timing {
        let lines: String = r.tick_micros.iter().map(|t| format!("{t}\n")).collect();
        write(path, &lines)?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn read_timing(path: &Path) -> Result<Vec<f64>, Failure> {
    read(path, EXIT_TRACE, "timing file")?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Failure::new(EXIT_TRACE, anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

async fn metrics(
    server: Option<&str>,
    logs: &[PathBuf],
    labels: &[String],
    timings: &[PathBuf],
    out: &Path,
    series: Option<&Path>,
) -> Outcome {
    if !labels.is_empty() && labels.len() != logs.len() {
        return Err(usage(anyhow::anyhow!("{} labels for {} logs", labels.len(), logs.len())));
    }
    if timings.len() > logs.len() {
        return Err(usage(anyhow::anyhow!("{} timing files for {} logs", timings.len(), logs.len())));
    }
    let mut runs = Vec::with_capacity(logs.len());
    for (i, path) in logs.iter().enumerate() {
        runs.push(LabelledLog {
            label: labels.get(i).cloned().unwrap_or_else(|| stem(path)),
            log: read(path, EXIT_TRACE, "log")?,
            tick_micros: timings.get(i).map(|t| read_timing(t)).transpose()?,
        });
    }
    let (client, gw) = backend(server).await?;
    let result = client.metrics(&MetricsRequest { runs }).await;
    if let Some(gw) = gw {
        gw.shutdown().await;
    }
    let r = result.map_err(from_client)?;
    write(out, &r.csv)?;
    if let Some(path) = series {
        write(path, &r.series_csv)?;
    }
    Ok(())
}

async fn gen_trace(
    server: Option<&str>,
    scenario: String,
    out: &Path,
    ticks: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
) -> Outcome {
    let (config, config_dir) = config_text(config)?;
    let (client, gw) = backend(server).await?;
    let result = client
        .gen_trace(&GenTraceRequest {
            scenario,
            ticks,
            seed,
            config,
            config_dir,
        })
        .await;
    if let Some(gw) = gw {
        gw.shutdown().await;
    }
    write(out, &result.map_err(from_client)?.trace)
}

fn listen_addr(config: &SessionConfig, bind: Option<IpAddr>, port: Option<u16>) -> Result<SocketAddr, Failure> {
    let ip = match bind {
        Some(ip) => ip,
        None => config
            .gateway
            .bind
            .parse()
            .map_err(|e| Failure::new(EXIT_CONFIG, anyhow::anyhow!("gateway bind address: {e}")))?,
    };
    Ok(SocketAddr::new(ip, port.unwrap_or(config.gateway.port)))
}

async fn start_live(opts: ServerOptions, addr: SocketAddr) -> Result<Gateway, Failure> {
    start(opts, addr).await.map_err(usage)
}

async fn serve(config: Option<&Path>, bind: Option<IpAddr>, port: Option<u16>, record: Option<PathBuf>) -> Outcome {
    let config = load_config(config)?;
    let addr = listen_addr(&config, bind, port)?;
    let mut opts = ServerOptions::live(config);
    opts.record_dir = record;
    let mut gw = start_live(opts, addr).await?;
    println!("serving on {}", gw.base_url());
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = gw.wait() => return Err(usage(anyhow::anyhow!("server stopped unexpectedly"))),
    }
    gw.shutdown().await;
    Ok(())
}

async fn record_ref(config: Option<&Path>, bind: Option<IpAddr>, port: Option<u16>, library: Option<PathBuf>) -> Outcome {
    let mut config = load_config(config)?;
    let path = library
        .or_else(|| config.library_path.clone())
        .ok_or_else(|| usage(anyhow::anyhow!("no library file: pass --library or set one in the config")))?;
    if path.exists() {
        config.library = ReferencePoseLibrary::load(&path)
            .with_context(|| format!("reference library {}", path.display()))
            .map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    } else {
        config.library = ReferencePoseLibrary::new(stem(&path), "");
    }
    let addr = listen_addr(&config, bind, port)?;
    let mut opts = ServerOptions::live(config);
    opts.capture_path = Some(path.clone());
    let gw = start_live(opts, addr).await?;
    let client = HttpClient::new(gw.base_url());
    println!("capturing into {} via {}", path.display(), gw.base_url());
    println!("type a label and press enter to record; EOF or `quit` ends");

    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    let mut outcome = Ok(());
    loop {
        let line = tokio::select! {
            line = lines.next_line() => line,
            _ = tokio::signal::ctrl_c() => break,
        };
        let label = match line {
            Ok(Some(l)) => l.trim().to_string(),
            Ok(None) => break,
            Err(e) => {
                outcome = Err(usage(e));
                break;
            }
        };
        if label.is_empty() {
            continue;
        }
        if label == "quit" {
            break;
        }
        match client.record_reference(&label).await {
            Ok(index) => println!("recorded #{index} {label}"),
            Err(e) => eprintln!("not recorded: {e}"),
        }
    }
    gw.shutdown().await;
    outcome
}

async fn run(cli: Cli) -> Outcome {
    let server = cli.server.as_deref();
    match cli.command {
        Command::Replay {
            trace,
            config,
            out,
            timing,
        } => replay(server, &trace, config.as_deref(), &out, timing.as_deref()).await,
        Command::Metrics {
            logs,
            out,
            labels,
            timings,
            series,
        } => metrics(server, &logs, &labels, &timings, &out, series.as_deref()).await,
        Command::GenTrace {
            scenario,
            out,
            ticks,
            seed,
            config,
        } => gen_trace(server, scenario, &out, ticks, seed, config.as_deref()).await,
        Command::Serve {
            config,
            port,
            bind,
            record,
        } => serve(config.as_deref(), bind, port, record).await,
        Command::RecordRef {
            config,
            port,
            bind,
            library,
        } => record_ref(config.as_deref(), bind, port, library).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let live = matches!(cli.command, Command::Serve { .. } | Command::RecordRef { .. });
    let level = if live { LevelFilter::INFO } else { LevelFilter::WARN };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
