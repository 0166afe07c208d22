//! `capfuzz` command-line entry point.
//!
//! Subcommands: `extract` (dump flows/messages/fields from a pcap),
//! `generate` (write the test-case manifest), `fuzz` (run the campaign),
//! `report` (turn manifest + status into the bug report), `monitor` (run the
//! monitor agent on the victim machine), `victim` (run the seeded-fault
//! target).

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capfuzz::config::CampaignConfig;
use capfuzz::field::tokenize_message;
use capfuzz::flow::{assemble_flows, extract_messages, Direction, TcpFlow};
use capfuzz::inject::{
    campaign_id, read_status, run_campaign, CampaignOptions, InjectError, MonitorClient,
    StatusAppender, StatusHeader,
};
use capfuzz::pcap::{decode_capture, parse_capture};
use capfuzz::report::{build_report, render_text, ReportError};
use capfuzz::testcase::{
    manifest_sha256, manifest_to_bytes, read_manifest, GenerateError, TestPlan,
};
use capfuzz::util::{preview, unix_millis};
use capfuzz::victim::{serve_ftp_subset, FaultConfig};

#[derive(Parser)]
#[command(name = "capfuzz", version, about = "capture-driven attack injection")]
struct Cli {
    /// Campaign config file (JSON); command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for manifest/status/report outputs.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TargetFlags {
    /// Target host to inject into.
    #[arg(long)]
    host: Option<String>,
    /// Target port.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    monitor_host: Option<String>,
    #[arg(long)]
    monitor_port: Option<u16>,
    #[arg(long)]
    response_timeout_ms: Option<u64>,
    #[arg(long)]
    hang_timeout_ms: Option<u64>,
    #[arg(long)]
    settle_delay_ms: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a pcap and dump flows, messages and typed fields as JSON.
    Extract {
        #[arg(long)]
        pcap: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the deterministic test-case manifest for a capture.
    Generate {
        #[arg(long)]
        pcap: Option<PathBuf>,
    },
    /// Run the injection campaign against a live target.
    Fuzz {
        #[arg(long)]
        pcap: Option<PathBuf>,
        #[command(flatten)]
        target: TargetFlags,
        /// Continue an interrupted campaign from its status file.
        #[arg(long)]
        resume: bool,
        /// Restart the target after every test case.
        #[arg(long)]
        restart_every_case: bool,
        /// Comma-separated test ids to run (reproduction runs).
        #[arg(long, value_delimiter = ',')]
        test_ids: Option<Vec<usize>>,
    },
    /// Join a manifest and a status file into report.json / report.txt.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        status: PathBuf,
    },
    /// Run the monitor agent: supervise the target and serve the control port.
    Monitor {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 9911)]
        port: u16,
        /// Target launch command, whitespace-split (no shell).
        #[arg(long)]
        target_cmd: String,
    },
    /// Run the seeded-fault FTP-subset victim server.
    Victim {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 2121)]
        port: u16,
        #[arg(long)]
        fault_overflow: bool,
        #[arg(long, default_value_t = 256)]
        overflow_threshold: usize,
        #[arg(long)]
        fault_format: bool,
        #[arg(long)]
        fault_integer: bool,
    },
}

/// Failures mapped to exit codes: 1 malformed input, 3 empty corpus,
/// 4 monitor unreachable, 5 target never up, 6 manifest mismatch.
enum CliError {
    Input(String),
    EmptyCorpus,
    MonitorUnreachable(String),
    TargetNeverUp(String),
    ManifestMismatch(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::EmptyCorpus => 3,
            CliError::MonitorUnreachable(_) => 4,
            CliError::TargetNeverUp(_) => 5,
            CliError::ManifestMismatch(_) => 6,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Input(m) => m.clone(),
            CliError::EmptyCorpus => "empty corpus: no client request fields to mutate".into(),
            CliError::MonitorUnreachable(m) => format!("monitor unreachable: {m}"),
            CliError::TargetNeverUp(m) => format!("target never came up: {m}"),
            CliError::ManifestMismatch(m) => format!("manifest mismatch: {m}"),
        }
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> CliError {
        match e {
            GenerateError::EmptyCorpus => CliError::EmptyCorpus,
            GenerateError::Schedule(e) => CliError::Input(e.to_string()),
        }
    }
}

impl From<InjectError> for CliError {
    fn from(e: InjectError) -> CliError {
        match e {
            InjectError::MonitorUnreachable(m) => CliError::MonitorUnreachable(m),
            InjectError::TargetNeverUp(m) => CliError::TargetNeverUp(m),
            InjectError::ResumeManifestMismatch { .. } => CliError::ManifestMismatch(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> CliError {
        match e {
            ReportError::ManifestMismatch(m) => CliError::ManifestMismatch(m),
        }
    }
}

fn load_flows(pcap_path: &Path) -> Result<(Vec<TcpFlow>, usize), CliError> {
    let bytes = std::fs::read(pcap_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", pcap_path.display())))?;
    let capture = parse_capture(&bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", pcap_path.display())))?;
    let (segments, skipped) = decode_capture(&capture);
    let flows = assemble_flows(&segments)
        .map_err(|e| CliError::Input(format!("{}: {e}", pcap_path.display())))?;
    Ok((flows, skipped))
}

fn extract_dump(pcap_path: &Path) -> Result<serde_json::Value, CliError> {
    let (flows, skipped) = load_flows(pcap_path)?;
    let flows_json: Vec<serde_json::Value> = flows
        .iter()
        .map(|flow| {
            let messages: Vec<serde_json::Value> = extract_messages(flow)
                .iter()
                .map(|m| {
                    let mut msg = serde_json::json!({
                        "message_index": m.message_index,
                        "direction": m.direction,
                        "offset": m.stream_offset,
                        "length": m.bytes.len(),
                        "preview": preview(&m.bytes, 48),
                    });
                    if m.direction == Direction::ClientToServer {
                        let fields: Vec<serde_json::Value> = tokenize_message(m)
                            .iter()
                            .map(|s| {
                                serde_json::json!({
                                    "field_index": s.field_index,
                                    "start": s.start,
                                    "end": s.end,
                                    "type": s.field_type,
                                    "original": preview(&s.original_bytes, 64),
                                })
                            })
                            .collect();
                        msg["fields"] = serde_json::Value::Array(fields);
                    }
                    msg
                })
                .collect();
            serde_json::json!({
                "key": flow.key,
                "handshake_seen": flow.handshake_seen,
                "sequence_gap": { "client": flow.client_gap, "server": flow.server_gap },
                "retransmission_overlap": { "client": flow.client_overlap, "server": flow.server_overlap },
                "messages": messages,
            })
        })
        .collect();
    Ok(serde_json::json!({
        "pcap": pcap_path.display().to_string(),
        "flows": flows_json,
        "skipped_malformed_packets": skipped,
    }))
}

fn cmd_extract(pcap: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let dump = extract_dump(pcap)?;
    let text = serde_json::to_string_pretty(&dump).expect("serializable dump");
    match out {
        Some(path) => std::fs::write(path, text.as_bytes())
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Merge the config file (if any) with command-line overrides; flags win.
fn effective_config(
    cli_config: Option<&Path>,
    output_dir: Option<&Path>,
    pcap: Option<&Path>,
    target: &TargetFlags,
    resume: bool,
    restart_every_case: bool,
    test_ids: Option<&[usize]>,
) -> Result<CampaignConfig, CliError> {
    let mut cfg = match cli_config {
        Some(path) => CampaignConfig::load(path).map_err(|e| CliError::Input(e.to_string()))?,
        None => CampaignConfig::default(),
    };
    if let Some(p) = pcap {
        cfg.pcap_path = p.to_path_buf();
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d.to_path_buf();
    }
    if let Some(h) = &target.host {
        cfg.target.host = h.clone();
    }
    if let Some(p) = target.port {
        cfg.target.port = p;
    }
    if let Some(h) = &target.monitor_host {
        cfg.target.monitor_host = h.clone();
    }
    if let Some(p) = target.monitor_port {
        cfg.target.monitor_port = p;
    }
    if let Some(t) = target.response_timeout_ms {
        cfg.target.response_timeout_ms = t;
    }
    if let Some(t) = target.hang_timeout_ms {
        cfg.target.hang_timeout_ms = t;
    }
    if let Some(t) = target.settle_delay_ms {
        cfg.target.settle_delay_ms = t;
    }
    if resume {
        cfg.resume = true;
    }
    if restart_every_case {
        cfg.restart_every_case = true;
    }
    if let Some(ids) = test_ids {
        cfg.test_ids = Some(ids.to_vec());
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

/// Observations from reassembly that belong in the campaign record: the
/// first-seen-wins overlap policy firing, or holes in a stream.
fn corpus_notes(flows: &[TcpFlow], skipped: usize) -> Vec<String> {
    let mut notes = Vec::new();
    if skipped > 0 {
        notes.push(format!(
            "skipped {skipped} malformed packets in the capture"
        ));
    }
    for flow in flows {
        for (label, gap, overlap) in [
            ("client", flow.client_gap, flow.client_overlap),
            ("server", flow.server_gap, flow.server_overlap),
        ] {
            if overlap {
                notes.push(format!(
                    "flow {}: overlapping retransmission in the {label} stream (first-seen bytes kept)",
                    flow.key
                ));
            }
            if gap {
                notes.push(format!(
                    "flow {}: sequence gap in the {label} stream",
                    flow.key
                ));
            }
        }
    }
    notes
}

fn plan_from_config(cfg: &CampaignConfig) -> Result<(TestPlan, Vec<String>), CliError> {
    let (flows, skipped) = load_flows(&cfg.pcap_path)?;
    let notes = corpus_notes(&flows, skipped);
    for note in &notes {
        eprintln!("note: {note}");
    }
    Ok((TestPlan::generate(&flows, &cfg.schedules)?, notes))
}

fn cmd_generate(cfg: &CampaignConfig) -> Result<(), CliError> {
    let (plan, _notes) = plan_from_config(cfg)?;
    let bytes = manifest_to_bytes(&plan);
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", cfg.output_dir.display())))?;
    let path = cfg.output_dir.join("manifest.jsonl");
    std::fs::write(&path, &bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    println!(
        "{} test cases written to {} (sha256 {})",
        plan.cases.len(),
        path.display(),
        manifest_sha256(&bytes)
    );
    Ok(())
}

fn cmd_fuzz(cfg: &CampaignConfig, verbose: bool) -> Result<(), CliError> {
    let (plan, notes) = plan_from_config(cfg)?;
    let manifest_bytes = manifest_to_bytes(&plan);
    let sha = manifest_sha256(&manifest_bytes);

    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", cfg.output_dir.display())))?;
    let manifest_path = cfg.output_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, &manifest_bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", manifest_path.display())))?;
    let status_path = cfg.output_dir.join("status.jsonl");

    let mut opts = CampaignOptions {
        restart_every_case: cfg.restart_every_case,
        verbose,
        ..CampaignOptions::default()
    };
    if let Some(ids) = &cfg.test_ids {
        opts.test_ids = Some(ids.iter().copied().collect::<BTreeSet<_>>());
    }

    let resuming = cfg.resume && status_path.exists();
    let mut appender = if resuming {
        let (header, lines) = read_status(&status_path)?;
        if header.manifest_sha256 != sha {
            return Err(InjectError::ResumeManifestMismatch {
                recorded: header.manifest_sha256,
                current: sha,
            }
            .into());
        }
        opts.already_done = lines.iter().map(|l| l.test_id).collect();
        let total = opts
            .test_ids
            .as_ref()
            .map(|f| f.len())
            .unwrap_or(plan.cases.len());
        let remaining = plan
            .cases
            .iter()
            .filter(|tc| !opts.already_done.contains(&tc.test_id))
            .filter(|tc| {
                opts.test_ids
                    .as_ref()
                    .is_none_or(|f| f.contains(&tc.test_id))
            })
            .count();
        eprintln!(
            "resuming campaign {}: {} of {} outcomes recorded, {} to go",
            header.campaign_id,
            opts.already_done.len(),
            total,
            remaining
        );
        if remaining == 0 {
            println!("campaign already complete: {}", status_path.display());
            return Ok(());
        }
        StatusAppender::append_to(&status_path)?
    } else {
        let header = StatusHeader {
            campaign_id: campaign_id(&sha, &cfg.target),
            pcap: cfg.pcap_path.display().to_string(),
            target: cfg.target.clone(),
            schedules: cfg.schedules.clone(),
            started_at: unix_millis(),
            testcase_count: plan.cases.len(),
            manifest_sha256: sha.clone(),
            corpus_notes: notes,
        };
        StatusAppender::create(&status_path, &header)?
    };

    let mut monitor = MonitorClient::connect(&cfg.target.monitor_host, cfg.target.monitor_port)?;
    let outcomes = run_campaign(&plan, &cfg.target, &mut monitor, &mut appender, &opts)?;

    let mut counts = std::collections::BTreeMap::new();
    for o in &outcomes {
        *counts
            .entry(format!("{:?}", o.verdict).to_uppercase())
            .or_insert(0usize) += 1;
    }
    let summary = counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "executed {} test cases ({summary}); status: {}",
        outcomes.len(),
        status_path.display()
    );
    Ok(())
}

fn cmd_report(manifest_path: &Path, status_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let manifest_bytes = std::fs::read(manifest_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", manifest_path.display())))?;
    let manifest = read_manifest(&manifest_bytes[..])
        .map_err(|e| CliError::Input(format!("{}: {e}", manifest_path.display())))?;
    let sha = manifest_sha256(&manifest_bytes);
    let (header, outcomes) = read_status(status_path)?;

    let report = build_report(&manifest, &sha, &header, &outcomes)?;
    let text = render_text(&report);

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;
    let json_path = out_dir.join("report.json");
    let txt_path = out_dir.join("report.txt");
    let mut json = serde_json::to_vec_pretty(&report).expect("serializable report");
    json.push(b'\n');
    std::fs::write(&json_path, json)
        .map_err(|e| CliError::Input(format!("{}: {e}", json_path.display())))?;
    std::fs::write(&txt_path, text.as_bytes())
        .map_err(|e| CliError::Input(format!("{}: {e}", txt_path.display())))?;
    println!(
        "{} findings ({} crash, {} hang) out of {} executed; report: {} / {}",
        report.summary.findings,
        report.summary.totals.crash,
        report.summary.totals.hang,
        report.summary.executed,
        json_path.display(),
        txt_path.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Extract { pcap, out } => cmd_extract(pcap, out.as_deref()),
        Command::Generate { pcap } => {
            let cfg = effective_config(
                cli.config.as_deref(),
                cli.output_dir.as_deref(),
                pcap.as_deref(),
                &TargetFlags::default(),
                false,
                false,
                None,
            )?;
            cmd_generate(&cfg)
        }
        Command::Fuzz {
            pcap,
            target,
            resume,
            restart_every_case,
            test_ids,
        } => {
            let cfg = effective_config(
                cli.config.as_deref(),
                cli.output_dir.as_deref(),
                pcap.as_deref(),
                target,
                *resume,
                *restart_every_case,
                test_ids.as_deref(),
            )?;
            cmd_fuzz(&cfg, cli.verbose)
        }
        Command::Report { manifest, status } => {
            let out_dir = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out"));
            cmd_report(manifest, status, &out_dir)
        }
        Command::Monitor {
            bind,
            port,
            target_cmd,
        } => capfuzz::monitor::serve_control(bind, *port, target_cmd)
            .map_err(|e| CliError::Input(e.to_string())),
        Command::Victim {
            bind,
            port,
            fault_overflow,
            overflow_threshold,
            fault_format,
            fault_integer,
        } => {
            let faults = FaultConfig {
                fault_overflow: *fault_overflow,
                overflow_threshold: *overflow_threshold,
                fault_format: *fault_format,
                fault_integer: *fault_integer,
            };
            serve_ftp_subset(bind, *port, &faults).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
