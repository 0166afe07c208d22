//! Bug-report generation: join campaign outcomes to the test-case manifest
//! and emit per-finding records plus a campaign summary, as JSON for machines
//! and a plain-text digest for people.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TargetConfig;
use crate::flow::FlowKey;
use crate::inject::{MonitorStatus, StatusHeader, StatusLine, Verdict};
use crate::payload::Payload;
use crate::testcase::{FieldRecord, ManifestEntry, PayloadRecord, ScheduleConfig};
use crate::util::printable;

/// Payloads up to this size are inlined into findings; larger ones stay a
/// label-based recipe.
const INLINE_PAYLOAD_MAX: usize = 1024;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
}

/// Everything needed to rebuild one finding's attack by hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reproduction {
    pub pcap: String,
    pub test_id: usize,
    pub manifest_sha256: String,
    /// Payload bytes, escaped, when small enough to inline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<String>,
    pub command: String,
}

/// One confirmed CRASH or HANG.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub test_id: usize,
    pub verdict: Verdict,
    pub flow: FlowKey,
    pub message_index: usize,
    pub field: FieldRecord,
    pub payload: PayloadRecord,
    pub monitor_status: MonitorStatus,
    pub detail: String,
    pub reproduction: Reproduction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictTotals {
    #[serde(rename = "OK")]
    pub ok: usize,
    #[serde(rename = "CRASH")]
    pub crash: usize,
    #[serde(rename = "HANG")]
    pub hang: usize,
    #[serde(rename = "REFUSED")]
    pub refused: usize,
    #[serde(rename = "ERROR")]
    pub error: usize,
}

impl VerdictTotals {
    fn bump(&mut self, v: Verdict) {
        match v {
            Verdict::Ok => self.ok += 1,
            Verdict::Crash => self.crash += 1,
            Verdict::Hang => self.hang += 1,
            Verdict::Refused => self.refused += 1,
            Verdict::Error => self.error += 1,
        }
    }

    pub fn executed(&self) -> usize {
        self.ok + self.crash + self.hang + self.refused + self.error
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldFindings {
    pub message_index: usize,
    pub field_index: usize,
    pub original: String,
    pub crash: usize,
    pub hang: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub target: TargetConfig,
    pub schedules: ScheduleConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign_id: String,
    pub pcap: String,
    pub totals: VerdictTotals,
    pub executed: usize,
    pub findings: usize,
    pub per_field: Vec<FieldFindings>,
    pub first_crash_test_id: Option<usize>,
    pub duration_ms: u64,
    pub config: ConfigEcho,
    /// Reassembly observations echoed from the campaign header.
    pub notes: Vec<String>,
}

/// The whole report document (report.json).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub summary: CampaignSummary,
    pub findings: Vec<Finding>,
}

fn reproduction_command(header: &StatusHeader, test_id: usize) -> String {
    format!(
        "capfuzz fuzz --pcap {} --host {} --port {} --monitor-host {} --monitor-port {} --test-ids {}",
        header.pcap,
        header.target.host,
        header.target.port,
        header.target.monitor_host,
        header.target.monitor_port,
        test_id
    )
}

/// Join outcomes to the manifest and build the report. Both inputs must
/// belong together: the manifest hash recorded in the status header has to
/// match the manifest supplied here, and every outcome must address a known
/// test id.
pub fn build_report(
    manifest: &[ManifestEntry],
    manifest_sha256: &str,
    header: &StatusHeader,
    outcomes: &[StatusLine],
) -> Result<Report, ReportError> {
    if header.manifest_sha256 != manifest_sha256 {
        return Err(ReportError::ManifestMismatch(format!(
            "status file pins manifest {} but the supplied manifest hashes to {}",
            header.manifest_sha256, manifest_sha256
        )));
    }
    let by_id: std::collections::HashMap<usize, &ManifestEntry> =
        manifest.iter().map(|e| (e.test_id, e)).collect();

    let mut totals = VerdictTotals::default();
    let mut findings = Vec::new();
    let mut first_crash_test_id = None;
    for outcome in outcomes {
        let entry = by_id.get(&outcome.test_id).ok_or_else(|| {
            ReportError::ManifestMismatch(format!(
                "outcome for test {} has no manifest entry",
                outcome.test_id
            ))
        })?;
        totals.bump(outcome.verdict);
        if outcome.verdict == Verdict::Crash && first_crash_test_id.is_none() {
            first_crash_test_id = Some(outcome.test_id);
        }
        if !matches!(outcome.verdict, Verdict::Crash | Verdict::Hang) {
            continue;
        }
        let payload_bytes = Payload::from_label(entry.payload.class, &entry.payload.label)
            .ok()
            .filter(|p| p.len() <= INLINE_PAYLOAD_MAX)
            .map(|p| printable(&p.to_bytes()));
        findings.push(Finding {
            test_id: outcome.test_id,
            verdict: outcome.verdict,
            flow: entry.flow,
            message_index: entry.message_index,
            field: entry.field.clone(),
            payload: entry.payload.clone(),
            monitor_status: outcome.monitor_status,
            detail: outcome.detail.clone(),
            reproduction: Reproduction {
                pcap: header.pcap.clone(),
                test_id: outcome.test_id,
                manifest_sha256: manifest_sha256.to_string(),
                payload_bytes,
                command: reproduction_command(header, outcome.test_id),
            },
        });
    }
    findings.sort_by_key(|f| f.test_id);

    let mut per_field: Vec<FieldFindings> = Vec::new();
    for f in &findings {
        let slot = per_field.iter_mut().find(|pf| {
            pf.message_index == f.message_index && pf.field_index == f.field.field_index
        });
        let slot = match slot {
            Some(s) => s,
            None => {
                per_field.push(FieldFindings {
                    message_index: f.message_index,
                    field_index: f.field.field_index,
                    original: f.field.original.clone(),
                    crash: 0,
                    hang: 0,
                });
                per_field.last_mut().unwrap()
            }
        };
        match f.verdict {
            Verdict::Crash => slot.crash += 1,
            Verdict::Hang => slot.hang += 1,
            _ => {}
        }
    }
    per_field.sort_by_key(|pf| (pf.message_index, pf.field_index));

    let duration_ms = match (outcomes.first(), outcomes.last()) {
        (Some(first), Some(last)) => last.ended_ms.saturating_sub(first.started_ms),
        _ => 0,
    };

    let summary = CampaignSummary {
        campaign_id: header.campaign_id.clone(),
        pcap: header.pcap.clone(),
        executed: totals.executed(),
        findings: findings.len(),
        totals,
        per_field,
        first_crash_test_id,
        duration_ms,
        notes: header.corpus_notes.clone(),
        config: ConfigEcho {
            target: header.target.clone(),
            schedules: header.schedules.clone(),
        },
    };

    Ok(Report { summary, findings })
}

/// The human-readable digest (report.txt). Deterministic for identical
/// inputs: no wall-clock text is embedded.
pub fn render_text(report: &Report) -> String {
    let s = &report.summary;
    let mut out = String::new();
    out.push_str(&format!(
        "vulnerability report for campaign {}\n",
        s.campaign_id
    ));
    out.push_str(&format!("capture: {}\n", s.pcap));
    out.push_str(&format!(
        "target: {}:{} (monitor {}:{})\n",
        s.config.target.host,
        s.config.target.port,
        s.config.target.monitor_host,
        s.config.target.monitor_port
    ));
    out.push_str(&format!(
        "executed {} test cases in {} ms: {} ok, {} crash, {} hang, {} refused, {} error\n",
        s.executed,
        s.duration_ms,
        s.totals.ok,
        s.totals.crash,
        s.totals.hang,
        s.totals.refused,
        s.totals.error
    ));
    if let Some(id) = s.first_crash_test_id {
        out.push_str(&format!("first crash at test {id}\n"));
    }
    for note in &s.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out.push('\n');

    if report.findings.is_empty() {
        out.push_str("no findings: every executed test case came back OK.\n");
        return out;
    }
    out.push_str(&format!("{} findings\n\n", report.findings.len()));
    for (i, f) in report.findings.iter().enumerate() {
        out.push_str(&format!(
            "[{}] {} test {}  flow {}  message {} field {} ({} \"{}\")\n",
            i + 1,
            json_name(&f.verdict),
            f.test_id,
            f.flow,
            f.message_index,
            f.field.field_index,
            json_name(&f.field.field_type),
            f.field.original,
        ));
        out.push_str(&format!(
            "    payload: {} {} ({} bytes)\n",
            json_name(&f.payload.class),
            f.payload.label,
            f.payload.length
        ));
        out.push_str(&format!(
            "    monitor: {}  detail: {}\n",
            json_name(&f.monitor_status),
            f.detail
        ));
        out.push_str(&format!("    repro: {}\n\n", f.reproduction.command));
    }
    out
}

/// The serde rename of a unit enum variant, shared vocabulary with the JSON
/// outputs ("CRASH", "string_overflow", ...).
fn json_name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}
