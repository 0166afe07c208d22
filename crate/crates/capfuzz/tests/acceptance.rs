//! Acceptance suite: one test per criterion, printing a PASS line each.
//!
//! Live criteria drive the real binaries (monitor supervising the victim,
//! campaigns run through `capfuzz fuzz`) on loopback with short timeouts;
//! the rest run in-process against the frozen fixtures and the independent
//! enumeration oracle (tests/fixtures/testcase_oracle.json, produced by
//! scripts/enumerate_testcases.py).

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capfuzz::flow::assemble_flows;
use capfuzz::payload::{string_overflow_schedule, Payload, PayloadClass, DEFAULT_STRING_LENGTHS};
use capfuzz::pcap::{decode_capture, parse_capture};
use capfuzz::testcase::{render_mutated_message, ScheduleConfig, TestCase, TestPlan};
use capfuzz::util::printable;

use common::*;

fn oracle() -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(fixture("testcase_oracle.json")).unwrap()).unwrap()
}

fn campaign_pcap() -> PathBuf {
    fixture("campaign_session.pcap")
}

/// Run `capfuzz fuzz` against a fresh monitor+victim pair; returns the output
/// directory holding manifest.jsonl and status.jsonl.
struct LiveCampaign {
    dir: tempfile::TempDir,
    _monitor: Guard,
    monitor_port: u16,
    victim_port: u16,
}

impl LiveCampaign {
    fn start(faults: &str) -> LiveCampaign {
        let monitor_port = alloc_port();
        let victim_port = alloc_port();
        let monitor = spawn_monitor(monitor_port, &victim_cmd(victim_port, faults));
        assert!(wait_for_port(monitor_port, Duration::from_secs(5)));
        assert!(wait_for_port(victim_port, Duration::from_secs(5)));
        LiveCampaign {
            dir: tempfile::tempdir().unwrap(),
            _monitor: monitor,
            monitor_port,
            victim_port,
        }
    }

    fn fuzz_args(&self, extra: &[&str]) -> Vec<String> {
        let mut args: Vec<String> = [
            "fuzz",
            "--pcap",
            campaign_pcap().to_str().unwrap(),
            "--output-dir",
            self.dir.path().to_str().unwrap(),
            "--host",
            "127.0.0.1",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend([
            "--port".into(),
            self.victim_port.to_string(),
            "--monitor-host".into(),
            "127.0.0.1".into(),
            "--monitor-port".into(),
            self.monitor_port.to_string(),
            "--response-timeout-ms".into(),
            "300".into(),
            "--hang-timeout-ms".into(),
            "1000".into(),
            "--settle-delay-ms".into(),
            "300".into(),
        ]);
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    }

    fn run_fuzz(&self, extra: &[&str]) -> std::process::Output {
        Command::new(capfuzz_bin())
            .args(self.fuzz_args(extra))
            .output()
            .unwrap()
    }

    fn status_path(&self) -> PathBuf {
        self.dir.path().join("status.jsonl")
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.path().join("manifest.jsonl")
    }

    /// (test_id, verdict, monitor_status) per outcome line.
    fn verdicts(&self) -> Vec<(u64, String, String)> {
        read_jsonl(&self.status_path())[1..]
            .iter()
            .map(|l| {
                (
                    l["test_id"].as_u64().unwrap(),
                    l["verdict"].as_str().unwrap().to_string(),
                    l["monitor_status"].as_str().unwrap().to_string(),
                )
            })
            .collect()
    }
}

const ALL_FAULTS: &str = "--fault-overflow --fault-format --fault-integer";

#[test]
fn criterion_1_end_to_end_seeded_bug_detection() {
    let campaign = LiveCampaign::start(ALL_FAULTS);
    let t0 = Instant::now();
    let out = campaign.run_fuzz(&[]);
    assert!(
        out.status.success(),
        "fuzz failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runtime = t0.elapsed();
    assert!(
        runtime < Duration::from_secs(120),
        "campaign took {runtime:?}, budget 2 min with CI timeouts"
    );

    // Verdict-by-verdict agreement with the independent enumeration oracle.
    let oracle = oracle();
    let cases = oracle["cases"].as_array().unwrap();
    let verdicts = campaign.verdicts();
    assert_eq!(verdicts.len(), cases.len());
    for (id, verdict, _) in &verdicts {
        let expected = cases[*id as usize]["verdict_faults_on"].as_str().unwrap();
        assert_eq!(verdict, expected, "test {id}");
    }

    // Strict sequentiality, read back from the status file: each outcome
    // starts no earlier than its predecessor ended.
    let lines = read_jsonl(&campaign.status_path());
    for pair in lines[1..].windows(2) {
        assert!(
            pair[1]["started_ms"].as_u64().unwrap() >= pair[0]["ended_ms"].as_u64().unwrap(),
            "overlapping outcomes: {pair:?}"
        );
    }

    // Report: all three fault classes detected.
    let report_out = Command::new(capfuzz_bin())
        .args([
            "report",
            "--manifest",
            campaign.manifest_path().to_str().unwrap(),
            "--status",
            campaign.status_path().to_str().unwrap(),
            "--output-dir",
            campaign.dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(report_out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(campaign.dir.path().join("report.json")).unwrap())
            .unwrap();
    let findings = report["findings"].as_array().unwrap();
    let has = |verdict: &str, class: &str| {
        findings
            .iter()
            .any(|f| f["verdict"] == verdict && f["payload"]["class"] == class)
    };
    assert!(has("CRASH", "string_overflow"), "no string_overflow crash");
    assert!(has("HANG", "format_string"), "no format_string hang");
    assert!(
        has("CRASH", "integer_boundary"),
        "no integer_boundary crash"
    );
    assert!(report["summary"]["first_crash_test_id"] == oracle["first_crash_test_id"]);

    // Every finding reproduces from pcap + test_id alone: regenerate the
    // plan, re-render the mutated message, and check it embeds the payload
    // the finding records.
    let bytes = std::fs::read(campaign_pcap()).unwrap();
    let capture = parse_capture(&bytes).unwrap();
    let (segments, _) = decode_capture(&capture);
    let flows = assemble_flows(&segments).unwrap();
    let plan = TestPlan::generate(&flows, &ScheduleConfig::default()).unwrap();
    for f in findings {
        let id = f["test_id"].as_u64().unwrap() as usize;
        let tc = &plan.cases[id];
        assert_eq!(
            tc.payload.len() as u64,
            f["payload"]["length"].as_u64().unwrap()
        );
        let rendered = plan.render(tc).unwrap();
        let expected_payload =
            Payload::from_label(tc.payload.class, f["payload"]["label"].as_str().unwrap())
                .unwrap()
                .to_bytes();
        assert_eq!(
            &rendered[tc.field.start..tc.field.start + expected_payload.len()],
            &expected_payload[..],
            "finding {id} does not re-render"
        );
        if let Some(inline) = f["reproduction"]["payload_bytes"].as_str() {
            assert_eq!(inline, printable(&expected_payload));
        }
    }

    println!(
        "ACCEPTANCE 1 (end-to-end seeded-bug detection, 3/3 fault classes, {} findings, {:.1}s): PASS",
        findings.len(),
        runtime.as_secs_f64()
    );
}

#[test]
fn criterion_2_zero_false_positives_with_faults_off() {
    let campaign = LiveCampaign::start("");
    let out = campaign.run_fuzz(&[]);
    assert!(
        out.status.success(),
        "fuzz failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let verdicts = campaign.verdicts();
    assert_eq!(verdicts.len(), 150);
    let non_ok: Vec<_> = verdicts.iter().filter(|(_, v, _)| v != "OK").collect();
    assert!(non_ok.is_empty(), "false positives: {non_ok:?}");
    println!(
        "ACCEPTANCE 2 (zero false positives: {}/150 OK): PASS",
        verdicts.len()
    );
}

#[test]
fn criterion_3_payload_schedule_fidelity() {
    let payloads = string_overflow_schedule(&DEFAULT_STRING_LENGTHS).unwrap();
    let lengths: Vec<usize> = payloads.iter().map(|p| p.len()).collect();
    // The named problem lengths, every one present.
    for named in [127, 128, 255, 32767, 32769, 65535, 65536] {
        assert!(lengths.contains(&named), "schedule misses {named}");
    }
    // And the full default list, in order.
    assert_eq!(
        lengths,
        vec![127, 128, 255, 256, 32767, 32768, 32769, 65535, 65536]
    );
    println!("ACCEPTANCE 3 (payload schedule carries the named lengths): PASS");
}

#[test]
fn criterion_4_determinism_of_generate_and_campaigns() {
    // Byte-identical manifests from two generate runs.
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let out = Command::new(capfuzz_bin())
            .args([
                "generate",
                "--pcap",
                campaign_pcap().to_str().unwrap(),
                "--output-dir",
                dir.path().to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let a = std::fs::read(dirs[0].path().join("manifest.jsonl")).unwrap();
    let b = std::fs::read(dirs[1].path().join("manifest.jsonl")).unwrap();
    assert_eq!(a, b, "generate runs must be byte-identical");

    // Identical verdict sequences from two full campaign runs.
    let first = LiveCampaign::start(ALL_FAULTS);
    assert!(first.run_fuzz(&[]).status.success());
    let second = LiveCampaign::start(ALL_FAULTS);
    assert!(second.run_fuzz(&[]).status.success());
    let va = first.verdicts();
    let vb = second.verdicts();
    assert_eq!(
        va, vb,
        "verdict sequences differ between identical campaigns"
    );
    println!(
        "ACCEPTANCE 4 (byte-identical manifests; {} identical verdicts across runs): PASS",
        va.len()
    );
}

#[test]
fn criterion_5_reassembly_matches_oracle_on_randomized_captures() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EEDCA9);
    let mut captures = 0;
    for round in 0..120 {
        // 1-4 sessions with randomized endpoints, ISNs and exchanges.
        let n_sessions = rng.gen_range(1..=4);
        let mut specs = Vec::new();
        for s in 0..n_sessions {
            let mut exchanges = Vec::new();
            for _ in 0..rng.gen_range(1..=8) {
                let from_client = rng.gen_bool(0.5);
                let len = rng.gen_range(1..=40);
                let mut payload = vec![0u8; len];
                rng.fill(&mut payload[..]);
                exchanges.push((from_client, payload));
            }
            specs.push(SessionSpec {
                client: (
                    (10, 1, round as u8, s as u8 + 1),
                    rng.gen_range(1024..60000),
                ),
                server: ((10, 2, round as u8, s as u8 + 1), rng.gen_range(1..1024)),
                client_isn: rng.gen(),
                server_isn: rng.gen(),
                exchanges,
            });
        }

        // In-order interleaved capture.
        let mut frames: Vec<Vec<u8>> = Vec::new();
        let per_session: Vec<Vec<Vec<u8>>> = specs.iter().map(|s| s.frames()).collect();
        let mut cursors = vec![0usize; per_session.len()];
        while cursors.iter().zip(&per_session).any(|(c, f)| *c < f.len()) {
            let pick = rng.gen_range(0..per_session.len());
            if cursors[pick] < per_session[pick].len() {
                frames.push(per_session[pick][cursors[pick]].clone());
                cursors[pick] += 1;
            }
        }

        let assemble = |frames: &[Vec<u8>], big_endian: bool| {
            let mut writer = PcapWriter::new(big_endian);
            for (i, f) in frames.iter().enumerate() {
                writer.record(1_700_000_000 + i as u32, (i * 17) as u32 % 1_000_000, f);
            }
            let capture = parse_capture(&writer.finish()).unwrap();
            let (segments, malformed) = decode_capture(&capture);
            assert_eq!(malformed, 0);
            assemble_flows(&segments).unwrap()
        };

        let in_order = assemble(&frames, rng.gen_bool(0.2));
        assert_eq!(in_order.len(), specs.len());
        for spec in &specs {
            let (want_client, want_server) = spec.expected_streams();
            let flow = in_order
                .iter()
                .find(|f| f.key.client_port == spec.client.1 && f.key.server_port == spec.server.1)
                .expect("flow missing");
            assert_eq!(flow.client_stream, want_client, "round {round}");
            assert_eq!(flow.server_stream, want_server, "round {round}");
            assert!(flow.handshake_seen);
        }

        // Out-of-order permutation of the same capture: streams unchanged.
        let mut shuffled = frames.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let permuted = assemble(&shuffled, rng.gen_bool(0.2));
        for spec in &specs {
            let (want_client, want_server) = spec.expected_streams();
            let flow = permuted
                .iter()
                .find(|f| f.key.client_port == spec.client.1 && f.key.server_port == spec.server.1)
                .expect("flow missing after permutation");
            assert_eq!(flow.client_stream, want_client, "round {round} permuted");
            assert_eq!(flow.server_stream, want_server, "round {round} permuted");
        }
        captures += 1;
    }
    assert!(captures >= 100);
    println!("ACCEPTANCE 5 (reassembly oracle equivalence over {captures} captures, in-order and permuted): PASS");
}

#[test]
fn criterion_6_splice_inverse_on_the_fixture_corpus() {
    let bytes = std::fs::read(campaign_pcap()).unwrap();
    let capture = parse_capture(&bytes).unwrap();
    let (segments, _) = decode_capture(&capture);
    let flows = assemble_flows(&segments).unwrap();
    let plan = TestPlan::generate(&flows, &ScheduleConfig::default()).unwrap();

    let mut checked = BTreeSet::new();
    for tc in &plan.cases {
        if !checked.insert((tc.message_index, tc.field.field_index)) {
            continue;
        }
        let original = plan.original_message(tc);
        let identity = TestCase {
            payload: Payload::from_label(
                PayloadClass::StringOverflow,
                &printable(&tc.field.original_bytes),
            )
            .unwrap(),
            ..tc.clone()
        };
        let rendered = render_mutated_message(&identity, original).unwrap();
        assert_eq!(
            rendered, original.bytes,
            "splice inverse failed on message {} field {}",
            tc.message_index, tc.field.field_index
        );
    }
    assert_eq!(checked.len(), 11, "fixture corpus has 11 fields");
    println!(
        "ACCEPTANCE 6 (splice inverse over {} fixture fields): PASS",
        checked.len()
    );
}

#[test]
fn criterion_7_monitor_correctness_and_control_fuzz() {
    let control_port = alloc_port();
    let victim_port = alloc_port();
    let _monitor = spawn_monitor(control_port, &victim_cmd(victim_port, "--fault-overflow"));
    assert!(wait_for_port(control_port, Duration::from_secs(5)));
    assert!(wait_for_port(victim_port, Duration::from_secs(5)));
    let mut ctl = std::net::TcpStream::connect(("127.0.0.1", control_port)).unwrap();
    ctl.set_read_timeout(Some(Duration::from_secs(10))).unwrap();

    // Scripted sequence with an external child kill in the middle.
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK RUNNING");
    {
        use std::io::{Read, Write};
        let mut victim = std::net::TcpStream::connect(("127.0.0.1", victim_port)).unwrap();
        victim
            .set_read_timeout(Some(Duration::from_secs(5)))
            .unwrap();
        let mut banner = [0u8; 64];
        let _ = victim.read(&mut banner);
        victim
            .write_all(format!("USER {}\r\n", "A".repeat(400)).as_bytes())
            .unwrap();
        let mut buf = [0u8; 8];
        let _ = victim.read(&mut buf); // EOF: the child aborted
    }
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK DOWN signaled");
    assert_eq!(control_roundtrip(&mut ctl, b"RESTART"), "OK RESTARTED 1");
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK RUNNING");
    assert_eq!(control_roundtrip(&mut ctl, b"KILL"), "OK KILLED");
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK DOWN signaled");
    assert_eq!(control_roundtrip(&mut ctl, b"RESTART"), "OK RESTARTED 2");
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK RUNNING");

    // 1,000 random control lines: the agent answers every one and stays
    // truthful afterwards. Real verbs are excluded from the fuzz input.
    let mut rng = ChaCha8Rng::seed_from_u64(0xC017B01);
    let mut fuzzed = 0;
    while fuzzed < 1000 {
        let len = rng.gen_range(0..200);
        let mut line: Vec<u8> = (0..len).map(|_| rng.gen::<u8>()).collect();
        line.retain(|&b| b != b'\n');
        if matches!(line.as_slice(), b"STATUS" | b"RESTART" | b"KILL") {
            continue;
        }
        use std::io::Write;
        ctl.write_all(&line).unwrap();
        ctl.write_all(b"\n").unwrap();
        let reply = {
            use std::io::Read;
            let mut reply = Vec::new();
            let mut byte = [0u8; 1];
            loop {
                match ctl.read(&mut byte) {
                    Ok(0) => panic!("agent dropped the control connection"),
                    Ok(_) if byte[0] == b'\n' => break,
                    Ok(_) => reply.push(byte[0]),
                    Err(e) => panic!("agent stopped answering after {fuzzed} lines: {e}"),
                }
            }
            reply
        };
        assert!(
            reply.starts_with(b"OK ") || reply.starts_with(b"ERR"),
            "malformed reply {:?}",
            String::from_utf8_lossy(&reply)
        );
        fuzzed += 1;
    }
    assert_eq!(control_roundtrip(&mut ctl, b"STATUS"), "OK RUNNING");
    println!("ACCEPTANCE 7 (monitor lifecycle + {fuzzed} fuzz lines survived): PASS");
}

#[test]
fn criterion_8_resumability_equals_uninterrupted_run() {
    // Uninterrupted reference run.
    let reference = LiveCampaign::start(ALL_FAULTS);
    assert!(reference.run_fuzz(&[]).status.success());
    let want = reference.verdicts();

    // Interrupted run: kill the campaign once k outcomes are recorded.
    let interrupted = LiveCampaign::start(ALL_FAULTS);
    let mut child = Command::new(capfuzz_bin())
        .args(interrupted.fuzz_args(&[]))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let k = 30;
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        assert!(
            Instant::now() < deadline,
            "campaign never reached {k} outcomes"
        );
        if interrupted.status_path().exists() {
            let n = std::fs::read_to_string(interrupted.status_path())
                .unwrap_or_default()
                .lines()
                .count();
            if n > k {
                break;
            }
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    let _ = child.wait();
    let partial = read_jsonl(&interrupted.status_path()).len() - 1;
    assert!(partial >= k, "only {partial} outcomes before the kill");
    assert!(
        partial < want.len(),
        "campaign finished before the kill; pick a smaller k"
    );

    // Resume and compare: same verdicts, same order, one line per test.
    let out = interrupted.run_fuzz(&["--resume"]);
    assert!(
        out.status.success(),
        "resume failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let got = interrupted.verdicts();
    assert_eq!(got, want, "resumed status differs from uninterrupted run");

    // Resuming a complete campaign performs no further injection.
    let again = interrupted.run_fuzz(&["--resume"]);
    assert!(again.status.success());
    assert!(
        String::from_utf8_lossy(&again.stdout).contains("already complete"),
        "{}",
        String::from_utf8_lossy(&again.stdout)
    );
    assert_eq!(interrupted.verdicts().len(), want.len());
    println!(
        "ACCEPTANCE 8 (resume after {partial} outcomes reproduces all {} verdicts): PASS",
        want.len()
    );
}

#[test]
fn criterion_9_pcap_parser_robustness_under_mutation() {
    let seed_bytes = std::fs::read(campaign_pcap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0_55_11);
    let mut parsed_ok = 0usize;
    let mut typed_errors = 0usize;
    for _ in 0..10_000 {
        let mut mutated = seed_bytes.clone();
        match rng.gen_range(0..4) {
            0 => {
                // Flip 1-8 random bytes.
                for _ in 0..rng.gen_range(1..=8) {
                    let i = rng.gen_range(0..mutated.len());
                    mutated[i] ^= 1 << rng.gen_range(0..8);
                }
            }
            1 => {
                // Truncate anywhere.
                mutated.truncate(rng.gen_range(0..mutated.len()));
            }
            2 => {
                // Scribble over a 4-byte word (length/timestamp fields).
                let i = rng.gen_range(0..mutated.len().saturating_sub(4));
                let word: [u8; 4] = rng.gen();
                mutated[i..i + 4].copy_from_slice(&word);
            }
            _ => {
                // Append random garbage.
                let extra = rng.gen_range(1..64);
                for _ in 0..extra {
                    mutated.push(rng.gen());
                }
            }
        }
        let result = std::panic::catch_unwind(|| match parse_capture(&mutated) {
            Ok(capture) => {
                let (segments, _) = decode_capture(&capture);
                let _ = assemble_flows(&segments);
                true
            }
            Err(_) => false,
        });
        match result {
            Ok(true) => parsed_ok += 1,
            Ok(false) => typed_errors += 1,
            Err(_) => panic!("parser panicked on mutated input"),
        }
    }
    assert_eq!(parsed_ok + typed_errors, 10_000);
    assert!(typed_errors > 0, "mutations never produced an error?");
    println!(
        "ACCEPTANCE 9 (10,000 mutated captures: {parsed_ok} parsed, {typed_errors} typed errors, 0 panics): PASS"
    );
}
