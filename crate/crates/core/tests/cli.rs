//! End-to-end tests of the `bicnet` command line: the whole
//! hash -> inspect -> issue -> upload -> serve -> attest -> decide flow
//! driven through real processes.

mod common;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use bicnet_core::bundle_io;

fn bicnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bicnet"))
}

fn run(args: &[&str]) -> Output {
    bicnet().args(args).output().expect("bicnet runs")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stdout);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {text}");
    })
}

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Write a small bundle directory and return its path.
fn write_bundle(dir: &Path, unit: &str, extra: &str) -> PathBuf {
    use bicnet_core::model::{Component, FirmwareBundle};
    let bundle = FirmwareBundle::new(
        format!("{unit}-fw"),
        "1.0",
        "web-server",
        vec![
            Component::new("app", format!("serve cap:http-serve {extra} unit:{unit}").into_bytes())
                .with_supplier("acme-parts"),
            Component::new("boot", format!("bootloader unit:{unit}").into_bytes()),
        ],
    )
    .unwrap();
    let path = dir.join(unit);
    bundle_io::write_dir(&bundle, &path).unwrap();
    path
}

fn write_profiles(dir: &Path) -> PathBuf {
    let path = dir.join("profiles.json");
    std::fs::write(
        &path,
        r#"[{"class_name":"web-server","expected_capabilities":["http-serve"],
             "forbidden_capabilities":["telnet-shell","debug-shell"]}]"#,
    )
    .unwrap();
    path
}

fn write_patterns(dir: &Path) -> PathBuf {
    let path = dir.join("patterns.json");
    // "admin_password=" as hex
    std::fs::write(&path, format!("[\"{}\"]", hex::encode(b"admin_password="))).unwrap();
    path
}

#[test]
fn usage_error_exits_2() {
    let output = run(&["hash", "--no-such-flag"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn hash_is_deterministic_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write_bundle(dir.path(), "h1", "");
    let a = run(&["hash", "--bundle", bundle.to_str().unwrap()]);
    let b = run(&["hash", "--bundle", bundle.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let json = stdout_json(&a);
    assert_eq!(json["component_digests"][0][0], "app");
    assert_eq!(json["aggregate"].as_str().unwrap().len(), 64);
}

#[test]
fn hash_missing_bundle_exits_1_with_error_json() {
    let output = run(&["hash", "--bundle", "/nonexistent/place"]);
    assert_eq!(output.status.code(), Some(1));
    let json = stdout_json(&output);
    assert_eq!(json["error"], "ParseError");
    assert!(json["detail"].is_string());
}

#[test]
fn inspect_issue_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write_bundle(dir.path(), "rt", "");
    let profiles = write_profiles(dir.path());
    let patterns = write_patterns(dir.path());
    let report = dir.path().join("report.json");
    let key = dir.path().join("org.key.json");
    let cert = dir.path().join("cert.json");
    let trust = dir.path().join("trust.json");

    let out = run(&[
        "keygen", "org", "--org", "good-lab", "--key-id", "k1",
        "--out", key.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let keyinfo = stdout_json(&out);
    std::fs::write(
        &trust,
        format!(
            r#"{{"good-lab":[{{"key_id":"k1","public_key_hex":"{}"}}]}}"#,
            keyinfo["public_key_hex"].as_str().unwrap()
        ),
    )
    .unwrap();

    let out = run(&[
        "inspect",
        "--bundle", bundle.to_str().unwrap(),
        "--patterns", patterns.to_str().unwrap(),
        "--profiles", profiles.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report_json = stdout_json(&out);
    assert_eq!(report_json["entries"].as_array().unwrap().len(), 5);

    let out = run(&[
        "issue",
        "--bundle", bundle.to_str().unwrap(),
        "--entries", report.to_str().unwrap(),
        "--key", key.to_str().unwrap(),
        "--engineer", "j.doe",
        "--include-supply-chain",
        "--issued-at", "1700000000",
        "--out", cert.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    let out = run(&[
        "verify-cert",
        "--cert", cert.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let verdict = stdout_json(&out);
    assert_eq!(verdict["valid"], true);
    assert_eq!(verdict["inspector_org"], "good-lab");
}

#[test]
fn verify_cert_rejects_tampering_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write_bundle(dir.path(), "vt", "");
    let profiles = write_profiles(dir.path());
    let report = dir.path().join("report.json");
    let key = dir.path().join("org.key.json");
    let cert_path = dir.path().join("cert.json");
    let trust = dir.path().join("trust.json");

    let out = run(&["keygen", "org", "--org", "good-lab", "--out", key.to_str().unwrap()]);
    let keyinfo = stdout_json(&out);
    std::fs::write(
        &trust,
        format!(
            r#"{{"good-lab":[{{"key_id":"k1","public_key_hex":"{}"}}]}}"#,
            keyinfo["public_key_hex"].as_str().unwrap()
        ),
    )
    .unwrap();
    run(&[
        "inspect",
        "--bundle", bundle.to_str().unwrap(),
        "--profiles", profiles.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]);
    run(&[
        "issue",
        "--bundle", bundle.to_str().unwrap(),
        "--entries", report.to_str().unwrap(),
        "--key", key.to_str().unwrap(),
        "--out", cert_path.to_str().unwrap(),
    ]);

    // Tamper: change the recorded bundle version inside the signed body.
    let text = std::fs::read_to_string(&cert_path).unwrap();
    std::fs::write(&cert_path, text.replace("\"1.0\"", "\"6.6\"")).unwrap();

    let out = run(&[
        "verify-cert",
        "--cert", cert_path.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let json = stdout_json(&out);
    assert_eq!(json["error"], "InvalidSignature");
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn_ready(args: &[&str]) -> (ChildGuard, serde_json::Value) {
    let mut child = bicnet()
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("daemon spawns");
    let stdout = child.stdout.take().unwrap();
    let ready = BufReader::new(stdout)
        .lines()
        .next()
        .expect("ready line")
        .expect("readable");
    let json: serde_json::Value = serde_json::from_str(&ready).expect("ready JSON");
    (ChildGuard(child), json)
}

/// The full CLI flow: keygen, inspect, issue, serve, upload, verifierd,
/// prover — admission decided over real processes and sockets.
#[test]
fn full_cli_flow_allows_clean_device() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = write_bundle(dir.path(), "flow", "");
    let profiles = write_profiles(dir.path());
    let patterns = write_patterns(dir.path());
    let report = dir.path().join("report.json");
    let org_key = dir.path().join("org.key.json");
    let cert = dir.path().join("cert.json");
    let trust = dir.path().join("trust.json");
    let identity = dir.path().join("device.json");
    let registry = dir.path().join("registry.json");
    let policy = dir.path().join("policy.json");
    let audit = dir.path().join("audit.jsonl");
    let store = dir.path().join("certs.jsonl");

    // Keys, trust store, device registry, policy.
    let keyinfo = stdout_json(&run(&[
        "keygen", "org", "--org", "good-lab", "--out", org_key.to_str().unwrap(),
    ]));
    std::fs::write(
        &trust,
        format!(
            r#"{{"good-lab":[{{"key_id":"k1","public_key_hex":"{}"}}]}}"#,
            keyinfo["public_key_hex"].as_str().unwrap()
        ),
    )
    .unwrap();
    let devinfo = stdout_json(&run(&[
        "keygen", "device", "--device-id", "cam-1", "--out", identity.to_str().unwrap(),
    ]));
    std::fs::write(
        &registry,
        format!(
            r#"{{"cam-1":"{}"}}"#,
            devinfo["public_key_hex"].as_str().unwrap()
        ),
    )
    .unwrap();
    std::fs::write(
        &policy,
        r#"{"trusted_orgs":["good-lab"],
            "required_backdoor_types":["auth-bypass","hidden-credential"],
            "required_algorithms":[{"algorithm":"credential-scan@1"}]}"#,
    )
    .unwrap();

    // Inspect and issue.
    run(&[
        "inspect",
        "--bundle", bundle.to_str().unwrap(),
        "--patterns", patterns.to_str().unwrap(),
        "--profiles", profiles.to_str().unwrap(),
        "--out", report.to_str().unwrap(),
    ]);
    let out = run(&[
        "issue",
        "--bundle", bundle.to_str().unwrap(),
        "--entries", report.to_str().unwrap(),
        "--key", org_key.to_str().unwrap(),
        "--include-supply-chain",
        "--out", cert.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    // Certificate server + upload.
    let (_server, ready) = spawn_ready(&[
        "serve",
        "--listen", "127.0.0.1:0",
        "--store", store.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    let server_url = format!("http://{}", ready["listening"].as_str().unwrap());
    let out = run(&["upload", "--server", &server_url, "--cert", cert.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["status"], "stored");

    // Verifier daemon.
    let (_verifier, ready) = spawn_ready(&[
        "verifierd",
        "--listen", "127.0.0.1:0",
        "--cert-server", &server_url,
        "--policy", policy.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
        "--device-registry", registry.to_str().unwrap(),
        "--audit-log", audit.to_str().unwrap(),
    ]);
    let verifier_addr = ready["listening"].as_str().unwrap().to_string();

    // Honest prover is admitted.
    let out = run(&[
        "prover",
        "--bundle", bundle.to_str().unwrap(),
        "--identity", identity.to_str().unwrap(),
        "--connect", &verifier_addr,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let decision = stdout_json(&out);
    assert_eq!(decision["outcome"], "allow");

    // Tampering prover is denied with ATTESTATION.
    let out = run(&[
        "prover",
        "--bundle", bundle.to_str().unwrap(),
        "--identity", identity.to_str().unwrap(),
        "--connect", &verifier_addr,
        "--tamper", "log",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let decision = stdout_json(&out);
    assert_eq!(decision["outcome"], "deny");
    assert_eq!(decision["reasons"][0], "ATTESTATION");

    // The audit log recorded both sessions.
    let audit_text = std::fs::read_to_string(&audit).unwrap();
    assert_eq!(audit_text.lines().count(), 2);
}

#[test]
fn serve_refuses_occupied_port_and_corrupt_store() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("trust.json"), "{}").unwrap();
    let trust = dir.path().join("trust.json");
    let store = dir.path().join("certs.jsonl");

    let (_server, ready) = spawn_ready(&[
        "serve",
        "--listen", "127.0.0.1:0",
        "--store", store.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    let addr = ready["listening"].as_str().unwrap();

    // Same port again: BindFailure, exit 1.
    let out = run(&[
        "serve",
        "--listen", addr,
        "--store", dir.path().join("other.jsonl").to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["error"], "BindFailure");

    // Corrupt journal: CorruptStore, refused.
    let corrupt = dir.path().join("corrupt.jsonl");
    std::fs::write(&corrupt, "garbage\n").unwrap();
    let out = run(&[
        "serve",
        "--listen", "127.0.0.1:0",
        "--store", corrupt.to_str().unwrap(),
        "--trust-store", trust.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["error"], "CorruptStore");
}

#[test]
fn scenario_cli_is_deterministic_and_gates_exit_code() {
    let matrix = fixture_path("admission_matrix.json");
    let a = run(&["scenario", "--file", matrix.to_str().unwrap()]);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stdout)
    );
    let b = run(&["scenario", "--file", matrix.to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout, "same scenario + seed must print identical reports");
    let report = stdout_json(&a);
    assert_eq!(report["pass"], true);
    assert_eq!(report["scenario"], "admission-matrix");

    // Flip one expectation: report fails, exit code 1.
    let dir = tempfile::tempdir().unwrap();
    let mut scenario: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&matrix).unwrap()).unwrap();
    scenario["expected"][0] = serde_json::json!({"outcome": "deny"});
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, scenario.to_string()).unwrap();
    let out = run(&["scenario", "--file", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout_json(&out);
    assert_eq!(report["pass"], false);
    assert_eq!(report["results"][0]["pass"], false);
}

#[test]
fn scenario_parse_error_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"seed\": 1}").unwrap();
    let out = run(&["scenario", "--file", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["error"], "ScenarioParseError");
}

#[test]
fn inline_bundle_format_accepted_with_flag() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = write_bundle(dir.path(), "inl", "");
    let loaded = bundle_io::load_dir(&bundle_dir).unwrap();
    let inline = bundle_io::InlineBundle::from_bundle(&loaded);
    let inline_path = dir.path().join("bundle.json");
    std::fs::write(&inline_path, serde_json::to_string(&inline).unwrap()).unwrap();

    let from_dir = run(&["hash", "--bundle", bundle_dir.to_str().unwrap()]);
    let from_inline = run(&["hash", "--bundle", inline_path.to_str().unwrap(), "--inline"]);
    assert_eq!(from_dir.status.code(), Some(0));
    assert_eq!(from_inline.status.code(), Some(0));
    assert_eq!(from_dir.stdout, from_inline.stdout);
}
