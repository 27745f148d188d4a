//! Unified command-line entry point: hash, inspect, issue, upload, serve,
//! verify-cert, verifierd, prover, scenario, keygen.
//!
//! All output goes to stdout as JSON unless --human is given. Exit codes:
//! 0 success, 1 operational error (reported as `{error, detail}` JSON),
//! 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use bicnet_core::attestation::DeviceRegistry;
use bicnet_core::bundle_io;
use bicnet_core::canonical::canonical_encode;
use bicnet_core::certserver::{CertServerClient, CertificateStore, PutOutcome, RunningServer};
use bicnet_core::inspection::{
    issue_certificate, run_inspection, standard_suite, DetectorContext, InspectionReport,
    IssueOptions, SuiteItem,
};
use bicnet_core::keys::{save_json, DeviceIdentityFile, OrgKeyFile};
use bicnet_core::model::{verify_certificate, Digest, SignedCertificate, TrustStore, VerifyError};
use bicnet_core::prover::{run_session, ProverState, SessionOutcome, TamperMode};
use bicnet_core::scenario::{load_scenario, run_scenario};
use bicnet_core::verifier::audit::AuditLog;
use bicnet_core::verifier::daemon::{RunningVerifier, Verifier};
use bicnet_core::verifier::SecurityPolicy;

#[derive(Parser)]
#[command(
    name = "bicnet",
    version,
    about = "Network access control from remote attestation and backdoor inspection certificates"
)]
struct Cli {
    /// Pretty, human-oriented output instead of single-line JSON.
    #[arg(long, global = true)]
    human: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the software digest (per-component + aggregate) of a bundle.
    Hash {
        /// Bundle directory (or inline JSON file with --inline).
        #[arg(long)]
        bundle: PathBuf,
        /// Treat --bundle as a single JSON document with base64 content.
        #[arg(long)]
        inline: bool,
    },
    /// Run a detector suite over a bundle and write the inspection report.
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        inline: bool,
        /// Suite file (JSON array of {algorithm, parameters}); defaults to
        /// the standard five-detector suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Credential patterns file (JSON array of hex strings).
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// Device-class profiles file (JSON array).
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Advisory database file (JSON map digest-hex -> [advisory ids]).
        #[arg(long)]
        advisories: Option<PathBuf>,
        /// Where to write the inspection report (also printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sign a certificate over an inspection report.
    Issue {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        inline: bool,
        /// Inspection report produced by `inspect`.
        #[arg(long)]
        entries: PathBuf,
        /// Inspector organization key file (from `keygen org`).
        #[arg(long)]
        key: PathBuf,
        /// Override the organization recorded in the key file.
        #[arg(long)]
        org: Option<String>,
        /// Override the key id recorded in the key file.
        #[arg(long)]
        key_id: Option<String>,
        /// Inspecting engineer name or qualification identifier.
        #[arg(long)]
        engineer: Option<String>,
        /// Record component suppliers in the certificate.
        #[arg(long)]
        include_supply_chain: bool,
        /// Body digest (hex) of the certificate this one supersedes.
        #[arg(long)]
        supersedes: Option<String>,
        /// Issue timestamp (UTC seconds); defaults to now.
        #[arg(long)]
        issued_at: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upload a signed certificate to a certificate server.
    Upload {
        #[arg(long)]
        server: String,
        #[arg(long)]
        cert: PathBuf,
    },
    /// Run the certificate server. Respects CERTD_LOG_LEVEL.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        trust_store: PathBuf,
    },
    /// Verify a signed certificate offline against a trust store.
    VerifyCert {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trust_store: PathBuf,
    },
    /// Run the admission verifier daemon.
    Verifierd {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        cert_server: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        trust_store: PathBuf,
        #[arg(long)]
        device_registry: PathBuf,
        #[arg(long)]
        audit_log: PathBuf,
    },
    /// Boot a bundle and run one attestation session against a verifier.
    Prover {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        inline: bool,
        /// Device identity file (from `keygen device`).
        #[arg(long)]
        identity: PathBuf,
        /// Verifier address (host:port).
        #[arg(long)]
        connect: String,
        /// Test hook: present tampered evidence (log|nonce|key).
        #[arg(long)]
        tamper: Option<TamperMode>,
    },
    /// Run a scenario file end to end and report actual vs expected.
    Scenario {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate keys.
    Keygen {
        #[command(subcommand)]
        what: KeygenCommand,
    },
}

#[derive(Subcommand)]
enum KeygenCommand {
    /// Inspector organization signing key.
    Org {
        #[arg(long)]
        org: String,
        #[arg(long, default_value = "k1")]
        key_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prover device identity.
    Device {
        #[arg(long)]
        device_id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    error: String,
    detail: String,
}

impl Failure {
    fn new(error: &str, detail: impl std::fmt::Display) -> Self {
        Failure {
            error: error.to_string(),
            detail: detail.to_string(),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    init_logging(&cli.command);
    let human = cli.human;
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            emit(
                human,
                &json!({"error": failure.error, "detail": failure.detail}),
            );
            std::process::exit(1);
        }
    }
}

fn init_logging(command: &Command) {
    let env = match command {
        Command::Serve { .. } => env_logger::Env::new().filter_or("CERTD_LOG_LEVEL", "info"),
        _ => env_logger::Env::default().filter_or("RUST_LOG", "warn"),
    };
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp_secs()
        .try_init();
}

fn emit(human: bool, value: &serde_json::Value) {
    let text = if human {
        serde_json::to_string_pretty(value).expect("value serializes")
    } else {
        serde_json::to_string(value).expect("value serializes")
    };
    println!("{text}");
    let _ = std::io::stdout().flush();
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let human = cli.human;
    match cli.command {
        Command::Hash { bundle, inline } => {
            let bundle = load_bundle(&bundle, inline)?;
            let digest = bicnet_core::hash_bundle(&bundle);
            emit(human, &serde_json::to_value(&digest).expect("digest serializes"));
            Ok(0)
        }
        Command::Inspect {
            bundle,
            inline,
            suite,
            patterns,
            profiles,
            advisories,
            out,
        } => {
            let bundle = load_bundle(&bundle, inline)?;
            let suite = match suite {
                None => standard_suite(),
                Some(path) => {
                    let text = read_file(&path)?;
                    serde_json::from_str::<Vec<SuiteItem>>(&text)
                        .map_err(|e| Failure::new("ParseError", format!("{}: {e}", path.display())))?
                }
            };
            let mut ctx = DetectorContext::default();
            if let Some(path) = patterns {
                ctx.patterns = DetectorContext::load_patterns(&path)
                    .map_err(|e| Failure::new("BadParameters", e))?;
            }
            if let Some(path) = profiles {
                ctx.profiles = DetectorContext::load_profiles(&path)
                    .map_err(|e| Failure::new("BadParameters", e))?;
            }
            if let Some(path) = advisories {
                ctx.advisories = DetectorContext::load_advisories(&path)
                    .map_err(|e| Failure::new("BadParameters", e))?;
            }
            let entries = run_inspection(&bundle, &suite, &ctx)
                .map_err(|e| Failure::new("InspectionError", e))?;
            let report = InspectionReport::new(&bundle, entries);
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            emit(human, &serde_json::to_value(&report).expect("report serializes"));
            Ok(0)
        }
        Command::Issue {
            bundle,
            inline,
            entries,
            key,
            org,
            key_id,
            engineer,
            include_supply_chain,
            supersedes,
            issued_at,
            out,
        } => {
            let bundle = load_bundle(&bundle, inline)?;
            let report: InspectionReport = parse_json_file(&entries)?;
            let key_file = OrgKeyFile::load(&key).map_err(|e| Failure::new("ParseError", e))?;
            let signing_key = key_file
                .signing_key()
                .map_err(|e| Failure::new("ParseError", e))?;
            let supersedes = supersedes
                .map(|s| Digest::from_hex(&s))
                .transpose()
                .map_err(|e| Failure::new("ParseError", e))?;
            let options = IssueOptions {
                include_supply_chain,
                engineer,
                supersedes,
                issued_at,
            };
            let cert = issue_certificate(
                &bundle,
                &report,
                org.as_deref().unwrap_or(&key_file.org),
                &signing_key,
                key_id.as_deref().unwrap_or(&key_file.key_id),
                &options,
            )
            .map_err(|e| Failure::new("IssueError", e))?;
            if let Some(out) = out {
                write_json(&out, &cert)?;
            }
            emit(human, &serde_json::to_value(&cert).expect("certificate serializes"));
            Ok(0)
        }
        Command::Upload { server, cert } => {
            let cert: SignedCertificate = parse_json_file(&cert)?;
            let client = CertServerClient::new(&server);
            match client.put_certificate(&cert) {
                Ok(PutOutcome::Stored) => {
                    emit(human, &json!({"status": "stored", "body_digest": cert.body_digest.to_hex()}));
                    Ok(0)
                }
                Ok(PutOutcome::Duplicate) => {
                    emit(human, &json!({"status": "duplicate", "body_digest": cert.body_digest.to_hex()}));
                    Ok(0)
                }
                Err(bicnet_core::certserver::ClientError::Rejected { error, detail, .. }) => {
                    Err(Failure { error, detail })
                }
                Err(e) => Err(Failure::new("Unavailable", e)),
            }
        }
        Command::Serve {
            listen,
            store,
            trust_store,
        } => {
            let trust = TrustStore::load(&trust_store).map_err(|e| Failure::new("ParseError", e))?;
            let store = CertificateStore::open(&store, trust).map_err(|e| match e {
                bicnet_core::certserver::StoreError::Corrupt(detail) => {
                    Failure::new("CorruptStore", detail)
                }
                other => Failure::new("StorageFailure", other),
            })?;
            let store_path = store.path().display().to_string();
            let server = RunningServer::start(&listen, Arc::new(store))
                .map_err(|e| Failure::new("BindFailure", e))?;
            emit(
                human,
                &json!({"listening": server.addr().to_string(), "store": store_path}),
            );
            server.join();
            Ok(0)
        }
        Command::VerifyCert { cert, trust_store } => {
            let cert: SignedCertificate = parse_json_file(&cert)?;
            let trust = TrustStore::load(&trust_store).map_err(|e| Failure::new("ParseError", e))?;
            match verify_certificate(&cert, &trust) {
                Ok(verified) => {
                    emit(
                        human,
                        &json!({
                            "valid": true,
                            "inspector_org": verified.inspector_org,
                            "body_digest": verified.body_digest.to_hex(),
                            "aggregate": verified.body.software_digest.aggregate.to_hex(),
                        }),
                    );
                    Ok(0)
                }
                Err(VerifyError::UnknownSigner { org, key_id }) => Err(Failure::new(
                    "UnknownSigner",
                    format!("{org} / {key_id} not in trust store"),
                )),
                Err(e) => Err(Failure::new("InvalidSignature", e)),
            }
        }
        Command::Verifierd {
            listen,
            cert_server,
            policy,
            trust_store,
            device_registry,
            audit_log,
        } => {
            let policy = SecurityPolicy::load(&policy).map_err(|e| Failure::new("ParseError", e))?;
            let trust = TrustStore::load(&trust_store).map_err(|e| Failure::new("ParseError", e))?;
            let registry =
                DeviceRegistry::load(&device_registry).map_err(|e| Failure::new("ParseError", e))?;
            let audit = AuditLog::open(&audit_log).map_err(|e| Failure::new("IoError", e))?;
            let verifier = Arc::new(Verifier::new(policy, trust, registry, &cert_server, audit));
            let running = RunningVerifier::start(&listen, verifier)
                .map_err(|e| Failure::new("BindFailure", e))?;
            emit(human, &json!({"listening": running.addr().to_string(), "cert_server": cert_server}));
            running.join();
            Ok(0)
        }
        Command::Prover {
            bundle,
            inline,
            identity,
            connect,
            tamper,
        } => {
            let bundle = load_bundle(&bundle, inline)?;
            let identity =
                DeviceIdentityFile::load(&identity).map_err(|e| Failure::new("ParseError", e))?;
            let state = ProverState::boot(&bundle, &identity)
                .map_err(|e| Failure::new("BootError", e))?
                .with_tamper(tamper.unwrap_or_default());
            match run_session(&state, &connect) {
                Ok(SessionOutcome::Decided(decision)) => {
                    emit(human, &serde_json::to_value(&decision).expect("decision serializes"));
                    Ok(0)
                }
                Ok(SessionOutcome::VerifierError { code, detail }) => Err(Failure {
                    error: format!("VerifierError:{code}"),
                    detail,
                }),
                Err(e) => Err(Failure::new("SessionError", e)),
            }
        }
        Command::Scenario { file, out } => {
            let scenario = load_scenario(&file).map_err(|e| Failure::new("ScenarioParseError", e))?;
            let report = run_scenario(&scenario).map_err(|e| Failure::new("ScenarioError", e))?;
            if let Some(out) = out {
                std::fs::write(&out, canonical_encode(&report))
                    .map_err(|e| Failure::new("IoError", format!("{}: {e}", out.display())))?;
            }
            if human {
                emit(true, &serde_json::to_value(&report).expect("report serializes"));
            } else {
                // Canonical bytes: identical runs print identical reports.
                let mut stdout = std::io::stdout();
                let _ = stdout.write_all(&canonical_encode(&report));
                let _ = stdout.write_all(b"\n");
                let _ = stdout.flush();
            }
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Keygen { what } => {
            match what {
                KeygenCommand::Org { org, key_id, out } => {
                    let file = OrgKeyFile::generate(&mut rand::rngs::OsRng, &org, &key_id);
                    save_json(&out, &file)
                        .map_err(|e| Failure::new("IoError", format!("{}: {e}", out.display())))?;
                    emit(
                        human,
                        &json!({
                            "org": file.org,
                            "key_id": file.key_id,
                            "public_key_hex": file.public_key_hex,
                            "out": out.display().to_string(),
                        }),
                    );
                }
                KeygenCommand::Device { device_id, out } => {
                    let file = DeviceIdentityFile::generate(&mut rand::rngs::OsRng, &device_id);
                    save_json(&out, &file)
                        .map_err(|e| Failure::new("IoError", format!("{}: {e}", out.display())))?;
                    emit(
                        human,
                        &json!({
                            "device_id": file.device_id,
                            "public_key_hex": file.public_key_hex,
                            "out": out.display().to_string(),
                        }),
                    );
                }
            }
            Ok(0)
        }
    }
}

fn load_bundle(path: &Path, inline: bool) -> Result<bicnet_core::FirmwareBundle, Failure> {
    bundle_io::load(path, inline).map_err(|e| Failure::new("ParseError", e))
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::new("IoError", format!("{}: {e}", path.display())))
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = read_file(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::new("ParseError", format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new("IoError", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::new("IoError", format!("{}: {e}", path.display())))
}
