//! Command-line front end: certificate issuance, verification, benchmark
//! campaigns, attack scenarios, and chain persistence.
//!
//! Exit codes: 0 success/accept, 1 protocol-level reject or failure,
//! 2 input or environment error.

use anyhow::{Context, Result};
use blockpki::actors::{self, IssuanceError, IssuanceMetrics, Scenario, Simulation};
use blockpki::bench;
use blockpki::certificates::{self, CertificateFile, ClientMode};
use blockpki::ledger::{self, LedgerError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "blockpki",
    version,
    about = "BlockPKI certificate-issuance simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one certificate issuance and write the certificate, trust store,
    /// and metrics.
    Issue(IssueArgs),
    /// Verify a certificate file against a trust store.
    Verify(VerifyArgs),
    /// Issuance-cost and verification-timing campaign over several
    /// thresholds.
    Bench(BenchArgs),
    /// Run an attack scenario (or a threshold grid) and write the report.
    Attack(AttackArgs),
    /// Chain persistence: dump a simulated chain or validate a dump.
    Chain(ChainArgs),
}

#[derive(Args)]
struct IssueArgs {
    /// Scenario file (JSON); defaults apply for missing fields.
    #[arg(long)]
    config: PathBuf,
    /// RNG seed override (falls back to $BLOCKPKI_SEED, then the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Threshold override.
    #[arg(long)]
    threshold: Option<u64>,
    /// Output directory for certificate.json, truststore.json, metrics.csv,
    /// metrics.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    cert: PathBuf,
    #[arg(long)]
    truststore: PathBuf,
    /// Domain name the client believes it is visiting.
    #[arg(long)]
    domain: String,
    #[arg(long, value_enum, default_value = "light")]
    mode: ModeArg,
    /// Verification time in simulated seconds; defaults to the midpoint of
    /// the certificate's validity window.
    #[arg(long)]
    now: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated thresholds.
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
    thresholds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    repetitions: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// Timed iterations per verification stage.
    #[arg(long, default_value_t = 1000)]
    iterations: u32,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Attack scenario file: either a full scenario with an adversary block,
    /// or {"grid": {"threshold_t": .., "max_sum": ..}}.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "attack_report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ChainArgs {
    #[command(subcommand)]
    action: ChainAction,
}

#[derive(Subcommand)]
enum ChainAction {
    /// Run the scenario's issuance and dump the resulting chain, one block
    /// per line.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a chain dump (heights, parent links, roots, tx hashes).
    Load {
        #[arg(long)]
        path: PathBuf,
        /// Re-serialize the validated chain to this path.
        #[arg(long)]
        redump: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unaware,
    Light,
    Full,
}

impl From<ModeArg> for ClientMode {
    fn from(mode: ModeArg) -> ClientMode {
        match mode {
            ModeArg::Unaware => ClientMode::Unaware,
            ModeArg::Light => ClientMode::Light,
            ModeArg::Full => ClientMode::Full,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Issue(args) => cmd_issue(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Chain(args) => match args.action {
            ChainAction::Dump { config, seed, out } => cmd_chain_dump(config, seed, out),
            ChainAction::Load { path, redump } => cmd_chain_load(path, redump),
        },
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("BLOCKPKI_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
}

fn load_scenario(path: &Path, seed: Option<u64>, threshold: Option<u64>) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario =
        Scenario::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = seed.or_else(env_seed) {
        scenario.chain.rng_seed = seed;
    }
    if let Some(t) = threshold {
        scenario.threshold_t = t;
    }
    Ok(scenario)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn metrics_csv(metrics: &IssuanceMetrics) -> String {
    format!("{}\n{}\n", IssuanceMetrics::CSV_HEADER, metrics.csv_row())
}

fn cmd_issue(args: IssueArgs) -> Result<u8> {
    let scenario = load_scenario(&args.config, args.seed, args.threshold)?;
    let mut sim = Simulation::from_scenario(scenario);
    let (outcome, metrics) = sim.run_issuance();

    write_file(&args.out.join("metrics.csv"), &metrics_csv(&metrics))?;
    write_file(
        &args.out.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;

    match outcome {
        Ok(certificate) => {
            let file = CertificateFile::new(certificate).expect("issued payload decodes");
            write_file(&args.out.join("certificate.json"), &file.to_json())?;
            write_file(
                &args.out.join("truststore.json"),
                &sim.trust_store_file().to_json(),
            )?;
            println!(
                "issued certificate for {} with {} issuers in {} blocks ({:.1} simulated seconds)",
                file.certificate_data.subject_name,
                file.certificate_data.issuers.len(),
                metrics.blocks_elapsed,
                metrics.sim_seconds
            );
            Ok(0)
        }
        Err(IssuanceError::Ledger(e @ LedgerError::InsufficientBalance { .. })) => {
            eprintln!("issuance rejected: InsufficientBalance ({e})");
            Ok(2)
        }
        Err(IssuanceError::Ledger(e)) => {
            eprintln!("issuance rejected: {e}");
            Ok(2)
        }
        Err(e) => {
            eprintln!("issuance failed: {e}");
            Ok(1)
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<u8> {
    let cert_text = fs::read_to_string(&args.cert)
        .with_context(|| format!("reading {}", args.cert.display()))?;
    let cert_file = CertificateFile::from_json(&cert_text).context("parsing certificate file")?;
    let store_text = fs::read_to_string(&args.truststore)
        .with_context(|| format!("reading {}", args.truststore.display()))?;
    let store_file =
        certificates::TrustStoreFile::from_json(&store_text).context("parsing trust store")?;

    let mode: ClientMode = args.mode.into();
    let trust = match store_file.load(mode) {
        Ok(trust) => trust,
        Err(e) => {
            println!("reject certificate: {e}");
            return Ok(1);
        }
    };
    let params = blockpki::group::GroupParams::from_id(store_file.group);
    let cert = &cert_file.domain_certificate;
    let now = args.now.unwrap_or_else(|| {
        (cert_file.certificate_data.not_before + cert_file.certificate_data.not_after) / 2
    });

    if mode == ClientMode::Unaware {
        eprintln!("warning: blockchain-unaware mode, inclusion proof not checked");
    }
    match certificates::verify_certificate(&params, cert, &trust, &args.domain, now) {
        Ok(()) => {
            println!("accept certificate");
            Ok(0)
        }
        Err(reason) => {
            println!("reject certificate: {reason}");
            Ok(1)
        }
    }
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    let seed = args.seed.or_else(env_seed).unwrap_or(0);
    let report = bench::run_benchmark(&args.thresholds, args.repetitions, seed, args.iterations);
    write_file(&args.out.join("bench_issuance.csv"), &report.issuance_csv())?;
    write_file(
        &args.out.join("bench_verification.csv"),
        &report.verification_csv(),
    )?;
    write_file(&args.out.join("bench.json"), &report.to_json())?;
    println!(
        "gas vs threshold: slope {:.0} gas/CA, R^2 {:.6}; signature verification spread {:.3}",
        report.gas_regression.slope,
        report.gas_regression.r_squared,
        report.sig_verify_spread()
    );
    Ok(0)
}

#[derive(serde::Deserialize)]
struct GridSpec {
    threshold_t: u64,
    max_sum: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(serde::Deserialize)]
struct GridFile {
    grid: GridSpec,
}

fn cmd_attack(args: AttackArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;

    let reports = if let Ok(grid) = serde_json::from_str::<GridFile>(&text) {
        let seed = args.seed.or_else(env_seed).unwrap_or(grid.grid.seed);
        actors::run_attack_grid(grid.grid.threshold_t, grid.grid.max_sum, seed)
    } else {
        let mut scenario = Scenario::from_json(&text).context("parsing attack scenario")?;
        if scenario.adversary.is_none() {
            anyhow::bail!("attack scenario has no adversary block");
        }
        if let Some(seed) = args.seed.or_else(env_seed) {
            scenario.chain.rng_seed = seed;
        }
        let mut sim = Simulation::from_scenario(scenario);
        vec![sim.run_attack()]
    };

    for report in &reports {
        println!(
            "T={} i={} j={} -> constructible: {}{}",
            report.threshold_t,
            report.compromised,
            report.impersonated,
            report.constructible,
            if report.constructible {
                format!(", monitor anomalies: {}", report.monitor_anomalies)
            } else {
                String::new()
            }
        );
    }
    write_file(
        &args.out,
        &serde_json::to_string_pretty(&reports).expect("report serializes"),
    )?;
    Ok(0)
}

fn cmd_chain_dump(config: PathBuf, seed: Option<u64>, out: PathBuf) -> Result<u8> {
    let scenario = load_scenario(&config, seed, None)?;
    let mut sim = Simulation::from_scenario(scenario);
    let (outcome, _) = sim.run_issuance();
    if let Err(e) = outcome {
        eprintln!("issuance failed before dump: {e}");
        return Ok(1);
    }
    write_file(&out, &sim.chain.dump())?;
    println!(
        "dumped {} blocks to {}",
        sim.chain.blocks().len(),
        out.display()
    );
    Ok(0)
}

fn cmd_chain_load(path: PathBuf, redump: Option<PathBuf>) -> Result<u8> {
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    match ledger::load_dump(&text) {
        Ok(blocks) => {
            println!("loaded {} blocks, chain is well-linked", blocks.len());
            if let Some(redump_path) = redump {
                write_file(&redump_path, &ledger::dump_blocks(&blocks))?;
            }
            Ok(0)
        }
        Err(e) => {
            eprintln!("corrupt chain dump at line {}: {}", e.line, e.reason);
            Ok(2)
        }
    }
}
