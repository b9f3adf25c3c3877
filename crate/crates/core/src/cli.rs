//! The `proxy-audit` command line.

use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DataSource, Dataset, LoadOptions};
use crate::detect::{audit, program_digest, scatter_rows, scatter_tsv, AuditConfig, Report};
use crate::expr::Expr;
use crate::frontends::load_model;
use crate::measures::{InfluenceMode, UtilityTarget};
use crate::oracle::{parse_policy, Interactive, Oracle};
use crate::repair::{steps_jsonl, Checkpoint, RepairStep, Status};
use crate::service::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_WITNESSES: i32 = 3;
pub const EXIT_SUSPENDED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "proxy-audit", version, about = "Detect and repair proxy use of protected attributes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report every decomposition meeting both thresholds.
    Detect(AuditArgs),
    /// Remove proxy uses the oracle judges inappropriate.
    Repair(RepairArgs),
    /// Summarize a witness report and step log.
    Report(ReportArgs),
    /// Serve the session API.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct AuditArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    protected: String,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long, env = "PROXY_AUDIT_SEED")]
    seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    influence: ModeArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    #[arg(long, default_value_t = crate::measures::DEFAULT_MAX_BINS)]
    max_bins: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    allow_explicit_use: bool,
    /// Label column for utility; without it utility is agreement with the
    /// input model.
    #[arg(long)]
    label: Option<String>,
    /// Column to treat as categorical (repeatable).
    #[arg(long)]
    categorical: Vec<String>,
    /// Fraction of rows in the analysis subset.
    #[arg(long, default_value_t = crate::data::DEFAULT_SPLIT)]
    split: f64,
    #[arg(long)]
    permutation_test: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Args, Debug)]
struct RepairArgs {
    #[command(flatten)]
    audit: AuditArgs,
    /// `policy:<file>`, `interactive` or `serve`.
    #[arg(long)]
    oracle: String,
    /// Continue from a checkpoint written by a suspended run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 8077)]
    port: u16,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    witnesses: PathBuf,
    #[arg(long)]
    steps: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8077)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Directory holding session checkpoints.
    #[arg(long)]
    state_dir: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: e.to_string(),
    }
}

type CliResult = Result<i32, Failure>;

/// Runs the CLI on `args` (including the program name) and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Detect(a) => cmd_detect(&a),
        Command::Repair(a) => cmd_repair(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Serve(a) => cmd_serve(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

impl AuditArgs {
    fn config(&self) -> Result<AuditConfig, Failure> {
        let mut cfg = AuditConfig::new(self.epsilon, self.delta);
        cfg.seed = self.seed;
        cfg.alpha = self.alpha;
        cfg.beta = self.beta;
        cfg.max_bins = self.max_bins;
        cfg.workers = self.workers;
        cfg.permutation_test = self.permutation_test;
        cfg.influence = match self.influence {
            ModeArg::Exact => InfluenceMode::Exact,
            ModeArg::Sampled => InfluenceMode::Sampled,
        };
        cfg.validate().map_err(|e| Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn source(&self) -> DataSource {
        DataSource {
            path: Some(self.data.display().to_string()),
            csv: None,
            options: LoadOptions {
                protected: self.protected.clone(),
                label: self.label.clone(),
                categorical: self.categorical.clone(),
                numeric: Vec::new(),
                split: self.split,
                seed: self.seed,
                allow_explicit_use: self.allow_explicit_use,
            },
        }
    }

    fn load(&self) -> Result<(Expr, Dataset), Failure> {
        let data = self.source().load().map_err(input_err)?;
        let text = fs::read_to_string(&self.model)
            .map_err(|e| input_err(format!("{}: {e}", self.model.display())))?;
        let p = load_model(&text, data.codebook()).map_err(input_err)?;
        Ok((p, data))
    }
}

#[derive(Serialize, Deserialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    command: String,
    version: String,
    seed: u64,
    config: AuditConfig,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    wall_clock_ms: u128,
}

fn file_digest(path: &Path) -> Result<InputDigest, Failure> {
    let bytes = fs::read(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Outputs, Failure> {
        fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(path)
    }

    fn manifest(&mut self, command: &str, args: &AuditArgs, cfg: &AuditConfig, started: Instant) -> Result<(), Failure> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let m = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            config: cfg.clone(),
            inputs: vec![file_digest(&args.model)?, file_digest(&args.data)?],
            outputs,
            wall_clock_ms: started.elapsed().as_millis(),
        };
        self.write("manifest.json", &pretty(&m))?;
        Ok(())
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_detect(a: &AuditArgs) -> CliResult {
    let started = Instant::now();
    let cfg = a.config()?;
    let (p, data) = a.load()?;
    let result = audit(&p, &data, &cfg).map_err(input_err)?;
    let report = Report::new(&p, &data, &cfg, &result);
    let mut out = Outputs::new(&a.out)?;
    out.write("witnesses.json", &pretty(&report))?;
    out.write("scatter.tsv", &scatter_tsv(&scatter_rows(&result, "original")))?;
    out.write("codebook.json", &pretty(data.codebook()))?;
    out.manifest("detect", a, &cfg, started)?;
    println!(
        "{} witness(es) among {} decompositions at epsilon={} delta={}",
        report.witnesses.len(),
        report.decompositions,
        cfg.epsilon,
        cfg.delta
    );
    Ok(if report.witnesses.is_empty() { EXIT_OK } else { EXIT_WITNESSES })
}

fn cmd_repair(r: &RepairArgs) -> CliResult {
    let started = Instant::now();
    let a = &r.audit;
    let cfg = a.config()?;
    let (p, data) = a.load()?;
    let usage = |m: String| Failure {
        code: EXIT_USAGE,
        message: m,
    };

    if r.oracle == "serve" {
        return serve_session(r, &p, data, &cfg);
    }
    let mut oracle: Box<dyn Oracle> = if let Some(path) = r.oracle.strip_prefix("policy:") {
        let text = fs::read_to_string(path).map_err(|e| input_err(format!("{path}: {e}")))?;
        Box::new(parse_policy(&text).map_err(input_err)?)
    } else if r.oracle == "interactive" {
        Box::new(Interactive::new(BufReader::new(io::stdin()), io::stderr()))
    } else {
        return Err(usage(format!(
            "unknown oracle `{}`; expected policy:<file>, interactive or serve",
            r.oracle
        )));
    };

    let mut cp = match &r.resume {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
            Checkpoint::from_json(&text).map_err(input_err)?
        }
        None => {
            let target = match data.label() {
                Some(l) => UtilityTarget::Labels(l.to_string()),
                None => UtilityTarget::Fidelity(p.clone()),
            };
            let mut cp = Checkpoint::new(&p, &cfg, target);
            cp.data = Some(a.source());
            cp
        }
    };
    let status = cp.run(&data, oracle.as_mut(), None).map_err(input_err)?;
    let mut out = Outputs::new(&a.out)?;
    if status != Status::Done {
        let path = out.write("checkpoint.json", &cp.to_json())?;
        out.write("judgments.json", &pretty(&cp.judgments))?;
        out.manifest("repair", a, &cfg, started)?;
        eprintln!(
            "suspended with {} witness(es) awaiting judgment; resume with --resume {}",
            cp.pending.len(),
            path.display()
        );
        return Ok(EXIT_SUSPENDED);
    }

    let before = audit(&cp.original, &data, &cfg).map_err(input_err)?;
    let after = audit(&cp.program, &data, &cfg).map_err(input_err)?;
    let mut rows = scatter_rows(&before, "original");
    rows.extend(scatter_rows(&after, "repaired"));
    out.write("repaired_model.json", &(cp.program.to_json_pretty() + "\n"))?;
    out.write("steps.jsonl", &steps_jsonl(&cp.steps))?;
    out.write("scatter.tsv", &scatter_tsv(&rows))?;
    out.write("witnesses.json", &pretty(&Report::new(&cp.program, &data, &cfg, &after)))?;
    out.write("judgments.json", &pretty(&cp.judgments))?;
    out.write("codebook.json", &pretty(data.codebook()))?;
    out.manifest("repair", a, &cfg, started)?;
    println!(
        "{} repair step(s); program {} -> {} nodes, digest {}",
        cp.steps.len(),
        cp.original.size(),
        cp.program.size(),
        &program_digest(&cp.program)[..16]
    );
    Ok(EXIT_OK)
}

fn serve_session(r: &RepairArgs, p: &Expr, data: Dataset, cfg: &AuditConfig) -> CliResult {
    let state = AppState::new(Some(r.audit.out.join("sessions")));
    let (id, view) = state
        .open(p, data, r.audit.source(), cfg)
        .map_err(|e| input_err(format!("{e:?}")))?;
    println!(
        "session {id}: {} witness(es) pending at http://127.0.0.1:{}/api/sessions/{id}",
        view.pending, r.port
    );
    serve_blocking(([127, 0, 0, 1], r.port).into(), state)
}

fn serve_blocking(addr: std::net::SocketAddr, state: AppState) -> CliResult {
    let rt = tokio::runtime::Runtime::new().map_err(input_err)?;
    rt.block_on(service::serve(addr, state)).map_err(input_err)?;
    Ok(EXIT_OK)
}

fn cmd_serve(a: &ServeArgs) -> CliResult {
    let ip: std::net::IpAddr = a.bind.parse().map_err(|e| Failure {
        code: EXIT_USAGE,
        message: format!("--bind: {e}"),
    })?;
    let state = match &a.state_dir {
        Some(d) => AppState::restore(d.clone()).map_err(input_err)?,
        None => AppState::new(None),
    };
    eprintln!("listening on http://{ip}:{}", a.port);
    serve_blocking((ip, a.port).into(), state)
}

/// Text summary of a witness report and optional step log.
pub fn summarize(report: &Report, steps: Option<&[RepairStep]>, top: usize) -> String {
    let cfg = &report.config;
    let mut s = String::new();
    if report.witnesses.is_empty() {
        s.push_str(&format!(
            "no proxy uses detected at (epsilon={}, delta={})\n",
            cfg.epsilon, cfg.delta
        ));
    } else {
        s.push_str(&format!(
            "{} proxy use(s) of `{}` at (epsilon={}, delta={}) among {} decompositions\n",
            report.witnesses.len(),
            report.protected,
            cfg.epsilon,
            cfg.delta,
            report.decompositions
        ));
        s.push_str("  influence  assoc.  size  site  subprogram\n");
        for w in report.witnesses.iter().take(top) {
            let site = w.site_key();
            s.push_str(&format!(
                "  {:9.4}  {:6.4}  {:4}  {}  {}\n",
                w.delta_hat,
                w.epsilon_hat,
                w.size,
                if site.is_empty() { "<root>" } else { &site },
                w.subprogram_text
            ));
        }
    }
    if report.truncated {
        s.push_str("  (enumeration was capped; some occurrence subsets were skipped)\n");
    }
    if let Some(steps) = steps {
        match (steps.first(), steps.last()) {
            (Some(first), Some(last)) => s.push_str(&format!(
                "{} repair step(s); utility {:.4} -> {:.4} (change {:+.4}); size {} -> {}\n",
                steps.len(),
                first.utility_before,
                last.utility_after,
                last.utility_after - first.utility_before,
                first.size_before,
                last.size_after
            )),
            _ => s.push_str("no repair steps\n"),
        }
    }
    s
}

fn cmd_report(a: &ReportArgs) -> CliResult {
    let text = fs::read_to_string(&a.witnesses)
        .map_err(|e| input_err(format!("{}: {e}", a.witnesses.display())))?;
    let report: Report = serde_json::from_str(&text)
        .map_err(|e| input_err(format!("{}: {e}", a.witnesses.display())))?;
    let steps = match &a.steps {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
            Some(
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<Vec<RepairStep>, _>>()
                    .map_err(|e| input_err(format!("{}: {e}", path.display())))?,
            )
        }
    };
    print!("{}", summarize(&report, steps.as_deref(), a.top));
    Ok(EXIT_OK)
}
