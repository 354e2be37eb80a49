//! Command-line driver: load ratings, split, plan, sample, report.
//!
//! Every flag can also be set through a `BPMF_`-prefixed environment
//! variable (for example `BPMF_SEED=7`). Exit codes: 0 success, 2
//! configuration problem, 3 data problem, 4 transport problem, 5 other.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;

use bpmf::engine::{execute, Backend, DataFormat, RunConfig};
use bpmf::transport::SendPolicy;

#[derive(Parser, Debug)]
#[command(
    name = "bpmf",
    about = "Bayesian probabilistic matrix factorization with a distributed Gibbs sampler",
    after_help = "Example:\n  bpmf --train data/ml-100k.mtx --format mm --k 10 \
                  --iterations 50 --burnin 10 --out runs/ml100k\n\nUse --train fixture:100x80 \
                  for the bundled synthetic smoke dataset."
)]
struct Cli {
    /// Training ratings file (or fixture:100x80 for the bundled dataset)
    #[arg(long, env = "BPMF_TRAIN")]
    train: PathBuf,

    /// Input format: mm (MatrixMarket) or csv
    #[arg(long, env = "BPMF_FORMAT", default_value = "mm")]
    format: DataFormat,

    /// Held-out fraction of ratings, in (0, 1)
    #[arg(long, env = "BPMF_TEST_FRACTION", default_value_t = 0.2)]
    test_fraction: f64,

    /// Latent dimension
    #[arg(long, env = "BPMF_K", default_value_t = 50)]
    k: usize,

    /// Rating noise precision
    #[arg(long, env = "BPMF_ALPHA", default_value_t = 2.0)]
    alpha: f64,

    /// Sampling iterations
    #[arg(long, env = "BPMF_ITERATIONS", default_value_t = 100)]
    iterations: u32,

    /// Iterations discarded before prediction averaging
    #[arg(long, env = "BPMF_BURNIN", default_value_t = 20)]
    burnin: u32,

    /// Chain seed; fixes the whole run
    #[arg(long, env = "BPMF_SEED", default_value_t = 42)]
    seed: u64,

    /// Worker threads per node (0: all cores)
    #[arg(long, env = "BPMF_WORKERS", default_value_t = 0)]
    workers: usize,

    /// Number of nodes in the run
    #[arg(long, env = "BPMF_NODES", default_value_t = 1)]
    nodes: usize,

    /// This process's node id (tcp backend)
    #[arg(long, env = "BPMF_NODE_ID", default_value_t = 0)]
    node_id: usize,

    /// Comma-separated host:port per node, in node-id order (tcp backend)
    #[arg(long, env = "BPMF_PEERS", value_delimiter = ',')]
    peers: Vec<String>,

    /// Transport backend: inproc (all nodes in this process) or tcp
    #[arg(long, env = "BPMF_BACKEND", default_value = "inproc")]
    backend: Backend,

    /// Send policy: eager, buffered:CAP or broadcast
    #[arg(long, env = "BPMF_POLICY", default_value = "buffered:64")]
    policy: SendPolicy,

    /// Subtract the training mean during sampling: on or off
    #[arg(long, env = "BPMF_CENTER", default_value = "on")]
    center: String,

    /// Clamp predictions to the observed rating range: on or off
    #[arg(long, env = "BPMF_CLAMP", default_value = "off")]
    clamp: String,

    /// Output directory (metrics, predictions, plan, checkpoints)
    #[arg(long, env = "BPMF_OUT", default_value = "bpmf-out")]
    out: PathBuf,

    /// Checkpoint every N iterations (0: only at exit)
    #[arg(long, env = "BPMF_CHECKPOINT_EVERY", default_value_t = 0)]
    checkpoint_every: u32,

    /// Resume from a checkpoint file or a previous output directory
    #[arg(long, env = "BPMF_RESUME")]
    resume: Option<PathBuf>,

    /// CSV field delimiter (use "tab" for tab-separated files)
    #[arg(long, env = "BPMF_CSV_DELIM", default_value = ",")]
    csv_delim: String,

    /// CSV input has no header row
    #[arg(long, env = "BPMF_CSV_NO_HEADER", default_value_t = false)]
    csv_no_header: bool,

    /// Phase barrier timeout in seconds
    #[arg(long, env = "BPMF_PHASE_TIMEOUT", default_value_t = 60)]
    phase_timeout: u64,
}

fn on_off(flag: &str, value: &str) -> Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("--{flag} expects on or off, got {other:?}")),
    }
}

fn build_config(cli: Cli) -> Result<RunConfig, String> {
    let delimiter = match cli.csv_delim.as_str() {
        "tab" | "\\t" => b'\t',
        s if s.len() == 1 && s.is_ascii() => s.as_bytes()[0],
        other => {
            return Err(format!("--csv-delim expects one ascii char or \"tab\", got {other:?}"))
        }
    };
    Ok(RunConfig {
        train: cli.train,
        format: cli.format,
        test_fraction: cli.test_fraction,
        k: cli.k,
        alpha: cli.alpha,
        iterations: cli.iterations,
        burnin: cli.burnin,
        seed: cli.seed,
        workers: if cli.workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            cli.workers
        },
        nodes: cli.nodes,
        node_id: cli.node_id,
        peers: cli.peers,
        backend: cli.backend,
        policy: cli.policy,
        center: on_off("center", &cli.center)?,
        clamp: on_off("clamp", &cli.clamp)?,
        out: cli.out,
        checkpoint_every: cli.checkpoint_every,
        resume: cli.resume,
        csv_delimiter: delimiter,
        csv_has_header: !cli.csv_no_header,
        phase_timeout: std::time::Duration::from_secs(cli.phase_timeout),
    })
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn handle_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::Relaxed);
}

fn install_sigint_handler() -> Arc<AtomicBool> {
    unsafe {
        let handler: extern "C" fn(libc::c_int) = handle_sigint;
        libc::signal(libc::SIGINT, handler as usize as libc::sighandler_t);
    }
    // bridge the async-signal flag into the Arc the engine polls
    let flag = Arc::new(AtomicBool::new(false));
    let poller = Arc::clone(&flag);
    std::thread::spawn(move || loop {
        if INTERRUPTED.load(Ordering::Relaxed) {
            poller.store(true, Ordering::Relaxed);
            return;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    });
    flag
}

fn main() {
    let cli = Cli::parse();
    let cfg = match build_config(cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("bpmf: {msg}");
            std::process::exit(2);
        }
    };
    let interrupt = install_sigint_handler();

    match execute(&cfg, Some(interrupt)) {
        Ok(report) => {
            for result in &report.results {
                if let Some(last) = result.trace.last() {
                    println!(
                        "node {}: {} iterations, rmse_sample {:.6}, rmse_avg {:.6}, \
                         {:.1} updates/s",
                        result.node_id,
                        last.iteration,
                        last.rmse_sample,
                        last.rmse_avg,
                        last.updates_per_sec
                    );
                }
            }
            println!("outputs in {}", report.out_dir.display());
            if report.interrupted {
                eprintln!(
                    "bpmf: interrupted; checkpoint written, resume with --resume {}",
                    report.out_dir.display()
                );
                std::process::exit(130);
            }
        }
        Err(e) => {
            eprintln!("bpmf: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
