use std::process::ExitCode;

use clap::Parser;
use gapforge_cli::config::thread_cap;
use gapforge_cli::output::emit;
use gapforge_cli::{load_config, run_pipeline, Args, EXIT_ERROR};

fn main() -> ExitCode {
    let args = Args::parse();
    let threads = match thread_cap(std::env::var("GAPFORGE_THREADS").ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("gapforge: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("gapforge: thread pool: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    let cfg = match load_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("gapforge: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let report = run_pipeline(&cfg);
    if let Err(e) = emit(&cfg, &report) {
        eprintln!("gapforge: writing output: {e}");
        return ExitCode::from(EXIT_ERROR);
    }
    if let Some(err) = &report.error {
        eprintln!("gapforge: {err}");
    }
    ExitCode::from(report.exit_code())
}
