use clap::Parser;

use cwlm::cli::{execute, Cli};

fn main() {
    if let Some(n) = std::env::var("CWLM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: CWLM_THREADS ignored: {e}");
            }
        }
    }
    let outcome = execute(Cli::parse());
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    std::process::exit(outcome.code);
}
