//! Runs the end-to-end protocol and prints the report as JSON.
//!
//! `cargo run --release -p nbest-core --example protocol -- [seed] [epochs]`

use nbest_core::exec::Execution;
use nbest_core::experiment::{run_experiment, ExperimentConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    if let Some(e) = args.next() {
        cfg.hyper.epochs = e.parse().expect("epochs");
    }
    match run_experiment(&cfg, Execution::default()) {
        Ok(report) => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
