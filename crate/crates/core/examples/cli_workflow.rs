//! The command-line workflow end to end, in a temporary directory:
//! gen-data → arrange → train → generate → evaluate.
//!
//!     cargo run --release --example cli_workflow

use e2eqr::cli::main_with_args;

fn run(args: &[&str]) -> Result<(), Box<dyn std::error::Error>> {
    println!("$ e2eqr {}", args.join(" "));
    let code = main_with_args(std::iter::once("e2eqr").chain(args.iter().copied()));
    if code != 0 {
        return Err(format!("exit code {code}").into());
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("e2eqr-workflow-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let p = |name: &str| dir.join(name).display().to_string();
    std::fs::write(
        p("run.toml"),
        "d_model = 32\nn_heads = 4\nd_ff = 64\nlr_alpha = 0.002\nwarmup_steps = 20\n\
         epochs_per_main_complexity = 3\neval_limit = 20\nmax_decode_len = 24\nseed = 1\n",
    )?;
    run(&["gen-data", "--out", &p("data"), "--entities", "60", "--facts-per-relation", "60", "--hops", "1,2", "--train", "200", "--validation", "20", "--test", "40"])?;
    run(&["arrange", &p("data/test.jsonl"), &p("test.arranged.jsonl")])?;
    run(&["train", "--data", &p("data"), "--out", &p("run"), "--config", &p("run.toml")])?;
    run(&[
        "generate",
        "--checkpoint",
        &p("run/final.e2qr"),
        "--vocab",
        &p("data/vocab.txt"),
        "--input",
        &p("test.arranged.jsonl"),
        "--out",
        &p("predictions.jsonl"),
        "--emit-intermediates",
    ])?;
    run(&["evaluate", "--predictions", &p("predictions.jsonl"), "--gold", &p("data/test.jsonl"), "--out", &p("report.json")])?;
    println!("artifacts in {}", dir.display());
    Ok(())
}
