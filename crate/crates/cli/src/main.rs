use clap::Parser;
use mfe_cli::{execute, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = mfe_cli::CliError::config("arguments", e.to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    match cli.config().and_then(|cfg| execute(&cfg)) {
        Ok(out) => {
            print!("{}", out.summary);
            println!("wrote {} files to {}", out.files.len() + 1, out.out_dir.display());
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
