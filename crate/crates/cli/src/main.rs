use clap::Parser;

use splitgen_cli::{run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{}", out.text);
            eprint!("{}", out.notes);
        }
        Err(err) => {
            match &err {
                CliError::Verification(report) => print!("{report}"),
                other => eprintln!("error: {other}"),
            }
            std::process::exit(err.exit_code());
        }
    }
}
