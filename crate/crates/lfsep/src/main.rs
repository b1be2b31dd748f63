use clap::Parser;
use lfsep::cli;

fn main() {
    let parsed = cli::Cli::try_parse();
    let code = match parsed {
        Ok(args) => cli::run(&args),
        Err(e) => {
            // Usage problems are input errors; --help/--version are success.
            let _ = e.print();
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    cli::EXIT_OK
                }
                _ => cli::EXIT_INPUT_ERROR,
            }
        }
    };
    std::process::exit(code);
}
