use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use guardrail_cli::commands::{run, run_serve, Cli, Command, UsageError};

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };

    let result = match cli.command {
        Command::Serve { listen } => run_serve(cli.config.as_deref(), listen),
        _ => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let r = run(cli, &mut lock);
            let _ = lock.flush();
            r
        }
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
