use clap::Parser;
use clap::error::ErrorKind;

fn main() {
    let cli = match tpet_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = tpet_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
