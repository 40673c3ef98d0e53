use clap::Parser;

fn main() {
    let cli = bam_cli::Cli::parse();
    if let Err(e) = bam_cli::run(&cli) {
        eprintln!("bam: {e}");
        std::process::exit(e.code);
    }
}
