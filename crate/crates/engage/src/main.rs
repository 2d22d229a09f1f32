fn main() {
    if let Err(e) = engage::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
