fn main() {
    if let Err(e) = seld_core::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
