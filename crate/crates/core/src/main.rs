fn main() {
    if let Err(e) = vidcrf::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
