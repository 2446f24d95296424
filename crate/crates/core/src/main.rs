fn main() {
    std::process::exit(tracerl::cli::run_main());
}
