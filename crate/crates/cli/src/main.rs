fn main() {
    std::process::exit(qcausal_cli::run(std::env::args_os()));
}
