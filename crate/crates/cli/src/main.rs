fn main() {
    std::process::exit(fedcluster_cli::run_cli(std::env::args_os()));
}
