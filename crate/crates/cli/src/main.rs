fn main() {
    std::process::exit(refsr_cli::run(std::env::args_os()));
}
