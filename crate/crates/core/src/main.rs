fn main() {
    std::process::exit(polycube_core::cli::run(std::env::args_os()));
}
