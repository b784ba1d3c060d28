fn main() {
    std::process::exit(cav_routing::cli::run(std::env::args_os()));
}
