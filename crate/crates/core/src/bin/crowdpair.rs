fn main() {
    std::process::exit(crowdpair::cli::run(std::env::args_os()));
}
