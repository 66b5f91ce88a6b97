fn main() {
    std::process::exit(lanechange::cli::run(std::env::args_os()));
}
