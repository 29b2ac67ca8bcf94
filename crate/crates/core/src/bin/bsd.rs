fn main() {
    std::process::exit(bsd_planner::cli::run_from_args(std::env::args_os()));
}
