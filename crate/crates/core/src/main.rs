fn main() {
    std::process::exit(strata_icer::cli::main_with_args(std::env::args_os()));
}
