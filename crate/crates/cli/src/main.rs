fn main() {
    std::process::exit(anchor_rank_cli::main_with_args(std::env::args_os()));
}
