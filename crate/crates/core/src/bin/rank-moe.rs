fn main() {
    std::process::exit(rank_moe::service::main_with_args(std::env::args_os().collect()));
}
