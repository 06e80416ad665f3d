fn main() {
    std::process::exit(rischan::harness::cli::cli_main(std::env::args_os()));
}
