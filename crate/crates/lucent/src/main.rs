fn main() {
    std::process::exit(lucent::cli::main_with_args(std::env::args_os()));
}
