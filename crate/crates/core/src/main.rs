fn main() {
    std::process::exit(orthant_rbm::cli::main_with_args(std::env::args_os()));
}
