fn main() {
    std::process::exit(mhpl::harness::main_with_args(std::env::args_os()));
}
