fn main() {
    std::process::exit(dsmp::main_with_args(std::env::args_os()));
}
