fn main() {
    std::process::exit(qswitch::cli::dispatch(std::env::args_os()));
}
