fn main() {
    std::process::exit(cc_transfer::cli::dispatch(std::env::args_os()));
}
