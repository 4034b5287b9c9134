fn main() {
    std::process::exit(fusionrec_cli::dispatch(std::env::args_os()));
}
