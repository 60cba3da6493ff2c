fn main() {
    std::process::exit(wotf_probe::cli::run(std::env::args_os()));
}
