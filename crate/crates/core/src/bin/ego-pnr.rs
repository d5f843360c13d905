fn main() {
    std::process::exit(ego_pnr::cli::run(std::env::args_os()));
}
