fn main() {
    std::process::exit(acai_workbench::cli::run(std::env::args_os()));
}
