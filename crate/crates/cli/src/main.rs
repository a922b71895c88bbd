fn main() {
    std::process::exit(ellipse_gem_cli::run(std::env::args_os()));
}
