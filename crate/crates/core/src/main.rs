fn main() {
    std::process::exit(torus_nf::cli::run(std::env::args_os()));
}
