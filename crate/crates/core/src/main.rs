fn main() {
    std::process::exit(a2gnn::cli::run(std::env::args_os()));
}
