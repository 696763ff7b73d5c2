fn main() {
    std::process::exit(nodal_tangent::cli::run(std::env::args_os()));
}
