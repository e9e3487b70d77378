fn main() {
    std::process::exit(forecast_core::cli::main());
}
