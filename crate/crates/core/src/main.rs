fn main() {
    std::process::exit(qos_predict::cli::main_entry());
}
