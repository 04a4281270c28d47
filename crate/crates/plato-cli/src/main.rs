fn main() -> std::process::ExitCode {
    plato_cli::main_entry()
}
