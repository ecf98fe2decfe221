fn main() -> std::process::ExitCode {
    agristab::cli::main()
}
