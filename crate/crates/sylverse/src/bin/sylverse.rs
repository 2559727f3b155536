fn main() -> std::process::ExitCode {
    sylverse::cli::main()
}
