fn main() -> std::process::ExitCode {
    speller::cli::main()
}
