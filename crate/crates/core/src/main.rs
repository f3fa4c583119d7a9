fn main() { std::process::exit(kernelscope::cli::main()) }
