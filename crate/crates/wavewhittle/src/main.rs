//! Command-line front end: analysis, simulation, Monte Carlo, kernel tables.

fn main() {
    // The clap-based dispatcher lands with the `cli` module; keep the binary
    // compiling while the library comes up underneath it.
    eprintln!("wavewhittle: command-line interface not wired up yet");
    std::process::exit(2);
}
