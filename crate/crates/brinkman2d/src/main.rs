fn main() {
    // Placeholder during bring-up; the CLI is wired in harness.
    eprintln!("brinkman2d CLI not yet wired");
    std::process::exit(2);
}
