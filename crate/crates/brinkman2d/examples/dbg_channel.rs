use brinkman2d::harness::*;

fn main() {
    let da: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let opts = RunOptions { max_steps: Some(5000), ..Default::default() };
    match verify_channel(ChannelCase::Fat, da, &opts) {
        Ok(r) => println!(
            "ftl Da={da:.1e}: N_T={} steps={} steady={} cfl={:.3} mismatch={:.4} wall={:.1}s",
            r.n_cells, r.steps, r.steady, r.cfl_max, r.mismatch, r.wall_seconds
        ),
        Err(e) => println!("FAILED: {e}"),
    }
}
