//! Central-difference verification of every layer's analytic gradients.
//!
//! Each op runs in 64-bit mode against a randomly weighted scalar loss; the
//! report lists the worst relative error over all parameter coordinates.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use ftbrain::numcore::gradcheck::{run_all, TOLERANCE};

fn main() {
    let seeds = [3u64, 17, 90210];
    let mut worst: f64 = 0.0;
    for seed in seeds {
        println!("seed {seed}:");
        for check in run_all(seed) {
            println!(
                "  {:<28} max rel err {:>9.2e} over {} coords",
                check.name, check.max_rel_err, check.coords
            );
            worst = worst.max(check.max_rel_err);
        }
    }
    println!();
    if worst < TOLERANCE {
        println!("all gradients agree with central differences (worst {worst:.2e} < {TOLERANCE:.0e})");
    } else {
        println!("GRADIENT MISMATCH: worst {worst:.2e} >= {TOLERANCE:.0e}");
        std::process::exit(1);
    }
}
