//! Writes the seeded cervical-like CSV to stdout.
//!
//! `cargo run -p fedcontrib --example synthetic_csv -- [rows] [seed] > data/cervical_synthetic.csv`

use fedcontrib::synthetic::{cervical_like_csv, UCI_ROWS};

fn main() {
    let mut args = std::env::args().skip(1);
    let rows = args
        .next()
        .map_or(UCI_ROWS, |a| a.parse().expect("rows must be an integer"));
    let seed = args
        .next()
        .map_or(2019, |a| a.parse().expect("seed must be an integer"));
    print!("{}", cervical_like_csv(rows, seed));
}
