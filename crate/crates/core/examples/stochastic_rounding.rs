//! Stochastic rounding is unbiased: the mean of many roundings of one value
//! converges to the value, while nearest rounding is stuck on one codepoint.

use lpnum::qformats::{bracket, stochastic_round, GlobalScale};
use lpnum::{NumericFormat, RngStream};

fn main() -> lpnum::Result<()> {
    let fmt: NumericFormat = "fixed[0,12]".parse()?;
    let x = 0.1 + 0.3 * 2f64.powi(-12);
    let b = bracket(x, &fmt, GlobalScale::ONE)?;
    println!("x = {x} lies between {} and {}", b.lo, b.hi);
    let mut rng = RngStream::new(7);
    for draws in [10, 1_000, 100_000] {
        let mut sum = 0.0;
        for _ in 0..draws {
            sum += stochastic_round(x, &fmt, GlobalScale::ONE, &mut rng)?;
        }
        let mean = sum / draws as f64;
        println!("{draws:>7} draws: mean {mean:.9}, error {:.3e}", (mean - x).abs());
    }
    Ok(())
}
