//! A context shares one power-of-two scale across a set of values, so a
//! 12-bit grid follows the magnitudes of the set instead of a fixed range.

use lpnum::context::{compute_scale_exponent, requantize_in_context, ContextBase};
use lpnum::RoundingMode;

fn main() -> lpnum::Result<()> {
    let gradients = [3.1e-5, -7.4e-6, 1.2e-5, 0.0, -2.2e-5];
    for base in [ContextBase::fixed(6, 6)?, ContextBase::float(4, 7)?] {
        let mut v = gradients.to_vec();
        let ctx = requantize_in_context(&mut v, base, "fc2/gradients", RoundingMode::Nearest, None)?;
        println!("{base}: scale 2^{}", ctx.scale_exponent);
        for (a, b) in gradients.iter().zip(&v) {
            println!("  {a:>10.3e} -> {b:>10.3e}");
        }
    }
    // the plain format loses every one of these values
    let plain: lpnum::ScaledFormat = "fixed[6,6]".parse()?;
    let lost: Vec<f64> = gradients
        .iter()
        .map(|&g| plain.quantize(g, RoundingMode::Nearest, None))
        .collect::<lpnum::Result<_>>()?;
    println!("plain fixed[6,6]: {lost:?}");
    println!("scale exponent of the raw set: {}", compute_scale_exponent(&gradients)?);
    Ok(())
}
