//! With power-of-two inputs every product is an exponent shift; the shift
//! kernel gives bit-identical sums without a single multiply.

use lpnum::qtensor::{dot, shift_dot, OpCounts, QTensor, TensorFormat};
use lpnum::{NumericFormat, RoundingMode, ScaledFormat};

fn main() -> lpnum::Result<()> {
    let wf = ScaledFormat::unscaled("fixed[0,12]".parse()?);
    let xf = ScaledFormat::unscaled(NumericFormat::pot(6)?);
    let w = QTensor::vector(vec![0.25, -0.123046875, 0.4990234375, 0.0], TensorFormat::Plain(wf))?;
    let x = QTensor::vector(vec![0.5, 8.0, -0.0078125, 2.0], TensorFormat::Plain(xf))?;
    let out = ScaledFormat::unscaled("fixed[6,6]".parse()?);
    let mut mc = OpCounts::default();
    let mut sc = OpCounts::default();
    let a = dot(&w, &x, &out, RoundingMode::Nearest, None, &mut mc)?;
    let b = shift_dot(&w, &x, &out, RoundingMode::Nearest, None, &mut sc)?;
    println!("dot       = {a} ({} mul, {} add)", mc.mul, mc.add);
    println!("shift_dot = {b} ({} shift, {} add)", sc.shift, sc.add);
    assert_eq!(a.to_bits(), b.to_bits());
    Ok(())
}
