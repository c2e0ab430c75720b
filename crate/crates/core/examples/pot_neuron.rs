//! One neuron with three incoming connections under the power-of-two
//! scheme: fixed[0,12] weights, pot outputs, shift-based forward pass.

use lpnum::network::{LayerSpec, NetworkState, ParameterClass, Pass, SchemeConfig, Topology};
use lpnum::RoundingMode;

fn main() -> lpnum::Result<()> {
    let topology = Topology {
        name: "neuron".into(),
        input: (3, 1, 1),
        layers: vec![LayerSpec::fc("fc", 1), LayerSpec::softmax("loss")],
    };
    let mut state = NetworkState::new(topology, SchemeConfig::from_name("pot")?, RoundingMode::Nearest, 1)?;
    state.set_tensor(0, ParameterClass::Weights, vec![0.25, -0.375, 0.125])?;
    state.set_tensor(0, ParameterClass::Biases, vec![0.0625])?;
    // inputs are quantized to powers of two on the way in
    let input = [1.0, 0.3, -2.2];
    let out = state.forward(&input, 1, Pass::Infer { tag: 0 })?;
    println!(
        "quantized input: {:?}",
        state.quantize_input(&input, Pass::Infer { tag: 0 })?
    );
    println!("output: {:?}", out.logits);
    println!("tallies: {:?}", out.counts);
    Ok(())
}
