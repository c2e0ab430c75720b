//! Shift kernels against multiply kernels on power-of-two schemes.

use lpnum::cli::conformance::shift_suite;
use lpnum::data::{synthesize, Split, SyntheticSpec};
use lpnum::network::{KernelMode, LayerSpec, NetworkState, ParameterClass, Pass, SchemeConfig, Topology};
use lpnum::trainer::{train_batch, TrainConfig};
use lpnum::RoundingMode;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn pot_state(mode: KernelMode, seed: u64) -> NetworkState {
    let mut s = NetworkState::new(
        Topology::compact((3, 8, 8), 4),
        SchemeConfig::from_name("pot").unwrap(),
        RoundingMode::Stochastic,
        seed,
    )
    .unwrap();
    s.set_kernel_mode(mode);
    s
}

fn data() -> (Vec<f64>, Vec<usize>) {
    let spec = SyntheticSpec {
        classes: 4,
        per_class: 5,
        shape: (3, 8, 8),
        ..SyntheticSpec::default()
    };
    let ds = synthesize(&spec, Split::Train).unwrap();
    ds.gather(&(0..ds.len()).collect::<Vec<_>>())
}

#[test]
fn single_neuron_forward_flow() {
    let t = Topology {
        name: "neuron".into(),
        input: (3, 1, 1),
        layers: vec![LayerSpec::fc("fc", 1), LayerSpec::softmax("loss")],
    };
    let mut s = NetworkState::new(t, SchemeConfig::from_name("pot").unwrap(), RoundingMode::Nearest, 1).unwrap();
    s.set_tensor(0, ParameterClass::Weights, vec![0.25, -0.375, 0.125])
        .unwrap();
    s.set_tensor(0, ParameterClass::Biases, vec![0.0625]).unwrap();
    let pass = Pass::Infer { tag: 0 };
    let x = s.quantize_input(&[1.0, 0.3, -2.2], pass).unwrap();
    assert_eq!(x, [1.0, 0.25, -2.0]);
    let out = s.forward(&[1.0, 0.3, -2.2], 1, pass).unwrap();
    // 0.25 - 0.09375 - 0.25 + 0.0625, a power of two already
    assert_eq!(out.logits, [-0.03125]);
    assert_eq!(out.counts.shift, 3);
    assert_eq!(out.counts.mul, 0);
}

#[test]
fn forward_and_backward_are_bit_exact() {
    let (x, y) = data();
    let a = pot_state(KernelMode::Auto, 3);
    let b = pot_state(KernelMode::Multiply, 3);
    let ca = a.forward_with(&x, y.len(), Pass::Train, true).unwrap();
    let cb = b.forward_with(&x, y.len(), Pass::Train, true).unwrap();
    assert_eq!(bits(&ca.logits), bits(&cb.logits));
    for (oa, ob) in ca.outputs.as_ref().unwrap().iter().zip(cb.outputs.as_ref().unwrap()) {
        assert_eq!(bits(oa), bits(ob));
    }
    assert!(ca.counts.shift > 0 && cb.counts.shift == 0);
    let ga = a.backward_with(&ca, &y, true).unwrap();
    let gb = b.backward_with(&cb, &y, true).unwrap();
    for (pa, pb) in ga.params.iter().zip(&gb.params) {
        match (pa, pb) {
            (Some((wa, ba)), Some((wb, bb))) => {
                assert_eq!(bits(wa), bits(wb));
                assert_eq!(bits(ba), bits(bb));
            }
            (None, None) => {}
            _ => panic!("parametric layers differ"),
        }
    }
    for (da, db) in ga.output_grads.unwrap().iter().zip(&gb.output_grads.unwrap()) {
        assert_eq!(bits(da), bits(db));
    }
}

#[test]
fn states_agree_after_many_iterations() {
    let (x, y) = data();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        check_conformance: true,
        ..TrainConfig::default()
    };
    let mut a = pot_state(KernelMode::Auto, 8);
    let mut b = pot_state(KernelMode::Multiply, 8);
    for _ in 0..12 {
        let ra = train_batch(&mut a, &x, &y, &cfg).unwrap();
        let rb = train_batch(&mut b, &x, &y, &cfg).unwrap();
        assert_eq!(ra.0.to_bits(), rb.0.to_bits());
        assert_eq!(ra.1, rb.1);
        assert_eq!(ra.3, rb.3);
    }
    assert_eq!(a.layer_params(), b.layer_params());
    assert!(a
        .layer_params()
        .iter()
        .flatten()
        .any(|p| p.weight_momentum.iter().any(|u| *u != 0.0)));
}

#[test]
fn shift_dot_matches_dot() {
    let r = shift_suite(500, 300, 4).unwrap();
    assert!(r.passed(), "{}", r.render());
}
