//! Backward pass against finite differences, and the loss against a naive
//! formula.

use lpnum::cli::conformance::{gradient_suite, gradient_topology};
use lpnum::network::{loss, softmax_xent_grad, LayerSpec, NetworkState, ParameterClass, Pass, SchemeConfig, Topology};
use lpnum::{RngStream, RoundingMode};
use proptest::prelude::*;

fn wide(topology: Topology, seed: u64) -> NetworkState {
    NetworkState::new(
        topology,
        SchemeConfig::from_name("fp32-baseline").unwrap(),
        RoundingMode::Nearest,
        seed,
    )
    .unwrap()
}

fn randomize(state: &mut NetworkState, rng: &mut RngStream, std: f64) {
    for i in 0..state.layer_params().len() {
        let Some(p) = state.layer_params()[i].clone() else {
            continue;
        };
        let w = (0..p.weights.len()).map(|_| std * rng.normal()).collect();
        let b = (0..p.biases.len()).map(|_| std * rng.normal()).collect();
        state.set_tensor(i, ParameterClass::Weights, w).unwrap();
        state.set_tensor(i, ParameterClass::Biases, b).unwrap();
    }
}

#[test]
fn linear_layer_gradient_is_exact() {
    let mut rng = RngStream::new(11);
    let mut s = wide(Topology::linear(5, 3), 11);
    randomize(&mut s, &mut rng, 0.7);
    let x: Vec<f64> = (0..4 * 5).map(|_| rng.normal()).collect();
    let y = vec![0, 2, 1, 2];
    let cache = s.forward(&x, 4, Pass::Train).unwrap();
    let (gw, gb) = s.backward(&cache, &y).unwrap().params[0].clone().unwrap();
    let h = 1e-6;
    for (c, g) in [(ParameterClass::Weights, gw), (ParameterClass::Biases, gb)] {
        let base = s.layer_params()[0].as_ref().unwrap().tensor(c).unwrap().0.to_vec();
        for (j, analytic) in g.iter().enumerate() {
            let mut at = |d: f64| {
                let mut v = base.clone();
                v[j] += d;
                s.set_tensor(0, c, v).unwrap();
                loss(&s.forward(&x, 4, Pass::Train).unwrap().logits, &y, 3).unwrap()
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-6, "{c}[{j}]: {analytic} vs {numeric}");
        }
        s.set_tensor(0, c, base).unwrap();
    }
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    let (report, worst) = gradient_suite(gradient_topology(), 3, 1e-4, 5).unwrap();
    assert!(report.passed(), "{}", report.render());
    let names: Vec<&str> = worst.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["conv1", "conv2", "fc1", "fc2", "fc3"]);
}

#[test]
fn dead_relu_units_pass_no_gradient() {
    let t = Topology {
        name: "dead".into(),
        input: (4, 1, 1),
        layers: vec![
            LayerSpec::fc("fc1", 3),
            LayerSpec::relu("relu1"),
            LayerSpec::fc("fc2", 2),
            LayerSpec::softmax("loss"),
        ],
    };
    let mut rng = RngStream::new(2);
    let mut s = wide(t, 2);
    randomize(&mut s, &mut rng, 0.5);
    s.set_tensor(0, ParameterClass::Biases, vec![-100.0, 0.0, 0.0]).unwrap();
    let x: Vec<f64> = (0..2 * 4).map(|_| rng.unit() - 0.5).collect();
    let cache = s.forward(&x, 2, Pass::Train).unwrap();
    let g = s.backward(&cache, &[0, 1]).unwrap();
    let (gw, gb) = g.params[0].as_ref().unwrap();
    assert!(gw[..4].iter().all(|v| *v == 0.0));
    assert_eq!(gb[0], 0.0);
    assert!(gw[4..].iter().any(|v| *v != 0.0));
}

#[test]
fn zero_weights_give_uniform_loss() {
    let mut s = wide(Topology::compact((3, 8, 8), 10), 4);
    for i in 0..s.layer_params().len() {
        let Some(p) = s.layer_params()[i].clone() else { continue };
        s.set_tensor(i, ParameterClass::Weights, vec![0.0; p.weights.len()])
            .unwrap();
    }
    let mut rng = RngStream::new(4);
    let x: Vec<f64> = (0..5 * 192).map(|_| rng.unit()).collect();
    let logits = s.forward(&x, 5, Pass::Infer { tag: 0 }).unwrap().logits;
    let l = loss(&logits, &[0, 1, 2, 3, 9], 10).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-12, "{l}");
}

#[test]
fn confident_predictions_cost_nothing() {
    let l = loss(&[1e4, 0.0, -3.0], &[0], 3).unwrap();
    assert!(l.is_finite() && l < 1e-12);
    let l = loss(&[1e4, 0.0, -3.0], &[1], 3).unwrap();
    assert!((l - 1e4).abs() < 1e-9);
    let g = softmax_xent_grad(&[1e4, 0.0], &[0], 2).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-300 || v.is_finite()));
}

fn logits(classes: usize) -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1usize..5).prop_flat_map(move |n| {
        (
            prop::collection::vec(-40.0f64..40.0, n * classes),
            prop::collection::vec(0..classes, n),
        )
    })
}

proptest! {
    #[test]
    fn loss_matches_naive_formula((z, y) in logits(4)) {
        let naive: f64 = z
            .chunks(4)
            .zip(&y)
            .map(|(row, &t)| -(row[t].exp() / row.iter().map(|v| v.exp()).sum::<f64>()).ln())
            .sum::<f64>()
            / y.len() as f64;
        let got = loss(&z, &y, 4).unwrap();
        prop_assert!((got - naive).abs() <= 1e-12 * naive.abs().max(1.0), "{} vs {}", got, naive);
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero((z, y) in logits(3)) {
        let g = softmax_xent_grad(&z, &y, 3).unwrap();
        for row in g.chunks(3) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        let h = 1e-6;
        for j in 0..z.len() {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[j] += h;
            b[j] -= h;
            let numeric = (loss(&a, &y, 3).unwrap() - loss(&b, &y, 3).unwrap()) / (2.0 * h);
            prop_assert!((numeric - g[j]).abs() < 1e-7, "{} vs {}", numeric, g[j]);
        }
    }
}
