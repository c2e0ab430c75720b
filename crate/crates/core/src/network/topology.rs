//! Layer specifications and shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        name: String,
        kernel: usize,
        stride: usize,
    },
    Relu {
        name: String,
    },
    FullyConnected {
        name: String,
        outputs: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Dropout {
        name: String,
        keep: f64,
    },
    SoftmaxXent {
        name: String,
    },
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            Self::Conv { name, .. }
            | Self::MaxPool { name, .. }
            | Self::Relu { name }
            | Self::FullyConnected { name, .. }
            | Self::Dropout { name, .. }
            | Self::SoftmaxXent { name } => name,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::FullyConnected { .. })
    }

    pub fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self::Conv {
            name: name.into(),
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn max_pool(name: &str, kernel: usize, stride: usize) -> Self {
        Self::MaxPool {
            name: name.into(),
            kernel,
            stride,
        }
    }

    pub fn relu(name: &str) -> Self {
        Self::Relu { name: name.into() }
    }

    pub fn fc(name: &str, outputs: usize) -> Self {
        Self::FullyConnected {
            name: name.into(),
            outputs,
            bias: true,
        }
    }

    pub fn dropout(name: &str, keep: f64) -> Self {
        Self::Dropout {
            name: name.into(),
            keep,
        }
    }

    pub fn softmax(name: &str) -> Self {
        Self::SoftmaxXent { name: name.into() }
    }
}

/// Per-image activation shape `(channels, height, width)`; flat tensors use
/// `(n, 1, 1)`.
pub type Shape3 = (usize, usize, usize);

pub fn numel(s: Shape3) -> usize {
    s.0 * s.1 * s.2
}

/// Resolved geometry of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeometry {
    pub input: Shape3,
    pub output: Shape3,
    pub weight_count: usize,
    pub bias_count: usize,
}

impl LayerGeometry {
    pub fn param_count(&self) -> usize {
        self.weight_count + self.bias_count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub name: String,
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
}

fn pooled(n: usize, k: usize, s: usize) -> usize {
    if n < k {
        0
    } else {
        (n - k) / s + 1
    }
}

impl Topology {
    /// conv→pool→relu ×3 (32, 32, 64 kernels of 5×5), FC 1000 with dropout,
    /// FC 10, softmax cross-entropy, on 3×32×32 inputs.
    pub fn cifar10_cnn() -> Self {
        let mut layers = Vec::new();
        for (i, ch) in [32, 32, 64].into_iter().enumerate() {
            let k = i + 1;
            layers.push(LayerSpec::conv(&format!("conv{k}"), ch, 5, 1, 2));
            layers.push(LayerSpec::max_pool(&format!("pool{k}"), 3, 2));
            layers.push(LayerSpec::relu(&format!("relu{k}")));
        }
        layers.push(LayerSpec::fc("fc1", 1000));
        layers.push(LayerSpec::relu("relu4"));
        layers.push(LayerSpec::dropout("drop1", 0.6));
        layers.push(LayerSpec::fc("fc2", 10));
        layers.push(LayerSpec::softmax("loss"));
        Self {
            name: "cifar10-cnn".into(),
            input: (3, 32, 32),
            layers,
        }
    }

    /// Same layer sequence at reduced width for fast runs on small images.
    pub fn compact(input: Shape3, classes: usize) -> Self {
        Self {
            name: "compact".into(),
            input,
            layers: vec![
                LayerSpec::conv("conv1", 8, 3, 1, 1),
                LayerSpec::max_pool("pool1", 2, 2),
                LayerSpec::relu("relu1"),
                LayerSpec::fc("fc1", 32),
                LayerSpec::relu("relu2"),
                LayerSpec::dropout("drop1", 0.6),
                LayerSpec::fc("fc2", classes),
                LayerSpec::softmax("loss"),
            ],
        }
    }

    /// Single fully connected layer feeding the softmax.
    pub fn linear(inputs: usize, classes: usize) -> Self {
        Self {
            name: "linear".into(),
            input: (inputs, 1, 1),
            layers: vec![LayerSpec::fc("fc1", classes), LayerSpec::softmax("loss")],
        }
    }

    pub fn by_name(name: &str, input: Shape3, classes: usize) -> Result<Self> {
        match name {
            "cifar10-cnn" => Ok(Self::cifar10_cnn()),
            "compact" => Ok(Self::compact(input, classes)),
            "linear" => Ok(Self::linear(numel(input), classes)),
            _ => Err(Error::Config(format!("unknown topology '{name}'"))),
        }
    }

    pub fn geometry(&self) -> Result<Vec<LayerGeometry>> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (c, h, w) = cur;
            let (next, wc, bc) = match l {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    if *kernel == 0 || *stride == 0 || h + 2 * pad < *kernel || w + 2 * pad < *kernel {
                        return Err(Error::Topology(format!("{}: kernel does not fit", l.name())));
                    }
                    let oh = (h + 2 * pad - kernel) / stride + 1;
                    let ow = (w + 2 * pad - kernel) / stride + 1;
                    (
                        (*out_channels, oh, ow),
                        out_channels * c * kernel * kernel,
                        *out_channels,
                    )
                }
                LayerSpec::MaxPool { kernel, stride, .. } => {
                    if *kernel == 0 || *stride == 0 || h < *kernel || w < *kernel {
                        return Err(Error::Topology(format!("{}: window does not fit", l.name())));
                    }
                    ((c, pooled(h, *kernel, *stride), pooled(w, *kernel, *stride)), 0, 0)
                }
                LayerSpec::Relu { .. } => (cur, 0, 0),
                LayerSpec::Dropout { keep, .. } => {
                    if !(*keep > 0.0 && *keep <= 1.0) {
                        return Err(Error::Topology(format!("{}: keep probability {keep}", l.name())));
                    }
                    (cur, 0, 0)
                }
                LayerSpec::FullyConnected { outputs, bias, .. } => {
                    let n = numel(cur);
                    ((*outputs, 1, 1), outputs * n, if *bias { *outputs } else { 0 })
                }
                LayerSpec::SoftmaxXent { .. } => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Topology("softmax must be the last layer".into()));
                    }
                    (cur, 0, 0)
                }
            };
            out.push(LayerGeometry {
                input: cur,
                output: next,
                weight_count: wc,
                bias_count: bc,
            });
            cur = next;
        }
        if !matches!(self.layers.last(), Some(LayerSpec::SoftmaxXent { .. })) {
            return Err(Error::Topology("topology must end in a softmax layer".into()));
        }
        Ok(out)
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(numel(self.geometry()?.last().expect("nonempty").output))
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.geometry()?.iter().map(|g| g.param_count()).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_geometry() {
        let t = Topology::cifar10_cnn();
        let g = t.geometry().unwrap();
        assert_eq!(g[0].output, (32, 32, 32));
        assert_eq!(g[1].output, (32, 15, 15));
        assert_eq!(g[4].output, (32, 7, 7));
        assert_eq!(g[7].output, (64, 3, 3));
        assert_eq!(numel(g[9].input), 576);
        assert_eq!(t.classes().unwrap(), 10);
        // 32*75+32 + 32*800+32 + 64*800+64 + 576*1000+1000 + 1000*10+10
        assert_eq!(t.param_count().unwrap(), 666_338);
    }

    #[test]
    fn bad_topologies() {
        let mut t = Topology::linear(4, 2);
        t.layers.pop();
        assert!(t.geometry().is_err());
        let t = Topology {
            name: "x".into(),
            input: (1, 2, 2),
            layers: vec![LayerSpec::conv("c", 1, 5, 1, 0), LayerSpec::softmax("l")],
        };
        assert!(matches!(t.geometry(), Err(Error::Topology(_))));
    }

    #[test]
    fn serde_roundtrip() {
        let t = Topology::cifar10_cnn();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Topology>(&s).unwrap(), t);
    }
}
