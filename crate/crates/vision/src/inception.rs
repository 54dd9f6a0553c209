//! Inception-ResNet-v2 backbone in the Keras layout (stem, 10×block35,
//! reduction A, 20×block17, reduction B, 10×block8, 1536-channel 1×1 conv).
//! Batch norm uses eps 0.001; residual branches are scaled by 0.17, 0.10
//! and 0.20.

use candle_core::{Result, Tensor};
use candle_nn::{batch_norm, BatchNorm, BatchNormConfig, Init, ModuleT, VarBuilder};

#[derive(Debug, Clone, Copy)]
enum Pad {
    Same,
    Valid,
}

struct ConvBn {
    weight: Tensor,
    bias: Option<Tensor>,
    bn: Option<BatchNorm>,
    stride: usize,
    pad: (usize, usize),
    relu: bool,
}

impl ConvBn {
    fn new(cin: usize, cout: usize, k: (usize, usize), stride: usize, pad: Pad, vb: VarBuilder) -> Result<Self> {
        let weight = vb.pp("conv").get_with_hints((cout, cin, k.0, k.1), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
        let bn_cfg = BatchNormConfig {
            eps: 0.001,
            ..Default::default()
        };
        let pad = match pad {
            Pad::Same => ((k.0 - 1) / 2, (k.1 - 1) / 2),
            Pad::Valid => (0, 0),
        };
        Ok(Self {
            weight,
            bias: None,
            bn: Some(batch_norm(cout, bn_cfg, vb.pp("bn"))?),
            stride,
            pad,
            relu: true,
        })
    }

    fn sq(cin: usize, cout: usize, k: usize, vb: VarBuilder) -> Result<Self> {
        Self::new(cin, cout, (k, k), 1, Pad::Same, vb)
    }

    /// Plain 1×1 projection with bias, no normalization or activation.
    fn projection(cin: usize, cout: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints((cout, cin, 1, 1), "weight", candle_nn::init::DEFAULT_KAIMING_NORMAL)?;
        let bias = vb.get_with_hints(cout, "bias", Init::Const(0.0))?;
        Ok(Self {
            weight,
            bias: Some(bias),
            bn: None,
            stride: 1,
            pad: (0, 0),
            relu: false,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut x = x.clone();
        if self.pad.0 > 0 {
            x = x.pad_with_zeros(2, self.pad.0, self.pad.0)?;
        }
        if self.pad.1 > 0 {
            x = x.pad_with_zeros(3, self.pad.1, self.pad.1)?;
        }
        let mut y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(&b.reshape((1, (), 1, 1))?)?;
        }
        if let Some(bn) = &self.bn {
            y = bn.forward_t(&y, train)?;
        }
        if self.relu {
            y.relu()
        } else {
            Ok(y)
        }
    }
}

fn chain(convs: &[ConvBn], x: &Tensor, train: bool) -> Result<Tensor> {
    let mut h = x.clone();
    for c in convs {
        h = c.forward(&h, train)?;
    }
    Ok(h)
}

/// 3×3 stride-1 average pool with "same" padding, excluding padded cells
/// from the mean.
fn avg_pool_same(x: &Tensor) -> Result<Tensor> {
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let sums = padded.avg_pool2d_with_stride(3, 1)?;
    let (_, _, h, w) = x.dims4()?;
    let ones = Tensor::ones((1, 1, h, w), x.dtype(), x.device())?
        .pad_with_zeros(2, 1, 1)?
        .pad_with_zeros(3, 1, 1)?;
    let counts = ones.avg_pool2d_with_stride(3, 1)?;
    sums.broadcast_div(&counts)
}

struct Branches(Vec<Vec<ConvBn>>);

impl Branches {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        self.0.iter().map(|b| chain(b, x, train)).collect()
    }
}

struct Residual {
    branches: Branches,
    up: ConvBn,
    scale: f64,
    relu: bool,
}

impl Residual {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mixed = Tensor::cat(&self.branches.forward(x, train)?, 1)?;
        let y = (x + (self.up.forward(&mixed, train)? * self.scale)?)?;
        if self.relu {
            y.relu()
        } else {
            Ok(y)
        }
    }
}

fn block35(vb: VarBuilder, scale: f64) -> Result<Residual> {
    let b = |n: &str| vb.pp(n);
    Ok(Residual {
        branches: Branches(vec![
            vec![ConvBn::sq(320, 32, 1, b("b0"))?],
            vec![ConvBn::sq(320, 32, 1, b("b1_0"))?, ConvBn::sq(32, 32, 3, b("b1_1"))?],
            vec![
                ConvBn::sq(320, 32, 1, b("b2_0"))?,
                ConvBn::sq(32, 48, 3, b("b2_1"))?,
                ConvBn::sq(48, 64, 3, b("b2_2"))?,
            ],
        ]),
        up: ConvBn::projection(128, 320, b("up"))?,
        scale,
        relu: true,
    })
}

fn block17(vb: VarBuilder, scale: f64) -> Result<Residual> {
    let b = |n: &str| vb.pp(n);
    Ok(Residual {
        branches: Branches(vec![
            vec![ConvBn::sq(1088, 192, 1, b("b0"))?],
            vec![
                ConvBn::sq(1088, 128, 1, b("b1_0"))?,
                ConvBn::new(128, 160, (1, 7), 1, Pad::Same, b("b1_1"))?,
                ConvBn::new(160, 192, (7, 1), 1, Pad::Same, b("b1_2"))?,
            ],
        ]),
        up: ConvBn::projection(384, 1088, b("up"))?,
        scale,
        relu: true,
    })
}

fn block8(vb: VarBuilder, scale: f64, relu: bool) -> Result<Residual> {
    let b = |n: &str| vb.pp(n);
    Ok(Residual {
        branches: Branches(vec![
            vec![ConvBn::sq(2080, 192, 1, b("b0"))?],
            vec![
                ConvBn::sq(2080, 192, 1, b("b1_0"))?,
                ConvBn::new(192, 224, (1, 3), 1, Pad::Same, b("b1_1"))?,
                ConvBn::new(224, 256, (3, 1), 1, Pad::Same, b("b1_2"))?,
            ],
        ]),
        up: ConvBn::projection(448, 2080, b("up"))?,
        scale,
        relu,
    })
}

pub struct InceptionResNetV2 {
    stem_a: Vec<ConvBn>,
    stem_b: Vec<ConvBn>,
    mixed_5b: Branches,
    mixed_5b_pool: ConvBn,
    block35: Vec<Residual>,
    mixed_6a: Branches,
    block17: Vec<Residual>,
    mixed_7a: Branches,
    block8: Vec<Residual>,
    conv_7b: ConvBn,
}

/// Channel count of the final feature map.
pub const FEATURE_CHANNELS: usize = 1536;

impl InceptionResNetV2 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let s = vb.pp("stem");
        let stem_a = vec![
            ConvBn::new(3, 32, (3, 3), 2, Pad::Valid, s.pp("c1"))?,
            ConvBn::new(32, 32, (3, 3), 1, Pad::Valid, s.pp("c2"))?,
            ConvBn::sq(32, 64, 3, s.pp("c3"))?,
        ];
        let stem_b = vec![
            ConvBn::new(64, 80, (1, 1), 1, Pad::Valid, s.pp("c4"))?,
            ConvBn::new(80, 192, (3, 3), 1, Pad::Valid, s.pp("c5"))?,
        ];
        let m = vb.pp("mixed_5b");
        let mixed_5b = Branches(vec![
            vec![ConvBn::sq(192, 96, 1, m.pp("b0"))?],
            vec![ConvBn::sq(192, 48, 1, m.pp("b1_0"))?, ConvBn::sq(48, 64, 5, m.pp("b1_1"))?],
            vec![
                ConvBn::sq(192, 64, 1, m.pp("b2_0"))?,
                ConvBn::sq(64, 96, 3, m.pp("b2_1"))?,
                ConvBn::sq(96, 96, 3, m.pp("b2_2"))?,
            ],
        ]);
        let mixed_5b_pool = ConvBn::sq(192, 64, 1, m.pp("pool"))?;
        let block35 = (0..10)
            .map(|i| block35(vb.pp(format!("block35_{i}")), 0.17))
            .collect::<Result<_>>()?;
        let m = vb.pp("mixed_6a");
        let mixed_6a = Branches(vec![
            vec![ConvBn::new(320, 384, (3, 3), 2, Pad::Valid, m.pp("b0"))?],
            vec![
                ConvBn::sq(320, 256, 1, m.pp("b1_0"))?,
                ConvBn::sq(256, 256, 3, m.pp("b1_1"))?,
                ConvBn::new(256, 384, (3, 3), 2, Pad::Valid, m.pp("b1_2"))?,
            ],
        ]);
        let block17 = (0..20)
            .map(|i| block17(vb.pp(format!("block17_{i}")), 0.10))
            .collect::<Result<_>>()?;
        let m = vb.pp("mixed_7a");
        let mixed_7a = Branches(vec![
            vec![
                ConvBn::sq(1088, 256, 1, m.pp("b0_0"))?,
                ConvBn::new(256, 384, (3, 3), 2, Pad::Valid, m.pp("b0_1"))?,
            ],
            vec![
                ConvBn::sq(1088, 256, 1, m.pp("b1_0"))?,
                ConvBn::new(256, 288, (3, 3), 2, Pad::Valid, m.pp("b1_1"))?,
            ],
            vec![
                ConvBn::sq(1088, 256, 1, m.pp("b2_0"))?,
                ConvBn::sq(256, 288, 3, m.pp("b2_1"))?,
                ConvBn::new(288, 320, (3, 3), 2, Pad::Valid, m.pp("b2_2"))?,
            ],
        ]);
        let mut block8s = (0..9)
            .map(|i| block8(vb.pp(format!("block8_{i}")), 0.20, true))
            .collect::<Result<Vec<_>>>()?;
        block8s.push(block8(vb.pp("block8_9"), 1.0, false)?);
        let conv_7b = ConvBn::sq(2080, FEATURE_CHANNELS, 1, vb.pp("conv_7b"))?;
        Ok(Self {
            stem_a,
            stem_b,
            mixed_5b,
            mixed_5b_pool,
            block35,
            mixed_6a,
            block17,
            mixed_7a,
            block8: block8s,
            conv_7b,
        })
    }

    /// Output of the last convolution, `[n, 1536, h, w]`.
    pub fn features(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = chain(&self.stem_a, x, train)?.max_pool2d_with_stride(3, 2)?;
        h = chain(&self.stem_b, &h, train)?.max_pool2d_with_stride(3, 2)?;
        let mut parts = self.mixed_5b.forward(&h, train)?;
        parts.push(self.mixed_5b_pool.forward(&avg_pool_same(&h)?, train)?);
        h = Tensor::cat(&parts, 1)?;
        for b in &self.block35 {
            h = b.forward(&h, train)?;
        }
        let mut parts = self.mixed_6a.forward(&h, train)?;
        parts.push(h.max_pool2d_with_stride(3, 2)?);
        h = Tensor::cat(&parts, 1)?;
        for b in &self.block17 {
            h = b.forward(&h, train)?;
        }
        let mut parts = self.mixed_7a.forward(&h, train)?;
        parts.push(h.max_pool2d_with_stride(3, 2)?);
        h = Tensor::cat(&parts, 1)?;
        for b in &self.block8 {
            h = b.forward(&h, train)?;
        }
        self.conv_7b.forward(&h, train)
    }
}
