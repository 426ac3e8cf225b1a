//! Countermeasure networks: SE-ResNets, the mean-std pooling ResNet, the
//! dilated ResNet and the attentive-filtering network.
//!
//! Inputs are single-channel images `N x 1 x D x T` (frequency on the height
//! axis, time on the width axis).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::featmap::{PaddedBatch, SegmentSet};
use crate::nn::{BatchNorm2d, Conv2d, ConvGeom, Forward, Linear, ParamStore, Tensor, Var};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    SeNet34,
    SeNet50,
    MeanStdResNet,
    DilatedResNet,
    Afn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::SeNet34,
        ModelKind::SeNet50,
        ModelKind::MeanStdResNet,
        ModelKind::DilatedResNet,
        ModelKind::Afn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SeNet34 => "senet34",
            ModelKind::SeNet50 => "senet50",
            ModelKind::MeanStdResNet => "meanstd_resnet",
            ModelKind::DilatedResNet => "dilated_resnet",
            ModelKind::Afn => "afn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind `{s}`")))
    }

    /// Whether the network pools over a variable number of frames.
    pub fn accepts_variable_length(self) -> bool {
        self == ModelKind::MeanStdResNet
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Basic,
    Bottleneck,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Basic => "basic",
            UnitKind::Bottleneck => "bottleneck",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(UnitKind::Basic),
            "bottleneck" => Ok(UnitKind::Bottleneck),
            _ => Err(Error::InvalidConfig(format!("unknown unit kind `{s}`"))),
        }
    }
}

/// Full architecture description. [`ModelConfig::new`] fills in the
/// reference layout for each kind; fields may be edited afterwards (for
/// example to build reduced networks for tests).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub unit: UnitKind,
    pub units: [usize; 4],
    pub channels: [usize; 4],
    pub dilations: [usize; 4],
    pub se_reduction: usize,
    pub bottleneck_expansion: usize,
    pub attention_channels: usize,
    pub attention_down_dilations: [usize; 4],
    pub attention_up_dilations: [usize; 4],
    /// Combine the attention mask as `x * (1 + S)` instead of `x * S`.
    pub residual_mask: bool,
    pub pool_eps: f64,
    pub n_classes: usize,
    pub input_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, n_classes: usize, input_dim: usize) -> Self {
        let (unit, units, channels, dilations) = match kind {
            ModelKind::SeNet34 => (UnitKind::Basic, [3, 4, 6, 3], [16, 32, 64, 128], [1; 4]),
            ModelKind::SeNet50 => (
                UnitKind::Bottleneck,
                [3, 4, 6, 3],
                [16, 32, 64, 128],
                [1; 4],
            ),
            ModelKind::MeanStdResNet => (UnitKind::Basic, [3, 4, 6, 3], [16, 32, 64, 128], [1; 4]),
            ModelKind::DilatedResNet | ModelKind::Afn => {
                (UnitKind::Basic, [5; 4], [8, 16, 32, 64], [2, 4, 4, 8])
            }
        };
        Self {
            kind,
            unit,
            units,
            channels,
            dilations,
            se_reduction: 16,
            bottleneck_expansion: 2,
            attention_channels: 8,
            attention_down_dilations: [1, 2, 4, 8],
            attention_up_dilations: [1; 4],
            residual_mask: false,
            pool_eps: 1e-5,
            n_classes,
            input_dim,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.channels.contains(&0) || self.units.contains(&0) {
            return bad(format!(
                "channels {:?} and units {:?} must be positive",
                self.channels, self.units
            ));
        }
        if self.dilations.contains(&0)
            || self.attention_down_dilations.contains(&0)
            || self.attention_up_dilations.contains(&0)
        {
            return bad("dilation rates must be at least 1".into());
        }
        if self.se_reduction == 0 || self.bottleneck_expansion == 0 || self.attention_channels == 0
        {
            return bad(
                "se_reduction, bottleneck_expansion and attention_channels must be positive".into(),
            );
        }
        match self.kind {
            ModelKind::SeNet34
            | ModelKind::MeanStdResNet
            | ModelKind::DilatedResNet
            | ModelKind::Afn
                if self.unit != UnitKind::Basic =>
            {
                bad(format!("{} uses basic units", self.kind))
            }
            ModelKind::DilatedResNet | ModelKind::Afn if self.input_dim < 16 => bad(format!(
                "{} needs at least 16 feature bins, got {}",
                self.kind, self.input_dim
            )),
            _ => Ok(()),
        }
    }

    /// `key = value` lines describing this configuration.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let arr = |a: &[usize; 4]| format!("{},{},{},{}", a[0], a[1], a[2], a[3]);
        vec![
            ("kind".into(), self.kind.as_str().into()),
            ("unit".into(), self.unit.as_str().into()),
            ("units".into(), arr(&self.units)),
            ("channels".into(), arr(&self.channels)),
            ("dilations".into(), arr(&self.dilations)),
            ("se_reduction".into(), self.se_reduction.to_string()),
            (
                "bottleneck_expansion".into(),
                self.bottleneck_expansion.to_string(),
            ),
            (
                "attention_channels".into(),
                self.attention_channels.to_string(),
            ),
            (
                "attention_down_dilations".into(),
                arr(&self.attention_down_dilations),
            ),
            (
                "attention_up_dilations".into(),
                arr(&self.attention_up_dilations),
            ),
            ("residual_mask".into(), self.residual_mask.to_string()),
            ("pool_eps".into(), format!("{:e}", self.pool_eps)),
            ("n_classes".into(), self.n_classes.to_string()),
            ("input_dim".into(), self.input_dim.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// Inverse of [`ModelConfig::to_pairs`]; `kind`, `n_classes` and
    /// `input_dim` are required, other keys default to the reference layout.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let get = |k: &str| {
            pairs
                .iter()
                .rev()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
        };
        let need = |k: &str| {
            get(k).ok_or_else(|| Error::InvalidConfig(format!("missing model key `{k}`")))
        };
        let num = |k: &str, v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("`{k}`: not a count: `{v}`")))
        };
        let arr = |k: &str, v: &str| -> Result<[usize; 4]> {
            let items: Vec<usize> = v.split(',').map(|s| num(k, s)).collect::<Result<_>>()?;
            items
                .try_into()
                .map_err(|_| Error::InvalidConfig(format!("`{k}` needs four values")))
        };
        let kind = ModelKind::parse(need("kind")?)?;
        let mut cfg = Self::new(
            kind,
            num("n_classes", need("n_classes")?)?,
            num("input_dim", need("input_dim")?)?,
        );
        for &(k, v) in &pairs {
            match k {
                "kind" | "n_classes" | "input_dim" => {}
                "unit" => cfg.unit = UnitKind::parse(v)?,
                "units" => cfg.units = arr(k, v)?,
                "channels" => cfg.channels = arr(k, v)?,
                "dilations" => cfg.dilations = arr(k, v)?,
                "se_reduction" => cfg.se_reduction = num(k, v)?,
                "bottleneck_expansion" => cfg.bottleneck_expansion = num(k, v)?,
                "attention_channels" => cfg.attention_channels = num(k, v)?,
                "attention_down_dilations" => cfg.attention_down_dilations = arr(k, v)?,
                "attention_up_dilations" => cfg.attention_up_dilations = arr(k, v)?,
                "residual_mask" => {
                    cfg.residual_mask = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("`{k}`: expected true/false")))?
                }
                "pool_eps" => {
                    cfg.pool_eps = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("`{k}`: not a number")))?
                }
                "seed" => {
                    cfg.seed = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("`{k}`: not an integer")))?
                }
                other => return Err(Error::InvalidConfig(format!("unknown model key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Squeeze-and-excitation gate: channel means, a two-layer bottleneck MLP
/// and a sigmoid rescale per channel.
#[derive(Debug, Clone)]
pub struct SeBlock {
    fc1: Linear,
    fc2: Linear,
    channels: usize,
}

impl SeBlock {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, channels, true, rng),
            channels,
        }
    }

    pub fn fc1(&self) -> &Linear {
        &self.fc1
    }

    pub fn fc2(&self) -> &Linear {
        &self.fc2
    }

    /// The per-channel gates `N x C`.
    pub fn excitation<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let c = f.value(x).shape().get(1).copied();
        if c != Some(self.channels) {
            return Err(Error::Shape(format!(
                "SE block expects {} channels, got {c:?}",
                self.channels
            )));
        }
        let s = f.tape_mut().global_avg_pool(x)?;
        let h = self.fc1.forward(f, s)?;
        let h = f.tape_mut().relu(h);
        let e = self.fc2.forward(f, h)?;
        Ok(f.tape_mut().sigmoid(e))
    }

    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let e = self.excitation(f, x)?;
        f.tape_mut().scale_channels(x, e)
    }
}

#[derive(Debug, Clone)]
struct Shortcut {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Shortcut {
    fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                cin,
                cout,
                1,
                ConvGeom::new(stride, 0, 1),
                false,
                rng,
            ),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        self.bn.forward(f, y)
    }
}

/// Zeroes time steps beyond each utterance's valid length.
fn mask_time<F: Real>(f: &mut Forward<'_, F>, x: Var, lens: Option<&[usize]>) -> Result<Var> {
    match lens {
        Some(l) => f.tape_mut().time_mask(x, l),
        None => Ok(x),
    }
}

fn strided_lens(lens: Option<&[usize]>, stride: usize) -> Option<Vec<usize>> {
    lens.map(|l| l.iter().map(|&v| v.div_ceil(stride)).collect())
}

/// Two 3x3 conv/batch-norm layers with an identity or projection shortcut.
#[derive(Debug, Clone)]
pub struct BasicUnit {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<Shortcut>,
    se: Option<SeBlock>,
    stride: usize,
    cin: usize,
    cout: usize,
}

impl BasicUnit {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        se_reduction: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            cin,
            cout,
            3,
            ConvGeom::new(stride, 1, 1),
            false,
            rng,
        );
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), cout);
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            cout,
            cout,
            3,
            ConvGeom::new(1, 1, 1),
            false,
            rng,
        );
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout);
        let se = se_reduction.map(|r| SeBlock::new(store, &format!("{name}.se"), cout, r, rng));
        let shortcut = (stride != 1 || cin != cout)
            .then(|| Shortcut::new(store, &format!("{name}.shortcut"), cin, cout, stride, rng));
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
            se,
            stride,
            cin,
            cout,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.cin, self.cout)
    }

    pub fn se(&self) -> Option<&SeBlock> {
        self.se.as_ref()
    }

    /// `lens` are the valid time lengths of the input, if masking applies.
    pub fn forward<F: Real>(
        &self,
        f: &mut Forward<'_, F>,
        x: Var,
        lens: Option<&[usize]>,
    ) -> Result<Var> {
        let out_lens = strided_lens(lens, self.stride);
        let h = self.conv1.forward(f, x)?;
        let h = self.bn1.forward(f, h)?;
        let h = f.tape_mut().relu(h);
        let h = mask_time(f, h, out_lens.as_deref())?;
        let h = self.conv2.forward(f, h)?;
        let mut h = self.bn2.forward(f, h)?;
        if let Some(se) = &self.se {
            h = se.forward(f, h)?;
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(f, x)?,
            None => x,
        };
        let y = f.tape_mut().add(h, skip)?;
        let y = f.tape_mut().relu(y);
        mask_time(f, y, out_lens.as_deref())
    }
}

/// 1x1 reduce, 3x3 (strided), 1x1 expand, with a projection shortcut when
/// the shape changes.
#[derive(Debug, Clone)]
pub struct BottleneckUnit {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    shortcut: Option<Shortcut>,
    se: Option<SeBlock>,
    stride: usize,
    cin: usize,
    cout: usize,
}

impl BottleneckUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        planes: usize,
        expansion: usize,
        stride: usize,
        se_reduction: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let cout = planes * expansion;
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            cin,
            planes,
            1,
            ConvGeom::new(1, 0, 1),
            false,
            rng,
        );
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), planes);
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            planes,
            planes,
            3,
            ConvGeom::new(stride, 1, 1),
            false,
            rng,
        );
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), planes);
        let conv3 = Conv2d::new(
            store,
            &format!("{name}.conv3"),
            planes,
            cout,
            1,
            ConvGeom::new(1, 0, 1),
            false,
            rng,
        );
        let bn3 = BatchNorm2d::new(store, &format!("{name}.bn3"), cout);
        let se = se_reduction.map(|r| SeBlock::new(store, &format!("{name}.se"), cout, r, rng));
        let shortcut = (stride != 1 || cin != cout)
            .then(|| Shortcut::new(store, &format!("{name}.shortcut"), cin, cout, stride, rng));
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            shortcut,
            se,
            stride,
            cin,
            cout,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.cin, self.cout)
    }

    pub fn forward<F: Real>(
        &self,
        f: &mut Forward<'_, F>,
        x: Var,
        lens: Option<&[usize]>,
    ) -> Result<Var> {
        let out_lens = strided_lens(lens, self.stride);
        let h = self.conv1.forward(f, x)?;
        let h = self.bn1.forward(f, h)?;
        let h = f.tape_mut().relu(h);
        let h = mask_time(f, h, lens)?;
        let h = self.conv2.forward(f, h)?;
        let h = self.bn2.forward(f, h)?;
        let h = f.tape_mut().relu(h);
        let h = mask_time(f, h, out_lens.as_deref())?;
        let h = self.conv3.forward(f, h)?;
        let mut h = self.bn3.forward(f, h)?;
        if let Some(se) = &self.se {
            h = se.forward(f, h)?;
        }
        let skip = match &self.shortcut {
            Some(s) => s.forward(f, x)?,
            None => x,
        };
        let y = f.tape_mut().add(h, skip)?;
        let y = f.tape_mut().relu(y);
        mask_time(f, y, out_lens.as_deref())
    }
}

#[derive(Debug, Clone)]
enum Unit {
    Basic(BasicUnit),
    Bottleneck(BottleneckUnit),
}

impl Unit {
    fn forward<F: Real>(
        &self,
        f: &mut Forward<'_, F>,
        x: Var,
        lens: Option<&[usize]>,
    ) -> Result<Var> {
        match self {
            Unit::Basic(u) => u.forward(f, x, lens),
            Unit::Bottleneck(u) => u.forward(f, x, lens),
        }
    }

    fn stride(&self) -> usize {
        match self {
            Unit::Basic(u) => u.stride,
            Unit::Bottleneck(u) => u.stride,
        }
    }

    fn cout(&self) -> usize {
        match self {
            Unit::Basic(u) => u.cout,
            Unit::Bottleneck(u) => u.cout,
        }
    }

    fn kind(&self) -> UnitKind {
        match self {
            Unit::Basic(_) => UnitKind::Basic,
            Unit::Bottleneck(_) => UnitKind::Bottleneck,
        }
    }

    fn has_se(&self) -> bool {
        match self {
            Unit::Basic(u) => u.se.is_some(),
            Unit::Bottleneck(u) => u.se.is_some(),
        }
    }
}

/// Conv, batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        cin: usize,
        cout: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                cin,
                cout,
                3,
                ConvGeom::same(3, dilation),
                false,
                rng,
            ),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        Ok(f.tape_mut().relu(y))
    }
}

/// Residual units followed by 2x2 max pooling and a dilated 3x3 transition
/// conv.
#[derive(Debug, Clone)]
struct DilatedBlock {
    units: Vec<BasicUnit>,
    transition: ConvBnRelu,
    channels: usize,
}

/// The attention path of the attentive-filtering network: produces a mask
/// in (0, 1) with the input's height and width.
#[derive(Debug, Clone)]
pub struct AttentionPath {
    pre: ConvBnRelu,
    down: Vec<ConvBnRelu>,
    up: Vec<ConvBnRelu>,
    out: Conv2d,
}

impl AttentionPath {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        down_dilations: [usize; 4],
        up_dilations: [usize; 4],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pre = ConvBnRelu::new(store, &format!("{name}.pre"), 1, channels, 1, rng);
        let down = (0..4)
            .map(|i| {
                ConvBnRelu::new(
                    store,
                    &format!("{name}.down{i}"),
                    channels,
                    channels,
                    down_dilations[i],
                    rng,
                )
            })
            .collect();
        let up = (0..4)
            .map(|i| {
                ConvBnRelu::new(
                    store,
                    &format!("{name}.up{i}"),
                    channels,
                    channels,
                    up_dilations[i],
                    rng,
                )
            })
            .collect();
        let out = Conv2d::new(
            store,
            &format!("{name}.out"),
            channels,
            1,
            1,
            ConvGeom::new(1, 0, 1),
            true,
            rng,
        );
        Self { pre, down, up, out }
    }

    /// Mask `N x 1 x H x W` for an input `N x 1 x H x W`.
    pub fn forward<F: Real>(&self, f: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(5);
        let mut h = self.pre.forward(f, x)?;
        for d in &self.down {
            skips.push(h);
            let p = f.tape_mut().max_pool2d(h, 2, 2)?;
            h = d.forward(f, p)?;
        }
        for u in &self.up {
            let skip = skips.pop().expect("one skip per down unit");
            let y = u.forward(f, h)?;
            let shape = f.value(skip).shape();
            let (sh, sw) = (shape[2], shape[3]);
            let y = f.tape_mut().resize_bilinear(y, (sh, sw))?;
            h = f.tape_mut().add(y, skip)?;
        }
        let m = self.out.forward(f, h)?;
        Ok(f.tape_mut().sigmoid(m))
    }
}

#[derive(Debug, Clone)]
enum Body {
    Residual { blocks: Vec<Vec<Unit>> },
    Dilated { blocks: Vec<DilatedBlock> },
}

/// Description of one block as built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub unit: UnitKind,
    pub units: usize,
    /// Output channels of the block's residual units.
    pub channels: usize,
    pub dilation: usize,
    pub squeeze_excitation: bool,
}

/// Network input: single-channel images, with valid time lengths for
/// variable-length batches.
#[derive(Debug, Clone)]
pub struct ModelInput<F> {
    pub images: Tensor<F>,
    pub lens: Option<Vec<usize>>,
}

impl<F: Real> ModelInput<F> {
    pub fn fixed(images: Tensor<F>) -> Self {
        Self { images, lens: None }
    }

    /// Segments (`M x D` row-major) as an `N x 1 x D x M` batch.
    pub fn from_segments(segments: &[&[f32]], m: usize, dim: usize) -> Result<Self> {
        let mut data = vec![F::zero(); segments.len() * dim * m];
        for (n, seg) in segments.iter().enumerate() {
            if seg.len() != m * dim {
                return Err(Error::Shape(format!(
                    "segment has {} values, expected {m} x {dim}",
                    seg.len()
                )));
            }
            let img = &mut data[n * dim * m..(n + 1) * dim * m];
            for t in 0..m {
                for d in 0..dim {
                    img[d * m + t] = F::from_f64(f64::from(seg[t * dim + d]));
                }
            }
        }
        Ok(Self::fixed(Tensor::new(
            vec![segments.len(), 1, dim, m],
            data,
        )?))
    }

    pub fn from_segment_set(set: &SegmentSet) -> Result<Self> {
        let segs: Vec<&[f32]> = set.segments.iter().map(Vec::as_slice).collect();
        Self::from_segments(&segs, set.m, set.dim)
    }

    /// A padded batch as `N x 1 x D x T_max` images plus valid lengths.
    pub fn from_padded(batch: &PaddedBatch) -> Result<Self> {
        let (t, dim) = (batch.max_len, batch.dim);
        let mut data = vec![F::zero(); batch.batch * dim * t];
        for n in 0..batch.batch {
            let img = &mut data[n * dim * t..(n + 1) * dim * t];
            for ti in 0..t {
                for (d, v) in batch.frame(n, ti).iter().enumerate() {
                    img[d * t + ti] = F::from_f64(f64::from(*v));
                }
            }
        }
        Ok(Self {
            images: Tensor::new(vec![batch.batch, 1, dim, t], data)?,
            lens: Some(batch.valid_len.clone()),
        })
    }

    pub fn batch(&self) -> usize {
        self.images.shape()[0]
    }
}

/// A built network and its parameters.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    cfg: ModelConfig,
    store: ParamStore<F>,
    stem: ConvBnRelu,
    attention: Option<AttentionPath>,
    body: Body,
    head: Linear,
    head_inputs: usize,
}

fn strided(h: usize) -> usize {
    h.div_ceil(2)
}

impl<F: Real> Model<F> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let rng = &mut rng;
        let attention = (cfg.kind == ModelKind::Afn).then(|| {
            AttentionPath::new(
                &mut store,
                "attention",
                cfg.attention_channels,
                cfg.attention_down_dilations,
                cfg.attention_up_dilations,
                rng,
            )
        });
        let stem = ConvBnRelu::new(&mut store, "stem", 1, cfg.channels[0], 1, rng);
        let (body, head_inputs) = match cfg.kind {
            ModelKind::SeNet34 | ModelKind::SeNet50 | ModelKind::MeanStdResNet => {
                let se = (cfg.kind != ModelKind::MeanStdResNet).then_some(cfg.se_reduction);
                let mut cin = cfg.channels[0];
                let mut height = cfg.input_dim;
                let mut blocks = Vec::with_capacity(4);
                for b in 0..4 {
                    let mut units = Vec::with_capacity(cfg.units[b]);
                    for u in 0..cfg.units[b] {
                        let stride = if b > 0 && u == 0 { 2 } else { 1 };
                        if stride == 2 {
                            height = strided(height);
                        }
                        let name = format!("block{}.unit{u}", b + 1);
                        let unit = match cfg.unit {
                            UnitKind::Basic => Unit::Basic(BasicUnit::new(
                                &mut store,
                                &name,
                                cin,
                                cfg.channels[b],
                                stride,
                                se,
                                rng,
                            )),
                            UnitKind::Bottleneck => Unit::Bottleneck(BottleneckUnit::new(
                                &mut store,
                                &name,
                                cin,
                                cfg.channels[b],
                                cfg.bottleneck_expansion,
                                stride,
                                se,
                                rng,
                            )),
                        };
                        cin = unit.cout();
                        units.push(unit);
                    }
                    blocks.push(units);
                }
                let head_inputs = if cfg.kind == ModelKind::MeanStdResNet {
                    2 * cin * height
                } else {
                    cin
                };
                (Body::Residual { blocks }, head_inputs)
            }
            ModelKind::DilatedResNet | ModelKind::Afn => {
                let mut blocks = Vec::with_capacity(4);
                for b in 0..4 {
                    let ch = cfg.channels[b];
                    let next = cfg.channels[(b + 1).min(3)];
                    let units = (0..cfg.units[b])
                        .map(|u| {
                            BasicUnit::new(
                                &mut store,
                                &format!("block{}.unit{u}", b + 1),
                                ch,
                                ch,
                                1,
                                None,
                                rng,
                            )
                        })
                        .collect();
                    let transition = ConvBnRelu::new(
                        &mut store,
                        &format!("block{}.dilated", b + 1),
                        ch,
                        next,
                        cfg.dilations[b],
                        rng,
                    );
                    blocks.push(DilatedBlock {
                        units,
                        transition,
                        channels: ch,
                    });
                }
                (Body::Dilated { blocks }, cfg.channels[3])
            }
        };
        let head = Linear::new(&mut store, "head", head_inputs, cfg.n_classes, true, rng);
        crate::nn::check_unique_names(&store)?;
        Ok(Self {
            cfg,
            store,
            stem,
            attention,
            body,
            head,
            head_inputs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn attention(&self) -> Option<&AttentionPath> {
        self.attention.as_ref()
    }

    /// Blocks as built, for comparison against the configured layout.
    pub fn layout(&self) -> Vec<BlockLayout> {
        match &self.body {
            Body::Residual { blocks } => blocks
                .iter()
                .map(|units| BlockLayout {
                    unit: units[0].kind(),
                    units: units.len(),
                    channels: match &units[0] {
                        Unit::Basic(u) => u.cout,
                        Unit::Bottleneck(u) => u.cout / self.cfg.bottleneck_expansion,
                    },
                    dilation: 1,
                    squeeze_excitation: units.iter().all(Unit::has_se),
                })
                .collect(),
            Body::Dilated { blocks } => blocks
                .iter()
                .map(|b| BlockLayout {
                    unit: UnitKind::Basic,
                    units: b.units.len(),
                    channels: b.channels,
                    dilation: b.transition.conv().geom().dilation.0,
                    squeeze_excitation: false,
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &ModelInput<F>) -> Result<()> {
        self.check_shape(input.images.shape(), input.lens.as_deref())
    }

    fn check_shape(&self, shape: &[usize], lens: Option<&[usize]>) -> Result<()> {
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "{} expects N x 1 x {} x T input, got {shape:?}",
                self.cfg.kind, self.cfg.input_dim
            )));
        }
        if let Some(l) = lens {
            if !self.cfg.kind.accepts_variable_length() {
                return Err(Error::Shape(format!(
                    "{} only accepts fixed-size input",
                    self.cfg.kind
                )));
            }
            if l.len() != shape[0] || l.iter().any(|&v| v == 0 || v > shape[3]) {
                return Err(Error::Shape(format!(
                    "valid lengths {l:?} do not fit {shape:?}"
                )));
            }
        }
        Ok(())
    }

    /// Attention mask for the input (attentive-filtering network only).
    pub fn attention_mask(&self, input: &ModelInput<F>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        let att = self.attention.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("{} has no attention path", self.cfg.kind))
        })?;
        let mut f = Forward::new(&self.store, false);
        let x = f.input(input.images.clone());
        let m = att.forward(&mut f, x)?;
        Ok(f.value(m).clone())
    }

    /// Records the network on `f` and returns the `N x n_classes` logits.
    pub fn build_logits(&self, f: &mut Forward<'_, F>, input: &ModelInput<F>) -> Result<Var> {
        let x = f.input(input.images.clone());
        self.build_logits_from(f, x, input.lens.as_deref())
    }

    /// Like [`Model::build_logits`] for an image batch already on the tape.
    pub fn build_logits_from(
        &self,
        f: &mut Forward<'_, F>,
        mut x: Var,
        lens: Option<&[usize]>,
    ) -> Result<Var> {
        if let Some(att) = &self.attention {
            let m = att.forward(f, x)?;
            x = f.tape_mut().apply_mask(x, m, self.cfg.residual_mask)?;
        }
        let shape = f.value(x).shape().to_vec();
        self.check_shape(&shape, lens)?;
        let mut lens: Option<Vec<usize>> = match (lens, self.cfg.kind) {
            (Some(l), _) => Some(l.to_vec()),
            (None, ModelKind::MeanStdResNet) => Some(vec![shape[3]; shape[0]]),
            _ => None,
        };
        let mut h = self.stem.forward(f, x)?;
        h = mask_time(f, h, lens.as_deref())?;
        let pooled = match &self.body {
            Body::Residual { blocks } => {
                for unit in blocks.iter().flatten() {
                    h = unit.forward(f, h, lens.as_deref())?;
                    lens = strided_lens(lens.as_deref(), unit.stride());
                }
                if self.cfg.kind == ModelKind::MeanStdResNet {
                    let frames = f.tape_mut().to_frames(h)?;
                    let lens = lens.expect("mean-std model tracks lengths");
                    f.tape_mut()
                        .mean_std_pool(frames, &lens, self.cfg.pool_eps)?
                } else {
                    f.tape_mut().global_avg_pool(h)?
                }
            }
            Body::Dilated { blocks } => {
                for block in blocks {
                    for unit in &block.units {
                        h = unit.forward(f, h, None)?;
                    }
                    h = f.tape_mut().max_pool2d(h, 2, 2)?;
                    h = block.transition.forward(f, h)?;
                }
                f.tape_mut().global_avg_pool(h)?
            }
        };
        let width = f.value(pooled).shape()[1];
        if width != self.head_inputs {
            return Err(Error::Shape(format!(
                "pooled features have {width} values, head expects {}",
                self.head_inputs
            )));
        }
        self.head.forward(f, pooled)
    }

    /// Inference-mode logits.
    pub fn logits(&self, input: &ModelInput<F>) -> Result<Tensor<F>> {
        let mut f = Forward::new(&self.store, false);
        let out = self.build_logits(&mut f, input)?;
        let t = f.value(out).clone();
        if !t.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_pairs() {
        let mut cfg = ModelConfig::new(ModelKind::Afn, 10, 257);
        cfg.residual_mask = true;
        cfg.seed = 7;
        cfg.units = [1, 2, 1, 1];
        let pairs = cfg.to_pairs();
        let back =
            ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_kinds_are_rejected() {
        assert!(ModelKind::parse("resnet").is_err());
        let pairs = [
            ("kind", "senet34"),
            ("n_classes", "2"),
            ("input_dim", "30"),
            ("depth", "3"),
        ];
        assert!(ModelConfig::from_pairs(pairs).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::new(ModelKind::SeNet34, 1, 257);
        assert!(cfg.validate().is_err());
        cfg.n_classes = 2;
        cfg.dilations[2] = 0;
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig::new(ModelKind::DilatedResNet, 2, 8);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn segments_are_transposed_into_images() {
        // two frames of three dims
        let seg = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let input = ModelInput::<f64>::from_segments(&[&seg], 2, 3).unwrap();
        assert_eq!(input.images.shape(), &[1, 1, 3, 2]);
        assert_eq!(input.images.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
