#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{Conv2d, ConvTranspose2d, LeakyRelu};
use super::tensor::Tensor;
use crate::rng::seeded;
use crate::{Error, Result};

/// Shape of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NetworkConfig {
    pub n_down_blocks: usize,
    pub n_up_blocks: usize,
    pub n_res_blocks: usize,
    pub base_channels: usize,
    pub input_side: usize,
    /// Main-path kernels of every block and of the stem and head (odd).
    pub main_kernel: usize,
    /// Side branch of down-residual blocks (stride-2 convolution).
    pub down_side_kernel: usize,
    /// Side branch of up-residual blocks (stride-2 transposed convolution).
    pub up_side_kernel: usize,
    /// Side branch of constant-size residual blocks.
    pub res_side_kernel: usize,
    /// Measurements are fed to the network as `(g - input_offset) * input_gain`.
    pub input_offset: f64,
    pub input_gain: f64,
}

impl Default for NetworkConfig {
    /// Desk-scale network: 32 x 32 input, 2 down / 2 up / 1 residual block,
    /// 16 base channels.
    fn default() -> Self {
        NetworkConfig {
            n_down_blocks: 2,
            n_up_blocks: 2,
            n_res_blocks: 1,
            base_channels: 16,
            input_side: 32,
            main_kernel: 3,
            down_side_kernel: 1,
            up_side_kernel: 2,
            res_side_kernel: 1,
            input_offset: 1.0,
            input_gain: 4.0,
        }
    }
}

impl NetworkConfig {
    /// Full-size layout: 256 x 256 input, 4 down / 4 up / 2 residual blocks.
    pub fn paper_scale() -> Self {
        NetworkConfig {
            n_down_blocks: 4,
            n_up_blocks: 4,
            n_res_blocks: 2,
            base_channels: 16,
            input_side: 256,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_down_blocks == 0 {
            return Err(Error::config("n_down_blocks", "must be at least 1"));
        }
        if self.n_down_blocks != self.n_up_blocks {
            return Err(Error::config(
                "n_up_blocks",
                "must equal n_down_blocks so skip connections pair up",
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be positive"));
        }
        let factor = 1usize
            .checked_shl(self.n_down_blocks as u32)
            .ok_or_else(|| Error::config("n_down_blocks", "too many blocks"))?;
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return Err(Error::config(
                "input_side",
                format!("must be divisible by 2^n_down_blocks = {factor}"),
            ));
        }
        if self.main_kernel.is_multiple_of(2) {
            return Err(Error::config("main_kernel", "must be odd"));
        }
        if self.res_side_kernel.is_multiple_of(2) {
            return Err(Error::config("res_side_kernel", "must be odd"));
        }
        for (field, k) in [
            ("down_side_kernel", self.down_side_kernel),
            ("up_side_kernel", self.up_side_kernel),
        ] {
            if k == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.input_gain.is_finite() && self.input_gain != 0.0 && self.input_offset.is_finite())
        {
            return Err(Error::config(
                "input_gain",
                "input normalization must be finite and non-zero",
            ));
        }
        Ok(())
    }

    /// Spatial side after each encoder stage, from the input down to the bottleneck.
    pub fn encoder_sides(&self) -> Vec<usize> {
        (0..=self.n_down_blocks)
            .map(|i| self.input_side >> i)
            .collect()
    }
}

/// One of the three residual block flavours.
#[derive(Debug, Clone)]
enum Resample {
    Down(Conv2d),
    Up(ConvTranspose2d),
    Same(Conv2d),
}

impl Resample {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.forward(x),
            Resample::Up(c) => c.forward(x),
        }
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.backward(g),
            Resample::Up(c) => c.backward(g),
        }
    }

    fn params_mut(&mut self) -> [&mut Tensor; 2] {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.params_mut(),
            Resample::Up(c) => c.params_mut(),
        }
    }

    fn params(&self) -> [&Tensor; 2] {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.params(),
            Resample::Up(c) => c.params(),
        }
    }

    fn init(&mut self, rng: &mut crate::rng::DetRng) {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.init(rng),
            Resample::Up(c) => c.init(rng),
        }
    }

    fn output_side(&self, input: usize) -> Option<usize> {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.output_side(input),
            Resample::Up(c) => c.output_side(input),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Resample::Down(c) | Resample::Same(c) => c.clear_cache(),
            Resample::Up(c) => c.clear_cache(),
        }
    }
}

/// `act(main2(act(main1(x))) + side(x))`
#[derive(Debug, Clone)]
struct ResidualBlock {
    name: String,
    main1: Resample,
    act1: LeakyRelu,
    main2: Conv2d,
    side: Resample,
    act_out: LeakyRelu,
}

impl ResidualBlock {
    fn down(name: String, cin: usize, cout: usize, cfg: &NetworkConfig) -> Self {
        let k = cfg.main_kernel;
        let ks = cfg.down_side_kernel;
        ResidualBlock {
            name,
            main1: Resample::Down(Conv2d::new(cin, cout, k, 2, k / 2)),
            act1: LeakyRelu::default(),
            main2: Conv2d::new(cout, cout, k, 1, k / 2),
            side: Resample::Down(Conv2d::new(cin, cout, ks, 2, (ks - 1) / 2)),
            act_out: LeakyRelu::default(),
        }
    }

    fn up(name: String, cin: usize, cout: usize, cfg: &NetworkConfig) -> Self {
        let k = cfg.main_kernel;
        let ks = cfg.up_side_kernel;
        // Output padding that makes both branches exactly double the side.
        let main_pad = k / 2;
        let side_pad = ks.saturating_sub(2).div_ceil(2);
        let out_pad = |k: usize, p: usize| (2 + 2 * p).saturating_sub(k);
        ResidualBlock {
            name,
            main1: Resample::Up(ConvTranspose2d::new(
                cin,
                cout,
                k,
                2,
                main_pad,
                out_pad(k, main_pad),
            )),
            act1: LeakyRelu::default(),
            main2: Conv2d::new(cout, cout, k, 1, k / 2),
            side: Resample::Up(ConvTranspose2d::new(
                cin,
                cout,
                ks,
                2,
                side_pad,
                out_pad(ks, side_pad),
            )),
            act_out: LeakyRelu::default(),
        }
    }

    fn same(name: String, cin: usize, cout: usize, cfg: &NetworkConfig) -> Self {
        let k = cfg.main_kernel;
        let ks = cfg.res_side_kernel;
        ResidualBlock {
            name,
            main1: Resample::Same(Conv2d::new(cin, cout, k, 1, k / 2)),
            act1: LeakyRelu::default(),
            main2: Conv2d::new(cout, cout, k, 1, k / 2),
            side: Resample::Same(Conv2d::new(cin, cout, ks, 1, ks / 2)),
            act_out: LeakyRelu::default(),
        }
    }

    fn check_sides(&self, input: usize, expected: usize) -> Result<()> {
        let main = self
            .main1
            .output_side(input)
            .and_then(|s| self.main2.output_side(s));
        let side = self.side.output_side(input);
        for (branch, got) in [("main", main), ("side", side)] {
            if got != Some(expected) {
                return Err(Error::LayerShape {
                    layer: format!("{}.{branch}", self.name),
                    reason: format!("input side {input} maps to {got:?}, expected {expected}"),
                });
            }
        }
        Ok(())
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let a = self.main1.forward(x)?;
        let a = self.act1.forward(a);
        let mut a = self.main2.forward(&a)?;
        let s = self.side.forward(x)?;
        a.add_assign(&s);
        Ok(self.act_out.forward(a))
    }

    fn backward(&mut self, gy: Tensor) -> Result<Tensor> {
        let g = self.act_out.backward(gy)?;
        let g_side = self.side.backward(&g)?;
        let g_main = self.main2.backward(&g)?;
        let g_main = self.act1.backward(g_main)?;
        let mut gx = self.main1.backward(&g_main)?;
        gx.add_assign(&g_side);
        Ok(gx)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(6);
        out.extend(self.main1.params_mut());
        out.extend(self.main2.params_mut());
        out.extend(self.side.params_mut());
        out
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(6);
        out.extend(self.main1.params());
        out.extend(self.main2.params());
        out.extend(self.side.params());
        out
    }

    fn init(&mut self, rng: &mut crate::rng::DetRng) {
        self.main1.init(rng);
        self.main2.init(rng);
        self.side.init(rng);
    }

    fn clear_cache(&mut self) {
        self.main1.clear_cache();
        self.main2.clear_cache();
        self.side.clear_cache();
        self.act1.clear_cache();
        self.act_out.clear_cache();
    }
}

/// Residual encoder-decoder with channel-concatenated skip connections.
///
/// Parameters are enumerated in declaration order: stem, down blocks, up
/// blocks, residual blocks, head; within a block main1, main2, side; within a
/// layer weight then bias. Checkpoints and optimizer state follow this order.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    stem: Conv2d,
    stem_act: LeakyRelu,
    down: Vec<ResidualBlock>,
    up: Vec<ResidualBlock>,
    res: Vec<ResidualBlock>,
    head: Conv2d,
    /// Channel count of each encoder skip tensor, consumed in backward.
    skip_channels: Vec<usize>,
    forward_done: bool,
}

impl Network {
    /// Builds and initializes a network deterministically from `seed`.
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::uninitialized(config)?;
        let mut rng = seeded(seed);
        net.stem.init(&mut rng);
        for block in net.down.iter_mut().chain(&mut net.up).chain(&mut net.res) {
            block.init(&mut rng);
        }
        net.head.init(&mut rng);
        Ok(net)
    }

    /// Same layout with every parameter zero (checkpoint loading starts here).
    pub fn uninitialized(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let k = config.main_kernel;
        let depth = config.n_down_blocks;
        let stem = Conv2d::new(1, c, k, 1, k / 2);
        let enc_channels: Vec<usize> = (0..=depth).map(|i| c << i).collect();
        let down: Vec<ResidualBlock> = (0..depth)
            .map(|i| {
                ResidualBlock::down(
                    format!("down[{i}]"),
                    enc_channels[i],
                    enc_channels[i + 1],
                    config,
                )
            })
            .collect();
        let mut up = Vec::with_capacity(depth);
        let mut channels = enc_channels[depth];
        for j in 0..depth {
            let skip = enc_channels[depth - 1 - j];
            up.push(ResidualBlock::up(
                format!("up[{j}]"),
                channels,
                skip,
                config,
            ));
            channels = 2 * skip;
        }
        let mut res = Vec::with_capacity(config.n_res_blocks);
        for i in 0..config.n_res_blocks {
            res.push(ResidualBlock::same(
                format!("res[{i}]"),
                channels,
                c,
                config,
            ));
            channels = c;
        }
        let head = Conv2d::new(channels, 1, k, 1, k / 2);

        let net = Network {
            config: config.clone(),
            stem,
            stem_act: LeakyRelu::default(),
            down,
            up,
            res,
            head,
            skip_channels: enc_channels[..depth].to_vec(),
            forward_done: false,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let sides = self.config.encoder_sides();
        let depth = self.config.n_down_blocks;
        for (i, block) in self.down.iter().enumerate() {
            block.check_sides(sides[i], sides[i + 1])?;
        }
        for (j, block) in self.up.iter().enumerate() {
            block.check_sides(sides[depth - j], sides[depth - j - 1])?;
        }
        for block in &self.res {
            block.check_sides(sides[0], sides[0])?;
        }
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// `[batch, 1, n, n]` in, `[batch, 1, n, n]` out. Caches activations for
    /// [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = self.config.input_side;
        if x.shape().len() != 4 || x.shape()[1] != 1 || x.shape()[2] != n || x.shape()[3] != n {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: vec![x.shape().first().copied().unwrap_or(1), 1, n, n],
                found: x.shape().to_vec(),
            });
        }
        let e0 = self.stem.forward(x)?;
        let mut skips = vec![self.stem_act.forward(e0)];
        for block in &mut self.down {
            let next = block.forward(skips.last().unwrap())?;
            skips.push(next);
        }
        let mut d = skips.pop().unwrap();
        for block in &mut self.up {
            let u = block.forward(&d)?;
            let skip = skips.pop().unwrap();
            d = Tensor::concat_channels(&u, &skip);
        }
        for block in &mut self.res {
            d = block.forward(&d)?;
        }
        let y = self.head.forward(&d)?;
        self.forward_done = true;
        Ok(y)
    }

    /// Back-propagates `dL/d(output)`, accumulating into every parameter's
    /// gradient buffer, and returns `dL/d(input)`.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        if !self.forward_done {
            return Err(Error::BackwardBeforeForward);
        }
        self.forward_done = false;
        let depth = self.config.n_down_blocks;
        let mut g = self.head.backward(grad_output)?;
        for block in self.res.iter_mut().rev() {
            g = block.backward(g)?;
        }
        // Skip gradients indexed by encoder level.
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        for (j, block) in self.up.iter_mut().enumerate().rev() {
            let level = depth - 1 - j;
            let up_channels = self.skip_channels[level];
            let (g_up, g_skip) = g.split_channels(up_channels);
            skip_grads[level] = Some(g_skip);
            g = block.backward(g_up)?;
        }
        for (i, block) in self.down.iter_mut().enumerate().rev() {
            g = block.backward(g)?;
            if let Some(s) = skip_grads[i].take() {
                g.add_assign(&s);
            }
        }
        let g = self.stem_act.backward(g)?;
        self.stem.backward(&g)
    }

    /// Mutable parameters in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.stem.params_mut());
        for block in self
            .down
            .iter_mut()
            .chain(&mut self.up)
            .chain(&mut self.res)
        {
            out.extend(block.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.stem.params());
        for block in self.down.iter().chain(&self.up).chain(&self.res) {
            out.extend(block.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Drops cached activations (e.g. after an inference-only forward pass).
    pub fn clear_cache(&mut self) {
        self.stem.clear_cache();
        self.stem_act.clear_cache();
        for block in self
            .down
            .iter_mut()
            .chain(&mut self.up)
            .chain(&mut self.res)
        {
            block.clear_cache();
        }
        self.head.clear_cache();
        self.forward_done = false;
    }

    /// Forward pass without keeping activations.
    pub fn infer(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward(x);
        self.clear_cache();
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(side: usize, depth: usize) -> NetworkConfig {
        NetworkConfig {
            n_down_blocks: depth,
            n_up_blocks: depth,
            n_res_blocks: 1,
            base_channels: 2,
            input_side: side,
            ..Default::default()
        }
    }

    #[test]
    fn encoder_side_arithmetic() {
        assert_eq!(NetworkConfig::default().encoder_sides(), [32, 16, 8]);
        assert_eq!(
            NetworkConfig::paper_scale().encoder_sides(),
            [256, 128, 64, 32, 16]
        );
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let mut net = Network::build(&NetworkConfig::default(), 1).unwrap();
        let x = Tensor::zeros(&[2, 1, 32, 32]);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 32, 32]);
        assert!(y.is_finite());
        let count = net.parameter_count();
        assert!((50_000..250_000).contains(&count), "{count} parameters");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small(12, 3);
        assert!(Network::build(&cfg, 0).is_err());
        cfg = small(16, 2);
        cfg.n_up_blocks = 1;
        assert!(Network::build(&cfg, 0).is_err());
        cfg = small(16, 2);
        cfg.main_kernel = 4;
        assert!(Network::build(&cfg, 0).is_err());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let block = ResidualBlock::up("up[0]".into(), 4, 2, &small(16, 1));
        assert!(block.check_sides(8, 16).is_ok());
        match block.check_sides(8, 15) {
            Err(Error::LayerShape { layer, .. }) => assert_eq!(layer, "up[0].main"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_side_kernel_keeps_scale_pairing() {
        for ks in 1..=5 {
            let mut cfg = small(16, 2);
            cfg.up_side_kernel = ks;
            cfg.down_side_kernel = ks;
            let mut net = Network::build(&cfg, 0).unwrap();
            let y = net.forward(&Tensor::zeros(&[1, 1, 16, 16])).unwrap();
            assert_eq!(y.shape(), &[1, 1, 16, 16]);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::build(&small(8, 2), 42).unwrap();
        let b = Network::build(&small(8, 2), 42).unwrap();
        let c = Network::build(&small(8, 2), 43).unwrap();
        let flat = |n: &Network| {
            n.params()
                .iter()
                .flat_map(|p| p.data().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn duplicated_samples_give_identical_rows() {
        let mut net = Network::build(&small(8, 2), 3).unwrap();
        let sample: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut data = sample.clone();
        data.extend(&sample);
        let y = net
            .forward(&Tensor::from_vec(&[2, 1, 8, 8], data).unwrap())
            .unwrap();
        assert_eq!(y.plane(0, 0), y.plane(1, 0));
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut net = Network::build(&small(8, 1), 0).unwrap();
        let g = Tensor::zeros(&[1, 1, 8, 8]);
        assert_eq!(net.backward(&g).unwrap_err(), Error::BackwardBeforeForward);
    }

    #[test]
    fn wrong_input_side_rejected() {
        let mut net = Network::build(&small(8, 1), 0).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 1, 16, 16])).is_err());
    }
}
