//! Network architecture: parameter allocation, forward pass, and
//! reverse-mode gradients over a small op tape.

use crate::error::{Error, Result};
use crate::network::layers::{
    conv2d_backward, conv2d_forward, gap_backward, gap_forward, maxpool3x3s2_backward,
    maxpool3x3s2_forward, relu_backward, relu_forward, upsample2x_backward, upsample2x_forward,
};
use crate::network::params::{Gradients, Param, ParameterStore};
use crate::rng::seeded_rng;
use ndarray::{Array2, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Backbone size. `Tiny` divides the standard channel widths by 8 and uses
/// one residual block per stage so gradient checks and CPU training stay
/// tractable; `Full` uses the standard (3,4,6,3) block counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneScale {
    Full,
    Tiny,
}

/// Classifier architecture settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub num_classes: usize,
    pub backbone: BackboneScale,
    pub fpn_channels: usize,
    /// Pyramid levels feeding the aggregated score (subset of 3..=7).
    pub pyramid_levels: Vec<u8>,
    pub subnet_depth: usize,
    /// Patches are bilinearly resized to this side before the forward pass.
    pub input_side: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_classes: 4,
            backbone: BackboneScale::Full,
            fpn_channels: 256,
            pyramid_levels: vec![3, 4, 5, 6, 7],
            subnet_depth: 4,
            input_side: 224,
        }
    }
}

impl NetworkConfig {
    /// Desk-scale configuration for tests and CPU training.
    pub fn tiny(input_side: usize, fpn_channels: usize) -> Self {
        NetworkConfig {
            backbone: BackboneScale::Tiny,
            fpn_channels,
            input_side,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 4 {
            return Err(Error::Config(format!(
                "num_classes must be 4, got {}",
                self.num_classes
            )));
        }
        if self.subnet_depth != 4 {
            return Err(Error::Config(format!(
                "subnet_depth must be 4, got {}",
                self.subnet_depth
            )));
        }
        if self.input_side % 32 != 0 || self.input_side == 0 {
            return Err(Error::Config(format!(
                "input_side must be a positive multiple of 32, got {}",
                self.input_side
            )));
        }
        if self.fpn_channels == 0 {
            return Err(Error::Config("fpn_channels must be positive".into()));
        }
        if self.pyramid_levels.is_empty()
            || self.pyramid_levels.iter().any(|&l| !(3..=7).contains(&l))
        {
            return Err(Error::Config(format!(
                "pyramid_levels must be a non-empty subset of 3..=7, got {:?}",
                self.pyramid_levels
            )));
        }
        Ok(())
    }
}

struct BackboneDims {
    stem: usize,
    mids: [usize; 4],
    outs: [usize; 4],
    blocks: [usize; 4],
}

fn backbone_dims(scale: BackboneScale) -> BackboneDims {
    match scale {
        BackboneScale::Full => BackboneDims {
            stem: 64,
            mids: [64, 128, 256, 512],
            outs: [256, 512, 1024, 2048],
            blocks: [3, 4, 6, 3],
        },
        BackboneScale::Tiny => BackboneDims {
            stem: 8,
            mids: [8, 16, 32, 64],
            outs: [32, 64, 128, 256],
            blocks: [1, 1, 1, 1],
        },
    }
}

/// Declared shape of one convolution, used for both allocation and the
/// closed-form parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    /// Scalar count of weight + bias.
    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }
}

/// Every convolution in the architecture, in allocation order.
pub fn conv_specs(config: &NetworkConfig) -> Vec<ConvSpec> {
    let d = backbone_dims(config.backbone);
    let f = config.fpn_channels;
    let mut specs = Vec::new();
    let mut push = |name: String, out_ch, in_ch, kernel, stride, pad| {
        specs.push(ConvSpec {
            name,
            out_ch,
            in_ch,
            kernel,
            stride,
            pad,
        });
    };

    push("backbone.stem.conv".into(), d.stem, 3, 7, 2, 3);
    let mut in_ch = d.stem;
    for stage in 0..4 {
        for block in 0..d.blocks[stage] {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let prefix = format!("backbone.layer{}.{}", stage + 1, block);
            push(format!("{prefix}.conv1"), d.mids[stage], in_ch, 1, 1, 0);
            push(format!("{prefix}.conv2"), d.mids[stage], d.mids[stage], 3, stride, 1);
            push(format!("{prefix}.conv3"), d.outs[stage], d.mids[stage], 1, 1, 0);
            if block == 0 {
                push(format!("{prefix}.downsample"), d.outs[stage], in_ch, 1, stride, 0);
            }
            in_ch = d.outs[stage];
        }
    }

    for (level, ch) in [(3usize, d.outs[1]), (4, d.outs[2]), (5, d.outs[3])] {
        push(format!("fpn.lateral{level}"), f, ch, 1, 1, 0);
    }
    for level in 3..=5 {
        push(format!("fpn.smooth{level}"), f, f, 3, 1, 1);
    }
    push("fpn.p6".into(), f, d.outs[3], 3, 2, 1);
    push("fpn.p7".into(), f, f, 3, 2, 1);

    for i in 0..config.subnet_depth {
        push(format!("subnet.conv{i}"), f, f, 3, 1, 1);
    }
    push("subnet.out".into(), config.num_classes, f, 3, 1, 1);
    specs
}

/// Allocate all parameters with seeded fan-in-scaled uniform weights and
/// zero biases.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let mut store = ParameterStore::new();
    for spec in conv_specs(config) {
        let fan_in = spec.in_ch * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = spec.out_ch * fan_in;
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect();
        store.insert(
            format!("{}.weight", spec.name),
            Param::new(vec![spec.out_ch, spec.in_ch, spec.kernel, spec.kernel], data),
        )?;
        store.insert(format!("{}.bias", spec.name), Param::zeros(vec![spec.out_ch]))?;
    }
    Ok(store)
}

enum Op {
    Input,
    Conv {
        x: usize,
        prefix: String,
        stride: usize,
        pad: usize,
    },
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    MaxPool {
        x: usize,
        argmax: Array4<usize>,
    },
    Upsample2x {
        x: usize,
    },
    Gap {
        x: usize,
    },
    /// Elementwise mean of same-shaped tensors.
    Mean {
        xs: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Array4<f64>,
}

/// Forward tape over a parameter store; replays in reverse for gradients.
pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    fn new(store: &'a ParameterStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Array4<f64>) -> usize {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: usize) -> &Array4<f64> {
        &self.nodes[id].value
    }

    fn input(&mut self, x: Array4<f64>) -> usize {
        self.push(Op::Input, x)
    }

    fn conv(&mut self, x: usize, prefix: &str, stride: usize, pad: usize) -> Result<usize> {
        let w = self.store.expect(&format!("{prefix}.weight"))?.as_array4();
        let b = self.store.expect(&format!("{prefix}.bias"))?.as_array1();
        let in_ch = self.nodes[x].value.dim().1;
        if w.dim().1 != in_ch {
            return Err(Error::Config(format!(
                "conv `{prefix}`: weight expects {} input channels, got {in_ch}",
                w.dim().1
            )));
        }
        let y = conv2d_forward(&self.nodes[x].value, &w, &b, stride, pad);
        Ok(self.push(
            Op::Conv {
                x,
                prefix: prefix.to_string(),
                stride,
                pad,
            },
            y,
        ))
    }

    fn relu(&mut self, x: usize) -> usize {
        let y = relu_forward(&self.nodes[x].value);
        self.push(Op::Relu { x }, y)
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let y = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add { a, b }, y)
    }

    fn maxpool(&mut self, x: usize) -> usize {
        let (y, argmax) = maxpool3x3s2_forward(&self.nodes[x].value);
        self.push(Op::MaxPool { x, argmax }, y)
    }

    fn upsample2x(&mut self, x: usize) -> usize {
        let y = upsample2x_forward(&self.nodes[x].value);
        self.push(Op::Upsample2x { x }, y)
    }

    fn gap(&mut self, x: usize) -> usize {
        let y = gap_forward(&self.nodes[x].value);
        self.push(Op::Gap { x }, y)
    }

    fn mean(&mut self, xs: Vec<usize>) -> usize {
        let mut acc = self.nodes[xs[0]].value.clone();
        for &id in &xs[1..] {
            acc += &self.nodes[id].value;
        }
        acc.mapv_inplace(|v| v / xs.len() as f64);
        self.push(Op::Mean { xs }, acc)
    }

    /// Reverse-mode sweep from `root` seeded with `grad_root`. Returns
    /// parameter gradients; shared parameters accumulate across uses.
    pub fn backward(&self, root: usize, grad_root: Array4<f64>) -> Gradients {
        let mut grads: Vec<Option<Array4<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(grad_root);
        let mut param_grads = Gradients::new();

        let add_grad = |slot: &mut Option<Array4<f64>>, g: Array4<f64>| match slot {
            Some(existing) => *existing += &g,
            None => *slot = Some(g),
        };

        for idx in (0..=root).rev() {
            let gy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Conv {
                    x,
                    prefix,
                    stride,
                    pad,
                } => {
                    let w = self.store.expect(&format!("{prefix}.weight")).unwrap().as_array4();
                    let (gx, gw, gb) =
                        conv2d_backward(&self.nodes[*x].value, &w, &gy, *stride, *pad);
                    param_grads.accumulate(&format!("{prefix}.weight"), gw.into_dyn());
                    param_grads.accumulate(&format!("{prefix}.bias"), gb.into_dyn());
                    add_grad(&mut grads[*x], gx);
                }
                Op::Relu { x } => {
                    let gx = relu_backward(&self.nodes[*x].value, &gy);
                    add_grad(&mut grads[*x], gx);
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads[*a], gy.clone());
                    add_grad(&mut grads[*b], gy);
                }
                Op::MaxPool { x, argmax } => {
                    let gx = maxpool3x3s2_backward(self.nodes[*x].value.dim(), argmax, &gy);
                    add_grad(&mut grads[*x], gx);
                }
                Op::Upsample2x { x } => {
                    let gx = upsample2x_backward(&gy);
                    add_grad(&mut grads[*x], gx);
                }
                Op::Gap { x } => {
                    let gx = gap_backward(self.nodes[*x].value.dim(), &gy);
                    add_grad(&mut grads[*x], gx);
                }
                Op::Mean { xs } => {
                    let scale = 1.0 / xs.len() as f64;
                    for &x in xs {
                        add_grad(&mut grads[x], gy.mapv(|v| v * scale));
                    }
                }
            }
        }
        param_grads
    }
}

fn build_backbone(tape: &mut Tape, config: &NetworkConfig, x: usize) -> Result<(usize, usize, usize)> {
    let d = backbone_dims(config.backbone);
    let stem = tape.conv(x, "backbone.stem.conv", 2, 3)?;
    let stem = tape.relu(stem);
    let mut h = tape.maxpool(stem);
    let mut stage_out = [0usize; 4];
    for stage in 0..4 {
        for block in 0..d.blocks[stage] {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            let prefix = format!("backbone.layer{}.{}", stage + 1, block);
            let c1 = tape.conv(h, &format!("{prefix}.conv1"), 1, 0)?;
            let c1 = tape.relu(c1);
            let c2 = tape.conv(c1, &format!("{prefix}.conv2"), stride, 1)?;
            let c2 = tape.relu(c2);
            let c3 = tape.conv(c2, &format!("{prefix}.conv3"), 1, 0)?;
            let identity = if block == 0 {
                tape.conv(h, &format!("{prefix}.downsample"), stride, 0)?
            } else {
                h
            };
            let sum = tape.add(c3, identity);
            h = tape.relu(sum);
        }
        stage_out[stage] = h;
    }
    Ok((stage_out[1], stage_out[2], stage_out[3]))
}

/// Pyramid node ids keyed by level, ordered P3..P7.
fn build_fpn(
    tape: &mut Tape,
    config: &NetworkConfig,
    c3: usize,
    c4: usize,
    c5: usize,
) -> Result<Vec<(u8, usize)>> {
    let _ = config;
    let lat5 = tape.conv(c5, "fpn.lateral5", 1, 0)?;
    let lat4 = tape.conv(c4, "fpn.lateral4", 1, 0)?;
    let lat3 = tape.conv(c3, "fpn.lateral3", 1, 0)?;
    let up5 = tape.upsample2x(lat5);
    let m4 = tape.add(lat4, up5);
    let up4 = tape.upsample2x(m4);
    let m3 = tape.add(lat3, up4);
    let p3 = tape.conv(m3, "fpn.smooth3", 1, 1)?;
    let p4 = tape.conv(m4, "fpn.smooth4", 1, 1)?;
    let p5 = tape.conv(lat5, "fpn.smooth5", 1, 1)?;
    let p6 = tape.conv(c5, "fpn.p6", 2, 1)?;
    let p6_act = tape.relu(p6);
    let p7 = tape.conv(p6_act, "fpn.p7", 2, 1)?;
    Ok(vec![(3, p3), (4, p4), (5, p5), (6, p6), (7, p7)])
}

fn build_subnet(tape: &mut Tape, config: &NetworkConfig, level: usize) -> Result<usize> {
    let mut h = level;
    for i in 0..config.subnet_depth {
        let c = tape.conv(h, &format!("subnet.conv{i}"), 1, 1)?;
        h = tape.relu(c);
    }
    tape.conv(h, "subnet.out", 1, 1)
}

/// The classifier: configuration plus forward/backward plumbing.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
}

/// A completed forward pass; holds the tape for the backward sweep.
pub struct ForwardPass<'a> {
    tape: Tape<'a>,
    logits_node: usize,
    level_nodes: Vec<(u8, usize)>,
    subnet_nodes: Vec<(u8, usize)>,
}

impl<'a> ForwardPass<'a> {
    /// Aggregated logits, one row per batch element.
    pub fn logits(&self) -> Array2<f64> {
        let v = self.tape.value(self.logits_node);
        let (n, c, _, _) = v.dim();
        Array2::from_shape_fn((n, c), |(ni, ci)| v[[ni, ci, 0, 0]])
    }

    /// Pyramid feature map for one level.
    pub fn pyramid_map(&self, level: u8) -> Option<&Array4<f64>> {
        self.level_nodes
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, id)| self.tape.value(*id))
    }

    /// Per-level subnet logit map.
    pub fn subnet_map(&self, level: u8) -> Option<&Array4<f64>> {
        self.subnet_nodes
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, id)| self.tape.value(*id))
    }

    /// Backpropagate a (N,4) logit gradient to all parameters.
    pub fn backward(&self, grad_logits: &Array2<f64>) -> Gradients {
        let (n, c) = grad_logits.dim();
        let seed = Array4::from_shape_fn((n, c, 1, 1), |(ni, ci, _, _)| grad_logits[[ni, ci]]);
        self.tape.backward(self.logits_node, seed)
    }
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Network { config })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Fresh seeded parameters for this architecture.
    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        build_network(&self.config, seed)
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::Config(format!("input must have 3 channels, got {c}")));
        }
        if h != w || h % 32 != 0 {
            return Err(Error::Config(format!(
                "input side must be square and divisible by 32, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// Backbone only: multi-scale features C3 (S/8), C4 (S/16), C5 (S/32).
    pub fn backbone_forward(
        &self,
        store: &ParameterStore,
        x: &Array4<f64>,
    ) -> Result<(Array4<f64>, Array4<f64>, Array4<f64>)> {
        self.check_input(x)?;
        let mut tape = Tape::new(store);
        let input = tape.input(x.clone());
        let (c3, c4, c5) = build_backbone(&mut tape, &self.config, input)?;
        Ok((
            tape.value(c3).clone(),
            tape.value(c4).clone(),
            tape.value(c5).clone(),
        ))
    }

    /// FPN only, from externally supplied backbone features.
    pub fn fpn_forward(
        &self,
        store: &ParameterStore,
        c3: &Array4<f64>,
        c4: &Array4<f64>,
        c5: &Array4<f64>,
    ) -> Result<Vec<(u8, Array4<f64>)>> {
        let d = backbone_dims(self.config.backbone);
        for (name, map, want) in [("C3", c3, d.outs[1]), ("C4", c4, d.outs[2]), ("C5", c5, d.outs[3])] {
            if map.dim().1 != want {
                return Err(Error::Config(format!(
                    "{name} must have {want} channels, got {}",
                    map.dim().1
                )));
            }
        }
        let mut tape = Tape::new(store);
        let i3 = tape.input(c3.clone());
        let i4 = tape.input(c4.clone());
        let i5 = tape.input(c5.clone());
        let levels = build_fpn(&mut tape, &self.config, i3, i4, i5)?;
        Ok(levels
            .into_iter()
            .map(|(l, id)| (l, tape.value(id).clone()))
            .collect())
    }

    /// Weight-shared classification subnet applied to each supplied level.
    pub fn classification_subnet_forward(
        &self,
        store: &ParameterStore,
        levels: &[Array4<f64>],
    ) -> Result<Vec<Array4<f64>>> {
        let mut out = Vec::with_capacity(levels.len());
        for map in levels {
            let mut tape = Tape::new(store);
            let input = tape.input(map.clone());
            let id = build_subnet(&mut tape, &self.config, input)?;
            out.push(tape.value(id).clone());
        }
        Ok(out)
    }

    /// Full forward pass producing aggregated logits and a backprop tape.
    pub fn forward<'a>(&self, store: &'a ParameterStore, x: &Array4<f64>) -> Result<ForwardPass<'a>> {
        self.check_input(x)?;
        let mut tape = Tape::new(store);
        let input = tape.input(x.clone());
        let (c3, c4, c5) = build_backbone(&mut tape, &self.config, input)?;
        let level_nodes = build_fpn(&mut tape, &self.config, c3, c4, c5)?;
        let mut subnet_nodes = Vec::new();
        let mut pooled = Vec::new();
        for &(level, node) in &level_nodes {
            if !self.config.pyramid_levels.contains(&level) {
                continue;
            }
            let out = build_subnet(&mut tape, &self.config, node)?;
            subnet_nodes.push((level, out));
            pooled.push(tape.gap(out));
        }
        if pooled.is_empty() {
            return Err(Error::Config("no pyramid levels selected".into()));
        }
        let logits_node = tape.mean(pooled);
        Ok(ForwardPass {
            tape,
            logits_node,
            level_nodes,
            subnet_nodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::tiny(32, 8)
    }

    fn randn_input(n: usize, side: usize, seed: u64) -> Array4<f64> {
        let mut rng = substream_rng(seed, 3, 0);
        Array4::from_shape_fn((n, 3, side, side), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn tiny_param_count_matches_hand_arithmetic() {
        // Closed-form sums over the declared layer shapes, fpn_channels = 16.
        let config = NetworkConfig::tiny(32, 16);
        let store = build_network(&config, 0).unwrap();
        let stem = 8 * 3 * 49 + 8;
        let stage1 = (64 + 8) + (576 + 8) + (256 + 32) + (256 + 32);
        let stage2 = (512 + 16) + (2304 + 16) + (1024 + 64) + (2048 + 64);
        let stage3 = (2048 + 32) + (9216 + 32) + (4096 + 128) + (8192 + 128);
        let stage4 = (8192 + 64) + (36864 + 64) + (16384 + 256) + (32768 + 256);
        let laterals = (1024 + 16) + (2048 + 16) + (4096 + 16);
        let smooths = 3 * (2304 + 16);
        let p6 = 36864 + 16;
        let p7 = 2304 + 16;
        let subnet = 4 * (2304 + 16) + (576 + 4);
        let expected = stem + stage1 + stage2 + stage3 + stage4 + laterals + smooths + p6 + p7 + subnet;
        assert_eq!(store.total_len(), expected);
        // And the spec list agrees with itself.
        let by_specs: usize = conv_specs(&config).iter().map(|s| s.param_count()).sum();
        assert_eq!(store.total_len(), by_specs);
    }

    #[test]
    fn builds_are_seed_deterministic() {
        let config = tiny_config();
        let a = build_network(&config, 7).unwrap();
        let b = build_network(&config, 7).unwrap();
        assert_eq!(a, b);
        let c = build_network(&config, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut config = tiny_config();
        config.subnet_depth = 3;
        assert!(build_network(&config, 0).is_err());
        let mut config = tiny_config();
        config.num_classes = 5;
        assert!(config.validate().is_err());
        let mut config = tiny_config();
        config.input_side = 100;
        assert!(config.validate().is_err());
    }

    #[test]
    fn no_regression_head_parameters() {
        let store = build_network(&tiny_config(), 0).unwrap();
        assert!(store.names().all(|n| !n.contains("regression") && !n.contains("bbox")));
        // Exactly four hidden subnet convs plus the output conv.
        let hidden: Vec<&str> = store
            .names()
            .filter(|n| n.starts_with("subnet.conv") && n.ends_with(".weight"))
            .collect();
        assert_eq!(hidden.len(), 4);
        assert!(store.get("subnet.out.weight").is_some());
    }

    #[test]
    fn backbone_strides_and_batch() {
        let config = NetworkConfig::tiny(224, 8);
        let net = Network::new(config).unwrap();
        let store = net.init_params(1).unwrap();
        let x = randn_input(2, 224, 1);
        let (c3, c4, c5) = net.backbone_forward(&store, &x).unwrap();
        assert_eq!(c3.dim(), (2, 64, 28, 28));
        assert_eq!(c4.dim(), (2, 128, 14, 14));
        assert_eq!(c5.dim(), (2, 256, 7, 7));
    }

    #[test]
    fn backbone_zero_input_is_finite() {
        let net = Network::new(tiny_config()).unwrap();
        let store = net.init_params(2).unwrap();
        let x = Array4::zeros((1, 3, 32, 32));
        let (c3, c4, c5) = net.backbone_forward(&store, &x).unwrap();
        for m in [&c3, &c4, &c5] {
            assert!(m.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn backbone_rejects_indivisible_side() {
        let net = Network::new(tiny_config()).unwrap();
        let store = net.init_params(0).unwrap();
        let x = Array4::zeros((1, 3, 33, 33));
        assert!(net.backbone_forward(&store, &x).is_err());
    }

    #[test]
    fn fpn_level_sides_follow_ceil_division() {
        let config = NetworkConfig::tiny(224, 8);
        let net = Network::new(config).unwrap();
        let store = net.init_params(3).unwrap();
        let x = randn_input(1, 224, 2);
        let (c3, c4, c5) = net.backbone_forward(&store, &x).unwrap();
        let levels = net.fpn_forward(&store, &c3, &c4, &c5).unwrap();
        let sides: Vec<(u8, usize)> = levels.iter().map(|(l, m)| (*l, m.dim().2)).collect();
        assert_eq!(sides, vec![(3, 28), (4, 14), (5, 7), (6, 4), (7, 2)]);
        for (_, m) in &levels {
            assert_eq!(m.dim().1, 8, "every level carries fpn_channels channels");
        }
    }

    #[test]
    fn fpn_rejects_wrong_channel_widths() {
        let net = Network::new(tiny_config()).unwrap();
        let store = net.init_params(0).unwrap();
        let bad = Array4::zeros((1, 5, 4, 4));
        let c4 = Array4::zeros((1, 64, 2, 2));
        let c5 = Array4::zeros((1, 256, 1, 1));
        assert!(net.fpn_forward(&store, &bad, &c4, &c5).is_err());
    }

    #[test]
    fn fpn_zero_laterals_give_zero_pre_smooth_maps() {
        // With zero lateral weights/biases the top-down sums are zero, so the
        // smoothed maps equal the smoothing bias (zero here).
        let net = Network::new(tiny_config()).unwrap();
        let mut store = net.init_params(4).unwrap();
        for level in 3..=5 {
            for part in ["weight", "bias"] {
                let p = store.get_mut(&format!("fpn.lateral{level}.{part}")).unwrap();
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
            let p = store.get_mut(&format!("fpn.smooth{level}.bias")).unwrap();
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = randn_input(1, 32, 5);
        let (c3, c4, c5) = net.backbone_forward(&store, &x).unwrap();
        let levels = net.fpn_forward(&store, &c3, &c4, &c5).unwrap();
        for (l, m) in levels.iter().filter(|(l, _)| (3..=5).contains(l)) {
            assert!(m.iter().all(|v| v.abs() < 1e-12), "P{l} should be zero");
        }
    }

    #[test]
    fn subnet_is_weight_shared_and_four_channel() {
        let net = Network::new(tiny_config()).unwrap();
        let store = net.init_params(6).unwrap();
        let map = {
            let mut rng = substream_rng(9, 0, 0);
            Array4::from_shape_fn((1, 8, 4, 4), |_| rng.gen_range(-1.0..1.0))
        };
        // Two identical inputs through "different levels" produce identical outputs.
        let outs = net
            .classification_subnet_forward(&store, &[map.clone(), map.clone()])
            .unwrap();
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[0].dim().1, 4);
        assert_eq!(outs[0].dim().2, 4, "spatial dims preserved");
    }

    #[test]
    fn subnet_scalar_chain_matches_hand_computation() {
        // fpn_channels = 1, 1x1 spatial input: each 3x3 conv reduces to its
        // center tap, so the subnet is four relu(w*x + b) steps plus a final
        // affine map into 4 channels.
        let mut config = tiny_config();
        config.fpn_channels = 1;
        let net = Network::new(config.clone()).unwrap();
        let mut store = build_network(&config, 0).unwrap();
        let weights = [0.5, -2.0, 1.5, 0.25];
        let biases = [0.1, 0.2, -0.05, 0.3];
        for i in 0..4 {
            let w = store.get_mut(&format!("subnet.conv{i}.weight")).unwrap();
            w.data.iter_mut().for_each(|v| *v = 0.0);
            w.data[4] = weights[i] as f32; // center of the 3x3 kernel
            store.get_mut(&format!("subnet.conv{i}.bias")).unwrap().data[0] = biases[i] as f32;
        }
        let wout = store.get_mut("subnet.out.weight").unwrap();
        wout.data.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..4 {
            wout.data[c * 9 + 4] = (c as f32 + 1.0) * 0.1;
        }
        store.get_mut("subnet.out.bias").unwrap().data.copy_from_slice(&[0.0, 0.1, 0.2, 0.3]);

        let x0 = 0.8f64;
        let input = Array4::from_elem((1, 1, 1, 1), x0);
        let out = net.classification_subnet_forward(&store, &[input]).unwrap();
        let mut h = x0;
        for i in 0..4 {
            h = (weights[i] as f32 as f64 * h + biases[i] as f32 as f64).max(0.0);
        }
        for c in 0..4 {
            let expected = ((c as f32 + 1.0) * 0.1) as f64 * h + (c as f32 * 0.1) as f64;
            assert!(
                (out[0][[0, c, 0, 0]] - expected).abs() < 1e-9,
                "channel {c}: {} vs {expected}",
                out[0][[0, c, 0, 0]]
            );
        }
    }

    #[test]
    fn full_forward_matches_standalone_aggregation() {
        let net = Network::new(tiny_config()).unwrap();
        let store = net.init_params(11).unwrap();
        let x = randn_input(2, 32, 12);
        let pass = net.forward(&store, &x).unwrap();
        let logits = pass.logits();
        assert_eq!(logits.dim(), (2, 4));
        // Reassemble via the standalone ops.
        let (c3, c4, c5) = net.backbone_forward(&store, &x).unwrap();
        let levels = net.fpn_forward(&store, &c3, &c4, &c5).unwrap();
        let maps: Vec<Array4<f64>> = levels.iter().map(|(_, m)| m.clone()).collect();
        let subnet_out = net.classification_subnet_forward(&store, &maps).unwrap();
        let agg = crate::network::aggregate_logits(&subnet_out).unwrap();
        for (a, b) in logits.iter().zip(agg.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
