use super::params::Bound;
use crate::error::{Error, Result};
use crate::tensor::{PoolKind, Real, Tape, Var};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn conv<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var, padding: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    tape.conv2d(x, w, b, 1, padding)
}

fn linear<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    tape.linear(x, w, b)
}

fn branch<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = conv(tape, p, &format!("attn.{name}.conv1"), x, 1)?;
    let h = tape.relu(h)?;
    let h = conv(tape, p, &format!("attn.{name}.conv2"), h, 1)?;
    tape.relu(h)
}

/// Gate `A0` in `(0, 1)^{5xHxW}` computed from the magnitude channel of `x0`
/// and the `[1, H, W]` phase map.
pub fn phase_attention<T: Real>(tape: &mut Tape<T>, p: &Bound, x0: Var, phase: Var) -> Result<Var> {
    let (c, h, w) = tape.value(x0).chw()?;
    if c != 5 {
        return Err(Error::Shape(format!(
            "phase attention needs a 5-channel input, got {c}"
        )));
    }
    if tape.value(phase).shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "phase map must be [1, {h}, {w}], got {:?}",
            tape.value(phase).shape()
        )));
    }
    let magnitude = tape.channels(x0, 3, 1)?;
    let m = branch(tape, p, "mag", magnitude)?;
    let ph = branch(tape, p, "phase", phase)?;
    let fused = tape.concat(&[m, ph])?;
    let logits = conv(tape, p, "attn.fuse", fused, 1)?;
    tape.sigmoid(logits)
}

pub fn modulate_input<T: Real>(tape: &mut Tape<T>, x0: Var, a0: Var) -> Result<Var> {
    tape.mul(x0, a0)
}

/// 1x1 projection to three channels followed by ImageNet normalization.
pub fn channel_adapter<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
    let y = conv(tape, p, "adapter", x, 0)?;
    let mean = IMAGENET_MEAN.map(T::cast);
    let std = IMAGENET_STD.map(T::cast);
    tape.normalize_channels(y, &mean, &std)
}

/// `stages` blocks of conv3x3, relu and 2x2 average pooling.
pub fn backbone_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    stages: usize,
    xa: Var,
) -> Result<Var> {
    let mut x = xa;
    for i in 0..stages {
        x = conv(tape, p, &format!("backbone.stage{i}"), x, 1)?;
        x = tape.relu(x)?;
        x = tape.avg_pool2(x)?;
    }
    Ok(x)
}

/// Channel attention followed by spatial attention.
pub fn cbam<T: Real>(tape: &mut Tape<T>, p: &Bound, f: Var) -> Result<Var> {
    let (c, _, _) = tape.value(f).chw()?;
    let mlp = |tape: &mut Tape<T>, kind: PoolKind| -> Result<Var> {
        let pooled = tape.pool(f, kind)?;
        let v = tape.reshape(pooled, &[c])?;
        let h = linear(tape, p, "cbam.mlp1", v)?;
        let h = tape.relu(h)?;
        linear(tape, p, "cbam.mlp2", h)
    };
    let avg = mlp(tape, PoolKind::ChannelAvg)?;
    let max = mlp(tape, PoolKind::ChannelMax)?;
    let sum = tape.add(avg, max)?;
    let ac = tape.sigmoid(sum)?;
    let ac = tape.reshape(ac, &[c, 1, 1])?;
    let refined = tape.channel_gate(f, ac)?;

    let avg = tape.pool(refined, PoolKind::SpatialAvg)?;
    let max = tape.pool(refined, PoolKind::SpatialMax)?;
    let stacked = tape.concat(&[avg, max])?;
    let s = conv(tape, p, "cbam.spatial", stacked, 3)?;
    let a_s = tape.sigmoid(s)?;
    tape.spatial_gate(refined, a_s)
}

/// Global average pooling and a two-layer MLP producing a `[1]` logit.
pub fn classifier_head<T: Real>(tape: &mut Tape<T>, p: &Bound, fs: Var) -> Result<Var> {
    let v = tape.pool(fs, PoolKind::GlobalAvg)?;
    let h = linear(tape, p, "head.fc1", v)?;
    let h = tape.relu(h)?;
    linear(tape, p, "head.fc2", h)
}
