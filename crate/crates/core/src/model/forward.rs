use super::layers::{
    backbone_forward, cbam, channel_adapter, classifier_head, modulate_input, phase_attention,
};
use super::params::{Bound, ModelParams};
use super::ModelConfig;
use crate::data::grayscale;
use crate::error::{Error, Result};
use crate::spectral::{dft2d, fftshift, log_magnitude, phase_map};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::texture::soft_lbp;

/// Which stages of the pipeline ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub fft: bool,
    pub lbp: bool,
    pub phase: bool,
    pub phase_attention: bool,
    pub cbam: bool,
    pub adapter_in_channels: usize,
}

/// Model input with the hand-crafted channels already computed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInput<T: Real = f32> {
    /// `[k, H, W]`: RGB, then magnitude and LBP when the variant uses them.
    pub stacked: Tensor<T>,
    /// `[1, H, W]` phase map for phase-aware variants.
    pub phase: Option<Tensor<T>>,
    pub trace: ForwardTrace,
}

pub fn prepare_input<T: Real>(image: &Tensor<T>, cfg: &ModelConfig) -> Result<PreparedInput<T>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "model input must be RGB, got {c} channels"
        )));
    }
    if h != cfg.input_side || w != cfg.input_side {
        return Err(Error::Shape(format!(
            "model expects {0}x{0} images, got {h}x{w}",
            cfg.input_side
        )));
    }
    let v = cfg.variant;
    let mut trace = ForwardTrace::default();
    let mut parts = vec![image.clone()];
    let mut phase = None;
    if v.uses_fft() || v.uses_lbp() {
        let gray = grayscale(image)?;
        if v.uses_fft() {
            let spectrum = fftshift(&dft2d(&gray)?);
            parts.push(log_magnitude(&spectrum)?);
            trace.fft = true;
            if v.uses_phase_attention() {
                phase = Some(phase_map::<T>(&spectrum)?.reshape([1, h, w])?);
                trace.phase = true;
            }
        }
        if v.uses_lbp() {
            parts.push(soft_lbp(&gray, cfg.lbp_tau)?);
            trace.lbp = true;
        }
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    let stacked = Tensor::stack_channels(&refs)?;
    trace.adapter_in_channels = stacked.shape()[0];
    Ok(PreparedInput {
        stacked,
        phase,
        trace,
    })
}

/// Handles to the intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logit: Var,
    pub attention: Option<Var>,
    pub adapter_input: Var,
    pub backbone_out: Var,
    pub trace: ForwardTrace,
}

/// Runs the network on an already prepared input with parameters bound on `tape`.
pub fn forward_prepared<T: Real>(
    tape: &mut Tape<T>,
    params: &Bound,
    cfg: &ModelConfig,
    input: &PreparedInput<T>,
) -> Result<ForwardOutput> {
    let mut trace = input.trace;
    let expect = cfg.variant.in_channels();
    if input.stacked.shape()[0] != expect {
        return Err(Error::Shape(format!(
            "variant {} expects {expect} input channels, got {}",
            cfg.variant,
            input.stacked.shape()[0]
        )));
    }
    let x0 = tape.constant(input.stacked.clone());
    let mut attention = None;
    let adapter_input = if cfg.variant.uses_phase_attention() {
        let phase = input.phase.as_ref().ok_or_else(|| {
            Error::InvalidArgument("phase-aware variant needs a phase map".into())
        })?;
        let phase = tape.constant(phase.clone());
        let a0 = phase_attention(tape, params, x0, phase)?;
        trace.phase_attention = true;
        attention = Some(a0);
        modulate_input(tape, x0, a0)?
    } else {
        x0
    };
    let xa = channel_adapter(tape, params, adapter_input)?;
    let mut features = backbone_forward(tape, params, cfg.backbone_channels.len(), xa)?;
    let backbone_out = features;
    if cfg.variant.uses_cbam() {
        features = cbam(tape, params, features)?;
        trace.cbam = true;
    }
    let logit = classifier_head(tape, params, features)?;
    Ok(ForwardOutput {
        logit,
        attention,
        adapter_input,
        backbone_out,
        trace,
    })
}

/// Prepares `image`, binds `params` and runs the network.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
) -> Result<ForwardOutput> {
    let input = prepare_input(image, cfg)?;
    let bound = params.bind(tape);
    forward_prepared(tape, &bound, cfg, &input)
}
