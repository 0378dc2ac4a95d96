use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Parameter groups; each can be frozen and has its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    AttnBranchMag,
    AttnBranchPhase,
    AttnFuse,
    Adapter,
    Backbone,
    Cbam,
    Head,
}

impl GroupKind {
    pub const ALL: [GroupKind; 7] = [
        GroupKind::AttnBranchMag,
        GroupKind::AttnBranchPhase,
        GroupKind::AttnFuse,
        GroupKind::Adapter,
        GroupKind::Backbone,
        GroupKind::Cbam,
        GroupKind::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::AttnBranchMag => "attn_branch_mag",
            GroupKind::AttnBranchPhase => "attn_branch_phase",
            GroupKind::AttnFuse => "attn_fuse",
            GroupKind::Adapter => "adapter",
            GroupKind::Backbone => "backbone",
            GroupKind::Cbam => "cbam",
            GroupKind::Head => "head",
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T: Real = f32> {
    pub kind: GroupKind,
    pub frozen: bool,
    /// Learning rate of this group is `lr_mult * lr_scale` at each step.
    pub lr_mult: f64,
    pub params: Vec<Param<T>>,
}

/// All trainable tensors, always organised as the seven groups of
/// [`GroupKind::ALL`] in that order. Groups unused by a variant are empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Real = f32> {
    groups: Vec<ParamGroup<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Validates group order and name uniqueness.
    pub fn from_groups(groups: Vec<ParamGroup<T>>) -> Result<Self> {
        let kinds: Vec<_> = groups.iter().map(|g| g.kind).collect();
        if kinds != GroupKind::ALL {
            return Err(Error::InvalidArgument(format!(
                "parameter groups must be {:?}, got {kinds:?}",
                GroupKind::ALL
            )));
        }
        let mut seen = HashSet::new();
        for p in groups.iter().flat_map(|g| &g.params) {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter name {}",
                    p.name
                )));
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [ParamGroup<T>] {
        &mut self.groups
    }

    pub fn group(&self, kind: GroupKind) -> &ParamGroup<T> {
        &self.groups[kind as usize]
    }

    pub fn group_mut(&mut self, kind: GroupKind) -> &mut ParamGroup<T> {
        &mut self.groups[kind as usize]
    }

    pub fn set_frozen(&mut self, kind: GroupKind, frozen: bool) {
        self.group_mut(kind).frozen = frozen;
    }

    /// Every parameter with its group, in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (&ParamGroup<T>, &Param<T>)> {
        self.groups
            .iter()
            .flat_map(|g| g.params.iter().map(move |p| (g, p)))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.iter()
            .find(|(_, p)| p.name == name)
            .map(|(_, p)| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.groups
            .iter_mut()
            .flat_map(|g| &mut g.params)
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.params.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let groups = self
            .groups
            .iter()
            .map(|g| ParamGroup {
                kind: g.kind,
                frozen: g.frozen,
                lr_mult: g.lr_mult,
                params: g
                    .params
                    .iter()
                    .map(|p| Param {
                        name: p.name.clone(),
                        value: p.value.cast(),
                    })
                    .collect(),
            })
            .collect();
        ModelParams { groups }
    }

    /// FNV-1a over names, shapes and value bits of the given groups.
    pub fn fingerprint(&self, kinds: &[GroupKind]) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for g in self.groups.iter().filter(|g| kinds.contains(&g.kind)) {
            for p in &g.params {
                eat(p.name.as_bytes());
                for &d in p.value.shape() {
                    eat(&(d as u64).to_le_bytes());
                }
                for v in p.value.data() {
                    eat(&v.as_f64().to_bits().to_le_bytes());
                }
            }
        }
        h
    }

    /// Records every parameter on the tape. Frozen groups become constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_with(tape, |g| !g.frozen)
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> Bound {
        self.bind_with(tape, |_| false)
    }

    fn bind_with(&self, tape: &mut Tape<T>, trainable: impl Fn(&ParamGroup<T>) -> bool) -> Bound {
        let vars = self
            .iter()
            .map(|(g, p)| {
                (
                    p.name.clone(),
                    tape.leaf(p.value.clone().with_requires_grad(trainable(g))),
                )
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of bound parameters, in storage order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::InvalidArgument(format!("model has no parameter {name}")))
    }

    /// Substitutes the handle of one parameter, e.g. with a perturbed copy.
    pub fn set(&mut self, name: &str, var: Var) -> Result<()> {
        match self.vars.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => {
                slot.1 = var;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!(
                "model has no parameter {name}"
            ))),
        }
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }
}

enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zero,
    Passthrough,
}

struct Spec {
    group: GroupKind,
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn conv(group: GroupKind, name: &str, co: usize, ci: usize, k: usize, out: &mut Vec<Spec>) {
    out.push(Spec {
        group,
        name: format!("{name}.weight"),
        shape: vec![co, ci, k, k],
        init: Init::Xavier {
            fan_in: ci * k * k,
            fan_out: co * k * k,
        },
    });
    out.push(Spec {
        group,
        name: format!("{name}.bias"),
        shape: vec![co],
        init: Init::Zero,
    });
}

fn linear(group: GroupKind, name: &str, out_dim: usize, in_dim: usize, out: &mut Vec<Spec>) {
    out.push(Spec {
        group,
        name: format!("{name}.weight"),
        shape: vec![out_dim, in_dim],
        init: Init::Xavier {
            fan_in: in_dim,
            fan_out: out_dim,
        },
    });
    out.push(Spec {
        group,
        name: format!("{name}.bias"),
        shape: vec![out_dim],
        init: Init::Zero,
    });
}

fn layer_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    let variant = cfg.variant;
    if variant.uses_phase_attention() {
        let b = cfg.attn_branch_channels;
        for (group, branch) in [
            (GroupKind::AttnBranchMag, "mag"),
            (GroupKind::AttnBranchPhase, "phase"),
        ] {
            conv(group, &format!("attn.{branch}.conv1"), b, 1, 3, &mut s);
            conv(group, &format!("attn.{branch}.conv2"), b, b, 3, &mut s);
        }
        conv(GroupKind::AttnFuse, "attn.fuse", 5, 2 * b, 3, &mut s);
    }
    let k = variant.in_channels();
    s.push(Spec {
        group: GroupKind::Adapter,
        name: "adapter.weight".into(),
        shape: vec![3, k, 1, 1],
        init: Init::Passthrough,
    });
    s.push(Spec {
        group: GroupKind::Adapter,
        name: "adapter.bias".into(),
        shape: vec![3],
        init: Init::Zero,
    });
    let mut prev = 3;
    for (i, &w) in cfg.backbone_channels.iter().enumerate() {
        conv(
            GroupKind::Backbone,
            &format!("backbone.stage{i}"),
            w,
            prev,
            3,
            &mut s,
        );
        prev = w;
    }
    if variant.uses_cbam() {
        let r = prev / cfg.cbam_reduction;
        linear(GroupKind::Cbam, "cbam.mlp1", r, prev, &mut s);
        linear(GroupKind::Cbam, "cbam.mlp2", prev, r, &mut s);
        conv(GroupKind::Cbam, "cbam.spatial", 1, 2, 7, &mut s);
    }
    linear(GroupKind::Head, "head.fc1", cfg.head_hidden, prev, &mut s);
    linear(GroupKind::Head, "head.fc2", 1, cfg.head_hidden, &mut s);
    s
}

/// Xavier-uniform weights, zero biases and an identity RGB adapter, drawn
/// from a generator seeded with `seed`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<ParamGroup<f32>> = GroupKind::ALL
        .iter()
        .map(|&kind| ParamGroup {
            kind,
            frozen: false,
            lr_mult: 1.0,
            params: Vec::new(),
        })
        .collect();
    for spec in layer_specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let value = match spec.init {
            Init::Xavier { fan_in, fan_out } => {
                let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(spec.shape, |_| rng.random_range(-b..b) as f32)
            }
            Init::Zero => Tensor::zeros(spec.shape),
            Init::Passthrough => {
                let k = spec.shape[1];
                Tensor::from_fn(spec.shape, |i| if i / k == i % k { 1.0 } else { 0.0 })
            }
        };
        debug_assert_eq!(value.len(), n);
        groups[spec.group as usize].params.push(Param {
            name: spec.name,
            value,
        });
    }
    ModelParams::from_groups(groups)
}
