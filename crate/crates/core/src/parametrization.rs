//! Initialization standard deviations and per-parameter-group learning-rate
//! multipliers for the standard parametrization (SP) and the variational
//! maximal update parametrization (μP), including the rank-scaling
//! correction for low-rank covariance factors.
//!
//! The rank correction is applied to initialization and learning rates
//! rather than to the forward pass, so the forward code is identical across
//! parametrizations: factor init std = mean std · R^{−1/2} and factor
//! learning rate = mean rate · R^{−1} under SGD.

use thiserror::Error;

use crate::numerics::Matrix;
use crate::rng::{self, Purpose};
use crate::varnet::{LayerParams, LayerSpec, NetParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("layer {layer}: width and rank must be positive (got width {width}, rank {rank})")]
    ZeroWidthOrRank {
        layer: usize,
        width: usize,
        rank: usize,
    },
    #[error("layer {layer}: exponents violate init stability: {what}")]
    Unstable { layer: usize, what: String },
    #[error("expected {expected} layers, got {got}")]
    LayerCountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParametrizationKind {
    /// Kaiming-style 1/fan_in initialization variance, unit learning-rate
    /// multipliers, no rank correction.
    Standard,
    /// Maximal update parametrization extended to the variational
    /// parameters, with the R^{−1/2} rank correction on the factor.
    MaximalUpdate,
}

/// Per-layer exponents (b, c) for the means and (b̃, c̃) for the factor,
/// with rank exponent p such that R = (fan_in · fan_out)^p. Widths enter as
/// the layer's fan-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerExponents {
    pub b: f64,
    pub c: f64,
    pub b_tilde: f64,
    pub c_tilde: f64,
    pub p: f64,
}

/// A parametrization: one of the two built-in kinds or explicit per-layer
/// exponents.
#[derive(Debug, Clone)]
pub enum ParametrizationSpec {
    Builtin {
        kind: ParametrizationKind,
        global_lr: f64,
    },
    Custom {
        exponents: Vec<LayerExponents>,
        global_lr: f64,
    },
}

impl ParametrizationSpec {
    pub fn standard(global_lr: f64) -> Self {
        Self::Builtin {
            kind: ParametrizationKind::Standard,
            global_lr,
        }
    }

    pub fn mu_p(global_lr: f64) -> Self {
        Self::Builtin {
            kind: ParametrizationKind::MaximalUpdate,
            global_lr,
        }
    }

    pub fn global_lr(&self) -> f64 {
        match self {
            Self::Builtin { global_lr, .. } | Self::Custom { global_lr, .. } => *global_lr,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Builtin {
                kind: ParametrizationKind::Standard,
                ..
            } => "sp",
            Self::Builtin {
                kind: ParametrizationKind::MaximalUpdate,
                ..
            } => "mup",
            Self::Custom { .. } => "custom",
        }
    }
}

/// Derived initialization and learning-rate factors of one layer. Learning
/// rates are multipliers on the global rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerScaling {
    pub mean_init_std: f64,
    pub mean_lr_mult: f64,
    pub factor_init_std: f64,
    pub factor_lr_mult: f64,
}

/// Position of a layer within the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Input,
    Hidden,
    Output,
}

fn role(layer: usize, n_layers: usize) -> Role {
    if layer == 0 {
        Role::Input
    } else if layer + 1 == n_layers {
        Role::Output
    } else {
        Role::Hidden
    }
}

/// Derives per-layer scaling factors.
///
/// `widths` is the chain [D_in, D_1, …, D_out] (length = layers + 1) and
/// `ranks` holds each layer's covariance rank R (1 for deterministic
/// layers; the factor entries are then unused).
pub fn derive_scaling(
    spec: &ParametrizationSpec,
    widths: &[usize],
    ranks: &[usize],
) -> Result<Vec<LayerScaling>, ScalingError> {
    let n_layers = widths.len().saturating_sub(1);
    if n_layers == 0 || ranks.len() != n_layers {
        return Err(ScalingError::LayerCountMismatch {
            expected: n_layers,
            got: ranks.len(),
        });
    }
    for (l, w) in widths.iter().enumerate() {
        if *w == 0 {
            return Err(ScalingError::ZeroWidthOrRank {
                layer: l,
                width: *w,
                rank: 1,
            });
        }
    }
    for (l, r) in ranks.iter().enumerate() {
        if *r == 0 {
            return Err(ScalingError::ZeroWidthOrRank {
                layer: l,
                width: widths[l],
                rank: *r,
            });
        }
    }

    match spec {
        ParametrizationSpec::Builtin { kind, .. } => {
            let mut out = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let fan_in = widths[l] as f64;
                let fan_out = widths[l + 1] as f64;
                let r = ranks[l] as f64;
                let scaling = match kind {
                    ParametrizationKind::Standard => {
                        // Variance ∝ 1/fan_in, no further adjustments; the
                        // factor follows the means entry for entry.
                        let std = fan_in.powf(-0.5);
                        LayerScaling {
                            mean_init_std: std,
                            mean_lr_mult: 1.0,
                            factor_init_std: std,
                            factor_lr_mult: 1.0,
                        }
                    }
                    ParametrizationKind::MaximalUpdate => {
                        let (mean_init_std, mean_lr_mult) = match role(l, n_layers) {
                            Role::Input => (fan_in.powf(-0.5), fan_out),
                            Role::Hidden => (fan_in.powf(-0.5), 1.0),
                            Role::Output => (fan_in.powf(-1.0), fan_in.recip()),
                        };
                        LayerScaling {
                            mean_init_std,
                            mean_lr_mult,
                            factor_init_std: mean_init_std * r.powf(-0.5),
                            factor_lr_mult: mean_lr_mult / r,
                        }
                    }
                };
                out.push(scaling);
            }
            Ok(out)
        }
        ParametrizationSpec::Custom { exponents, .. } => {
            if exponents.len() != n_layers {
                return Err(ScalingError::LayerCountMismatch {
                    expected: n_layers,
                    got: exponents.len(),
                });
            }
            check_stability(exponents)?;
            let mut out = Vec::with_capacity(n_layers);
            for (l, e) in exponents.iter().enumerate() {
                // Exponents are evaluated at the layer's fan-in width.
                let d = widths[l] as f64;
                out.push(LayerScaling {
                    mean_init_std: d.powf(-e.b),
                    mean_lr_mult: d.powf(-e.c),
                    factor_init_std: d.powf(-e.b_tilde),
                    factor_lr_mult: d.powf(-e.c_tilde),
                });
            }
            Ok(out)
        }
    }
}

/// Necessary stability-at-init conditions on explicit exponents:
/// b¹ ≥ 0, b^l ≥ ½ beyond the first layer, and
/// b̃ ≥ b + p/2 (first/last layer) or b + p (hidden layers).
fn check_stability(exponents: &[LayerExponents]) -> Result<(), ScalingError> {
    let n = exponents.len();
    for (l, e) in exponents.iter().enumerate() {
        let min_b = if l == 0 { 0.0 } else { 0.5 };
        if e.b < min_b - 1e-12 {
            return Err(ScalingError::Unstable {
                layer: l,
                what: format!("b = {} below {min_b}", e.b),
            });
        }
        let shift = match role(l, n) {
            Role::Input | Role::Output => e.p / 2.0,
            Role::Hidden => e.p,
        };
        if e.b_tilde < e.b + shift - 1e-12 {
            return Err(ScalingError::Unstable {
                layer: l,
                what: format!("b_tilde = {} below b + shift = {}", e.b_tilde, e.b + shift),
            });
        }
    }
    Ok(())
}

/// Scaling factors for a stack of [`LayerSpec`]s.
pub fn derive_scaling_for_specs(
    spec: &ParametrizationSpec,
    layer_specs: &[LayerSpec],
) -> Result<Vec<LayerScaling>, ScalingError> {
    let mut widths = Vec::with_capacity(layer_specs.len() + 1);
    widths.push(layer_specs[0].fan_in);
    for s in layer_specs {
        widths.push(s.fan_out);
    }
    let ranks: Vec<usize> = layer_specs.iter().map(|s| s.noise_len().max(1)).collect();
    derive_scaling(spec, &widths, &ranks)
}

/// Gaussian initialization of a network with the derived per-layer standard
/// deviations; deterministic per seed. `mu_init_mults` optionally rescales
/// the mean init of individual layers (transfer-experiment tweaks).
pub fn init_net(
    spec: &ParametrizationSpec,
    layer_specs: &[LayerSpec],
    rng_seed: u64,
    mu_init_mults: Option<&[f64]>,
) -> Result<NetParams, ScalingError> {
    let scalings = derive_scaling_for_specs(spec, layer_specs)?;
    let mut layers = Vec::with_capacity(layer_specs.len());
    for (l, (s, scale)) in layer_specs.iter().zip(&scalings).enumerate() {
        let mu_std = scale.mean_init_std * mu_init_mults.map_or(1.0, |m| m[l]);
        let mut mu_stream = rng::stream(rng_seed, &[Purpose::Init as u64, l as u64, 0]);
        let mu_data: Vec<f64> = rng::standard_normal(&mut mu_stream, s.weight_count())
            .iter()
            .map(|v| v * mu_std)
            .collect();
        let mut factor_stream = rng::stream(rng_seed, &[Purpose::Init as u64, l as u64, 1]);
        let n_factor = s.weight_count() * s.factor_cols();
        let factor_data: Vec<f64> = rng::standard_normal(&mut factor_stream, n_factor)
            .iter()
            .map(|v| v * scale.factor_init_std)
            .collect();
        layers.push(LayerParams {
            mu: Matrix::new(s.fan_out, s.fan_in, mu_data).expect("finite init"),
            factor: Matrix::new(s.weight_count(), s.factor_cols(), factor_data)
                .expect("finite init"),
        });
    }
    Ok(NetParams { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varnet::{Activation, WeightKind};

    #[test]
    fn standard_parametrization_is_fan_in_kaiming() {
        let spec = ParametrizationSpec::standard(0.1);
        let scalings = derive_scaling(&spec, &[3, 64, 64, 1], &[1, 8, 8]).unwrap();
        let fan_ins = [3.0f64, 64.0, 64.0];
        for (s, fi) in scalings.iter().zip(fan_ins) {
            assert!((s.mean_init_std - fi.powf(-0.5)).abs() < 1e-15);
            assert_eq!(s.mean_lr_mult, 1.0);
            assert_eq!(s.factor_init_std, s.mean_init_std);
            assert_eq!(s.factor_lr_mult, 1.0);
        }
    }

    #[test]
    fn mup_hidden_layer_rank_correction() {
        // Hidden layer of width 64 with supplied rank: factor init std is
        // 64^{-1/2} · R^{-1/2} and the factor learning rate carries R^{-1}.
        let spec = ParametrizationSpec::mu_p(1.0);
        let r = 16usize;
        let scalings = derive_scaling(&spec, &[1, 64, 64, 1], &[1, r, 1]).unwrap();
        let hidden = scalings[1];
        assert!((hidden.mean_init_std - 64f64.powf(-0.5)).abs() < 1e-15);
        assert_eq!(hidden.mean_lr_mult, 1.0);
        assert!((hidden.factor_init_std - 64f64.powf(-0.5) * (r as f64).powf(-0.5)).abs() < 1e-15);
        assert!((hidden.factor_lr_mult - 1.0 / r as f64).abs() < 1e-15);
    }

    #[test]
    fn mup_input_output_roles() {
        let spec = ParametrizationSpec::mu_p(1.0);
        let scalings = derive_scaling(&spec, &[5, 32, 32, 2], &[1, 1, 1]).unwrap();
        // Input: 1/fan_in init variance, learning rate grows with fan_out.
        assert!((scalings[0].mean_init_std - 5f64.powf(-0.5)).abs() < 1e-15);
        assert!((scalings[0].mean_lr_mult - 32.0).abs() < 1e-15);
        // Output: 1/fan_in² init variance, learning rate shrinks with fan_in.
        assert!((scalings[2].mean_init_std - 1.0 / 32.0).abs() < 1e-15);
        assert!((scalings[2].mean_lr_mult - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_factor_scaling_equals_mean_scaling() {
        let spec = ParametrizationSpec::mu_p(1.0);
        let scalings = derive_scaling(&spec, &[1, 16, 1], &[1, 1]).unwrap();
        for s in &scalings {
            assert_eq!(s.factor_init_std, s.mean_init_std);
            assert_eq!(s.factor_lr_mult, s.mean_lr_mult);
        }
    }

    #[test]
    fn zero_rank_or_width_rejected() {
        let spec = ParametrizationSpec::mu_p(1.0);
        assert!(matches!(
            derive_scaling(&spec, &[1, 16, 1], &[1, 0]),
            Err(ScalingError::ZeroWidthOrRank { .. })
        ));
        assert!(matches!(
            derive_scaling(&spec, &[1, 0, 1], &[1, 1]),
            Err(ScalingError::ZeroWidthOrRank { .. })
        ));
    }

    #[test]
    fn custom_exponents_validated_for_stability() {
        let bad_b1 = ParametrizationSpec::Custom {
            exponents: vec![LayerExponents {
                b: -0.1,
                c: 0.0,
                b_tilde: 0.0,
                c_tilde: 0.0,
                p: 0.0,
            }],
            global_lr: 1.0,
        };
        assert!(matches!(
            derive_scaling(&bad_b1, &[4, 1], &[1]),
            Err(ScalingError::Unstable { layer: 0, .. })
        ));

        // Hidden-layer b̃ must absorb the full rank exponent p.
        let bad_tilde = ParametrizationSpec::Custom {
            exponents: vec![
                LayerExponents {
                    b: 0.0,
                    c: -1.0,
                    b_tilde: 0.25,
                    c_tilde: -0.5,
                    p: 0.5,
                },
                LayerExponents {
                    b: 0.5,
                    c: 0.0,
                    b_tilde: 0.6, // needs 0.5 + 0.5 = 1.0
                    c_tilde: 1.0,
                    p: 0.5,
                },
                LayerExponents {
                    b: 1.0,
                    c: 1.0,
                    b_tilde: 1.25,
                    c_tilde: 1.5,
                    p: 0.5,
                },
            ],
            global_lr: 1.0,
        };
        assert!(matches!(
            derive_scaling(&bad_tilde, &[1, 8, 8, 1], &[1, 8, 2]),
            Err(ScalingError::Unstable { layer: 1, .. })
        ));
    }

    #[test]
    fn init_std_matches_target_empirically() {
        let specs = vec![
            LayerSpec::new(1, 320, WeightKind::LowRank { rank: 4 }, Activation::Relu),
            LayerSpec::new(
                320,
                1,
                WeightKind::LowRank { rank: 4 },
                Activation::Identity,
            ),
        ];
        let pspec = ParametrizationSpec::mu_p(1.0);
        let scalings = derive_scaling_for_specs(&pspec, &specs).unwrap();
        let net = init_net(&pspec, &specs, 9, None).unwrap();
        // 320 mean entries in layer 0: sample std within 3 SE of target.
        let entries = net.layers[0].mu.data();
        let n = entries.len() as f64;
        let std = (entries.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let target = scalings[0].mean_init_std;
        let se = target * (0.5 / n).sqrt();
        assert!((std - target).abs() < 3.0 * se, "{std} vs {target}");
        // Factor entries likewise.
        let fentries = net.layers[0].factor.data();
        let nf = fentries.len() as f64;
        let fstd = (fentries.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
        let ftarget = scalings[0].factor_init_std;
        let fse = ftarget * (0.5 / nf).sqrt();
        assert!((fstd - ftarget).abs() < 3.0 * fse);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let specs = vec![
            LayerSpec::new(2, 8, WeightKind::MeanField, Activation::Relu),
            LayerSpec::new(8, 1, WeightKind::Deterministic, Activation::Identity),
        ];
        let pspec = ParametrizationSpec::standard(1.0);
        let a = init_net(&pspec, &specs, 7, None).unwrap();
        let b = init_net(&pspec, &specs, 7, None).unwrap();
        let c = init_net(&pspec, &specs, 8, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_init_multiplier_zeroes_the_layer() {
        let specs = vec![
            LayerSpec::new(2, 4, WeightKind::Deterministic, Activation::Relu),
            LayerSpec::new(4, 1, WeightKind::Deterministic, Activation::Identity),
        ];
        let pspec = ParametrizationSpec::mu_p(1.0);
        let net = init_net(&pspec, &specs, 3, Some(&[1.0, 0.0])).unwrap();
        assert_eq!(net.layers[1].mu.max_abs(), 0.0);
        assert!(net.layers[0].mu.max_abs() > 0.0);
    }

    #[test]
    fn mup_hidden_units_stable_across_widths_at_init() {
        // Linear net, μP init: RMSE of hidden units over noise and init stays
        // stays of constant order: adjacent-width ratios within [0.5, 2.0].
        let widths = [16usize, 32, 64, 128];
        let mut rmse_per_width = Vec::new();
        for &d in &widths {
            let specs = vec![
                LayerSpec::new(1, d, WeightKind::LowRank { rank: d }, Activation::Identity),
                LayerSpec::new(d, d, WeightKind::LowRank { rank: d }, Activation::Identity),
                LayerSpec::new(d, 1, WeightKind::LowRank { rank: d }, Activation::Identity),
            ];
            let pspec = ParametrizationSpec::mu_p(1.0);
            let mut total = 0.0;
            let n_seeds = 3;
            for seed in 0..n_seeds {
                let net = init_net(&pspec, &specs, 100 + seed, None).unwrap();
                let stats =
                    crate::varnet::feature_stats(&net, &net, &specs, &[1.0], 64, seed).unwrap();
                // Second-moment RMSE of the middle layer's units.
                let m = &stats.layers[1];
                let second: Vec<f64> = m
                    .m1_init
                    .iter()
                    .zip(&m.m2_init)
                    .map(|(m1, m2)| m1 * m1 + m2)
                    .collect();
                total += (second.iter().sum::<f64>() / second.len() as f64).sqrt();
            }
            rmse_per_width.push(total / n_seeds as f64);
        }
        for pair in rmse_per_width.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!(
                (0.5..=2.0).contains(&ratio),
                "unstable hidden scale: ratios {rmse_per_width:?}"
            );
        }
    }
}
