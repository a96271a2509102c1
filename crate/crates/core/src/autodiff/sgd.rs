use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// SGD hyperparameters. Defaults are the momentum and weight decay used for
/// every training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
        }
    }
}

/// Heavy-ball velocities, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: SgdConfig,
    pub velocity: BTreeMap<String, Tensor>,
}

impl OptimState {
    /// Zero velocities mirroring every parameter in `params`.
    pub fn new(config: SgdConfig, params: &ParamStore) -> Self {
        let velocity = params.iter().map(|(k, v)| (k.clone(), Tensor::zeros_like(v))).collect();
        Self { config, velocity }
    }
}

/// One momentum SGD update:
///
/// ```text
/// v ← momentum·v + grad + weight_decay·param
/// param ← param − lr·v
/// ```
///
/// Only names in `trainable` move (all names when `None`); the others keep
/// both parameter and velocity bitwise unchanged and need no gradient.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimState,
    trainable: Option<&BTreeSet<String>>,
) -> Result<()> {
    let SgdConfig {
        lr,
        momentum,
        weight_decay,
    } = state.config;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if trainable.is_some_and(|t| !t.contains(&name)) {
            continue;
        }
        let grad = grads
            .get(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for trainable parameter `{name}`")))?;
        let velocity = state
            .velocity
            .get_mut(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("no optimizer state for `{name}`")))?;
        let param = params.get_mut(&name)?;
        if grad.shape() != param.shape() || velocity.shape() != param.shape() {
            return Err(Error::mismatch("sgd_step", param.shape(), grad.shape()));
        }
        for ((p, v), &g) in param.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
            *v = momentum * *v + g + weight_decay * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Rescales the gradients of `names` (all when `None`) so their joint L2
/// norm is at most `max_norm`. Returns the norm before rescaling. A
/// non-positive `max_norm` only measures.
pub fn clip_grad_norm(grads: &mut Gradients, names: Option<&BTreeSet<String>>, max_norm: f64) -> f64 {
    let selected = |name: &String| names.is_none_or(|n| n.contains(name));
    let norm = grads
        .iter()
        .filter(|(name, _)| selected(name))
        .flat_map(|(_, g)| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for (name, g) in grads.iter_mut() {
            if selected(name) {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(w: f64, g: f64, v: f64, config: SgdConfig) -> (f64, f64) {
        let mut params: ParamStore = [("w".to_string(), Tensor::scalar(w))].into_iter().collect();
        let mut state = OptimState::new(config, &params);
        state.velocity.insert("w".into(), Tensor::scalar(v));
        let grads: Gradients = [("w".to_string(), Tensor::scalar(g))].into_iter().collect();
        sgd_step(&mut params, &grads, &mut state, None).unwrap();
        (params.get("w").unwrap().data()[0], state.velocity["w"].data()[0])
    }

    #[test]
    fn plain_step() {
        let (w, _) = one_step(
            1.0,
            0.5,
            0.0,
            SgdConfig {
                lr: 0.1,
                momentum: 0.0,
                weight_decay: 0.0,
            },
        );
        assert!((w - 0.95).abs() < 1e-15);
    }

    #[test]
    fn pure_momentum_step() {
        let (w, v) = one_step(
            1.0,
            0.0,
            1.0,
            SgdConfig {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
        );
        assert!((v - 0.9).abs() < 1e-15);
        assert!((w - 0.91).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only() {
        let (w, _) = one_step(
            1.0,
            0.0,
            0.0,
            SgdConfig {
                lr: 0.1,
                momentum: 0.0,
                weight_decay: 0.0005,
            },
        );
        assert!((w - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_stay_bitwise() {
        let mut params: ParamStore = [
            ("a".to_string(), Tensor::new(&[2], vec![0.3, -0.7]).unwrap()),
            ("b".to_string(), Tensor::new(&[2], vec![1.1, 2.2]).unwrap()),
        ]
        .into_iter()
        .collect();
        let before = params.clone();
        let mut state = OptimState::new(SgdConfig::default(), &params);
        let grads: Gradients = [("a".to_string(), Tensor::ones(&[2]).unwrap())].into_iter().collect();
        let trainable: BTreeSet<String> = ["a".to_string()].into();
        for _ in 0..10 {
            sgd_step(&mut params, &grads, &mut state, Some(&trainable)).unwrap();
        }
        assert_eq!(params.get("b").unwrap(), before.get("b").unwrap());
        assert_ne!(params.get("a").unwrap(), before.get("a").unwrap());
        assert!(state.velocity["b"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipping_rescales_only_selected_names() {
        let mut grads: Gradients = [
            ("a".to_string(), Tensor::new(&[2], vec![3.0, 4.0]).unwrap()),
            ("b".to_string(), Tensor::new(&[1], vec![12.0]).unwrap()),
        ]
        .into_iter()
        .collect();
        let only_a: BTreeSet<String> = ["a".to_string()].into();
        let norm = clip_grad_norm(&mut grads, Some(&only_a), 1.0);
        assert_eq!(norm, 5.0);
        let a = grads["a"].data();
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        assert_eq!(grads["b"].data(), &[12.0]);
        assert_eq!(clip_grad_norm(&mut grads, None, 100.0), 145.0f64.sqrt());
        assert_eq!(grads["b"].data(), &[12.0]);
    }

    #[test]
    fn missing_gradient_for_trainable_is_rejected() {
        let mut params: ParamStore = [("a".to_string(), Tensor::scalar(1.0))].into_iter().collect();
        let mut state = OptimState::new(SgdConfig::default(), &params);
        assert!(sgd_step(&mut params, &Gradients::new(), &mut state, None).is_err());
    }
}
