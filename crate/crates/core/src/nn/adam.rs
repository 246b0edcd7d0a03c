use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::{ConvModel, Gradients, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    m_w: Vec<T>,
    v_w: Vec<T>,
    m_b: Vec<T>,
    v_b: Vec<T>,
}

/// First/second moment estimates for every parameter of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    config: AdamConfig,
    step: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &ConvModel<T>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let moments = model
            .layers()
            .iter()
            .map(|l| Moments {
                m_w: vec![T::zero(); l.weights().len()],
                v_w: vec![T::zero(); l.weights().len()],
                m_b: vec![T::zero(); l.bias().len()],
                v_b: vec![T::zero(); l.bias().len()],
            })
            .collect();
        Ok(Self {
            config,
            step: 0,
            moments,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Whether every first/second moment at a masked-out weight is zero.
    pub fn masked_moments_zero(&self, model: &ConvModel<T>) -> bool {
        model.layers().iter().zip(&self.moments).all(|(l, m)| {
            (0..l.weights().len())
                .all(|w| l.weight_in_mask(w) || (m.m_w[w] == T::zero() && m.v_w[w] == T::zero()))
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn update<T: Real>(
    theta: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    b1: T,
    b2: T,
    lr_t: T,
    eps_t: T,
) {
    let one = T::one();
    for k in 0..theta.len() {
        m[k] = b1 * m[k] + (one - b1) * g[k];
        v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
        theta[k] = theta[k] - lr_t * m[k] / (v[k].sqrt() + eps_t);
    }
}

/// One Adam step followed by the projection onto the mask: masked-out
/// weights and their moments are reset to zero.
pub fn adam_project_step<T: Real>(
    model: &mut ConvModel<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.layers.len() != model.layers().len() || state.moments.len() != model.layers().len() {
        return Err(Error::Shape(
            "gradient/optimizer state does not match the model".into(),
        ));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - c.beta1.powf(t);
    let bc2 = 1.0 - c.beta2.powf(t);
    // folded bias correction: θ -= lr·√bc2/bc1 · m / (√v + ε·√bc2)
    let lr_t = T::lit(c.learning_rate * bc2.sqrt() / bc1);
    let eps_t = T::lit(c.epsilon * bc2.sqrt());
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));

    for ((layer, g), mo) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.moments)
    {
        if g.weights.len() != layer.weights().len() || g.bias.len() != layer.bias().len() {
            return Err(Error::Shape("layer gradient size".into()));
        }
        update(
            layer.weights_mut(),
            &g.weights,
            &mut mo.m_w,
            &mut mo.v_w,
            b1,
            b2,
            lr_t,
            eps_t,
        );
        update(
            layer.bias_mut(),
            &g.bias,
            &mut mo.m_b,
            &mut mo.v_b,
            b1,
            b2,
            lr_t,
            eps_t,
        );
        layer.project();
        for w in 0..mo.m_w.len() {
            if !layer.weight_in_mask(w) {
                mo.m_w[w] = T::zero();
                mo.v_w[w] = T::zero();
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::WaveParams;
    use crate::nn::{Architecture, LayerSpec, MaskSpec};

    fn arch() -> Architecture {
        Architecture {
            input_channels: 2,
            encoder: vec![],
            decoder: vec![],
            output: LayerSpec::new(7, 7, 1),
        }
    }

    fn aniso() -> MaskSpec {
        MaskSpec::Anisotropic {
            waves: WaveParams::default(),
            dx: 10.0,
            dt: 1.0,
        }
    }

    fn filled(model: &ConvModel<f64>, v: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(model);
        for l in &mut g.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = ConvModel::<f64>::new(arch(), aniso(), 1.0, 1).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default()).unwrap();
        let g = filled(&m, 0.0);
        adam_project_step(&mut m, &g, &mut st).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn masked_weights_stay_zero() {
        let mut m = ConvModel::<f64>::new(arch(), aniso(), 1.0, 1).unwrap();
        let g = filled(&m, 0.3);
        let mut st = AdamState::new(&m, AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam_project_step(&mut m, &g, &mut st).unwrap();
        }
        assert!(m.mask_respected());
        assert!(st.masked_moments_zero(&m));
        assert_eq!(st.step(), 5);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // after one step with constant gradient g, Adam moves each
        // parameter by −lr·g/(|g| + ε) (bias-corrected moments equal g, g²)
        let mut m = ConvModel::<f64>::zeros(arch(), MaskSpec::Isotropic, 1.0).unwrap();
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&m, cfg).unwrap();
        let g = filled(&m, 0.5);
        adam_project_step(&mut m, &g, &mut st).unwrap();
        let expect = -cfg.learning_rate * 0.5 / (0.5 + cfg.epsilon);
        for v in m.layers()[0].weights() {
            assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
        }
    }
}
