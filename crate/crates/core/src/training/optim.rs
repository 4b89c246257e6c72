use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};

/// Linear KL annealing: `min(1, step / kl_anneal_steps)`.
pub fn anneal_weight(step: u64, kl_anneal_steps: u64) -> f64 {
    if kl_anneal_steps == 0 || step >= kl_anneal_steps {
        1.0
    } else {
        step as f64 / kl_anneal_steps as f64
    }
}

/// Rescales `grads` so their global L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64, store: &ParamStore) -> Result<f64> {
    for (i, g) in grads.iter().enumerate() {
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            let name = store.tensors().get(i).map(|t| t.name.as_str()).unwrap_or("?");
            return Err(Error::NonFinite(format!("gradient of {name}[{k}]")));
        }
    }
    let norm = grads.l2_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.values.len()]).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .tensors()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(t, (m, v))| m.len() == t.values.len() && v.len() == t.values.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    /// One bias-corrected update of every parameter in `store`.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
        if !state.matches(store) || grads.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameter layout"));
        }
        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((tensor, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(state.m.iter_mut())
            .zip(state.v.iter_mut())
        {
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                tensor.values[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("x", n, 1, values);
        s
    }

    fn grads_with(store: &ParamStore, values: &[f64]) -> Gradients {
        let mut g = Gradients::zeros_like(store);
        g.iter_mut().next().unwrap().copy_from_slice(values);
        g
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_weight(0, 15_000), 0.0);
        assert_eq!(anneal_weight(7_500, 15_000), 0.5);
        assert_eq!(anneal_weight(15_000, 15_000), 1.0);
        assert_eq!(anneal_weight(99_999, 15_000), 1.0);
    }

    #[test]
    fn clip_halves_and_leaves_small() {
        let store = store_with(vec![0.0; 2]);
        let mut g = grads_with(&store, &[6.0, 8.0]);
        let pre = clip_gradients(&mut g, 5.0, &store).unwrap();
        assert_eq!(pre, 10.0);
        assert_eq!(g.iter().next().unwrap(), &[3.0, 4.0]);

        let mut g = grads_with(&store, &[0.0, 3.0]);
        assert_eq!(clip_gradients(&mut g, 5.0, &store).unwrap(), 3.0);
        assert_eq!(g.iter().next().unwrap(), &[0.0, 3.0]);
    }

    #[test]
    fn clip_names_non_finite_parameter() {
        let store = store_with(vec![0.0; 2]);
        let mut g = grads_with(&store, &[1.0, f64::NAN]);
        let err = clip_gradients(&mut g, 1.0, &store).unwrap_err().to_string();
        assert!(err.contains("x[1]"), "{err}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = store_with(vec![1.0, -2.0, 0.5]);
        let g = grads_with(&store, &[0.3, -7.0, 1e-3]);
        let adam = Adam {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut st = AdamState::new(&store);
        adam.step(&mut store, &g, &mut st).unwrap();
        // m_hat = g and v_hat = g^2, so each coordinate moves by lr * g / (|g| + eps).
        let expect = [
            1.0 - 0.01 * 0.3 / (0.3 + 1e-8),
            -2.0 + 0.01 * 7.0 / (7.0 + 1e-8),
            0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8),
        ];
        for (a, b) in store.tensors()[0].values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut store = store_with(vec![1.0]);
        let adam = Adam {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut st = AdamState::new(&store);
        let g = grads_with(&store, &[2.0]);
        adam.step(&mut store, &g, &mut st).unwrap();
        let after_one = store.tensors()[0].values[0];
        let (m1, v1) = (st.m[0][0], st.v[0][0]);
        let frozen = store.clone();
        let mut probe = frozen.clone();
        let mut st2 = st.clone();
        let zero = grads_with(&store, &[0.0]);
        adam.step(&mut probe, &zero, &mut st2).unwrap();
        assert_eq!(st2.m[0][0], 0.9 * m1);
        assert_eq!(st2.v[0][0], 0.999 * v1);
        // the update uses the decayed momentum, so the parameter still moves
        assert!(probe.tensors()[0].values[0] < after_one);

        let mut fresh = store_with(vec![1.0]);
        let mut st3 = AdamState::new(&fresh);
        adam.step(&mut fresh, &zero, &mut st3).unwrap();
        assert_eq!(fresh.tensors()[0].values[0], 1.0);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = store_with(vec![3.0]);
        let adam = Adam {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        let mut st = AdamState::new(&store);
        for _ in 0..2000 {
            let x = store.tensors()[0].values[0];
            let g = grads_with(&store, &[2.0 * x]);
            adam.step(&mut store, &g, &mut st).unwrap();
        }
        assert!(store.tensors()[0].values[0].abs() < 1e-3, "{}", store.tensors()[0].values[0]);
    }

    #[test]
    fn adam_rejects_layout_mismatch() {
        let mut store = store_with(vec![1.0]);
        let other = store_with(vec![1.0, 2.0]);
        let mut st = AdamState::new(&other);
        let g = Gradients::zeros_like(&store);
        assert!(Adam {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8
        }
        .step(&mut store, &g, &mut st)
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn post_clip_norm_bounded(vals in proptest::collection::vec(-1e3f64..1e3, 1..20), clip in 1e-3f64..50.0) {
            let store = store_with(vec![0.0; vals.len()]);
            let mut g = grads_with(&store, &vals);
            let pre = clip_gradients(&mut g, clip, &store).unwrap();
            let post = g.l2_norm();
            proptest::prop_assert!(post <= clip + 1e-9);
            proptest::prop_assert!((post - pre.min(clip)).abs() < 1e-9);
        }

        #[test]
        fn anneal_monotone(a in 0u64..1_000_000, b in 0u64..1_000_000, k in 1u64..300_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(anneal_weight(lo, k) <= anneal_weight(hi, k));
            proptest::prop_assert!((0.0..=1.0).contains(&anneal_weight(lo, k)));
        }
    }
}
