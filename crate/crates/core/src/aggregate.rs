//! Server-side aggregation strategies, as pure state transitions.
//!
//! The server sees client updates and nothing else: no function in this module
//! accepts scene data or shards, which is the privacy boundary of the whole
//! engine. Weights are normalized over the clients that actually participated,
//! and every reduction runs in ascending client-id order so results are
//! bit-identical across runs and thread counts.
//!
//! FedAvg moves the global model to the sample-weighted mean of the client
//! models. It is phrased through a pseudo-gradient so that FedAvgM can reuse
//! the same quantity: the server treats
//! `delta = sum_k (n_k / n) * (w_glob - w_k)` as a gradient, and FedAvgM feeds
//! it through a velocity `v' = beta * v + (1 - beta) * delta` applied as
//! `w' = w_glob - server_lr * v'`.

use crate::error::{CoreError, Result};
use crate::param::{check_same_len, vec_weighted_sum, ClientUpdate, ParamVector};
use crate::scalar::{from_usize, Scalar};

/// Server momentum state for FedAvgM.
#[derive(Debug, Clone)]
pub struct FedAvgMState<T: Scalar> {
    /// Velocity vector; starts at zero and accumulates past pseudo-gradients.
    pub velocity: ParamVector<T>,
    /// Momentum coefficient in [0, 1).
    pub beta: T,
    /// Server learning rate, > 0.
    pub server_lr: T,
}

impl<T: Scalar> FedAvgMState<T> {
    /// Fresh state with zero velocity.
    pub fn new(param_len: usize, beta: T, server_lr: T) -> Result<Self> {
        if !beta.is_finite() || beta < T::zero() || beta >= T::one() {
            return Err(CoreError::Config(format!(
                "momentum beta must lie in [0, 1), got {beta}"
            )));
        }
        if !server_lr.is_finite() || server_lr <= T::zero() {
            return Err(CoreError::Config(format!(
                "server learning rate must be > 0, got {server_lr}"
            )));
        }
        Ok(Self {
            velocity: ParamVector::zeros(param_len)?,
            beta,
            server_lr,
        })
    }
}

/// Sample-weighted pseudo-gradient plus the total sample count behind it.
#[derive(Debug, Clone)]
pub struct AggregatedDelta<T: Scalar> {
    pub delta: ParamVector<T>,
    pub total_samples: usize,
}

/// `sum_k (n_k / n) * (w_glob - w_k)`, reduced in ascending client-id order.
///
/// Subtracting this from the global model recovers the weighted average of
/// the client models, which is what makes it act like a gradient for the
/// server-side optimizers.
pub fn pseudo_gradient<T: Scalar>(
    global: &ParamVector<T>,
    updates: &[ClientUpdate<T>],
) -> Result<AggregatedDelta<T>> {
    if updates.is_empty() {
        return Err(CoreError::Protocol(
            "aggregation requires at least one client update".into(),
        ));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_unstable_by_key(|&i| updates[i].client_id);
    for pair in order.windows(2) {
        if updates[pair[0]].client_id == updates[pair[1]].client_id {
            return Err(CoreError::Protocol(format!(
                "duplicate update from client {}",
                updates[pair[0]].client_id
            )));
        }
    }
    let total_samples: usize = updates.iter().map(|u| u.num_samples).sum();
    let total = from_usize::<T>(total_samples);

    let mut diffs: Vec<(T, ParamVector<T>)> = Vec::with_capacity(updates.len());
    for &i in &order {
        let update = &updates[i];
        check_same_len(global, &update.params)?;
        let diff: Vec<T> = global
            .as_slice()
            .iter()
            .zip(update.params.as_slice())
            .map(|(&g, &w)| g - w)
            .collect();
        let weight = from_usize::<T>(update.num_samples) / total;
        diffs.push((weight, ParamVector::new(diff)?));
    }
    let terms: Vec<(T, &ParamVector<T>)> = diffs.iter().map(|(w, v)| (*w, v)).collect();
    Ok(AggregatedDelta {
        delta: vec_weighted_sum(&terms)?,
        total_samples,
    })
}

/// One FedAvg round: `w' = w_glob - pseudo_gradient`, i.e. the sample-weighted
/// mean of the client models.
pub fn fedavg_step<T: Scalar>(
    global: &ParamVector<T>,
    updates: &[ClientUpdate<T>],
) -> Result<ParamVector<T>> {
    let aggregated = pseudo_gradient(global, updates)?;
    vec_weighted_sum(&[(T::one(), global), (-T::one(), &aggregated.delta)])
}

/// One FedAvgM round: `v' = beta v + (1 - beta) delta`, `w' = w - server_lr v'`.
///
/// Returns the new global model and the state carrying the updated velocity.
pub fn fedavgm_step<T: Scalar>(
    global: &ParamVector<T>,
    updates: &[ClientUpdate<T>],
    state: &FedAvgMState<T>,
) -> Result<(ParamVector<T>, FedAvgMState<T>)> {
    check_same_len(global, &state.velocity)?;
    let aggregated = pseudo_gradient(global, updates)?;
    let velocity = vec_weighted_sum(&[
        (state.beta, &state.velocity),
        (T::one() - state.beta, &aggregated.delta),
    ])?;
    let new_global = vec_weighted_sum(&[(T::one(), global), (-state.server_lr, &velocity)])?;
    Ok((
        new_global,
        FedAvgMState {
            velocity,
            beta: state.beta,
            server_lr: state.server_lr,
        },
    ))
}

/// Strategy dispatch owned by the orchestrator; mutated only between rounds.
#[derive(Debug, Clone)]
pub enum Aggregator<T: Scalar> {
    FedAvg,
    FedAvgM(FedAvgMState<T>),
}

impl<T: Scalar> Aggregator<T> {
    pub fn step(
        &mut self,
        global: &ParamVector<T>,
        updates: &[ClientUpdate<T>],
    ) -> Result<ParamVector<T>> {
        match self {
            Aggregator::FedAvg => fedavg_step(global, updates),
            Aggregator::FedAvgM(state) => {
                let (new_global, new_state) = fedavgm_step(global, updates, state)?;
                *state = new_state;
                Ok(new_global)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn pv(values: &[f64]) -> ParamVector<f64> {
        ParamVector::new(values.to_vec()).unwrap()
    }

    fn update(id: usize, params: &[f64], n: usize) -> ClientUpdate<f64> {
        ClientUpdate::new(id, pv(params), n, 0.0, 0.0).unwrap()
    }

    #[test]
    fn pseudo_gradient_two_clients() {
        let global = pv(&[0.0, 0.0]);
        let updates = [update(0, &[2.0, 0.0], 1), update(1, &[0.0, 4.0], 3)];
        let agg = pseudo_gradient(&global, &updates).unwrap();
        assert_eq!(agg.delta.as_slice(), &[-0.5, -3.0]);
        assert_eq!(agg.total_samples, 4);
    }

    #[test]
    fn pseudo_gradient_no_movement() {
        let global = pv(&[1.5, -2.0]);
        let updates = [update(0, &[1.5, -2.0], 7)];
        let agg = pseudo_gradient(&global, &updates).unwrap();
        assert_eq!(agg.delta.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn pseudo_gradient_single_coordinate() {
        let global = pv(&[1.0]);
        let updates = [update(0, &[0.0], 5)];
        let agg = pseudo_gradient(&global, &updates).unwrap();
        assert_eq!(agg.delta.as_slice(), &[1.0]);
        assert_eq!(agg.total_samples, 5);
    }

    #[test]
    fn pseudo_gradient_rejects_empty_and_duplicates() {
        let global = pv(&[0.0]);
        assert!(matches!(
            pseudo_gradient::<f64>(&global, &[]),
            Err(CoreError::Protocol(_))
        ));
        let updates = [update(2, &[1.0], 1), update(2, &[2.0], 1)];
        let err = pseudo_gradient(&global, &updates).unwrap_err();
        assert!(err.to_string().contains("client 2"));
    }

    #[test]
    fn fedavg_is_the_weighted_mean() {
        let global = pv(&[0.0, 0.0]);
        let updates = [update(0, &[2.0, 0.0], 1), update(1, &[0.0, 4.0], 3)];
        let out = fedavg_step(&global, &updates).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 3.0]);
    }

    #[test]
    fn fedavg_single_client_identity() {
        let global = pv(&[0.3, -0.7, 0.1]);
        let updates = [update(4, &[1.0, 2.0, 3.0], 9)];
        let out = fedavg_step(&global, &updates).unwrap();
        let expected = pv(&[1.0, 2.0, 3.0]);
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn fedavg_fixed_point_when_clients_return_global() {
        let global = pv(&[0.25, -1.0, 3.5]);
        let updates = [
            update(0, global.as_slice(), 2),
            update(1, global.as_slice(), 5),
        ];
        let out = fedavg_step(&global, &updates).unwrap();
        assert!(out.max_abs_diff(&global).unwrap() < 1e-15);
    }

    #[test]
    fn fedavg_invariant_under_update_permutation() {
        let mut rng = crate::rng::seeded_rng(5, &[]);
        let global = pv(&(0..16).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let mut updates: Vec<ClientUpdate<f64>> = (0..6)
            .map(|id| {
                let w: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
                update(id, &w, rng.gen_range(1..50))
            })
            .collect();
        let reference = fedavg_step(&global, &updates).unwrap();
        for _ in 0..10 {
            updates.shuffle(&mut rng);
            let permuted = fedavg_step(&global, &updates).unwrap();
            assert_eq!(permuted.as_slice(), reference.as_slice());
        }
    }

    #[test]
    fn fedavg_equal_samples_is_the_plain_mean() {
        let mut rng = crate::rng::seeded_rng(6, &[]);
        let global = pv(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let updates: Vec<ClientUpdate<f64>> = (0..5)
            .map(|id| {
                let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                update(id, &w, 13)
            })
            .collect();
        let out = fedavg_step(&global, &updates).unwrap();
        for i in 0..8 {
            let mean: f64 = updates.iter().map(|u| u.params[i]).sum::<f64>() / 5.0;
            assert!((out[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn fedavg_depends_only_on_sample_proportions() {
        let mut rng = crate::rng::seeded_rng(7, &[]);
        let global = pv(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let updates: Vec<ClientUpdate<f64>> = (0..4)
            .map(|id| {
                let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                update(id, &w, rng.gen_range(1..20))
            })
            .collect();
        let scaled: Vec<ClientUpdate<f64>> = updates
            .iter()
            .map(|u| update(u.client_id, u.params.as_slice(), u.num_samples * 17))
            .collect();
        let a = fedavg_step(&global, &updates).unwrap();
        let b = fedavg_step(&global, &scaled).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn fedavgm_with_momentum_disabled_matches_fedavg() {
        let mut rng = crate::rng::seeded_rng(8, &[]);
        for _ in 0..20 {
            let len = rng.gen_range(1..32);
            let global = pv(&(0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            let updates: Vec<ClientUpdate<f64>> = (0..rng.gen_range(1..6))
                .map(|id| {
                    let w: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    update(id, &w, rng.gen_range(1..30))
                })
                .collect();
            let state = FedAvgMState::new(len, 0.0, 1.0).unwrap();
            let (got, new_state) = fedavgm_step(&global, &updates, &state).unwrap();
            let want = fedavg_step(&global, &updates).unwrap();
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
            let delta = pseudo_gradient(&global, &updates).unwrap().delta;
            assert!(new_state.velocity.max_abs_diff(&delta).unwrap() < 1e-15);
        }
    }

    #[test]
    fn fedavgm_one_step_recursion() {
        // beta = 0.9, v = 0, delta = [1, 1]: clients sit at global - delta.
        let global = pv(&[2.0, -1.0]);
        let updates = [update(0, &[1.0, -2.0], 1)];
        let state = FedAvgMState::new(2, 0.9, 1.0).unwrap();
        let (w, state) = fedavgm_step(&global, &updates, &state).unwrap();
        assert!((state.velocity[0] - 0.1).abs() < 1e-15);
        assert!((state.velocity[1] - 0.1).abs() < 1e-15);
        assert!((w[0] - 1.9).abs() < 1e-15);
        assert!((w[1] - (-1.1)).abs() < 1e-15);
    }

    #[test]
    fn fedavgm_two_rounds_constant_delta() {
        // Unrolled recursion: v2 = 0.9 * 0.1 + 0.1 * 1 = 0.19.
        let mut global = pv(&[0.0, 0.0]);
        let mut state = FedAvgMState::new(2, 0.9, 1.0).unwrap();
        for _ in 0..2 {
            let client = update(0, &[global[0] - 1.0, global[1] - 1.0], 1);
            let (w, s) = fedavgm_step(&global, &[client], &state).unwrap();
            global = w;
            state = s;
        }
        assert!((state.velocity[0] - 0.19).abs() < 1e-15);
        assert!((state.velocity[1] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn fedavgm_velocity_converges_geometrically_to_constant_delta() {
        let mut rng = crate::rng::seeded_rng(9, &[]);
        let len = 6;
        let delta: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = 0.9_f64;
        let mut global = pv(&vec![0.0; len]);
        let mut state = FedAvgMState::new(len, beta, 1.0).unwrap();
        for t in 1..=10 {
            let w: Vec<f64> = global.as_slice().iter().zip(&delta).map(|(&g, &d)| g - d).collect();
            let (next, s) = fedavgm_step(&global, &[update(0, &w, 1)], &state).unwrap();
            global = next;
            state = s;
            // |v_t - delta| = beta^t * |v_0 - delta| with v_0 = 0.
            for i in 0..len {
                let expected = beta.powi(t) * delta[i].abs();
                assert!(
                    ((state.velocity[i] - delta[i]).abs() - expected).abs() < 1e-9,
                    "round {t} coord {i}"
                );
            }
        }
    }

    #[test]
    fn stationary_clients_leave_global_fixed_and_velocity_decaying() {
        let global = pv(&[0.5, -0.5]);
        let updates = [update(0, global.as_slice(), 3), update(1, global.as_slice(), 4)];

        let fixed = fedavg_step(&global, &updates).unwrap();
        assert!(fixed.max_abs_diff(&global).unwrap() < 1e-15);

        let mut state = FedAvgMState::new(2, 0.8, 1.0).unwrap();
        state.velocity = pv(&[1.0, -2.0]);
        let mut w = global.clone();
        let mut expected = [1.0, -2.0];
        for _ in 0..4 {
            let ups = [update(0, w.as_slice(), 3), update(1, w.as_slice(), 4)];
            let (next, s) = fedavgm_step(&w, &ups, &state).unwrap();
            state = s;
            expected = [expected[0] * 0.8, expected[1] * 0.8];
            assert!((state.velocity[0] - expected[0]).abs() < 1e-12);
            assert!((state.velocity[1] - expected[1]).abs() < 1e-12);
            w = next;
        }
    }

    #[test]
    fn state_validation() {
        assert!(FedAvgMState::<f64>::new(2, 1.0, 1.0).is_err());
        assert!(FedAvgMState::<f64>::new(2, -0.1, 1.0).is_err());
        assert!(FedAvgMState::<f64>::new(2, 0.9, 0.0).is_err());
        assert!(FedAvgMState::<f64>::new(2, 0.9, 1.0).is_ok());
    }
}
