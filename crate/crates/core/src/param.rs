//! Parameter, update, and round-record types shared by every other module.
//!
//! Model parameters travel as one flat vector; model structure lives entirely
//! in the model module's flatten layout. All types here are immutable values
//! and safe to copy between concurrent workers.

use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Flat real-valued model parameters; the unit of communication.
///
/// Invariants: length >= 1 and every entry finite. Both are enforced on
/// construction and on every arithmetic result, so a NaN can never cross a
/// module boundary unnoticed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::Protocol(
                "parameter vector must hold at least one value".into(),
            ));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(CoreError::Numeric(format!(
                "parameter vector entry {i} is {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(CoreError::Protocol(
                "parameter vector must hold at least one value".into(),
            ));
        }
        Ok(Self {
            values: vec![T::zero(); len],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    /// Largest absolute coordinate difference between two vectors.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        check_same_len(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }
}

impl<T: Scalar> std::ops::Index<usize> for ParamVector<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

pub(crate) fn check_same_len<T: Scalar>(a: &ParamVector<T>, b: &ParamVector<T>) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Elementwise sum of `weight_i * vector_i`, accumulated in the order given.
///
/// Callers that need a reproducible reduction (aggregation does) sort their
/// terms by client id before calling; this kernel never reorders.
pub fn vec_weighted_sum<T: Scalar>(terms: &[(T, &ParamVector<T>)]) -> Result<ParamVector<T>> {
    let (first_weight, first) = terms
        .first()
        .ok_or_else(|| CoreError::Protocol("weighted sum over an empty term list".into()))?;
    let len = first.len();
    for (weight, _) in terms {
        if !weight.is_finite() {
            return Err(CoreError::Numeric(format!("weight {weight} is not finite")));
        }
    }
    let mut acc: Vec<T> = first.as_slice().iter().map(|&v| *first_weight * v).collect();
    for (weight, vector) in &terms[1..] {
        if vector.len() != len {
            return Err(CoreError::Dimension {
                expected: len,
                actual: vector.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(vector.as_slice()) {
            *a += *weight * v;
        }
    }
    ParamVector::new(acc)
}

/// A client's post-training parameters plus the weight its data carries.
#[derive(Debug, Clone)]
pub struct ClientUpdate<T: Scalar> {
    pub client_id: usize,
    pub params: ParamVector<T>,
    pub num_samples: usize,
    pub local_loss: T,
    pub train_seconds: f64,
}

impl<T: Scalar> ClientUpdate<T> {
    pub fn new(
        client_id: usize,
        params: ParamVector<T>,
        num_samples: usize,
        local_loss: T,
        train_seconds: f64,
    ) -> Result<Self> {
        if num_samples == 0 {
            return Err(CoreError::Protocol(format!(
                "client {client_id} reported an update with zero samples"
            )));
        }
        if !local_loss.is_finite() || local_loss < T::zero() {
            return Err(CoreError::Numeric(format!(
                "client {client_id} reported loss {local_loss}"
            )));
        }
        if !train_seconds.is_finite() || train_seconds < 0.0 {
            return Err(CoreError::Numeric(format!(
                "client {client_id} reported train_seconds {train_seconds}"
            )));
        }
        Ok(Self {
            client_id,
            params,
            num_samples,
            local_loss,
            train_seconds,
        })
    }
}

/// Server-side aggregation strategy tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    FedAvg,
    FedAvgM,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedAvgM => "fedavgm",
        }
    }
}

impl FromStr for Strategy {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedavgm" => Ok(Strategy::FedAvgM),
            other => Err(CoreError::Config(format!(
                "unknown strategy {other:?} (expected \"fedavg\" or \"fedavgm\")"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-round global metrics, timing, and the activated-client set.
#[derive(Debug, Clone)]
pub struct RoundRecord<T: Scalar> {
    /// 1-based round counter; consecutive within one experiment.
    pub round_index: usize,
    /// Sorted, deduplicated, non-empty.
    pub activated_clients: Vec<usize>,
    /// Mean IoU in [0, 1] for box tasks, mean loss >= 0 for scalar tasks.
    pub global_metric: T,
    pub wall_seconds: f64,
    pub strategy_tag: Strategy,
}

impl<T: Scalar> RoundRecord<T> {
    pub fn new(
        round_index: usize,
        mut activated_clients: Vec<usize>,
        global_metric: T,
        wall_seconds: f64,
        strategy_tag: Strategy,
    ) -> Result<Self> {
        if round_index == 0 {
            return Err(CoreError::Protocol("round indices start at 1".into()));
        }
        if activated_clients.is_empty() {
            return Err(CoreError::Protocol(format!(
                "round {round_index} activated no clients"
            )));
        }
        activated_clients.sort_unstable();
        activated_clients.dedup();
        if !global_metric.is_finite() || global_metric < T::zero() {
            return Err(CoreError::Numeric(format!(
                "round {round_index} metric {global_metric}"
            )));
        }
        Ok(Self {
            round_index,
            activated_clients,
            global_metric,
            wall_seconds,
            strategy_tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pv(values: &[f64]) -> ParamVector<f64> {
        ParamVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn weighted_sum_identity_weight() {
        let v = pv(&[1.0, 2.0]);
        let out = vec_weighted_sum(&[(1.0, &v)]).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn weighted_sum_convex_combination() {
        let a = pv(&[2.0, 0.0]);
        let b = pv(&[0.0, 4.0]);
        let out = vec_weighted_sum(&[(0.25, &a), (0.75, &b)]).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 3.0]);
    }

    #[test]
    fn weighted_sum_cancellation() {
        let v = pv(&[1.0, 1.0]);
        let out = vec_weighted_sum(&[(0.5, &v), (-0.5, &v)]).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn weights_summing_to_one_over_identical_vectors_return_the_vector() {
        let mut rng = crate::rng::seeded_rng(11, &[]);
        for _ in 0..50 {
            let len = rng.gen_range(1..64);
            let v = pv(&(0..len).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>());
            let w0: f64 = rng.gen_range(0.0..1.0);
            let terms = [(w0, &v), (0.5 * (1.0 - w0), &v), (0.5 * (1.0 - w0), &v)];
            let out = vec_weighted_sum(&terms).unwrap();
            assert!(out.max_abs_diff(&v).unwrap() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_rejects_length_mismatch() {
        let a = pv(&[1.0, 2.0]);
        let b = pv(&[1.0]);
        assert!(matches!(
            vec_weighted_sum(&[(1.0, &a), (1.0, &b)]),
            Err(CoreError::Dimension { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn weighted_sum_rejects_non_finite_weight() {
        let a = pv(&[1.0]);
        assert!(matches!(
            vec_weighted_sum(&[(f64::NAN, &a)]),
            Err(CoreError::Numeric(_))
        ));
    }

    #[test]
    fn weighted_sum_rejects_empty_terms() {
        let terms: [(f64, &ParamVector<f64>); 0] = [];
        assert!(matches!(
            vec_weighted_sum(&terms),
            Err(CoreError::Protocol(_))
        ));
    }

    #[test]
    fn param_vector_rejects_nan_and_empty() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::<f64>::new(vec![]).is_err());
        assert!(ParamVector::<f64>::zeros(0).is_err());
    }

    #[test]
    fn client_update_requires_samples() {
        let err = ClientUpdate::new(3, pv(&[0.0]), 0, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("client 3"));
    }

    #[test]
    fn round_record_sorts_and_validates() {
        let rec = RoundRecord::new(1, vec![2, 0, 1], 0.5, 0.0, Strategy::FedAvg).unwrap();
        assert_eq!(rec.activated_clients, vec![0, 1, 2]);
        assert!(RoundRecord::<f64>::new(0, vec![0], 0.5, 0.0, Strategy::FedAvg).is_err());
        assert!(RoundRecord::<f64>::new(1, vec![], 0.5, 0.0, Strategy::FedAvg).is_err());
    }

    #[test]
    fn strategy_round_trips_through_config_strings() {
        assert_eq!("fedavg".parse::<Strategy>().unwrap(), Strategy::FedAvg);
        assert_eq!("fedavgm".parse::<Strategy>().unwrap(), Strategy::FedAvgM);
        assert!("fedprox".parse::<Strategy>().is_err());
    }
}
