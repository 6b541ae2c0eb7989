//! The secret-key queue: its per-slot state machine and the Markov-chain
//! analysis of its occupancy.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("cannot take {k} key packets from a queue holding {occupancy}")]
    Underflow { occupancy: usize, k: usize },
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("need 1 <= K <= Q_max, got K = {k}, Q_max = {q_max}")]
    Shape { k: usize, q_max: usize },
    #[error("power iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("transition matrix is singular")]
    Singular,
}

/// Key packets held by Alice (and mirrored at Bob).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyQueueState {
    occupancy: usize,
    k: usize,
    q_max: usize,
}

impl KeyQueueState {
    /// Empty queue consuming `k` packets per data packet, holding at most `q_max`.
    pub fn new(k: usize, q_max: usize) -> Self {
        Self::with_occupancy(k, q_max, 0)
    }

    pub fn with_occupancy(k: usize, q_max: usize, occupancy: usize) -> Self {
        assert!(occupancy <= q_max, "occupancy {occupancy} exceeds Q_max {q_max}");
        Self { occupancy, k, q_max }
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q_max(&self) -> usize {
        self.q_max
    }

    /// Enough key packets to one-time-pad a data packet.
    pub fn otp_ready(&self) -> bool {
        self.occupancy >= self.k
    }

    /// One key packet arrives; it is dropped when the buffer is full.
    #[must_use]
    pub fn enqueue_key(self) -> Self {
        Self {
            occupancy: (self.occupancy + 1).min(self.q_max),
            ..self
        }
    }

    /// `K` key packets leave to encrypt one data packet.
    pub fn dequeue_data(self) -> Result<Self, QueueError> {
        if !self.otp_ready() {
            return Err(QueueError::Underflow {
                occupancy: self.occupancy,
                k: self.k,
            });
        }
        Ok(Self {
            occupancy: self.occupancy - self.k,
            ..self
        })
    }
}

/// Parameters of the key-queue Markov chain: per-slot arrival probability
/// `lambda`, and probability `f` that `K` packets are served when available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovParams {
    pub lambda: f64,
    pub f: f64,
    pub k: usize,
    pub q_max: usize,
}

impl MarkovParams {
    pub fn validate(&self) -> Result<(), QueueError> {
        for (name, value) in [("lambda", self.lambda), ("f", self.f)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(QueueError::Probability { name, value });
            }
        }
        if self.k == 0 || self.k > self.q_max {
            return Err(QueueError::Shape {
                k: self.k,
                q_max: self.q_max,
            });
        }
        Ok(())
    }
}

/// Probability vector over occupancies `0..=Q_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
}

impl StationaryDistribution {
    /// `Pr{q >= k}`.
    pub fn tail_from(&self, k: usize) -> f64 {
        self.pi.iter().skip(k).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.pi
            .iter()
            .zip(&other.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-stochastic one-slot transition matrix.
///
/// Within a slot a departure of `K` (probability `f`, only if `q >= K` at the
/// start of the slot) and an arrival (probability `lambda`) happen
/// independently; the result is capped at `Q_max`.
pub fn transition_matrix(params: &MarkovParams) -> Result<DMatrix<f64>, QueueError> {
    params.validate()?;
    let MarkovParams { lambda, f, k, q_max } = *params;
    let size = q_max + 1;
    let mut p = DMatrix::zeros(size, size);
    for q in 0..size {
        let serve = if q >= k { f } else { 0.0 };
        for (departs, p_dep) in [(false, 1.0 - serve), (true, serve)] {
            for (arrives, p_arr) in [(false, 1.0 - lambda), (true, lambda)] {
                let w = p_dep * p_arr;
                if w == 0.0 {
                    continue;
                }
                let after = q - if departs { k } else { 0 } + usize::from(arrives);
                p[(q, after.min(q_max))] += w;
            }
        }
    }
    Ok(p)
}

const MAX_ITERATIONS: usize = 2_000_000;

/// Stationary law by power iteration from the uniform distribution, run
/// until `||pi P - pi||_inf < 1e-12`.
pub fn stationary_exact(p: &DMatrix<f64>) -> Result<StationaryDistribution, QueueError> {
    let n = p.nrows();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (i, &w) in pi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += w * p[(i, j)];
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = pi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut pi, &mut next);
        if residual < 1e-12 {
            return Ok(StationaryDistribution { pi });
        }
    }
    Err(QueueError::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual,
    })
}

/// Stationary law from a dense solve of `pi (P - I) = 0`, `sum(pi) = 1`.
/// Only meaningful for chains with a unique stationary law.
pub fn stationary_direct(p: &DMatrix<f64>) -> Result<StationaryDistribution, QueueError> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(QueueError::Singular)?;
    Ok(StationaryDistribution {
        pi: x.iter().copied().collect(),
    })
}

/// Closed-form occupancy law when `K` packets are always served once present:
/// `pi_0 = (1-lambda)/K`, `pi_l = 1/K` for `0 < l < K`, `pi_K = lambda/K`,
/// and zero above `K`.
pub fn stationary_closed_form(
    lambda: f64,
    k: usize,
    q_max: usize,
) -> Result<StationaryDistribution, QueueError> {
    MarkovParams {
        lambda,
        f: 1.0,
        k,
        q_max,
    }
    .validate()?;
    let kf = k as f64;
    let mut pi = vec![0.0; q_max + 1];
    pi[0] = (1.0 - lambda) / kf;
    for p in &mut pi[1..k] {
        *p = 1.0 / kf;
    }
    pi[k] += lambda / kf;
    Ok(StationaryDistribution { pi })
}

/// Runs the queue for `slots` slots with Bernoulli(`lambda`) arrivals and
/// Bernoulli(`f`) service, returning the occupancy at the start of each slot.
pub fn simulate_occupancy<R: Rng + ?Sized>(
    params: &MarkovParams,
    slots: usize,
    rng: &mut R,
) -> Result<Vec<usize>, QueueError> {
    params.validate()?;
    let mut q = KeyQueueState::new(params.k, params.q_max);
    let mut trace = Vec::with_capacity(slots);
    for _ in 0..slots {
        trace.push(q.occupancy());
        if q.otp_ready() && rng.random_bool(params.f) {
            q = q.dequeue_data()?;
        }
        if rng.random_bool(params.lambda) {
            q = q.enqueue_key();
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn state_machine_examples() {
        let q = KeyQueueState::with_occupancy(3, 10, 3);
        assert!(q.otp_ready());
        assert!(!KeyQueueState::with_occupancy(3, 10, 2).otp_ready());
        assert!(!KeyQueueState::new(1, 10).otp_ready());

        assert_eq!(KeyQueueState::new(1, 3).enqueue_key().occupancy(), 1);
        let full = KeyQueueState::with_occupancy(1, 3, 3);
        assert_eq!(full.enqueue_key().occupancy(), 3);
        let mut q = KeyQueueState::new(1, 3);
        for _ in 0..5 {
            q = q.enqueue_key();
        }
        assert_eq!(q.occupancy(), 3);

        assert_eq!(KeyQueueState::with_occupancy(2, 10, 2).dequeue_data().unwrap().occupancy(), 0);
        assert_eq!(KeyQueueState::with_occupancy(2, 10, 4).dequeue_data().unwrap().occupancy(), 2);
        assert_eq!(
            KeyQueueState::with_occupancy(2, 10, 1).dequeue_data().unwrap_err(),
            QueueError::Underflow { occupancy: 1, k: 2 }
        );
    }

    #[test]
    fn closed_form_examples() {
        let pi = stationary_closed_form(0.6, 1, 10).unwrap().pi;
        assert!((pi[0] - 0.4).abs() < 1e-15 && (pi[1] - 0.6).abs() < 1e-15);
        assert!(pi[2..].iter().all(|&p| p == 0.0));

        let pi = stationary_closed_form(0.6, 3, 10).unwrap().pi;
        let want = [0.4 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.2];
        for (a, b) in pi.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(pi[4..].iter().all(|&p| p == 0.0));
        assert!(stationary_closed_form(0.5, 11, 10).is_err());
        assert!(stationary_closed_form(1.5, 1, 10).is_err());
    }

    #[test]
    fn matrix_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let q_max = rng.random_range(1..15);
            let params = MarkovParams {
                lambda: rng.random(),
                f: rng.random(),
                k: rng.random_range(1..=q_max),
                q_max,
            };
            let p = transition_matrix(&params).unwrap();
            for r in 0..p.nrows() {
                assert!((p.row(r).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_arrivals_make_state_zero_absorbing() {
        let p = transition_matrix(&MarkovParams {
            lambda: 0.0,
            f: 0.3,
            k: 1,
            q_max: 4,
        })
        .unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        let pi = stationary_exact(&p).unwrap();
        assert!((pi.pi[0] - 1.0).abs() < 1e-10, "{:?}", pi.pi);
    }

    #[test]
    fn transitions_from_service_states() {
        let (lambda, f, k) = (0.3, 0.7, 2);
        let p = transition_matrix(&MarkovParams { lambda, f, k, q_max: 6 }).unwrap();
        let q = 3;
        assert!((p[(q, q - k)] - (1.0 - lambda) * f).abs() < 1e-15);
        assert!((p[(q, q - k + 1)] - lambda * f).abs() < 1e-15);
        assert!((p[(q, q + 1)] - lambda * (1.0 - f)).abs() < 1e-15);
        assert!((p[(q, q)] - (1.0 - lambda) * (1.0 - f)).abs() < 1e-15);
        // Arrival at a full buffer is dropped.
        assert!((p[(6, 6)] - (1.0 - f)).abs() < 1e-15);
    }

    #[test]
    fn small_chain_against_direct_solve() {
        let p = transition_matrix(&MarkovParams {
            lambda: 0.5,
            f: 1.0,
            k: 1,
            q_max: 2,
        })
        .unwrap();
        let exact = stationary_exact(&p).unwrap();
        let direct = stationary_direct(&p).unwrap();
        assert!(exact.max_abs_diff(&direct) < 1e-10);
        // pi_0 = 1 - lambda, pi_1 = lambda, pi_2 unreachable.
        assert!((exact.pi[0] - 0.5).abs() < 1e-10 && (exact.pi[1] - 0.5).abs() < 1e-10);
        assert!(exact.pi[2].abs() < 1e-10);
    }

    #[test]
    fn balance_relation_around_state_zero() {
        // pi_K = pi_0 * lambda / ((1 - lambda) f) for the chain with service
        // probability f, when K < Q_max.
        for &(lambda, f, k) in &[(0.3, 0.8, 2usize), (0.6, 0.5, 3), (0.2, 0.9, 1)] {
            let p = transition_matrix(&MarkovParams { lambda, f, k, q_max: 10 }).unwrap();
            let pi = stationary_direct(&p).unwrap().pi;
            let want = pi[0] * lambda / ((1.0 - lambda) * f);
            // State 0 is entered from K (no arrival) only.
            assert!((pi[k] - want).abs() < 1e-12, "{} vs {want}", pi[k]);
        }
    }

    #[test]
    fn power_iteration_recovers_closed_form() {
        let p = transition_matrix(&MarkovParams {
            lambda: 0.6,
            f: 1.0,
            k: 3,
            q_max: 10,
        })
        .unwrap();
        let pi = stationary_exact(&p).unwrap();
        let closed = stationary_closed_form(0.6, 3, 10).unwrap();
        assert!(pi.max_abs_diff(&closed) < 1e-9);
        assert!(pi.max_abs_diff(&stationary_direct(&p).unwrap()) < 1e-10);
        assert!((pi.tail_from(3) - 0.2).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn closed_form_sums_to_one(lambda in 0.0f64..=1.0, k in 1usize..10, extra in 0usize..10) {
            let d = stationary_closed_form(lambda, k, k + extra).unwrap();
            prop_assert!((d.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((d.tail_from(k) - lambda / k as f64).abs() < 1e-12);
        }

        #[test]
        fn closed_form_ignores_buffer_size(lambda in 0.0f64..=1.0, k in 1usize..8, a in 0usize..5, b in 0usize..5) {
            let x = stationary_closed_form(lambda, k, k + 1 + a).unwrap();
            let y = stationary_closed_form(lambda, k, k + 1 + b).unwrap();
            let n = k + 1;
            prop_assert_eq!(&x.pi[..n], &y.pi[..n]);
        }

        #[test]
        fn power_iteration_sums_to_one(lambda in 0.05f64..0.95, f in 0.05f64..=1.0, k in 1usize..6, extra in 0usize..6) {
            let p = transition_matrix(&MarkovParams { lambda, f, k, q_max: k + extra }).unwrap();
            let pi = stationary_exact(&p).unwrap();
            prop_assert!((pi.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pi.pi.iter().all(|&x| x >= 0.0));
            prop_assert!(pi.max_abs_diff(&stationary_direct(&p).unwrap()) < 1e-10);
        }
    }
}
