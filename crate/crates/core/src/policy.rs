//! Value-function interface and action selection.

use rand::Rng;

use crate::domain::Action;
use crate::scalar::Scalar;

/// Anything that scores the ten actions for an encoded state.
pub trait QFunction<T: Scalar>: Sync {
    fn q_values(&self, state: &[T]) -> Vec<T>;

    fn greedy_action(&self, state: &[T]) -> Action {
        greedy(&self.q_values(state))
    }
}

impl<T: Scalar, Q: QFunction<T> + ?Sized> QFunction<T> for &Q {
    fn q_values(&self, state: &[T]) -> Vec<T> {
        (**self).q_values(state)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<T: Scalar>(q_values: &[T]) -> Action {
    assert_eq!(q_values.len(), Action::COUNT, "q-vector must cover every action");
    Action::from_index(argmax(q_values)).expect("argmax is a valid action index")
}

/// Epsilon-greedy: uniform random action with probability `epsilon`, else greedy.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(q_values: &[T], epsilon: f64, rng: &mut R) -> Action {
    let explore: f64 = rng.random();
    if explore < epsilon {
        Action::from_index(rng.random_range(0..Action::COUNT)).expect("in range")
    } else {
        greedy(q_values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_max() {
        let mut q = [0.0f64; 10];
        q[4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, 0.0, &mut rng), Action::DeCatastrophizing);
    }

    #[test]
    fn ties_break_low() {
        let q = [0.3f64; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&q, 0.0, &mut rng), Action::EmpathicValidation);
        let mut q2 = [0.0f32; 10];
        q2[3] = 2.0;
        q2[7] = 2.0;
        assert_eq!(greedy(&q2), Action::RealityTesting);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = [0.0f64; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            counts[select_action(&q, 1.0, &mut rng).index()] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.1).abs() <= 0.01, "frequency {f}");
        }
    }
}
