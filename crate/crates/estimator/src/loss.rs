use dsse_tensor::{Tape, Var};

use crate::config::{Scheme, Task, TaskWeighting};
use crate::error::{EstimatorError, Result};

/// Huber threshold on standardized targets.
pub const HUBER_DELTA: f64 = 1.0;

/// `exp(−s1)/2·L1 + exp(−s2)/2·L2 + (s1 + s2)/2` with `s_i = log σ_i²`.
pub fn uwa_loss(tape: &mut Tape, l1: Var, l2: Var, s1: Var, s2: Var) -> Result<Var> {
    let term = |tape: &mut Tape, l: Var, s: Var| -> Result<Var> {
        let neg = tape.neg(s)?;
        let w = tape.exp(neg)?;
        let w = tape.scale(w, 0.5)?;
        Ok(tape.mul(w, l)?)
    };
    let a = term(tape, l1, s1)?;
    let b = term(tape, l2, s2)?;
    let s = tape.add(s1, s2)?;
    let pen = tape.scale(s, 0.5)?;
    let ab = tape.add(a, b)?;
    Ok(tape.add(ab, pen)?)
}

/// Plain-number form of [`uwa_loss`].
pub fn uwa_value(l1: f64, l2: f64, s1: f64, s2: f64) -> f64 {
    0.5 * (-s1).exp() * l1 + 0.5 * (-s2).exp() * l2 + 0.5 * (s1 + s2)
}

/// Task losses and (for UWA) the log-variances, combined per scheme.
pub enum TaskLosses {
    Single(Task, Var),
    /// Mix: one loss over the concatenated output.
    Joint(Var),
    Pair { l1: Var, l2: Var, s: Option<(Var, Var)> },
}

pub fn combined_loss(tape: &mut Tape, w: &TaskWeighting, losses: TaskLosses) -> Result<Var> {
    let mismatch = |what: &str| Err(EstimatorError::Config(format!("{} scheme cannot combine {what}", w.scheme)));
    match (w.scheme, losses) {
        (Scheme::Stl, TaskLosses::Single(_, l)) => Ok(l),
        (Scheme::Mix, TaskLosses::Joint(l)) => Ok(l),
        (Scheme::UniformScaling, TaskLosses::Pair { l1, l2, .. }) => {
            let a = tape.scale(l1, w.lambda[0])?;
            let b = tape.scale(l2, w.lambda[1])?;
            Ok(tape.add(a, b)?)
        }
        (Scheme::Uwa, TaskLosses::Pair { l1, l2, s: Some((s1, s2)) }) => uwa_loss(tape, l1, l2, s1, s2),
        (_, TaskLosses::Single(..)) => mismatch("a single-task loss"),
        (_, TaskLosses::Joint(_)) => mismatch("a joint loss"),
        (_, TaskLosses::Pair { .. }) => mismatch("a task pair"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsse_tensor::Tensor;

    #[test]
    fn uwa_on_tape_matches_value_form() {
        let mut tape = Tape::new();
        let v = |tape: &mut Tape, x: f64| tape.leaf(Tensor::scalar(x), true);
        let (l1, l2, s1, s2) = (v(&mut tape, 0.7), v(&mut tape, 1.9), v(&mut tape, -0.3), v(&mut tape, 0.8));
        let l = uwa_loss(&mut tape, l1, l2, s1, s2).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), uwa_value(0.7, 1.9, -0.3, 0.8));
    }

    #[test]
    fn mismatched_scheme_is_rejected() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::scalar(1.0));
        let w = TaskWeighting::new(Scheme::Uwa);
        assert!(combined_loss(&mut tape, &w, TaskLosses::Pair { l1: l, l2: l, s: None }).is_err());
        assert!(combined_loss(&mut tape, &TaskWeighting::new(Scheme::Mix), TaskLosses::Single(Task::Angle, l)).is_err());
    }
}
