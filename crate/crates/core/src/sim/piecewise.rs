use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous step function: `values[k]` on `[times[k-1], times[k])`,
/// with `values[0]` before the first change and the last value after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != times.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: times.len() + 1,
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "change times must be strictly increasing".into(),
            ));
        }
        Ok(PiecewiseConstant { times, values })
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseConstant {
            times: Vec::new(),
            values: vec![value],
        }
    }

    /// Index of the piece containing `t`: the number of change times `<= t`.
    pub fn piece(&self, t: f64) -> usize {
        self.times.partition_point(|&c| c <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.values[self.piece(t)]
    }

    /// First change time strictly after `t`.
    pub fn next_change(&self, t: f64) -> Option<f64> {
        self.times.get(self.piece(t)).copied()
    }

    /// Same change times, values mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        PiecewiseConstant {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_are_right_continuous() {
        let f = PiecewiseConstant::new(vec![1.0, 2.0], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(f.eval(0.0), 10.0);
        assert_eq!(f.eval(0.999), 10.0);
        assert_eq!(f.eval(1.0), 20.0);
        assert_eq!(f.eval(1.5), 20.0);
        assert_eq!(f.eval(2.0), 30.0);
        assert_eq!(f.eval(100.0), 30.0);
        assert_eq!(f.next_change(0.0), Some(1.0));
        assert_eq!(f.next_change(1.0), Some(2.0));
        assert_eq!(f.next_change(2.0), None);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PiecewiseConstant::new(vec![1.0], vec![1.0]).is_err());
        assert!(PiecewiseConstant::new(vec![2.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(PiecewiseConstant::new(vec![1.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
    }
}
