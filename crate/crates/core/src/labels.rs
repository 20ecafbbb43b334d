//! Mapping of continuous sentiment labels in `[-3, 3]` to task targets.

use crate::data::{LABEL_MAX, LABEL_MIN};
use crate::error::{Result, TfnError};

fn check(y: f64) -> Result<()> {
    if y.is_finite() && (LABEL_MIN..=LABEL_MAX).contains(&y) {
        Ok(())
    } else {
        Err(TfnError::LabelOutOfRange { value: y })
    }
}

/// Positive iff `y >= 0`; neutral labels count as positive.
pub fn binarize_label(y: f64) -> Result<bool> {
    check(y)?;
    Ok(y >= 0.0)
}

/// Rounds half away from zero, then clamps `±3` into `±2`.
pub fn map_to_five_class(y: f64) -> Result<i8> {
    check(y)?;
    Ok(y.round().clamp(-2.0, 2.0) as i8)
}

/// Class `-2..=2` to softmax index `0..=4`.
pub fn class_index(class: i8) -> usize {
    (class + 2) as usize
}

pub fn index_class(index: usize) -> i8 {
    index as i8 - 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_class_mapping() {
        assert_eq!(map_to_five_class(2.7).unwrap(), 2);
        assert_eq!(map_to_five_class(-3.0).unwrap(), -2);
        assert_eq!(map_to_five_class(0.4).unwrap(), 0);
        assert_eq!(map_to_five_class(0.5).unwrap(), 1);
        assert_eq!(map_to_five_class(-0.5).unwrap(), -1);
        assert_eq!(map_to_five_class(-1.49).unwrap(), -1);
        assert!(map_to_five_class(3.01).is_err());
    }

    #[test]
    fn binary_mapping() {
        assert!(binarize_label(0.0).unwrap());
        assert!(!binarize_label(-0.1).unwrap());
        assert!(binarize_label(f64::NAN).is_err());
        assert_eq!(class_index(-2), 0);
        assert_eq!(index_class(4), 2);
    }
}
