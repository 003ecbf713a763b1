use crate::error::{Error, Result};
use crate::image::{Dihedral, ImageArray};

/// Fixed test-time augmentation order. Any `t` uses the first `t` entries, so the
/// list for `t` is always a prefix of the list for `t + 1` and `t = 1` is plain
/// inference.
pub const TTA_ORDER: [Dihedral; 8] = [
    Dihedral::Identity,
    Dihedral::HFlip,
    Dihedral::VFlip,
    Dihedral::Rot180,
    Dihedral::Rot90,
    Dihedral::Rot270,
    Dihedral::HFlipRot90,
    Dihedral::HFlipRot270,
];

pub fn tta_ops(t: usize) -> Result<&'static [Dihedral]> {
    if !(1..=TTA_ORDER.len()).contains(&t) {
        return Err(Error::invalid(format!("TTA count must be in 1..=8, got {t}")));
    }
    Ok(&TTA_ORDER[..t])
}

pub fn tta_expand(img: &ImageArray, t: usize) -> Result<Vec<ImageArray>> {
    Ok(tta_ops(t)?.iter().map(|&op| img.apply(op)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageArray {
        ImageArray::from_fn(4, 6, 1, |r, c, _| (r * 6 + c) as f64 / 24.0)
    }

    #[test]
    fn first_element_is_identity() {
        assert_eq!(tta_expand(&img(), 1).unwrap(), vec![img()]);
    }

    #[test]
    fn second_is_hflip() {
        assert_eq!(tta_expand(&img(), 2).unwrap()[1], img().hflip());
    }

    #[test]
    fn prefix_property() {
        for t in 1..8 {
            let a = tta_expand(&img(), t).unwrap();
            let b = tta_expand(&img(), t + 1).unwrap();
            assert_eq!(&b[..t], &a[..]);
        }
    }

    #[test]
    fn range_checked() {
        assert!(tta_expand(&img(), 0).is_err());
        assert!(tta_expand(&img(), 9).is_err());
    }
}
