//! Reflect (half-sample symmetric) boundary extension: `... c b a | a b c ... x y z | z y x ...`.
//!
//! Folding is periodic with period `2n`, so offsets larger than the image
//! itself are handled.

/// Maps an out-of-range index onto `[0, n)` by mirror reflection.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    let period = 2 * n;
    let j = i.rem_euclid(period);
    (if j >= n { period - 1 - j } else { j }) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrors_edges() {
        let got: Vec<usize> = (-4..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn single_pixel() {
        for i in -5..5 {
            assert_eq!(reflect_index(i, 1), 0);
        }
    }

    #[test]
    fn wraps_multiple_periods() {
        assert_eq!(reflect_index(-9, 3), 2);
        assert_eq!(reflect_index(13, 3), 1);
    }
}
