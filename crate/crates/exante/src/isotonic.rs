/// Least-squares nondecreasing fit by pool-adjacent-violators (unit weights).
/// Input that is already nondecreasing comes back unchanged.
pub fn pava(values: &[f64]) -> Vec<f64> {
    if values.windows(2).all(|w| w[0] <= w[1]) {
        return values.to_vec();
    }
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, c) in blocks {
        let m = s / c as f64;
        out.extend(std::iter::repeat_n(m, c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_violators() {
        assert_eq!(pava(&[0.3, 0.2, 0.5]), vec![0.25, 0.25, 0.5]);
        assert_eq!(pava(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert!(pava(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn output_monotone_and_mean_preserving(v in proptest::collection::vec(-10.0f64..10.0, 1..60)) {
            let out = pava(&v);
            prop_assert_eq!(out.len(), v.len());
            for w in out.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-12);
            }
            let s0: f64 = v.iter().sum();
            let s1: f64 = out.iter().sum();
            prop_assert!((s0 - s1).abs() < 1e-9);
            let again = pava(&out);
            for (a, b) in again.iter().zip(&out) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
