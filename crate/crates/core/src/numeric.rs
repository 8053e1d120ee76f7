//! Small numeric helpers shared across modules.

/// Sum of `values` with a single final rounding (Shewchuk's non-overlapping
/// partials). Terms such as `-e^x + ... + e^x` cancel exactly, which keeps
/// pseudo-gradient components meaningful when costs carry large offsetting
/// terms.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut naive = 0.0;
    for v in values {
        naive += v;
        let mut x = v;
        let mut kept = 0;
        for idx in 0..partials.len() {
            let mut y = partials[idx];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    if !naive.is_finite() {
        return naive;
    }
    partials.iter().rev().fold(0.0, |acc, p| acc + p)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Formats a float so that parsing the text gives back the same bits.
pub fn round_trip(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancels_large_terms_exactly() {
        let big = 98f64.exp();
        assert_eq!(exact_sum([-big, 196.0, -194.0, big]), 2.0);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
    }

    #[test]
    fn matches_naive_sum_on_benign_input() {
        let v = [0.1, 0.2, 0.3, -0.6];
        assert!((exact_sum(v) - v.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn round_trip_formatting() {
        for v in [0.1, 1e-300, 123456789.0125, -3.0, 2.5e-7] {
            assert_eq!(round_trip(v).parse::<f64>().unwrap(), v);
        }
    }
}
