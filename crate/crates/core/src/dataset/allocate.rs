//! Per-primitive compositional example counts under each distribution
//! scheme. Counts pair with example primitives in lexicographic surface
//! order; primitive definitions are never part of these counts.

use super::{DistributionScheme, ForgeError};

/// Computes per-primitive compositional counts.
///
/// When `size_cap` is set it is a total training-size budget: the counts are
/// fitted to `size_cap` minus the `n_primitives` example definitions and one
/// isolated definition. A capped uniform scheme floors the per-primitive
/// share and hands the remainder to the lexicographically first primitives;
/// capped shaped schemes rescale proportionally then floor.
pub fn allocate_counts(
    scheme: &DistributionScheme,
    n_primitives: usize,
    size_cap: Option<usize>,
) -> Result<Vec<usize>, ForgeError> {
    if n_primitives == 0 {
        return Err(ForgeError::InfeasibleAllocation(
            "need at least one example primitive".into(),
        ));
    }
    let budget = match size_cap {
        Some(cap) => {
            let definitions = n_primitives + 1;
            if cap < definitions {
                return Err(ForgeError::InfeasibleAllocation(format!(
                    "size cap {cap} cannot even hold {definitions} definitions"
                )));
            }
            Some(cap - definitions)
        }
        None => None,
    };

    match scheme {
        DistributionScheme::Uniform {
            examples_per_primitive: Some(e),
        } => Ok(vec![*e; n_primitives]),
        DistributionScheme::Uniform {
            examples_per_primitive: None,
        } => {
            let budget = budget.ok_or_else(|| {
                ForgeError::InfeasibleAllocation(
                    "capless uniform scheme needs an explicit per-primitive count".into(),
                )
            })?;
            let floor = budget / n_primitives;
            let remainder = budget % n_primitives;
            Ok((0..n_primitives)
                .map(|i| floor + usize::from(i < remainder))
                .collect())
        }
        DistributionScheme::Linear => {
            let raw: Vec<usize> = (1..=n_primitives).collect();
            Ok(fit_budget(raw, budget))
        }
        DistributionScheme::Quadratic => {
            let raw: Vec<usize> = (1..=n_primitives).map(|i| i * i).collect();
            Ok(fit_budget(raw, budget))
        }
        DistributionScheme::Skewed(p) => {
            p.validate()?;
            let heavy = ((p.fraction_heavy * n_primitives as f64).round() as usize).max(1);
            let mid = ((p.fraction_mid * n_primitives as f64).round() as usize).max(1);
            if heavy + mid > n_primitives {
                return Err(ForgeError::InfeasibleAllocation(format!(
                    "skewed scheme needs more than {n_primitives} primitives"
                )));
            }
            let light = n_primitives - heavy - mid;
            let mut raw = Vec::with_capacity(n_primitives);
            raw.extend(std::iter::repeat_n(p.heavy_count, heavy));
            raw.extend(std::iter::repeat_n(p.mid_count, mid));
            raw.extend(std::iter::repeat_n(p.light_count, light));
            Ok(fit_budget(raw, budget))
        }
    }
}

fn fit_budget(raw: Vec<usize>, budget: Option<usize>) -> Vec<usize> {
    match budget {
        None => raw,
        Some(b) => {
            let total: usize = raw.iter().sum();
            if total == 0 {
                return raw;
            }
            let scale = b as f64 / total as f64;
            raw.into_iter()
                .map(|c| (c as f64 * scale).floor() as usize)
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SkewParams;

    #[test]
    fn quadratic_ten_is_squares() {
        let counts = allocate_counts(&DistributionScheme::Quadratic, 10, None).unwrap();
        assert_eq!(counts, vec![1, 4, 9, 16, 25, 36, 49, 64, 81, 100]);
    }

    #[test]
    fn skewed_ten_is_one_heavy_three_mid_six_light() {
        let counts = allocate_counts(&DistributionScheme::skewed(), 10, None).unwrap();
        let heavy = counts.iter().filter(|&&c| c == 500).count();
        let mid = counts.iter().filter(|&&c| c == 10).count();
        let light = counts.iter().filter(|&&c| c == 1).count();
        assert_eq!((heavy, mid, light), (1, 3, 6));
        assert_eq!(counts.len(), 10);
    }

    #[test]
    fn uniform_capped_floors_with_remainder_first() {
        let counts =
            allocate_counts(&DistributionScheme::uniform_capped(), 100, Some(13_204)).unwrap();
        assert_eq!(counts.len(), 100);
        // Budget 13,204 - 101 definitions = 13,103 -> 3 primitives at 132.
        assert!(counts.iter().all(|&c| c == 131 || c == 132));
        assert_eq!(counts.iter().filter(|&&c| c == 132).count(), 3);
        assert_eq!(counts.iter().sum::<usize>(), 13_103);
    }

    #[test]
    fn uniform_without_cap_or_count_is_an_error() {
        assert!(allocate_counts(&DistributionScheme::uniform_capped(), 5, None).is_err());
    }

    #[test]
    fn linear_is_identity_ramp() {
        let counts = allocate_counts(&DistributionScheme::Linear, 5, None).unwrap();
        assert_eq!(counts, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn capped_shaped_schemes_rescale_then_floor() {
        // Raw linear total for n=4 is 10; cap 25 leaves budget 25-5=20,
        // scale 2.0.
        let counts = allocate_counts(&DistributionScheme::Linear, 4, Some(25)).unwrap();
        assert_eq!(counts, vec![2, 4, 6, 8]);
    }

    #[test]
    fn skew_rounding_preserves_proportions() {
        let counts = allocate_counts(&DistributionScheme::skewed(), 30, None).unwrap();
        let heavy = counts.iter().filter(|&&c| c == 500).count();
        let mid = counts.iter().filter(|&&c| c == 10).count();
        let light = counts.iter().filter(|&&c| c == 1).count();
        assert_eq!((heavy, mid, light), (3, 9, 18));
    }

    #[test]
    fn degenerate_skew_params_rejected() {
        let bad = SkewParams {
            fraction_heavy: 0.8,
            fraction_mid: 0.4,
            ..SkewParams::default()
        };
        assert!(allocate_counts(&DistributionScheme::Skewed(bad), 10, None).is_err());
    }
}
