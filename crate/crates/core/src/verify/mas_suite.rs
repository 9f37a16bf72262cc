//! Alignment-search checks: exhaustive-oracle equivalence, structural path
//! invariants at scale, shift invariance, and determinism.

use rand::Rng;

use crate::align::{durations_from_path, mas, mas_bruteforce, path_score, LikelihoodMatrix};
use crate::rng::{normal_vec, seeded};

use super::CheckResult;

fn random_matrix(rng: &mut crate::rng::SeedRng, t_x: usize, t_y: usize) -> LikelihoodMatrix<f64> {
    LikelihoodMatrix::new(normal_vec(rng, t_x * t_y), t_x, t_y).unwrap()
}

/// MAS score equals the brute-force maximum and the returned path is one of
/// the argmax paths, on random small instances.
pub fn mas_oracle_equivalence(seed: u64, instances: usize) -> CheckResult {
    let mut rng = seeded(seed);
    let mut worst_gap = 0.0f64;
    for i in 0..instances {
        let t_x = rng.random_range(1..=6);
        let t_y = rng.random_range(t_x..=10);
        let m = random_matrix(&mut rng, t_x, t_y);
        let path = match mas(&m) {
            Ok(p) => p,
            Err(e) => {
                return CheckResult::new(
                    "mas/oracle_equivalence",
                    false,
                    format!("instance {i} ({t_x}x{t_y}): {e}"),
                )
            }
        };
        let (best, best_paths) = mas_bruteforce(&m).unwrap();
        let score = path_score(&m, &path);
        let gap = (score - best).abs();
        worst_gap = worst_gap.max(gap);
        let member = best_paths.contains(&path)
            || best_paths.iter().any(|p| (path_score(&m, p) - score).abs() <= 1e-9);
        if gap > 1e-9 || !member {
            return CheckResult::new(
                "mas/oracle_equivalence",
                false,
                format!(
                    "instance {i} ({t_x}x{t_y}): score {score} vs brute-force {best}, member={member}"
                ),
            );
        }
    }
    CheckResult::new(
        "mas/oracle_equivalence",
        true,
        format!("{instances} instances, max score gap {worst_gap:.2e}"),
    )
}

/// Every returned path satisfies the alignment invariants on random
/// instances well beyond the oracle size cap.
pub fn mas_structural_invariants(seed: u64, instances: usize) -> CheckResult {
    let mut rng = seeded(seed);
    for i in 0..instances {
        let t_x = rng.random_range(1..=12);
        let t_y = rng.random_range(t_x..=t_x + 12);
        let m = random_matrix(&mut rng, t_x, t_y);
        let path = match mas(&m) {
            Ok(p) => p,
            Err(e) => {
                return CheckResult::new(
                    "mas/structural_invariants",
                    false,
                    format!("instance {i} ({t_x}x{t_y}): {e}"),
                )
            }
        };
        if let Err(e) = path.validate() {
            return CheckResult::new(
                "mas/structural_invariants",
                false,
                format!("instance {i} ({t_x}x{t_y}): {e}"),
            );
        }
        let durations = durations_from_path(&path).unwrap();
        let total: usize = durations.iter().sum();
        if total != t_y || durations.contains(&0) {
            return CheckResult::new(
                "mas/structural_invariants",
                false,
                format!("instance {i}: durations {durations:?} do not partition {t_y} frames"),
            );
        }
    }
    CheckResult::new(
        "mas/structural_invariants",
        true,
        format!("{instances} instances validated"),
    )
}

/// Adding a constant to every entry shifts all path scores equally, so the
/// selected path must not change.
pub fn mas_shift_invariance(seed: u64, instances: usize) -> CheckResult {
    let mut rng = seeded(seed);
    for i in 0..instances {
        let t_x = rng.random_range(1..=8);
        let t_y = rng.random_range(t_x..=t_x + 8);
        let m = random_matrix(&mut rng, t_x, t_y);
        let offset: f64 = rng.random_range(-50.0..50.0);
        let shifted = LikelihoodMatrix::new(
            m.values().iter().map(|v| v + offset).collect(),
            t_x,
            t_y,
        )
        .unwrap();
        if mas(&m).unwrap() != mas(&shifted).unwrap() {
            return CheckResult::new(
                "mas/shift_invariance",
                false,
                format!("instance {i} ({t_x}x{t_y}) changed under offset {offset}"),
            );
        }
    }
    CheckResult::new("mas/shift_invariance", true, format!("{instances} instances"))
}

/// Identical input, identical path.
pub fn mas_determinism(seed: u64, instances: usize) -> CheckResult {
    let mut rng = seeded(seed);
    for _ in 0..instances {
        let t_x = rng.random_range(1..=8);
        let t_y = rng.random_range(t_x..=t_x + 8);
        let m = random_matrix(&mut rng, t_x, t_y);
        if mas(&m).unwrap() != mas(&m).unwrap() {
            return CheckResult::new("mas/determinism", false, "same input, different paths");
        }
    }
    CheckResult::new("mas/determinism", true, format!("{instances} instances"))
}

pub fn run(seed: u64) -> Vec<CheckResult> {
    vec![
        mas_oracle_equivalence(seed, 1000),
        mas_structural_invariants(seed.wrapping_add(1), 10_000),
        mas_shift_invariance(seed.wrapping_add(2), 300),
        mas_determinism(seed.wrapping_add(3), 100),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_mas_suite() {
        assert!(mas_oracle_equivalence(7, 50).passed);
        assert!(mas_structural_invariants(8, 200).passed);
        assert!(mas_shift_invariance(9, 20).passed);
        assert!(mas_determinism(10, 10).passed);
    }
}
