//! Difficulty scoring from small/expert loss profiles and tertile grading.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DifficultyError {
    #[error("batch has {got} profiles, need at least {need}")]
    EmptyBatch { need: usize, got: usize },
    #[error("profile {0} has a negative or non-finite loss")]
    BadLoss(String),
    #[error("profile {0} has confidence outside [0, 1]")]
    BadConfidence(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerProfile {
    pub record_id: String,
    pub loss_small: f64,
    pub loss_expert: f64,
    pub confidence_small: f64,
}

impl ScorerProfile {
    pub fn validate(&self) -> Result<(), DifficultyError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.loss_small) || !ok(self.loss_expert) {
            return Err(DifficultyError::BadLoss(self.record_id.clone()));
        }
        if !(0.0..=1.0).contains(&self.confidence_small) {
            return Err(DifficultyError::BadConfidence(self.record_id.clone()));
        }
        Ok(())
    }

    fn gap(&self) -> f64 {
        self.loss_small - self.loss_expert
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Easy,
    Medium,
    Hard,
}

impl Grade {
    pub fn as_str(self) -> &'static str {
        match self {
            Grade::Easy => "easy",
            Grade::Medium => "medium",
            Grade::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyGrade {
    pub record_id: String,
    pub score: f64,
    pub grade: Grade,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifficultyWeights {
    pub loss_small: f64,
    pub gap: f64,
}

impl Default for DifficultyWeights {
    fn default() -> Self {
        DifficultyWeights {
            loss_small: 0.5,
            gap: 0.5,
        }
    }
}

/// Population mean and standard deviation of the two score inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_gap: f64,
    pub std_gap: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

impl BatchStats {
    pub fn from_profiles(profiles: &[ScorerProfile]) -> Result<Self, DifficultyError> {
        if profiles.is_empty() {
            return Err(DifficultyError::EmptyBatch { need: 1, got: 0 });
        }
        let (mean_loss, std_loss) = mean_std(profiles.iter().map(|p| p.loss_small));
        let (mean_gap, std_gap) = mean_std(profiles.iter().map(ScorerProfile::gap));
        Ok(BatchStats {
            mean_loss,
            std_loss,
            mean_gap,
            std_gap,
        })
    }
}

fn z(x: f64, mean: f64, std: f64) -> f64 {
    // relative guard so float noise on identical values still reads as zero spread
    if std <= 1e-12 * libm::fabs(mean).max(1.0) {
        0.0
    } else {
        (x - mean) / std
    }
}

pub fn difficulty_score(p: &ScorerProfile, stats: &BatchStats, weights: &DifficultyWeights) -> f64 {
    weights.loss_small * z(p.loss_small, stats.mean_loss, stats.std_loss) + weights.gap * z(p.gap(), stats.mean_gap, stats.std_gap)
}

/// Sizes of the easy/medium/hard groups for `n` records; leftovers go to
/// the lower grades first.
pub fn tertile_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    let rem = n % 3;
    [base + usize::from(rem >= 1), base + usize::from(rem >= 2), base]
}

/// Grades a batch by sorted `(score, record_id)`. Output is in input order.
pub fn grade_batch(profiles: &[ScorerProfile], weights: &DifficultyWeights) -> Result<Vec<DifficultyGrade>, DifficultyError> {
    if profiles.len() < 3 {
        return Err(DifficultyError::EmptyBatch {
            need: 3,
            got: profiles.len(),
        });
    }
    for p in profiles {
        p.validate()?;
    }
    let stats = BatchStats::from_profiles(profiles)?;
    let scores: Vec<f64> = profiles.iter().map(|p| difficulty_score(p, &stats, weights)).collect();
    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| profiles[a].record_id.cmp(&profiles[b].record_id)));
    let [easy, medium, _] = tertile_sizes(profiles.len());
    let mut grades = alloc::vec![Grade::Easy; profiles.len()];
    for (rank, &i) in order.iter().enumerate() {
        grades[i] = if rank < easy {
            Grade::Easy
        } else if rank < easy + medium {
            Grade::Medium
        } else {
            Grade::Hard
        };
    }
    Ok(profiles
        .iter()
        .zip(scores)
        .zip(grades)
        .map(|((p, score), grade)| DifficultyGrade {
            record_id: p.record_id.clone(),
            score,
            grade,
        })
        .collect())
}

/// Stable easy→medium→hard ordering of graded records.
pub fn curriculum_order(grades: &[DifficultyGrade]) -> Vec<&DifficultyGrade> {
    let mut out: Vec<&DifficultyGrade> = grades.iter().collect();
    out.sort_by_key(|g| g.grade);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prof(id: &str, small: f64, expert: f64) -> ScorerProfile {
        ScorerProfile {
            record_id: id.into(),
            loss_small: small,
            loss_expert: expert,
            confidence_small: 0.5,
        }
    }

    #[test]
    fn identical_profiles_score_zero() {
        let ps: Vec<_> = (0..5).map(|i| prof(&format!("r{i}"), 1.7, 0.9)).collect();
        let g = grade_batch(&ps, &DifficultyWeights::default()).unwrap();
        assert!(g.iter().all(|x| x.score == 0.0));
    }

    #[test]
    fn hand_standardized_scores() {
        let ps = vec![prof("a", 1.0, 1.0), prof("b", 2.0, 2.0), prof("c", 3.0, 3.0)];
        let g = grade_batch(&ps, &DifficultyWeights::default()).unwrap();
        let zs = libm::sqrt(2.0 / 3.0);
        assert_relative_eq!(g[0].score, -0.5 / zs, epsilon = 1e-12);
        assert_eq!(g[1].score, 0.0);
        assert_relative_eq!(g[2].score, 0.5 / zs, epsilon = 1e-12);
        assert_eq!([g[0].grade, g[1].grade, g[2].grade], [Grade::Easy, Grade::Medium, Grade::Hard]);
    }

    #[test]
    fn outlier_is_hardest() {
        let mut ps: Vec<_> = (0..20).map(|i| prof(&format!("r{i:02}"), 1.0 + f64::from(i) * 0.01, 0.8)).collect();
        ps.push(prof("z", 50.0, 0.8));
        let g = grade_batch(&ps, &DifficultyWeights::default()).unwrap();
        let max = g.iter().map(|x| x.score).fold(f64::MIN, f64::max);
        assert_eq!(g.last().unwrap().score, max);
        assert!(g[..20].iter().all(|x| x.score < max));
    }

    #[test]
    fn ties_break_by_id_and_spill() {
        let ps: Vec<_> = (1..=6).rev().map(|i| prof(&format!("{i}"), 1.0, 1.0)).collect();
        let g = grade_batch(&ps, &DifficultyWeights::default()).unwrap();
        for x in &g {
            let want = match x.record_id.as_str() {
                "1" | "2" => Grade::Easy,
                "3" | "4" => Grade::Medium,
                _ => Grade::Hard,
            };
            assert_eq!(x.grade, want);
        }
        assert_eq!(tertile_sizes(7), [3, 2, 2]);
        assert_eq!(tertile_sizes(8), [3, 3, 2]);
        assert!(grade_batch(&ps[..2], &DifficultyWeights::default()).is_err());
    }

    proptest! {
        #[test]
        fn monotone_and_permutation_invariant(
            losses in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..40),
            rot in 0usize..40,
        ) {
            let ps: Vec<_> = losses.iter().enumerate().map(|(i, &(a, b))| prof(&format!("r{i:03}"), a, b)).collect();
            let w = DifficultyWeights::default();
            let g = grade_batch(&ps, &w).unwrap();
            for a in &g {
                for b in &g {
                    if a.score < b.score {
                        prop_assert!(a.grade <= b.grade);
                    }
                }
            }
            let mut shuffled = ps.clone();
            shuffled.rotate_left(rot % ps.len());
            let mut g2 = grade_batch(&shuffled, &w).unwrap();
            g2.sort_by(|a, b| a.record_id.cmp(&b.record_id));
            for (x, y) in g.iter().zip(&g2) {
                prop_assert_eq!(x.grade, y.grade);
                prop_assert!((x.score - y.score).abs() < 1e-9);
            }
            let order = curriculum_order(&g);
            for pair in order.windows(2) {
                prop_assert!(pair[0].grade <= pair[1].grade);
            }
        }
    }
}
