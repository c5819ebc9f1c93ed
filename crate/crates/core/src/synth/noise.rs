use rand::Rng;
use serde::{Deserialize, Serialize};

/// Corruption applied to a noise-free semantic render, standing in for the
/// errors of a 2D segmentation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Row-stochastic: row `c` is the distribution of the predicted label
    /// for a region whose true class is `c`. Drawn once per view and region.
    pub confusion: Vec<Vec<f64>>,
    /// Labels are resampled from up to this many pixels away.
    pub boundary_jitter: u32,
    /// Per-pixel probability that the label is replaced by a uniformly
    /// random class.
    pub dropout: f64,
}

impl NoiseSpec {
    pub fn identity(n_classes: usize) -> Self {
        let confusion = (0..n_classes)
            .map(|r| (0..n_classes).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { confusion, boundary_jitter: 0, dropout: 0.0 }
    }

    /// Each non-stuff class keeps its label with probability `1 - rate` and
    /// otherwise turns into a uniformly chosen other non-stuff class. Stuff
    /// rows stay identity.
    pub fn uniform_confusion(n_classes: usize, rate: f64, stuff: &[u16]) -> Self {
        let mut spec = Self::identity(n_classes);
        let things: Vec<usize> =
            (0..n_classes).filter(|c| !stuff.contains(&(*c as u16))).collect();
        if things.len() < 2 {
            return spec;
        }
        let off = rate / (things.len() - 1) as f64;
        for &r in &things {
            for &c in &things {
                spec.confusion[r][c] = if r == c { 1.0 - rate } else { off };
            }
        }
        spec
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.confusion.len();
        for (r, row) in self.confusion.iter().enumerate() {
            if row.len() != n {
                return Err(format!("confusion row {r} has {} entries, expected {n}", row.len()));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(format!("confusion row {r} has an entry outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(format!("confusion row {r} sums to {sum}"));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1]", self.dropout));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.boundary_jitter == 0
            && self.dropout == 0.0
            && self.confusion.iter().enumerate().all(|(r, row)| row[r] == 1.0)
    }

    /// Draws a predicted label for true class `class` from its confusion row.
    pub fn sample_label<R: Rng + ?Sized>(&self, class: u16, rng: &mut R) -> u16 {
        let row = &self.confusion[class as usize];
        if row[class as usize] == 1.0 {
            return class;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (c, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return c as u16;
            }
        }
        // rounding left u above the cumulative sum: last class with mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(class as usize) as u16
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shipped_profiles_are_row_stochastic() {
        let stuff = [0, 1, 2, 3];
        NoiseSpec::identity(40).validate().unwrap();
        let noisy = NoiseSpec::uniform_confusion(40, 0.3, &stuff);
        noisy.validate().unwrap();
        assert_eq!(noisy.confusion[1][1], 1.0);
        assert!((noisy.confusion[10][10] - 0.7).abs() < 1e-12);
        assert!(NoiseSpec::identity(40).is_identity());
        assert!(!noisy.is_identity());
    }

    #[test]
    fn rejects_bad_rows() {
        let mut s = NoiseSpec::identity(3);
        s.confusion[1][2] = 0.5;
        assert!(s.validate().is_err());
        let mut s = NoiseSpec::identity(3);
        s.dropout = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn label_marginals_match_confusion_row() {
        let stuff = [0, 1, 2, 3];
        let spec = NoiseSpec::uniform_confusion(40, 0.3, &stuff);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000usize;
        let true_class = 10u16;
        let mut counts = vec![0usize; 40];
        for _ in 0..n {
            counts[spec.sample_label(true_class, &mut rng) as usize] += 1;
        }
        let row = &spec.confusion[true_class as usize];
        let within = |k: usize, p: f64, z: f64| {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            (k as f64 / n as f64 - p).abs() <= z * se + 1e-12
        };
        let kept = counts[true_class as usize];
        assert!(within(kept, row[true_class as usize], 3.0), "kept {kept}");
        assert!(within(n - kept, 1.0 - row[true_class as usize], 3.0));
        // 40 simultaneous cells: Bonferroni-corrected bound at family level 0.25%
        for (c, &k) in counts.iter().enumerate() {
            assert!(within(k, row[c], 4.05), "class {c}: {k}");
        }
    }
}
