//! Sample selection: seeded random subsets and beta-proximity selection over
//! per-image IoU scores.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ImageId;

/// Per-image IoU scores of a candidate pool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoredPool {
    entries: BTreeMap<ImageId, f64>,
}

impl ScoredPool {
    pub fn new(entries: BTreeMap<ImageId, f64>) -> Result<Self> {
        if let Some((id, s)) = entries.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidValue(format!(
                "score {s} of image {id} outside [0, 1]"
            )));
        }
        Ok(ScoredPool { entries })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ImageId, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (id, s) in pairs {
            if entries.insert(id, s).is_some() {
                return Err(Error::InvalidValue(format!("duplicate image id {id}")));
            }
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &BTreeMap<ImageId, f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<ImageId> {
        self.entries.keys().copied().collect()
    }

    /// Parses `image_id,iou_score` CSV text with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "image_id,iou_score" => {}
            other => {
                return Err(Error::Parse(format!(
                    "expected header 'image_id,iou_score', found {other:?}"
                )))
            }
        }
        let mut pairs = Vec::new();
        for (n, line) in lines.enumerate() {
            let (id, score) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected two columns", n + 2)))?;
            let id: u64 = id
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: image id: {e}", n + 2)))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: score: {e}", n + 2)))?;
            pairs.push((ImageId(id), score));
        }
        Self::from_pairs(pairs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,iou_score\n");
        for (id, s) in &self.entries {
            out.push_str(&format!("{id},{s:.6}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    BetaProximity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    /// Target IoU score; used by beta-proximity only.
    #[serde(default)]
    pub beta: f64,
    /// Number of images to select.
    pub n_prime: usize,
    /// Used by random selection only.
    #[serde(default)]
    pub seed: u64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.n_prime == 0 {
            return Err(Error::Config("n_prime must be at least 1".into()));
        }
        Ok(())
    }

    pub fn select(&self, pool: &ScoredPool) -> Result<Vec<ImageId>> {
        self.validate()?;
        match self.strategy {
            Strategy::Random => select_random(&pool.ids(), self.n_prime, self.seed),
            Strategy::BetaProximity => select_by_beta(pool, self.beta, self.n_prime),
        }
    }
}

/// Every pool entry with its distance to `beta`, closest first; equal
/// distances are ordered by ascending image id.
pub fn distance_ranking(pool: &ScoredPool, beta: f64) -> Result<Vec<(ImageId, f64)>> {
    if pool.is_empty() {
        return Err(Error::Empty("selection pool"));
    }
    let mut ranked: Vec<(ImageId, f64)> = pool
        .entries
        .iter()
        .map(|(&id, &s)| (id, (s - beta).abs()))
        .collect();
    // ids are already ascending, so a stable sort keeps the tie-break
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

/// The `n_prime` images whose scores are closest to `beta`.
pub fn select_by_beta(pool: &ScoredPool, beta: f64, n_prime: usize) -> Result<Vec<ImageId>> {
    let ranked = distance_ranking(pool, beta)?;
    Ok(ranked.into_iter().take(n_prime).map(|(id, _)| id).collect())
}

/// Uniform sample without replacement of `min(n_prime, |ids|)` images.
pub fn select_random(ids: &[ImageId], n_prime: usize, seed: u64) -> Result<Vec<ImageId>> {
    if ids.is_empty() {
        return Err(Error::Empty("selection pool"));
    }
    let mut ids = ids.to_vec();
    let mut rng = crate::seed::rng(seed, "select_random", &[]);
    let k = n_prime.min(ids.len());
    let (chosen, _) = ids.partial_shuffle(&mut rng, k);
    Ok(chosen.to_vec())
}

/// Jaccard overlap of two id sets.
pub fn jaccard(a: &[ImageId], b: &[ImageId]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Expected Jaccard overlap of two independent uniform `k`-subsets of an
/// `n`-element pool (hypergeometric intersection size).
pub fn chance_jaccard(n: usize, k: usize) -> f64 {
    if k == 0 || n == 0 {
        return 0.0;
    }
    let k = k.min(n);
    let ln_choose =
        |a: usize, b: usize| -> f64 { ln_factorial(a) - ln_factorial(b) - ln_factorial(a - b) };
    let lo = (2 * k).saturating_sub(n);
    let denom = ln_choose(n, k);
    (lo..=k)
        .map(|i| {
            let p = (ln_choose(k, i) + ln_choose(n - k, k - i) - denom).exp();
            p * i as f64 / (2 * k - i) as f64
        })
        .sum()
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool(pairs: &[(u64, f64)]) -> ScoredPool {
        ScoredPool::from_pairs(pairs.iter().map(|&(i, s)| (ImageId(i), s))).unwrap()
    }

    fn ids(v: &[u64]) -> Vec<ImageId> {
        v.iter().map(|&i| ImageId(i)).collect()
    }

    // a=1, b=2, c=3, d=4
    #[test]
    fn beta_examples() {
        let p = pool(&[(1, 0.1), (2, 0.5), (3, 0.9)]);
        assert_eq!(select_by_beta(&p, 0.4, 1).unwrap(), ids(&[2]));
        let p = pool(&[(1, 0.1), (2, 0.5), (3, 0.9), (4, 0.05)]);
        assert_eq!(select_by_beta(&p, 0.0, 2).unwrap(), ids(&[4, 1]));
    }

    #[test]
    fn ties_break_by_id() {
        let p = pool(&[(9, 0.3), (2, 0.7), (5, 0.3)]);
        assert_eq!(select_by_beta(&p, 0.5, 3).unwrap(), ids(&[2, 5, 9]));
    }

    #[test]
    fn empty_pool_rejected() {
        let p = ScoredPool::default();
        assert!(matches!(select_by_beta(&p, 0.5, 1), Err(Error::Empty(_))));
        assert!(matches!(select_random(&[], 3, 0), Err(Error::Empty(_))));
        assert!(distance_ranking(&p, 0.5).is_err());
    }

    #[test]
    fn out_of_range_scores_rejected() {
        assert!(ScoredPool::from_pairs([(ImageId(0), 1.5)]).is_err());
        assert!(ScoredPool::from_pairs([(ImageId(0), 0.5), (ImageId(0), 0.6)]).is_err());
    }

    #[test]
    fn ranking_examples() {
        let p = pool(&[(3, 0.25)]);
        assert_eq!(distance_ranking(&p, 0.5).unwrap(), vec![(ImageId(3), 0.25)]);
        let p = pool(&[(1, 0.2), (2, 0.6), (3, 0.9)]);
        assert_eq!(distance_ranking(&p, 0.6).unwrap()[0], (ImageId(2), 0.0));
    }

    #[test]
    fn beta_matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let entries: Vec<(u64, f64)> = (0..100).map(|i| (i, rng.random_range(0.0..=1.0))).collect();
        let p = pool(&entries);
        let mut brute = entries.clone();
        brute.sort_by(|a, b| {
            let (da, db) = ((a.1 - 0.37).abs(), (b.1 - 0.37).abs());
            da.partial_cmp(&db).unwrap().then(a.0.cmp(&b.0))
        });
        let expected: Vec<ImageId> = brute.iter().take(10).map(|e| ImageId(e.0)).collect();
        assert_eq!(select_by_beta(&p, 0.37, 10).unwrap(), expected);
    }

    #[test]
    fn random_covers_pool_when_large() {
        let all = ids(&[4, 8, 15, 16, 23, 42]);
        let mut got = select_random(&all, 10, 3).unwrap();
        got.sort();
        assert_eq!(got, all);
    }

    #[test]
    fn random_is_deterministic() {
        let all: Vec<ImageId> = (0..50).map(ImageId).collect();
        assert_eq!(
            select_random(&all, 7, 99).unwrap(),
            select_random(&all, 7, 99).unwrap()
        );
        assert_ne!(
            select_random(&all, 7, 99).unwrap(),
            select_random(&all, 7, 100).unwrap()
        );
    }

    #[test]
    fn config_dispatch_and_validation() {
        let p = pool(&[(1, 0.1), (2, 0.5), (3, 0.9)]);
        let cfg = SelectionConfig {
            strategy: super::Strategy::BetaProximity,
            beta: 0.4,
            n_prime: 1,
            seed: 0,
        };
        assert_eq!(cfg.select(&p).unwrap(), ids(&[2]));
        assert!(SelectionConfig { n_prime: 0, ..cfg }.validate().is_err());
        assert!(SelectionConfig { beta: 1.5, ..cfg }.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = pool(&[(1, 0.25), (7, 1.0)]);
        assert_eq!(ScoredPool::from_csv(&p.to_csv()).unwrap(), p);
        assert!(ScoredPool::from_csv("id,score\n1,0.5\n").is_err());
        assert!(ScoredPool::from_csv("image_id,iou_score\n1;0.5\n").is_err());
    }

    #[test]
    fn jaccard_and_chance_level() {
        assert_eq!(jaccard(&ids(&[1, 2, 3]), &ids(&[2, 3, 4])), 0.5);
        assert_eq!(jaccard(&[], &[]), 0.0);
        assert!((chance_jaccard(10, 10) - 1.0).abs() < 1e-12);
        // n = 4, k = 2: |I| = 0 w.p. 1/6, 1 w.p. 4/6, 2 w.p. 1/6
        let expected = 4.0 / 6.0 * (1.0 / 3.0) + 1.0 / 6.0;
        assert!((chance_jaccard(4, 2) - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn selection_invariants(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..60),
            beta in 0.0f64..=1.0,
            n in 1usize..80,
            rotate in 0usize..60,
        ) {
            let entries: Vec<(ImageId, f64)> =
                scores.iter().enumerate().map(|(i, &s)| (ImageId(i as u64 * 3), s)).collect();
            let p = ScoredPool::from_pairs(entries.clone()).unwrap();
            let mut shuffled = entries.clone();
            let r = rotate % shuffled.len();
            shuffled.rotate_left(r);
            let q = ScoredPool::from_pairs(shuffled).unwrap();
            let sel = select_by_beta(&p, beta, n).unwrap();
            prop_assert_eq!(&sel, &select_by_beta(&q, beta, n).unwrap());
            prop_assert_eq!(sel.len(), n.min(entries.len()));
            let mut uniq = sel.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), sel.len());
            let ranked = distance_ranking(&p, beta).unwrap();
            prop_assert!(ranked.windows(2).all(|w| w[0].1 <= w[1].1));

            // extremes: beta 0 picks the lowest scores, beta 1 the highest
            let mut sorted: Vec<f64> = scores.clone();
            sorted.sort_by(f64::total_cmp);
            let k = n.min(sorted.len());
            let low = select_by_beta(&p, 0.0, n).unwrap();
            let max_low = low.iter().map(|id| p.entries()[id]).fold(f64::MIN, f64::max);
            prop_assert!(max_low <= sorted[k - 1]);
            let high = select_by_beta(&p, 1.0, n).unwrap();
            let min_high = high.iter().map(|id| p.entries()[id]).fold(f64::MAX, f64::min);
            prop_assert!(min_high >= sorted[sorted.len() - k]);
        }
    }
}
