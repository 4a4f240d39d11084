//! Split-point search minimizing the summed residual sum of squares of the
//! two child models.

use serde::{Deserialize, Serialize};

use super::{MobData, ModeratorKind};
use crate::linreg::{CrossProducts, N_COEF};

/// Categorical splits enumerate all level partitions up to this many
/// present levels; beyond it levels are ordered by mean outcome.
pub const EXHAUSTIVE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    /// Rows with value ≤ `cut` go left; `cut` is the largest left value.
    Numeric { cut: f64 },
    Categorical {
        left_codes: Vec<usize>,
        left_levels: Vec<String>,
        right_levels: Vec<String>,
    },
}

impl SplitRule {
    pub fn goes_left(&self, v: f64) -> bool {
        match self {
            SplitRule::Numeric { cut } => v <= *cut,
            SplitRule::Categorical { left_codes, .. } => left_codes.contains(&(v as usize)),
        }
    }
}

struct Centered {
    y_mean: f64,
    b_mean: f64,
}

impl Centered {
    fn new(data: &MobData, rows: &[usize]) -> Self {
        let n = rows.len() as f64;
        Self {
            y_mean: rows.iter().map(|&i| data.outcome[i]).sum::<f64>() / n,
            b_mean: rows.iter().map(|&i| data.baseline[i]).sum::<f64>() / n,
        }
    }

    fn add(&self, cp: &mut CrossProducts, data: &MobData, i: usize) {
        let x: [f64; N_COEF] = [1.0, data.baseline[i] - self.b_mean, data.treatment[i]];
        cp.add(&x, data.outcome[i] - self.y_mean, data.treatment[i] == 1.0);
    }
}

fn objective(left: &CrossProducts, right: &CrossProducts, min_size: usize) -> Option<f64> {
    if left.n < min_size || right.n < min_size {
        return None;
    }
    Some(left.rss()? + right.rss()?)
}

/// Best split of `rows` on moderator `var`, with the left and right row
/// sets. `None` when no cut keeps `min_size` rows and both arms on each side.
pub fn find_cutpoint(
    data: &MobData,
    rows: &[usize],
    var: usize,
    min_size: usize,
) -> Option<(SplitRule, Vec<usize>, Vec<usize>)> {
    let m = &data.moderators[var];
    let c = Centered::new(data, rows);
    match &m.kind {
        ModeratorKind::Numeric => {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| m.values[a].total_cmp(&m.values[b]).then(a.cmp(&b)));
            let mut total = CrossProducts::default();
            for &i in &order {
                c.add(&mut total, data, i);
            }
            let mut left = CrossProducts::default();
            let mut best: Option<(f64, usize)> = None;
            for k in 0..order.len() - 1 {
                c.add(&mut left, data, order[k]);
                if m.values[order[k]] == m.values[order[k + 1]] {
                    continue;
                }
                let right = total.minus(&left);
                if let Some(obj) = objective(&left, &right, min_size) {
                    if best.is_none_or(|(b, _)| obj < b) {
                        best = Some((obj, k));
                    }
                }
            }
            let (_, k) = best?;
            let cut = m.values[order[k]];
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| m.values[i] <= cut);
            Some((SplitRule::Numeric { cut }, l, r))
        }
        ModeratorKind::Categorical { levels } => {
            let mut per_level = vec![CrossProducts::default(); levels.len()];
            let mut sums = vec![0.0; levels.len()];
            for &i in rows {
                let code = m.values[i] as usize;
                c.add(&mut per_level[code], data, i);
                sums[code] += data.outcome[i];
            }
            let present: Vec<usize> = (0..levels.len()).filter(|&l| per_level[l].n > 0).collect();
            if present.len() < 2 {
                return None;
            }
            let total = present.iter().fold(CrossProducts::default(), |acc, &l| acc.merged(&per_level[l]));
            let candidates: Vec<Vec<usize>> = if present.len() <= EXHAUSTIVE_LEVELS {
                // Subsets containing the first present level, excluding the full set.
                let rest = &present[1..];
                (0..(1usize << rest.len()) - 1)
                    .map(|mask| {
                        let mut s = vec![present[0]];
                        s.extend(rest.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &l)| l));
                        s
                    })
                    .collect()
            } else {
                let mut ordered = present.clone();
                ordered.sort_by(|&a, &b| {
                    (sums[a] / per_level[a].n as f64)
                        .total_cmp(&(sums[b] / per_level[b].n as f64))
                        .then(a.cmp(&b))
                });
                (1..ordered.len()).map(|k| ordered[..k].to_vec()).collect()
            };
            let mut best: Option<(f64, Vec<usize>)> = None;
            for mut set in candidates {
                let left = set.iter().fold(CrossProducts::default(), |acc, &l| acc.merged(&per_level[l]));
                let right = total.minus(&left);
                if let Some(obj) = objective(&left, &right, min_size) {
                    if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                        set.sort_unstable();
                        best = Some((obj, set));
                    }
                }
            }
            let (_, left_codes) = best?;
            let right_codes: Vec<usize> = present.iter().copied().filter(|l| !left_codes.contains(l)).collect();
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| left_codes.contains(&(m.values[i] as usize)));
            Some((
                SplitRule::Categorical {
                    left_levels: left_codes.iter().map(|&c| levels[c].clone()).collect(),
                    right_levels: right_codes.iter().map(|&c| levels[c].clone()).collect(),
                    left_codes,
                },
                l,
                r,
            ))
        }
    }
}
