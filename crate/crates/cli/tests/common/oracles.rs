//! Slow, direct reference implementations used to check the fast code.

use std::cmp::Ordering;

/// Least-squares non-decreasing fit of binary labels by dynamic programming
/// over candidate levels. Points with equal scores share one fitted value.
/// Returns `(distinct sorted scores, fitted value per distinct score)`.
pub fn monotone_least_squares(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut xs: Vec<f64> = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    let mut sum: Vec<f64> = Vec::new();
    for (s, y) in pairs {
        if xs.last() == Some(&s) {
            *weight.last_mut().unwrap() += 1.0;
            *sum.last_mut().unwrap() += f64::from(y);
        } else {
            xs.push(s);
            weight.push(1.0);
            sum.push(f64::from(y));
        }
    }
    let m = xs.len();

    // The optimum only takes values that are means of contiguous runs.
    let mut levels = Vec::new();
    for i in 0..m {
        let (mut w, mut s) = (0.0, 0.0);
        for j in i..m {
            w += weight[j];
            s += sum[j];
            levels.push(s / w);
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let l = levels.len();

    // Squared error of group i at level v, labels being 0 or 1.
    let cost = |i: usize, v: f64| weight[i] * v * v - 2.0 * sum[i] * v + sum[i];

    // best[i][j]: minimal error of groups 0..=i with group i at a level <= levels[j].
    let mut best = vec![vec![0.0; l]; m];
    let mut arg = vec![vec![0usize; l]; m];
    for i in 0..m {
        let mut run_min = f64::INFINITY;
        let mut run_arg = 0;
        for j in 0..l {
            let prev = if i == 0 { 0.0 } else { best[i - 1][j] };
            let here = cost(i, levels[j]) + prev;
            if here < run_min {
                run_min = here;
                run_arg = j;
            }
            best[i][j] = run_min;
            arg[i][j] = run_arg;
        }
    }
    let mut fitted = vec![0.0; m];
    let mut j = l - 1;
    for i in (0..m).rev() {
        let chosen = arg[i][j];
        fitted[i] = levels[chosen];
        j = chosen;
    }
    (xs, fitted)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties one half.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            match scores[i].partial_cmp(&scores[j]).unwrap() {
                Ordering::Greater => wins += 1.0,
                Ordering::Equal => wins += 0.5,
                Ordering::Less => {}
            }
        }
    }
    wins / pairs
}

/// Weighted Gini impurity of a split, `sum_child 2 p n / w`, as an exact
/// fraction `(numerator, denominator)`.
fn split_impurity(left: (i128, i128), right: (i128, i128)) -> (i128, i128) {
    let (pl, nl) = left;
    let (pr, nr) = right;
    let (wl, wr) = (pl + nl, pr + nr);
    (2 * pl * nl * wr + 2 * pr * nr * wl, wl * wr)
}

/// Root split minimising Gini impurity by trying every feature and every
/// midpoint; ties go to the lower feature, then the lower threshold.
pub fn best_root_split(rows: &[Vec<f64>], labels: &[u8]) -> Option<(usize, f64)> {
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return None;
    }
    let n_features = rows[0].len();
    let mut best: Option<(usize, f64, (i128, i128))> = None;
    for f in 0..n_features {
        let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let mut t = (pair[0] + pair[1]) / 2.0;
            if t == pair[1] {
                t = pair[0];
            }
            let (mut left, mut right) = ((0i128, 0i128), (0i128, 0i128));
            for (r, &y) in rows.iter().zip(labels) {
                let side = if r[f] <= t { &mut left } else { &mut right };
                if y == 1 {
                    side.0 += 1;
                } else {
                    side.1 += 1;
                }
            }
            let imp = split_impurity(left, right);
            let better = match best {
                None => true,
                Some((_, _, b)) => imp.0 * b.1 < b.0 * imp.1,
            };
            if better {
                best = Some((f, t, imp));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}
