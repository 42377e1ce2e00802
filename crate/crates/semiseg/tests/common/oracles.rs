//! Independent scalar-loop reference implementations of the three losses.
//!
//! These operate on plain nested `Vec`s, share no code with the library's
//! array-based implementations, and exist purely to cross-check values.

pub const EPS: f64 = 1.0; // Dice smoothing
pub const CLAMP: f64 = 1e-8; // log clamp

/// probs\[k\]\[r\]\[c\], target\[r\]\[c\], valid\[r\]\[c\].
pub fn dice_oracle(probs: &[Vec<Vec<f64>>], target: &[Vec<u8>], valid: &[Vec<bool>]) -> f64 {
    let k = probs.len();
    let mut acc = 0.0;
    for class in 1..k {
        let mut inter = 0.0;
        let mut p_sum = 0.0;
        let mut t_sum = 0.0;
        for (r, row) in target.iter().enumerate() {
            for (c, &t) in row.iter().enumerate() {
                if !valid[r][c] {
                    continue;
                }
                let p = probs[class][r][c];
                p_sum += p;
                if t as usize == class {
                    inter += p;
                    t_sum += 1.0;
                }
            }
        }
        acc += (2.0 * inter + EPS) / (p_sum + t_sum + EPS);
    }
    1.0 - acc / (k - 1) as f64
}

/// Mean over valid pixels of sum_k t ln(t / max(s, clamp)).
pub fn kl_oracle(
    target: &[Vec<Vec<f64>>],
    student: &[Vec<Vec<f64>>],
    valid: &[Vec<bool>],
) -> f64 {
    let k = target.len();
    let mut total = 0.0;
    let mut n = 0usize;
    for r in 0..valid.len() {
        for c in 0..valid[0].len() {
            if !valid[r][c] {
                continue;
            }
            n += 1;
            for ch in 0..k {
                let t = target[ch][r][c];
                if t > 0.0 {
                    total += t * (t / student[ch][r][c].max(CLAMP)).ln();
                }
            }
        }
    }
    total / n as f64
}

/// Negative mutual information of the symmetrized joint over valid pixels.
pub fn iic_oracle(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>], valid: &[Vec<bool>]) -> f64 {
    let k = a.len();
    let mut joint = vec![vec![0.0; k]; k];
    let mut n = 0usize;
    for r in 0..valid.len() {
        for c in 0..valid[0].len() {
            if !valid[r][c] {
                continue;
            }
            n += 1;
            for i in 0..k {
                for j in 0..k {
                    joint[i][j] += a[i][r][c] * b[j][r][c];
                }
            }
        }
    }
    for row in joint.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    let sym: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| 0.5 * (joint[i][j] + joint[j][i])).collect())
        .collect();
    let row_marg: Vec<f64> = (0..k).map(|i| sym[i].iter().sum()).collect();
    let col_marg: Vec<f64> = (0..k).map(|j| (0..k).map(|i| sym[i][j]).sum()).collect();
    let lnm = |v: f64| v.max(CLAMP).ln();
    let mut loss = 0.0;
    for i in 0..k {
        for j in 0..k {
            loss -= sym[i][j] * (lnm(sym[i][j]) - lnm(row_marg[i]) - lnm(col_marg[j]));
        }
    }
    loss
}
