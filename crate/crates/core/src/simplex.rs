//! Regular grids on the probability simplex.

use crate::error::{Error, Result};

/// Number of points of the resolution-`res` grid on the `m`-point simplex,
/// i.e. `C(res + m - 1, m - 1)`.
pub fn grid_size(m: usize, res: usize) -> u128 {
    if m == 0 {
        return 0;
    }
    let k = (m - 1) as u128;
    let n = res as u128 + k;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// All probability vectors of length `m` whose entries are multiples of
/// `1/res`, boundary points included. The last coordinate absorbs rounding
/// so each vector sums to one in floating point up to a few ulps.
pub fn grid(m: usize, res: usize, limit: u128) -> Result<Vec<Vec<f64>>> {
    if m == 0 || res == 0 {
        return Err(Error::param("grid", "need m >= 1 and res >= 1"));
    }
    let cells = grid_size(m, res);
    if cells > limit {
        return Err(Error::TooLarge { cells, limit });
    }
    let mut out = Vec::with_capacity(cells as usize);
    let mut counts = vec![0usize; m];
    fill(&mut counts, 0, res, res, &mut out);
    Ok(out)
}

fn fill(counts: &mut [usize], at: usize, left: usize, res: usize, out: &mut Vec<Vec<f64>>) {
    let m = counts.len();
    if at == m - 1 {
        counts[at] = left;
        out.push(counts.iter().map(|&c| c as f64 / res as f64).collect());
        return;
    }
    for c in 0..=left {
        counts[at] = c;
        fill(counts, at + 1, left - c, res, out);
    }
}
