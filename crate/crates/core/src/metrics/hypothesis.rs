use statrs::function::{erf::erfc, gamma::gamma_ur};

use super::{ascending, tie_blocks};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MannWhitney {
    /// `U` statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    /// Whether `p` came from exact enumeration rather than the normal approximation.
    pub exact: bool,
}

/// Below this size of the smaller sample the null distribution is enumerated.
const EXACT_BELOW: usize = 8;
/// Work cap for the enumeration (items × chosen × rank-sum range).
const EXACT_BUDGET: f64 = 4e8;

/// Two-sided Mann-Whitney U test with midranks for ties.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyData("Mann-Whitney needs two non-empty samples".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("Mann-Whitney sample contains NaN".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let order = ascending(&pooled);
    // Doubled midranks keep every rank an integer.
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    for (s, e) in tie_blocks(&pooled, &order) {
        let r2 = (s + 1 + e) as u64;
        for &i in &order[s..e] {
            rank2[i] = r2;
        }
        let t = (e - s) as f64;
        tie_term += t * t * t - t;
    }
    let ra2: u64 = rank2[..na].iter().sum();
    let u = ra2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;
    let mean = (na * nb) as f64 / 2.0;

    let k = na.min(nb);
    let range = 2.0 * n as f64 * k as f64;
    if k < EXACT_BELOW && n as f64 * k as f64 * range <= EXACT_BUDGET {
        let p = exact_p(&rank2, k, if na <= nb { ra2 } else { rank2.iter().sum::<u64>() - ra2 });
        return Ok(MannWhitney { u, p_two_sided: p, exact: true });
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, p_two_sided: 1.0, exact: false });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(MannWhitney { u, p_two_sided: p, exact: false })
}

/// `P(|R − E R| ≥ |r_obs − E R|)` where `R` is the doubled rank sum of `k`
/// items drawn uniformly without replacement from `rank2`.
fn exact_p(rank2: &[u64], k: usize, observed: u64) -> f64 {
    let n = rank2.len();
    let max_sum: u64 = {
        let mut sorted = rank2.to_vec();
        sorted.sort_unstable();
        sorted[n - k..].iter().sum()
    };
    let width = max_sum as usize + 1;
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0.0f64; width]; k + 1];
    ways[0][0] = 1.0;
    for &r in rank2 {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let (src, dst) = (&lower[j - 1], &mut upper[0]);
            for s in (r..width).rev() {
                if src[s - r] != 0.0 {
                    dst[s] += src[s - r];
                }
            }
        }
    }
    // E[R] doubled = k(n+1); compare in doubled units to stay integral.
    let centre = (k * (n + 1)) as i64;
    let dev = (observed as i64 - centre).abs();
    let total: f64 = ways[k].iter().sum();
    let extreme: f64 =
        ways[k].iter().enumerate().filter(|(s, _)| (*s as i64 - centre).abs() >= dev).map(|(_, w)| w).sum();
    (extreme / total).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p: f64,
}

/// Pearson χ² test of independence on an `R×C` table of counts.
pub fn chi_square(table: &[Vec<f64>]) -> Result<ChiSquare> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 || table.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("χ² needs a rectangular table of at least 2×2, got {r} rows")));
    }
    if table.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract("χ² counts must be finite and non-negative".into()));
    }
    let rows: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    if rows.iter().chain(&cols).any(|&m| m == 0.0) {
        return Err(Error::Contract("χ² table has an empty row or column".into()));
    }
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let exp = rows[i] * cols[j] / total;
            stat += (obs - exp) * (obs - exp) / exp;
        }
    }
    let dof = (r - 1) * (c - 1);
    let p = if stat <= 0.0 { 1.0 } else { gamma_ur(dof as f64 / 2.0, stat / 2.0) };
    Ok(ChiSquare { statistic: stat, dof, p })
}

/// Bonferroni adjustment `min(1, p·m)`; `m` defaults to the number of p-values.
pub fn bonferroni(p_values: &[f64], m: Option<usize>) -> Vec<f64> {
    let m = m.unwrap_or(p_values.len()) as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}
