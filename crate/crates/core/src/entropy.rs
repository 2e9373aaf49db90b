//! Prior-uncertainty ladder for the channel-assignment task.
//!
//! Four regimes of prior knowledge, each with its entropy in bits and the
//! per-conversation confusion (average number of wrong alternatives):
//!
//! 1. speaker-homogeneous recordings: log2 of the Bell number B_2M
//! 2. known speaker count N: log2 of the Stirling number {2M brace N}
//! 3. telephone constraint (no speaker talks to herself): regime 2 minus
//!    approximately M·log2(N/(N−1))
//! 4. known speaker pairs per conversation: M bits
//!
//! Bell and Stirling numbers are computed as exact arbitrary-precision
//! integers and only converted to log2 at the end, so regime entropies are
//! exact to floating-point precision up to n = 2000.

use num_bigint::BigUint;

use crate::error::{Error, Result};

/// Largest argument accepted by the exact integer recurrences.
pub const MAX_N: usize = 2000;

/// Exact Bell number B_n via the Bell triangle, one row kept in memory.
pub fn bell_exact(n: usize) -> Result<BigUint> {
    check_range("bell", n)?;
    // Row r_1 = [1]; each next row starts with the last entry of the
    // previous row and adds the entry above. B_n is the last entry of row n.
    let mut row = vec![BigUint::from(1u32)];
    for _ in 1..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(row.last().unwrap().clone());
        for prev in &row {
            let last = next.last().unwrap().clone();
            next.push(last + prev);
        }
        row = next;
    }
    Ok(row.last().unwrap().clone())
}

/// Exact Stirling number of the second kind {n brace k} via the recurrence
/// {n, k} = k·{n−1, k} + {n−1, k−1}.
pub fn stirling2_exact(n: usize, k: usize) -> Result<BigUint> {
    check_range("stirling2", n)?;
    if k == 0 || k > n {
        return Err(Error::Domain(format!(
            "stirling2 requires 1 <= k <= n, got n={n}, k={k}"
        )));
    }
    let mut row = vec![BigUint::from(0u32); k + 1];
    row[0] = BigUint::from(1u32); // {0, 0} = 1
    for i in 1..=n {
        let top = k.min(i);
        for j in (1..=top).rev() {
            let carried = std::mem::take(&mut row[j]);
            row[j] = carried * BigUint::from(j as u32) + &row[j - 1];
        }
        row[0] = BigUint::from(0u32); // {i, 0} = 0 for i >= 1
    }
    Ok(row[k].clone())
}

/// log2 of a positive big integer, exact to within floating-point error.
pub fn log2_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    assert!(bits > 0, "log2 of zero");
    if bits <= 64 {
        let small: u64 = x.try_into().expect("fits in u64");
        return (small as f64).log2();
    }
    // Keep the top 64 bits as a mantissa; the rest only shifts the exponent.
    let shift = bits - 64;
    let top: u64 = (x >> shift).try_into().expect("top 64 bits fit");
    (top as f64).log2() + shift as f64
}

fn check_range(name: &str, n: usize) -> Result<()> {
    if n == 0 || n > MAX_N {
        return Err(Error::Domain(format!(
            "{name} requires 1 <= n <= {MAX_N}, got n={n}"
        )));
    }
    Ok(())
}

/// log2 of the Bell number B_n in bits.
pub fn log2_bell(n: usize) -> Result<f64> {
    Ok(log2_biguint(&bell_exact(n)?))
}

/// log2 of the Stirling number {n brace k} in bits.
pub fn log2_stirling2(n: usize, k: usize) -> Result<f64> {
    Ok(log2_biguint(&stirling2_exact(n, k)?))
}

/// Upper bound 2M·log2(N) − log2(N!) on log2 {2M brace N}.
pub fn stirling_upper_bound(m: usize, n: usize) -> Result<f64> {
    if m == 0 || n == 0 || n > 2 * m {
        return Err(Error::Domain(format!(
            "upper bound requires m >= 1 and 1 <= n <= 2m, got m={m}, n={n}"
        )));
    }
    if n > MAX_N {
        return Err(Error::Domain(format!(
            "upper bound requires n <= {MAX_N}, got n={n}"
        )));
    }
    let mut factorial = BigUint::from(1u32);
    for i in 2..=n {
        factorial *= BigUint::from(i as u32);
    }
    Ok(2.0 * m as f64 * (n as f64).log2() - log2_biguint(&factorial))
}

/// The four-regime entropy budget for M conversations and N speakers.
///
/// Entropies `h1..h4` are in bits; `f1..f4` are the matching confusions,
/// exp(h·ln2 / M) − 1, the expected number of wrong alternatives per
/// conversation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyBudget {
    pub m_conversations: usize,
    pub n_speakers: usize,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

/// Per-conversation confusion for an entropy of `h_bits` over `m`
/// conversations: the exponent runs over nats, so 1 bit/conversation gives
/// exactly one wrong alternative.
fn budget_confusion(h_bits: f64, m: usize) -> f64 {
    (h_bits * std::f64::consts::LN_2 / m as f64).exp() - 1.0
}

/// Computes the full entropy budget.
pub fn budget(m: usize, n: usize) -> Result<EntropyBudget> {
    if m < 1 {
        return Err(Error::Domain("budget requires m >= 1".into()));
    }
    if n < 2 || n > 2 * m {
        return Err(Error::Domain(format!(
            "budget requires 2 <= n <= 2m, got m={m}, n={n}"
        )));
    }
    let h1 = log2_bell(2 * m)?;
    let h2 = log2_stirling2(2 * m, n)?;
    let h3 = h2 - m as f64 * (n as f64 / (n as f64 - 1.0)).log2();
    let h4 = m as f64;
    Ok(EntropyBudget {
        m_conversations: m,
        n_speakers: n,
        h1,
        h2,
        h3,
        h4,
        f1: budget_confusion(h1, m),
        f2: budget_confusion(h2, m),
        f3: budget_confusion(h3, m),
        f4: budget_confusion(h4, m),
    })
}
