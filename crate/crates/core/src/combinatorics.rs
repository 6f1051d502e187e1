//! Integer partitions and Faà di Bruno coefficients.
//!
//! The n-th derivative of a composition `f(g(x))` is a sum over the integer
//! partitions of `n`. A partition is stored as a count vector
//! `p = (p_1, …, p_n)` with `Σ j·p_j = n`; each one contributes
//!
//! ```text
//! C_p · f^(|p|)(g(x)) · Π_j (g^(j)(x))^(p_j),   C_p = n! / Π_j (p_j! · (j!)^(p_j))
//! ```
//!
//! where `|p| = Σ p_j`. [`FaaTable`] caches every partition and coefficient up
//! to a maximum order so the network forward pass never recomputes them.

use std::fmt;
use std::io;

use thiserror::Error;

/// Largest derivative order supported by the coefficient tables.
///
/// Every coefficient at order 16 fits in a `u64` (16! itself is ~2.1e13).
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("invalid order {order}: must be in 1..={max}")]
    InvalidOrder { order: usize, max: usize },
    #[error("coefficient overflow while evaluating order {order}")]
    Overflow { order: usize },
}

/// An integer partition of `n` in multiplicity form.
///
/// `counts[j - 1]` is the number of parts equal to `j`. The vector always has
/// length `n`, trailing zeros included, so indices are stable across orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartitionVector {
    counts: Vec<u32>,
}

impl PartitionVector {
    /// Builds a partition from its count vector, checking `Σ j·p_j = n`.
    pub fn new(counts: Vec<u32>) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let n = counts.len();
        let weight: usize = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i + 1) * c as usize)
            .sum();
        (weight == n).then_some(Self { counts })
    }

    pub fn order(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of parts `|p|`, which selects the outer derivative `f^(|p|)`.
    pub fn blocks(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Nonzero `(j, p_j)` pairs in increasing `j`.
    pub fn factors(&self) -> Vec<(usize, u32)> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, &c)| (i + 1, c))
            .collect()
    }
}

impl fmt::Display for PartitionVector {
    /// Dash-separated counts, e.g. `1-1-0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

fn check_order(n: usize) -> Result<(), CombinatoricsError> {
    if n == 0 || n > MAX_ORDER {
        return Err(CombinatoricsError::InvalidOrder {
            order: n,
            max: MAX_ORDER,
        });
    }
    Ok(())
}

/// Every partition of `n`, in descending lexicographic order of the count
/// vector (so `(n, 0, …, 0)` first and `(0, …, 0, 1)` last).
pub fn enumerate_partitions(n: usize) -> Result<Vec<PartitionVector>, CombinatoricsError> {
    check_order(n)?;
    let mut out = Vec::new();
    let mut counts = vec![0u32; n];
    fill_counts(n, 1, n, &mut counts, &mut out);
    Ok(out)
}

fn fill_counts(
    n: usize,
    part: usize,
    remaining: usize,
    counts: &mut [u32],
    out: &mut Vec<PartitionVector>,
) {
    if part == n {
        if remaining % n == 0 {
            counts[n - 1] = (remaining / n) as u32;
            out.push(PartitionVector {
                counts: counts.to_vec(),
            });
            counts[n - 1] = 0;
        }
        return;
    }
    for c in (0..=remaining / part).rev() {
        counts[part - 1] = c as u32;
        fill_counts(n, part + 1, remaining - c * part, counts, out);
    }
    counts[part - 1] = 0;
}

/// Number of integer partitions `p(n)`, with `p(0) = 1`.
///
/// Computed by the standard coin-change recurrence, independently of
/// [`enumerate_partitions`].
pub fn partition_count(n: usize) -> Result<u64, CombinatoricsError> {
    if n > MAX_ORDER {
        return Err(CombinatoricsError::InvalidOrder {
            order: n,
            max: MAX_ORDER,
        });
    }
    let mut ways = vec![0u64; n + 1];
    ways[0] = 1;
    for part in 1..=n {
        for total in part..=n {
            ways[total] += ways[total - part];
        }
    }
    Ok(ways[n])
}

fn factorial(n: usize) -> Option<u64> {
    (1..=n as u64).try_fold(1u64, |acc, k| acc.checked_mul(k))
}

/// Exact Faà di Bruno coefficient `n! / Π_j (p_j! · (j!)^(p_j))`.
pub fn faa_coefficient(p: &PartitionVector) -> Result<u64, CombinatoricsError> {
    let n = p.order();
    let overflow = CombinatoricsError::Overflow { order: n };
    let numerator = factorial(n).ok_or(overflow.clone())?;
    let mut denominator = 1u64;
    for (j, c) in p.factors() {
        let jf = factorial(j).ok_or(overflow.clone())?;
        let block = jf.checked_pow(c).ok_or(overflow.clone())?;
        let multiplicity = factorial(c as usize).ok_or(overflow.clone())?;
        denominator = denominator
            .checked_mul(block)
            .and_then(|d| d.checked_mul(multiplicity))
            .ok_or(overflow.clone())?;
    }
    debug_assert_eq!(numerator % denominator, 0);
    Ok(numerator / denominator)
}

/// One cached term of the order-`n` Faà di Bruno sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FaaEntry {
    pub partition: PartitionVector,
    pub coefficient: u64,
    /// `coefficient` as a float; exact since every value is below 2^53.
    pub weight: f64,
    /// `|p|`.
    pub blocks: usize,
    /// Nonzero `(j, p_j)` pairs.
    pub factors: Vec<(usize, u32)>,
}

/// Partitions and coefficients for every order `1..=max_order`.
///
/// Immutable once built; share it by reference across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FaaTable {
    max_order: usize,
    orders: Vec<Vec<FaaEntry>>,
}

impl FaaTable {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Entries for order `m`, or an empty slice outside `1..=max_order`.
    pub fn entries(&self, m: usize) -> &[FaaEntry] {
        if m == 0 || m > self.max_order {
            return &[];
        }
        &self.orders[m - 1]
    }

    /// Sum of the coefficients at order `m` (the Bell number `B_m`).
    pub fn coefficient_sum(&self, m: usize) -> u64 {
        self.entries(m).iter().map(|e| e.coefficient).sum()
    }

    /// CSV dump with columns `order,counts,coefficient`.
    pub fn write_csv<W: io::Write>(&self, out: W, orders: Option<&[usize]>) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["order", "counts", "coefficient"])?;
        let selected: Vec<usize> = match orders {
            Some(o) => o.to_vec(),
            None => (1..=self.max_order).collect(),
        };
        for m in selected {
            for e in self.entries(m) {
                w.write_record([
                    m.to_string(),
                    e.partition.to_string(),
                    e.coefficient.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_faa_table(max_order: usize) -> Result<FaaTable, CombinatoricsError> {
    check_order(max_order)?;
    let mut orders = Vec::with_capacity(max_order);
    for m in 1..=max_order {
        let entries = enumerate_partitions(m)?
            .into_iter()
            .map(|partition| {
                let coefficient = faa_coefficient(&partition)?;
                Ok(FaaEntry {
                    blocks: partition.blocks(),
                    factors: partition.factors(),
                    weight: coefficient as f64,
                    coefficient,
                    partition,
                })
            })
            .collect::<Result<Vec<_>, CombinatoricsError>>()?;
        orders.push(entries);
    }
    Ok(FaaTable { max_order, orders })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(c: &[u32]) -> PartitionVector {
        PartitionVector::new(c.to_vec()).unwrap()
    }

    /// Partitions of n as nonincreasing part lists, by plain recursion.
    fn brute_partitions(n: usize, max_part: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in (1..=max_part.min(n)).rev() {
            for mut rest in brute_partitions(n - first, first) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn order_one_and_three() {
        assert_eq!(enumerate_partitions(1).unwrap(), vec![pv(&[1])]);
        assert_eq!(
            enumerate_partitions(3).unwrap(),
            vec![pv(&[3, 0, 0]), pv(&[1, 1, 0]), pv(&[0, 0, 1])]
        );
    }

    #[test]
    fn rejects_out_of_range_orders() {
        assert!(matches!(
            enumerate_partitions(0),
            Err(CombinatoricsError::InvalidOrder { order: 0, .. })
        ));
        assert!(enumerate_partitions(MAX_ORDER + 1).is_err());
        assert!(build_faa_table(0).is_err());
        assert!(build_faa_table(17).is_err());
        assert!(partition_count(17).is_err());
    }

    #[test]
    fn counts_match_brute_force() {
        assert_eq!(partition_count(0).unwrap(), 1);
        assert_eq!(partition_count(4).unwrap(), 5);
        assert_eq!(partition_count(9).unwrap(), 30);
        for n in 1..=12 {
            let brute = brute_partitions(n, n).len();
            assert_eq!(enumerate_partitions(n).unwrap().len(), brute, "n={n}");
            assert_eq!(partition_count(n).unwrap() as usize, brute, "n={n}");
        }
    }

    #[test]
    fn enumeration_is_descending_lexicographic_and_unique() {
        for n in 1..=10 {
            let parts = enumerate_partitions(n).unwrap();
            for w in parts.windows(2) {
                assert!(w[0].counts() > w[1].counts());
            }
        }
    }

    #[test]
    fn hardy_ramanujan_envelope() {
        let c = std::f64::consts::PI * (2.0f64 / 3.0).sqrt();
        let mut prev = 0;
        for n in 1..=12 {
            let p = partition_count(n).unwrap();
            assert!(p >= prev);
            assert!((p as f64) <= (c * (n as f64).sqrt()).exp());
            prev = p;
        }
    }

    #[test]
    fn known_coefficients() {
        assert_eq!(faa_coefficient(&pv(&[0, 0, 1])).unwrap(), 1);
        assert_eq!(faa_coefficient(&pv(&[1, 1, 0])).unwrap(), 3);
        assert_eq!(faa_coefficient(&pv(&[3, 0, 0])).unwrap(), 1);
        assert_eq!(faa_coefficient(&pv(&[2, 1, 0, 0])).unwrap(), 6);
    }

    #[test]
    fn small_tables() {
        let t1 = build_faa_table(1).unwrap();
        assert_eq!(t1.entries(1).len(), 1);
        assert_eq!(t1.entries(1)[0].coefficient, 1);

        // (f∘g)'' = f''·(g')² + f'·g''
        let t2 = build_faa_table(2).unwrap();
        let e: Vec<_> = t2
            .entries(2)
            .iter()
            .map(|e| (e.partition.counts().to_vec(), e.coefficient))
            .collect();
        assert_eq!(e, vec![(vec![2, 0], 1), (vec![0, 1], 1)]);

        let t16 = build_faa_table(16).unwrap();
        assert_eq!(t16.coefficient_sum(5), 52);
        for m in 1..=16 {
            assert_eq!(
                t16.entries(m).len() as u64,
                partition_count(m).unwrap()
            );
        }
        assert!(t16.entries(0).is_empty());
        assert!(t16.entries(17).is_empty());
    }

    #[test]
    fn csv_dump() {
        let t = build_faa_table(3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, Some(&[3])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "order,counts,coefficient\n3,3-0-0,1\n3,1-1-0,3\n3,0-0-1,1\n"
        );
    }

    #[test]
    fn rejects_bad_partition_vectors() {
        assert!(PartitionVector::new(vec![]).is_none());
        assert!(PartitionVector::new(vec![1, 1]).is_none());
        assert!(PartitionVector::new(vec![0, 1]).is_some());
    }
}
