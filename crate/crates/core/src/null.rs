//! Null distribution of match counts.
//!
//! Under the null each position matches independently with probability
//! `|G_i| / |V|`, which only depends on the position's parity. A span of
//! positions therefore has a match count distributed as the sum of two
//! binomials, one per parity class; for even vocabularies this collapses to
//! `Binomial(len, 1/2)`.

use crate::parity::ParityPartition;

/// Per-parity-class null match probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullModel {
    pub even_prob: f64,
    pub odd_prob: f64,
}

impl NullModel {
    pub const FAIR: Self = Self { even_prob: 0.5, odd_prob: 0.5 };

    pub fn from_partition(partition: &ParityPartition) -> Self {
        Self { even_prob: partition.null_match_prob(0), odd_prob: partition.null_match_prob(1) }
    }

    pub fn is_fair(&self) -> bool {
        self.even_prob == 0.5 && self.odd_prob == 0.5
    }

    pub fn prob_at(&self, position: usize) -> f64 {
        if position.is_multiple_of(2) {
            self.even_prob
        } else {
            self.odd_prob
        }
    }

    /// Null law of the match count over positions `start..start + len`.
    pub fn span(&self, start: usize, len: usize) -> SpanNull {
        let first = len.div_ceil(2);
        let second = len / 2;
        let (even, odd) = if start.is_multiple_of(2) { (first, second) } else { (second, first) };
        SpanNull { classes: [(even, self.even_prob), (odd, self.odd_prob)] }
    }
}

/// Match-count law over a span: a sum of two independent binomials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanNull {
    classes: [(usize, f64); 2],
}

impl SpanNull {
    pub fn len(&self) -> usize {
        self.classes[0].0 + self.classes[1].0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> f64 {
        self.classes.iter().map(|&(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        self.classes.iter().map(|&(n, p)| n as f64 * p * (1.0 - p)).sum()
    }

    /// Standardized score `(count - mean) / sd`.
    pub fn z(&self, count: usize) -> f64 {
        (count as f64 - self.mean()) / self.variance().sqrt()
    }

    /// Probability mass function over `0..=len`.
    pub fn pmf(&self) -> Vec<f64> {
        let [(n0, p0), (n1, p1)] = self.classes;
        if p0 == p1 {
            return binomial_pmf(n0 + n1, p0);
        }
        let a = binomial_pmf(n0, p0);
        let b = binomial_pmf(n1, p1);
        let mut out = vec![0.0; n0 + n1 + 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    /// `P(count >= g)` under the null.
    pub fn upper_tail(&self, g: usize) -> f64 {
        if g == 0 {
            return 1.0;
        }
        let pmf = self.pmf();
        if g >= pmf.len() {
            return 0.0;
        }
        // smallest terms first
        pmf[g..].iter().rev().sum::<f64>().min(1.0)
    }
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 || p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[if p <= 0.0 { 0 } else { n }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    // ln C(n, k) by the multiplicative recurrence
    let mut ln_choose = 0.0;
    (0..=n)
        .map(|k| {
            if k > 0 {
                ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
            }
            (ln_choose + k as f64 * lp + (n - k) as f64 * lq).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fair_span_is_symmetric_binomial() {
        let s = NullModel::FAIR.span(0, 256);
        assert_eq!(s.mean(), 128.0);
        assert_eq!(s.variance(), 64.0);
        assert_eq!(s.z(160), 4.0);
        let pmf = s.pmf();
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((pmf[100] / pmf[156] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_vocab_span_mixes_classes() {
        let null = NullModel { even_prob: 4.0 / 7.0, odd_prob: 3.0 / 7.0 };
        let s = null.span(1, 5); // positions 1..=5: odd 1,3,5 and even 2,4
        assert!((s.mean() - (2.0 * 4.0 / 7.0 + 3.0 * 3.0 / 7.0)).abs() < 1e-12);
        // brute force over all 2^5 match patterns
        let mut tail = 0.0;
        for mask in 0u32..32 {
            let mut prob = 1.0;
            for i in 0..5 {
                let p = null.prob_at(1 + i);
                prob *= if mask >> i & 1 == 1 { p } else { 1.0 - p };
            }
            if mask.count_ones() >= 3 {
                tail += prob;
            }
        }
        assert!((s.upper_tail(3) - tail).abs() < 1e-12);
    }

    #[test]
    fn tails_at_edges() {
        let s = NullModel::FAIR.span(0, 8);
        assert_eq!(s.upper_tail(0), 1.0);
        assert_eq!(s.upper_tail(9), 0.0);
        assert!((s.upper_tail(8) - 1.0 / 256.0).abs() < 1e-15);
    }
}
