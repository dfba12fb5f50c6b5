//! Multi-source dataset container with a block-wise missing pattern.
//!
//! Observed rows are stored densely per source, in the order given by the
//! pattern; the pattern is the single source of truth for missingness. Row
//! alignment across sources is by the shared sample index `0..n`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::exp_family::DistributionKind;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("source {name}: data is {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    DimensionMismatch {
        name: String,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("source {name}: trials matrix is {got_rows}x{got_cols}, expected {n}x{p}")]
    TrialsShape {
        name: String,
        got_rows: usize,
        got_cols: usize,
        n: usize,
        p: usize,
    },
    #[error("source {name}: trials must be >= 1 (entry ({row}, {col}))")]
    InvalidTrials { name: String, row: usize, col: usize },
    #[error("source {name}: observed row index {index} out of range for n = {n}")]
    RowIndexOutOfRange { name: String, index: usize, n: usize },
    #[error("source {name}: observed row indices must be strictly increasing")]
    UnsortedPattern { name: String },
    #[error("source {name} observes no rows")]
    EmptySource { name: String },
    #[error("sample {sample} is observed in no source")]
    UnionViolation { sample: usize },
    #[error("pattern has {got} sources, dataset has {want}")]
    PatternArity { got: usize, want: usize },
    #[error(
        "source {name}: value {value} at observed row {row}, column {col} \
         is outside the distribution's support"
    )]
    SupportViolation {
        name: String,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("source {name}: variable count must be >= 1")]
    EmptyVariables { name: String },
}

/// Binomial trial counts for one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trials {
    /// Every entry has the same number of trials (the common case; the
    /// simulation studies use 100).
    Constant(u64),
    /// Per-entry trials over all `n` samples, including block-wise missing
    /// rows (those are needed to report imputations on the mean scale).
    PerEntry(DMatrix<u64>),
}

/// One data source: its name, distribution, and variable count.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub name: String,
    pub family: SourceFamily,
    /// Number of variables `p_k`.
    pub p: usize,
}

/// Distribution shared by every entry of a source.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceFamily {
    Gaussian,
    Poisson,
    Binomial(Trials),
}

impl SourceSpec {
    pub fn gaussian(name: impl Into<String>, p: usize) -> Self {
        Self { name: name.into(), family: SourceFamily::Gaussian, p }
    }

    pub fn poisson(name: impl Into<String>, p: usize) -> Self {
        Self { name: name.into(), family: SourceFamily::Poisson, p }
    }

    pub fn binomial(name: impl Into<String>, p: usize, trials: Trials) -> Self {
        Self { name: name.into(), family: SourceFamily::Binomial(trials), p }
    }

    /// The scalar-kernel kind of entry `(sample, col)`, with `sample` a
    /// global index in `0..n`.
    #[inline]
    pub fn entry_kind(&self, sample: usize, col: usize) -> DistributionKind {
        match &self.family {
            SourceFamily::Gaussian => DistributionKind::Gaussian,
            SourceFamily::Poisson => DistributionKind::Poisson,
            SourceFamily::Binomial(Trials::Constant(m)) => {
                DistributionKind::Binomial { trials: *m }
            }
            SourceFamily::Binomial(Trials::PerEntry(m)) => {
                DistributionKind::Binomial { trials: m[(sample, col)] }
            }
        }
    }

    fn validate(&self, n: usize) -> Result<(), DataError> {
        if self.p == 0 {
            return Err(DataError::EmptyVariables { name: self.name.clone() });
        }
        match &self.family {
            SourceFamily::Binomial(Trials::PerEntry(m)) => {
                if m.nrows() != n || m.ncols() != self.p {
                    return Err(DataError::TrialsShape {
                        name: self.name.clone(),
                        got_rows: m.nrows(),
                        got_cols: m.ncols(),
                        n,
                        p: self.p,
                    });
                }
                for col in 0..self.p {
                    for row in 0..n {
                        if m[(row, col)] == 0 {
                            return Err(DataError::InvalidTrials {
                                name: self.name.clone(),
                                row,
                                col,
                            });
                        }
                    }
                }
                Ok(())
            }
            SourceFamily::Binomial(Trials::Constant(0)) => {
                Err(DataError::InvalidTrials { name: self.name.clone(), row: 0, col: 0 })
            }
            _ => Ok(()),
        }
    }
}

/// Which samples each source observes. Missing is row-wise per source: a
/// sample is either fully observed or fully missing in a source, and every
/// sample is observed in at least one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationPattern {
    observed: Vec<Vec<usize>>,
    /// `local[k][i] = Some(t)` iff global sample `i` is row `t` of source `k`.
    local: Vec<Vec<Option<usize>>>,
    n: usize,
}

impl ObservationPattern {
    /// Build from per-source strictly increasing lists of observed sample
    /// indices. `names` is used only for error messages.
    pub fn new(
        n: usize,
        observed: Vec<Vec<usize>>,
        names: &[String],
    ) -> Result<Self, DataError> {
        let name = |k: usize| {
            names.get(k).cloned().unwrap_or_else(|| format!("source {k}"))
        };
        let mut covered = vec![false; n];
        for (k, rows) in observed.iter().enumerate() {
            if rows.is_empty() {
                return Err(DataError::EmptySource { name: name(k) });
            }
            for (t, &i) in rows.iter().enumerate() {
                if i >= n {
                    return Err(DataError::RowIndexOutOfRange { name: name(k), index: i, n });
                }
                if t > 0 && rows[t - 1] >= i {
                    return Err(DataError::UnsortedPattern { name: name(k) });
                }
                covered[i] = true;
            }
        }
        if let Some(sample) = covered.iter().position(|c| !c) {
            return Err(DataError::UnionViolation { sample });
        }
        let local = observed
            .iter()
            .map(|rows| {
                let mut lut = vec![None; n];
                for (t, &i) in rows.iter().enumerate() {
                    lut[i] = Some(t);
                }
                lut
            })
            .collect();
        Ok(Self { observed, local, n })
    }

    /// Pattern with every sample observed in every source.
    pub fn fully_observed(n: usize, n_sources: usize) -> Self {
        let observed = vec![(0..n).collect::<Vec<_>>(); n_sources];
        let local = vec![(0..n).map(Some).collect::<Vec<_>>(); n_sources];
        Self { observed, local, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_sources(&self) -> usize {
        self.observed.len()
    }

    /// Observed sample indices of source `k`, strictly increasing.
    pub fn observed(&self, k: usize) -> &[usize] {
        &self.observed[k]
    }

    /// Number of observed samples `n_k`.
    pub fn n_observed(&self, k: usize) -> usize {
        self.observed[k].len()
    }

    /// Complement of `observed(k)`, strictly increasing.
    pub fn missing(&self, k: usize) -> Vec<usize> {
        (0..self.n).filter(|i| self.local[k][*i].is_none()).collect()
    }

    pub fn is_observed(&self, k: usize, sample: usize) -> bool {
        self.local[k][sample].is_some()
    }

    /// Local row of global sample `i` within source `k`'s dense storage.
    pub fn local_row(&self, k: usize, sample: usize) -> Option<usize> {
        self.local[k][sample]
    }

    /// Sources observing a given sample, ascending.
    pub fn sources_observing(&self, sample: usize) -> Vec<usize> {
        (0..self.n_sources()).filter(|&k| self.is_observed(k, sample)).collect()
    }
}

/// `K` observation matrices over shared samples, each with its own observed
/// row set. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceDataset<T: Scalar> {
    n: usize,
    sources: Vec<SourceSpec>,
    pattern: ObservationPattern,
    data: Vec<DMatrix<T>>,
}

impl<T: Scalar> MultiSourceDataset<T> {
    /// Validates dimensions, the pattern, and entry supports
    /// (Poisson: nonnegative integers; binomial: integers in `[0, trials]`).
    pub fn new(
        n: usize,
        sources: Vec<SourceSpec>,
        pattern: ObservationPattern,
        data: Vec<DMatrix<T>>,
    ) -> Result<Self, DataError> {
        if pattern.n_sources() != sources.len() || data.len() != sources.len() {
            return Err(DataError::PatternArity {
                got: pattern.n_sources().max(data.len()),
                want: sources.len(),
            });
        }
        debug_assert_eq!(pattern.n(), n);
        for (k, spec) in sources.iter().enumerate() {
            spec.validate(n)?;
            let x = &data[k];
            let n_k = pattern.n_observed(k);
            if x.nrows() != n_k || x.ncols() != spec.p {
                return Err(DataError::DimensionMismatch {
                    name: spec.name.clone(),
                    got_rows: x.nrows(),
                    got_cols: x.ncols(),
                    want_rows: n_k,
                    want_cols: spec.p,
                });
            }
            for (t, &sample) in pattern.observed(k).iter().enumerate() {
                for col in 0..spec.p {
                    let value = x[(t, col)];
                    if !spec.entry_kind(sample, col).in_support(value) {
                        return Err(DataError::SupportViolation {
                            name: spec.name.clone(),
                            row: sample,
                            col,
                            value: value.to_f64_c(),
                        });
                    }
                }
            }
        }
        Ok(Self { n, sources, pattern, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, k: usize) -> &SourceSpec {
        &self.sources[k]
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn pattern(&self) -> &ObservationPattern {
        &self.pattern
    }

    /// Observed rows of source `k`, dense, aligned with `pattern().observed(k)`.
    pub fn data(&self, k: usize) -> &DMatrix<T> {
        &self.data[k]
    }

    pub fn p(&self, k: usize) -> usize {
        self.sources[k].p
    }

    /// Total observed entries `Σ_k n_k·p_k` (the BIC sample size).
    pub fn total_observed_entries(&self) -> usize {
        (0..self.n_sources()).map(|k| self.pattern.n_observed(k) * self.p(k)).sum()
    }

    /// Index of a source by name.
    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn pattern_requires_union_coverage() {
        let err = ObservationPattern::new(3, vec![vec![0, 1], vec![1]], &names(2)).unwrap_err();
        assert!(matches!(err, DataError::UnionViolation { sample: 2 }));
    }

    #[test]
    fn pattern_rejects_unsorted_rows() {
        let err = ObservationPattern::new(3, vec![vec![1, 0, 2]], &names(1)).unwrap_err();
        assert!(matches!(err, DataError::UnsortedPattern { .. }));
    }

    #[test]
    fn pattern_local_rows() {
        let pat = ObservationPattern::new(4, vec![vec![0, 2, 3], vec![0, 1, 2, 3]], &names(2))
            .unwrap();
        assert_eq!(pat.local_row(0, 2), Some(1));
        assert_eq!(pat.local_row(0, 1), None);
        assert_eq!(pat.missing(0), vec![1]);
        assert_eq!(pat.sources_observing(1), vec![1]);
        assert_eq!(pat.n_observed(0), 3);
    }

    #[test]
    fn dataset_validates_support() {
        let pat = ObservationPattern::fully_observed(2, 1);
        let src = vec![SourceSpec::poisson("counts", 2)];
        let bad = vec![dmatrix![1.0, 2.5; 0.0, 3.0]];
        let err = MultiSourceDataset::new(2, src.clone(), pat.clone(), bad).unwrap_err();
        assert!(matches!(err, DataError::SupportViolation { col: 1, .. }));

        let good = vec![dmatrix![1.0, 2.0; 0.0, 3.0]];
        assert!(MultiSourceDataset::new(2, src, pat, good).is_ok());
    }

    #[test]
    fn dataset_validates_binomial_range() {
        let pat = ObservationPattern::fully_observed(2, 1);
        let src = vec![SourceSpec::binomial("hits", 1, Trials::Constant(4))];
        let err =
            MultiSourceDataset::new(2, src, pat, vec![dmatrix![2.0; 5.0]]).unwrap_err();
        assert!(matches!(err, DataError::SupportViolation { row: 1, .. }));
    }

    #[test]
    fn dataset_validates_dims() {
        let pat = ObservationPattern::new(3, vec![vec![0, 2], vec![0, 1, 2]], &names(2)).unwrap();
        let src = vec![SourceSpec::gaussian("x", 2), SourceSpec::gaussian("y", 1)];
        let err = MultiSourceDataset::new(
            3,
            src,
            pat,
            vec![DMatrix::<f64>::zeros(3, 2), DMatrix::<f64>::zeros(3, 1)],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::DimensionMismatch { want_rows: 2, .. }));
    }

    #[test]
    fn per_entry_trials_drive_entry_kind() {
        let m = DMatrix::from_row_slice(2, 1, &[3u64, 7u64]);
        let spec = SourceSpec::binomial("b", 1, Trials::PerEntry(m));
        assert_eq!(spec.entry_kind(0, 0), DistributionKind::Binomial { trials: 3 });
        assert_eq!(spec.entry_kind(1, 0), DistributionKind::Binomial { trials: 7 });
    }
}
