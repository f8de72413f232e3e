//! Stepped-wedge assignment mechanism.
//!
//! Treatment times are 1-based (`1..=T`); outcome times are 0-based with the
//! baseline at 0. An assignment is an `N x T` binary matrix with one 1 per row
//! (the unit's cross-over time) and `N_t` ones in column `t`.

use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Number of units and the per-time cross-over counts `N_1..N_T`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesignSpec {
    n_units: usize,
    counts: Vec<usize>,
}

impl DesignSpec {
    pub fn new(n_units: usize, counts: Vec<usize>) -> Result<Self> {
        if n_units == 0 {
            return Err(Error::InvalidDesign("n_units must be positive".into()));
        }
        if counts.is_empty() {
            return Err(Error::InvalidDesign("need at least one time step".into()));
        }
        if let Some(t) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidDesign(format!(
                "count for time {} is zero",
                t + 1
            )));
        }
        let total: usize = counts.iter().sum();
        if total != n_units {
            return Err(Error::InvalidDesign(format!(
                "counts sum to {total}, expected {n_units}"
            )));
        }
        Ok(Self { n_units, counts })
    }

    /// Equal counts `floor(N/T)` with the remainder added to the last step.
    pub fn balanced(n_units: usize, n_times: usize) -> Result<Self> {
        if n_times == 0 || n_units < n_times {
            return Err(Error::InvalidDesign(format!(
                "cannot split {n_units} units over {n_times} steps"
            )));
        }
        let base = n_units / n_times;
        let mut counts = vec![base; n_times];
        counts[n_times - 1] += n_units - base * n_times;
        Self::new(n_units, counts)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `N_t` for 1-based `t`.
    pub fn count(&self, t: usize) -> usize {
        self.counts[t - 1]
    }
}

/// Cross-over time `A_i` of every unit, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CrossoverTimes {
    times: Vec<usize>,
    spec: DesignSpec,
}

impl CrossoverTimes {
    /// Builds cross-over times and checks their histogram against `spec`.
    pub fn new(times: Vec<usize>, spec: DesignSpec) -> Result<Self> {
        if times.len() != spec.n_units() {
            return Err(Error::InvalidAssignment(AssignmentViolation::Shape {
                rows: times.len(),
                cols: spec.n_times(),
                expected_rows: spec.n_units(),
                expected_cols: spec.n_times(),
            }));
        }
        for (i, &a) in times.iter().enumerate() {
            if a == 0 || a > spec.n_times() {
                return Err(Error::InvalidAssignment(AssignmentViolation::RowSum {
                    row: i,
                    sum: 0,
                }));
            }
        }
        let hist = histogram(&times, spec.n_times());
        if let Some(t) = (0..spec.n_times()).find(|&t| hist[t] != spec.counts[t]) {
            return Err(Error::InvalidAssignment(AssignmentViolation::ColumnSum {
                column: t + 1,
                expected: spec.counts[t],
                found: hist[t],
            }));
        }
        Ok(Self { times, spec })
    }

    /// Infers the design from the histogram of `times` over `1..=n_times`.
    pub fn from_times(times: Vec<usize>, n_times: usize) -> Result<Self> {
        if let Some(&a) = times.iter().find(|&&a| a == 0 || a > n_times) {
            return Err(Error::InvalidDesign(format!(
                "cross-over time {a} outside 1..={n_times}"
            )));
        }
        let spec = DesignSpec::new(times.len(), histogram(&times, n_times))?;
        Self::new(times, spec)
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn get(&self, unit: usize) -> usize {
        self.times[unit]
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Units crossing over at `t`, in index order.
    pub fn units_at(&self, t: usize) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&i| self.times[i] == t)
            .collect()
    }

    pub fn to_matrix(&self) -> AssignmentMatrix {
        let t = self.spec.n_times();
        let mut z = vec![0u8; self.times.len() * t];
        for (i, &a) in self.times.iter().enumerate() {
            z[i * t + a - 1] = 1;
        }
        AssignmentMatrix {
            z,
            spec: self.spec.clone(),
        }
    }
}

fn histogram(times: &[usize], n_times: usize) -> Vec<usize> {
    let mut h = vec![0; n_times];
    for &a in times {
        if (1..=n_times).contains(&a) {
            h[a - 1] += 1;
        }
    }
    h
}

/// A validated `N x T` cross-over matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentMatrix {
    z: Vec<u8>,
    spec: DesignSpec,
}

impl AssignmentMatrix {
    pub fn from_rows(rows: &[Vec<u8>], spec: DesignSpec) -> Result<Self> {
        validate_assignment(rows, &spec).map_err(Error::InvalidAssignment)?;
        Ok(Self {
            z: rows.iter().flatten().copied().collect(),
            spec,
        })
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    /// Entry for 0-based unit and 1-based time.
    pub fn get(&self, unit: usize, t: usize) -> u8 {
        self.z[unit * self.spec.n_times() + t - 1]
    }

    pub fn row(&self, unit: usize) -> &[u8] {
        let t = self.spec.n_times();
        &self.z[unit * t..(unit + 1) * t]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.spec.n_units())
            .map(|i| self.row(i).to_vec())
            .collect()
    }
}

/// First violated constraint of a candidate assignment matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AssignmentViolation {
    Shape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    NotBinary {
        row: usize,
        column: usize,
        value: u8,
    },
    RowSum {
        row: usize,
        sum: usize,
    },
    ColumnSum {
        column: usize,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for AssignmentViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignmentViolation::Shape {
                rows,
                cols,
                expected_rows,
                expected_cols,
            } => write!(
                f,
                "matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}"
            ),
            AssignmentViolation::NotBinary { row, column, value } => {
                write!(f, "entry ({row}, {column}) is {value}, not 0/1")
            }
            AssignmentViolation::RowSum { row, sum } => {
                write!(f, "row {row} has {sum} ones, expected exactly 1")
            }
            AssignmentViolation::ColumnSum {
                column,
                expected,
                found,
            } => write!(f, "column {column} has {found} ones, expected {expected}"),
        }
    }
}

/// Checks both matrix invariants, reporting the first violated row or column.
///
/// Rows are 0-based unit indices; columns are 1-based times.
pub fn validate_assignment(
    z: &[Vec<u8>],
    spec: &DesignSpec,
) -> std::result::Result<(), AssignmentViolation> {
    let t = spec.n_times();
    if z.len() != spec.n_units() || z.iter().any(|r| r.len() != t) {
        return Err(AssignmentViolation::Shape {
            rows: z.len(),
            cols: z.iter().map(Vec::len).find(|&c| c != t).unwrap_or(t),
            expected_rows: spec.n_units(),
            expected_cols: t,
        });
    }
    for (i, row) in z.iter().enumerate() {
        if let Some(c) = row.iter().position(|&v| v > 1) {
            return Err(AssignmentViolation::NotBinary {
                row: i,
                column: c + 1,
                value: row[c],
            });
        }
        let sum: usize = row.iter().map(|&v| v as usize).sum();
        if sum != 1 {
            return Err(AssignmentViolation::RowSum { row: i, sum });
        }
    }
    for c in 0..t {
        let found: usize = z.iter().map(|r| r[c] as usize).sum();
        if found != spec.counts[c] {
            return Err(AssignmentViolation::ColumnSum {
                column: c + 1,
                expected: spec.counts[c],
                found,
            });
        }
    }
    Ok(())
}

/// `|Z| = N! / (N_1! ... N_T!)`, exact.
pub fn space_size(spec: &DesignSpec) -> BigUint {
    // Product of binomials C(remaining, N_t) avoids the full factorials.
    let mut remaining = spec.n_units();
    let mut size = BigUint::one();
    for &c in spec.counts() {
        size *= binomial(remaining, c);
        remaining -= c;
    }
    size
}

pub(crate) fn binomial(n: usize, k: usize) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// Binomial coefficient as `f64`, saturating to infinity.
pub(crate) fn binomial_f64(n: usize, k: usize) -> f64 {
    binomial(n, k).to_f64().unwrap_or(f64::INFINITY)
}

/// Draws an assignment uniformly from the design space by shuffling the
/// multiset of cross-over labels.
pub fn sample_assignment<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> AssignmentMatrix {
    sample_crossover_times(spec, rng).to_matrix()
}

/// Same draw as [`sample_assignment`], returned as cross-over times.
pub fn sample_crossover_times<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> CrossoverTimes {
    let mut labels: Vec<usize> = spec
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(t, &c)| std::iter::repeat_n(t + 1, c))
        .collect();
    labels.shuffle(rng);
    CrossoverTimes {
        times: labels,
        spec: spec.clone(),
    }
}

/// `pi_t(z_t | z_[t-1]) = N_t! (N - N_[t])! / (N - N_[t-1])!`.
pub fn step_conditional_prob(spec: &DesignSpec, t: usize) -> Result<BigRational> {
    if t == 0 || t > spec.n_times() {
        return Err(Error::InvalidDesign(format!(
            "time {t} outside 1..={}",
            spec.n_times()
        )));
    }
    let before: usize = spec.counts()[..t - 1].iter().sum();
    let remaining = spec.n_units() - before;
    let ways = binomial(remaining, spec.count(t));
    Ok(BigRational::new(1.into(), ways.into()))
}

/// Reads the cross-over times off a matrix.
pub fn crossover_times(z: &AssignmentMatrix) -> CrossoverTimes {
    let times = (0..z.spec.n_units())
        .map(|i| z.row(i).iter().position(|&v| v == 1).map(|c| c + 1).unwrap())
        .collect();
    CrossoverTimes {
        times,
        spec: z.spec.clone(),
    }
}

/// Cross-over times from raw rows, rejecting malformed matrices.
pub fn crossover_times_from_rows(rows: &[Vec<u8>], spec: &DesignSpec) -> Result<CrossoverTimes> {
    let z = AssignmentMatrix::from_rows(rows, spec.clone())?;
    Ok(crossover_times(&z))
}

/// Every assignment of the design, as cross-over vectors in lexicographic order.
///
/// Intended for small spaces; callers check [`space_size`] first.
pub fn enumerate_crossover_times(spec: &DesignSpec) -> Vec<CrossoverTimes> {
    let mut out = Vec::new();
    let mut remaining = spec.counts().to_vec();
    let mut current = Vec::with_capacity(spec.n_units());
    fn rec(
        remaining: &mut [usize],
        current: &mut Vec<usize>,
        n: usize,
        spec: &DesignSpec,
        out: &mut Vec<CrossoverTimes>,
    ) {
        if current.len() == n {
            out.push(CrossoverTimes {
                times: current.clone(),
                spec: spec.clone(),
            });
            return;
        }
        for t in 0..remaining.len() {
            if remaining[t] > 0 {
                remaining[t] -= 1;
                current.push(t + 1);
                rec(remaining, current, n, spec, out);
                current.pop();
                remaining[t] += 1;
            }
        }
    }
    rec(&mut remaining, &mut current, spec.n_units(), spec, &mut out);
    out
}
