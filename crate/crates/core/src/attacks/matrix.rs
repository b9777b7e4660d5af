use std::io::{self, Write};

/// Which latency extreme carries the signal: reload hits (FR) show up as
/// minima, probe misses (PP) as maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Min,
    Max,
}

/// Columns holding the extreme latency of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialExtreme {
    pub row: u16,
    pub cols: Vec<u16>,
}

/// Latencies within this many cycles of the extreme count as tied.
const TIE_CYCLES: f64 = 0.5;

/// Attacker measurements: row = secret or input byte, column = block,
/// set or prime-array position, cell = mean latency.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    rows: usize,
    cols: usize,
    polarity: Polarity,
    sums: Vec<f64>,
    counts: Vec<u64>,
    extreme_cols: Option<Vec<usize>>,
    extremes: Vec<TrialExtreme>,
}

impl ObservationMatrix {
    pub fn new(rows: usize, cols: usize, polarity: Polarity) -> Self {
        assert!(rows <= 1 << 16 && cols <= 1 << 16);
        Self {
            rows,
            cols,
            polarity,
            sums: vec![0.0; rows * cols],
            counts: vec![0; rows * cols],
            extreme_cols: None,
            extremes: Vec::new(),
        }
    }

    /// Restricts per-trial extreme logging to `cols`.
    pub fn with_extreme_columns(mut self, cols: Vec<usize>) -> Self {
        assert!(cols.iter().all(|&c| c < self.cols));
        self.extreme_cols = Some(cols);
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// Number of trials whose extremes were logged.
    pub fn trials(&self) -> usize {
        self.extremes.len()
    }

    pub fn extremes(&self) -> &[TrialExtreme] {
        &self.extremes
    }

    pub fn add(&mut self, row: usize, col: usize, latency: f64) {
        let i = row * self.cols + col;
        self.sums[i] += latency;
        self.counts[i] += 1;
    }

    /// Adds one trial's full latency vector to `row` and logs its extreme
    /// columns.
    pub fn record_trial(&mut self, row: usize, latencies: &[f64]) {
        assert_eq!(latencies.len(), self.cols);
        for (c, &l) in latencies.iter().enumerate() {
            self.add(row, c, l);
        }
        let candidates: Vec<usize> = match &self.extreme_cols {
            Some(cols) => cols.clone(),
            None => (0..self.cols).collect(),
        };
        let pick = |a: f64, b: f64| match self.polarity {
            Polarity::Min => a.min(b),
            Polarity::Max => a.max(b),
        };
        let Some(extreme) = candidates.iter().map(|&c| latencies[c]).reduce(pick) else {
            return;
        };
        let cols = candidates
            .into_iter()
            .filter(|&c| (latencies[c] - extreme).abs() <= TIE_CYCLES)
            .map(|c| c as u16)
            .collect();
        self.extremes.push(TrialExtreme { row: row as u16, cols });
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn mean(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.cols + col;
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    pub fn row_populated(&self, row: usize) -> bool {
        (0..self.cols).any(|c| self.count(row, c) > 0)
    }

    /// Mean over columns congruent to `group` modulo `groups`, e.g. the two
    /// prime-array positions that a 256-set cache would put in one set.
    pub fn folded_mean(&self, row: usize, group: usize, groups: usize) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0u64);
        for c in (group..self.cols).step_by(groups) {
            let i = row * self.cols + c;
            sum += self.sums[i];
            n += self.counts[i];
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Merges `other` into `self`. Shapes and polarity must agree.
    pub fn merge(&mut self, other: &ObservationMatrix) {
        assert_eq!(
            (self.rows, self.cols, self.polarity),
            (other.rows, other.cols, other.polarity)
        );
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.extremes.extend(other.extremes.iter().cloned());
    }

    /// Populated cells in row-major order: `(row, col, mean, count)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64, u64)> + '_ {
        (0..self.rows * self.cols)
            .filter(|&i| self.counts[i] > 0)
            .map(move |i| {
                (
                    i / self.cols,
                    i % self.cols,
                    self.sums[i] / self.counts[i] as f64,
                    self.counts[i],
                )
            })
    }

    /// Long-form CSV: `# key=value` header lines, then
    /// `row,col,mean_latency,trials` for every populated cell.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &[(String, String)]) -> io::Result<()> {
        for (k, v) in header {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "row,col,mean_latency,trials")?;
        for (r, c, mean, n) in self.cells() {
            writeln!(w, "{r},{c},{mean:.6},{n}")?;
        }
        Ok(())
    }
}
