//! Resampling of several timestamped streams onto one common clock by
//! nearest-neighbour matching. Samples are never interpolated.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Timed<T> {
    pub timestamp_us: u64,
    pub value: T,
}

impl<T> Timed<T> {
    pub fn new(timestamp_us: u64, value: T) -> Self {
        Self { timestamp_us, value }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("stream {0} has no samples")]
    EmptyStream(usize),
    #[error("stream {stream} timestamps stop increasing at sample {index}")]
    NotIncreasing { stream: usize, index: usize },
    #[error("alignment rate must be positive and yield a period of at least 1 µs")]
    BadRate,
}

/// Streams resampled to a common clock; `None` marks a tick with no sample
/// within half a period.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTable<T> {
    pub clock_us: Vec<u64>,
    pub columns: Vec<Vec<Option<T>>>,
}

impl<T: Clone> AlignedTable<T> {
    pub fn missing(&self, column: usize) -> usize {
        self.columns[column].iter().filter(|v| v.is_none()).count()
    }

    /// Present entries of each column as timestamped streams.
    pub fn to_streams(&self) -> Vec<Vec<Timed<T>>> {
        self.columns
            .iter()
            .map(|col| {
                col.iter()
                    .zip(&self.clock_us)
                    .filter_map(|(v, &t)| v.clone().map(|v| Timed::new(t, v)))
                    .collect()
            })
            .collect()
    }
}

fn check_increasing<T>(stream: &[Timed<T>], index: usize) -> Result<(), AlignError> {
    if stream.is_empty() {
        return Err(AlignError::EmptyStream(index));
    }
    if let Some(pos) = stream.windows(2).position(|w| w[1].timestamp_us <= w[0].timestamp_us) {
        return Err(AlignError::NotIncreasing { stream: index, index: pos + 1 });
    }
    Ok(())
}

pub fn period_us(rate_hz: f64) -> Result<u64, AlignError> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(AlignError::BadRate);
    }
    let p = (1e6 / rate_hz).round();
    if p < 1.0 {
        return Err(AlignError::BadRate);
    }
    Ok(p as u64)
}

/// Matches each clock tick to the nearest sample of `stream` within
/// `tolerance_us` (inclusive; ties go to the earlier sample). `stream` and
/// `clock` must both be increasing.
pub fn align_to_clock<T: Clone>(stream: &[Timed<T>], clock: &[u64], tolerance_us: u64) -> Vec<Option<T>> {
    let mut out = Vec::with_capacity(clock.len());
    let mut j = 0;
    for &tick in clock {
        while j + 1 < stream.len() && stream[j + 1].timestamp_us <= tick {
            j += 1;
        }
        let mut best: Option<(u64, usize)> = None;
        for k in [j, j + 1] {
            if let Some(s) = stream.get(k) {
                let d = s.timestamp_us.abs_diff(tick);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
        }
        out.push(match best {
            Some((d, k)) if d <= tolerance_us => Some(stream[k].value.clone()),
            _ => None,
        });
    }
    out
}

/// Resamples all streams onto a clock at `rate_hz` starting at the earliest
/// sample. The clock runs until the last tick that can still match the
/// latest sample.
pub fn timestamp_align<T: Clone>(streams: &[Vec<Timed<T>>], rate_hz: f64) -> Result<AlignedTable<T>, AlignError> {
    let period = period_us(rate_hz)?;
    for (i, s) in streams.iter().enumerate() {
        check_increasing(s, i)?;
    }
    let Some(start) = streams.iter().map(|s| s[0].timestamp_us).min() else {
        return Ok(AlignedTable { clock_us: Vec::new(), columns: Vec::new() });
    };
    let end = streams.iter().map(|s| s[s.len() - 1].timestamp_us).max().unwrap();
    let half = period / 2;
    let clock: Vec<u64> = (0..).map(|k| start + k * period).take_while(|&t| t <= end + half).collect();
    let columns = streams.iter().map(|s| align_to_clock(s, &clock, half)).collect();
    Ok(AlignedTable { clock_us: clock, columns })
}
