use std::collections::HashSet;

use super::DspError;

/// A timestamped block of multichannel samples at a fixed rate.
///
/// Samples are stored channel-major: `samples[c][n]` is channel `c` at sample `n`,
/// in microvolts. `start_time` is on the session's monotonic clock, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EegChunk {
    start_time: f64,
    sample_rate: f64,
    channel_labels: Vec<String>,
    samples: Vec<Vec<f64>>,
}

impl EegChunk {
    pub fn new(
        start_time: f64,
        sample_rate: f64,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self, DspError> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(DspError::InvalidChunk(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !start_time.is_finite() {
            return Err(DspError::InvalidChunk("start time is not finite".into()));
        }
        if channel_labels.len() != samples.len() {
            return Err(DspError::InvalidChunk(format!(
                "{} labels for {} sample rows",
                channel_labels.len(),
                samples.len()
            )));
        }
        if channel_labels.is_empty() {
            return Err(DspError::InvalidChunk("chunk has no channels".into()));
        }
        let mut seen = HashSet::with_capacity(channel_labels.len());
        for label in &channel_labels {
            if !seen.insert(label.as_str()) {
                return Err(DspError::InvalidChunk(format!("duplicate channel label {label}")));
            }
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(DspError::InvalidChunk("chunk has no samples".into()));
        }
        if samples.iter().any(|row| row.len() != n) {
            return Err(DspError::InvalidChunk("channel rows differ in length".into()));
        }
        Ok(Self {
            start_time,
            sample_rate,
            channel_labels,
            samples,
        })
    }

    /// Builds a chunk from a flat row-major buffer (`n_channels` rows of `n_samples`).
    pub fn from_flat(
        start_time: f64,
        sample_rate: f64,
        channel_labels: Vec<String>,
        n_samples: usize,
        flat: &[f64],
    ) -> Result<Self, DspError> {
        let n_channels = channel_labels.len();
        if n_samples == 0 || flat.len() != n_channels * n_samples {
            return Err(DspError::InvalidChunk(format!(
                "expected {} values for {n_channels} channels x {n_samples} samples, got {}",
                n_channels * n_samples,
                flat.len()
            )));
        }
        let samples = flat.chunks(n_samples).map(<[f64]>::to_vec).collect();
        Self::new(start_time, sample_rate, channel_labels, samples)
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }

    /// Time just past the last sample.
    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn channel(&self, label: &str) -> Option<&[f64]> {
        self.channel_index(label).map(|i| self.samples[i].as_slice())
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }

    /// Row-major flattening, the inverse of [`EegChunk::from_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.samples.iter().flatten().copied().collect()
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }

    /// Samples `[from, to)` as a new chunk with the start time advanced accordingly.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self, DspError> {
        if from >= to || to > self.n_samples() {
            return Err(DspError::InvalidChunk(format!(
                "slice {from}..{to} out of range for {} samples",
                self.n_samples()
            )));
        }
        Ok(Self {
            start_time: self.start_time + from as f64 / self.sample_rate,
            sample_rate: self.sample_rate,
            channel_labels: self.channel_labels.clone(),
            samples: self.samples.iter().map(|r| r[from..to].to_vec()).collect(),
        })
    }

    /// Keeps only the named channels, in the order given.
    pub fn select(&self, labels: &[String]) -> Result<Self, DspError> {
        let missing: Vec<String> = labels
            .iter()
            .filter(|l| self.channel_index(l).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(DspError::MissingChannels(missing));
        }
        let samples = labels
            .iter()
            .map(|l| self.samples[self.channel_index(l).unwrap()].clone())
            .collect();
        Self::new(self.start_time, self.sample_rate, labels.to_vec(), samples)
    }

    /// Appends `other` in time; channel layout and rate must match.
    pub fn concat(&self, other: &EegChunk) -> Result<Self, DspError> {
        if other.sample_rate != self.sample_rate {
            return Err(DspError::RateMismatch {
                expected: self.sample_rate,
                got: other.sample_rate,
            });
        }
        if other.channel_labels != self.channel_labels {
            return Err(DspError::Config("channel layouts differ".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(Self {
            start_time: self.start_time,
            sample_rate: self.sample_rate,
            channel_labels: self.channel_labels.clone(),
            samples,
        })
    }

    pub(crate) fn with_samples(&self, samples: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self {
            start_time: self.start_time,
            sample_rate: self.sample_rate,
            channel_labels: self.channel_labels.clone(),
            samples,
        }
    }
}

/// Re-references every sample against the across-channel mean at that instant.
pub fn common_average_reference(chunk: &EegChunk) -> Result<EegChunk, DspError> {
    let n_channels = chunk.n_channels();
    if n_channels < 2 {
        return Err(DspError::InvalidOperation(
            "common average reference needs at least two channels".into(),
        ));
    }
    let n = chunk.n_samples();
    let mut mean = vec![0.0; n];
    for row in chunk.samples() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_channels as f64);
    let samples = chunk
        .samples()
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    Ok(chunk.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("C{i}")).collect()
    }

    #[test]
    fn rejects_ragged_and_duplicate() {
        assert!(EegChunk::new(0.0, 500.0, labels(2), vec![vec![0.0; 3], vec![0.0; 2]]).is_err());
        assert!(EegChunk::new(
            0.0,
            500.0,
            vec!["Pz".into(), "Pz".into()],
            vec![vec![0.0; 3], vec![0.0; 3]]
        )
        .is_err());
        assert!(EegChunk::new(0.0, 0.0, labels(1), vec![vec![0.0]]).is_err());
        assert!(EegChunk::new(0.0, 500.0, labels(1), vec![vec![]]).is_err());
    }

    #[test]
    fn flat_layout_is_channel_major() {
        let c = EegChunk::from_flat(1.0, 2.0, labels(2), 3, &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(c.samples()[1], vec![4., 5., 6.]);
        assert_eq!(c.to_flat(), vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(c.duration(), 1.5);
    }

    #[test]
    fn car_identical_channels_is_zero() {
        let row = vec![1.0, -2.0, 3.5];
        let c = EegChunk::new(0.0, 500.0, labels(3), vec![row.clone(), row.clone(), row]).unwrap();
        let out = common_average_reference(&c).unwrap();
        assert!(out.samples().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn car_two_channels() {
        let a = vec![3.0, 1.0];
        let b = vec![1.0, 5.0];
        let c = EegChunk::new(0.0, 500.0, labels(2), vec![a.clone(), b.clone()]).unwrap();
        let out = common_average_reference(&c).unwrap();
        for i in 0..2 {
            assert_eq!(out.samples()[0][i], (a[i] - b[i]) / 2.0);
            assert_eq!(out.samples()[1][i], (b[i] - a[i]) / 2.0);
        }
    }

    #[test]
    fn car_single_channel_errors() {
        let c = EegChunk::new(0.0, 500.0, labels(1), vec![vec![1.0]]).unwrap();
        assert!(matches!(
            common_average_reference(&c),
            Err(DspError::InvalidOperation(_))
        ));
    }

    #[test]
    fn select_reports_missing() {
        let c = EegChunk::new(0.0, 500.0, labels(2), vec![vec![0.0], vec![0.0]]).unwrap();
        match c.select(&["C1".into(), "Oz".into(), "Fz".into()]) {
            Err(DspError::MissingChannels(m)) => assert_eq!(m, vec!["Oz", "Fz"]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
