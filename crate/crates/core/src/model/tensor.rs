use super::Scalar;

/// Activations laid out channel-major: `[channel][sample][time]`, so each
/// channel's values across the batch form one contiguous row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<S> {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(channels: usize, batch: usize, len: usize) -> Self {
        Tensor3 {
            channels,
            batch,
            len,
            data: vec![S::zero(); channels * batch * len],
        }
    }

    pub fn from_data(channels: usize, batch: usize, len: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), channels * batch * len);
        Tensor3 { channels, batch, len, data }
    }

    /// All samples of one channel.
    pub fn channel(&self, c: usize) -> &[S] {
        let n = self.batch * self.len;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let n = self.batch * self.len;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// The time series of one (channel, sample) pair.
    pub fn series(&self, c: usize, b: usize) -> &[S] {
        let start = (c * self.batch + b) * self.len;
        &self.data[start..start + self.len]
    }

    pub fn series_mut(&mut self, c: usize, b: usize) -> &mut [S] {
        let start = (c * self.batch + b) * self.len;
        &mut self.data[start..start + self.len]
    }

    pub fn at(&self, c: usize, b: usize, t: usize) -> S {
        self.data[(c * self.batch + b) * self.len + t]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.batch == other.batch && self.len == other.len
    }
}
