//! Fixed-capacity M-channel circular audio store.
//!
//! Time is tracked as an absolute sample counter, so extraction is
//! sample-exact regardless of how many times the store has wrapped.

use thiserror::Error;

use crate::scene::{seconds_to_samples, MultiChannelClip, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingBufferError {
    #[error("frame has {got} channels at {got_fs} Hz, buffer expects {want} at {want_fs} Hz")]
    ChannelMismatch {
        got: usize,
        want: usize,
        got_fs: u32,
        want_fs: u32,
    },
    #[error("window of {window} s exceeds buffer capacity {capacity} s")]
    WindowTooLong { window: f64, capacity: f64 },
    #[error("window [{start}, {end}) s is not buffered (stored span [{stored_start}, {stored_end}) s)")]
    WindowNotBuffered {
        start: f64,
        end: f64,
        stored_start: f64,
        stored_end: f64,
    },
}

#[derive(Debug, Clone)]
pub struct RingBuffer {
    fs: u32,
    capacity: usize,
    channels: Vec<Vec<f64>>,
    /// Total samples ever written per channel.
    written: u64,
}

impl RingBuffer {
    pub fn new(channels: usize, fs: u32, capacity_seconds: f64) -> Self {
        let capacity = seconds_to_samples(capacity_seconds, fs).max(1);
        Self {
            fs,
            capacity,
            channels: vec![vec![0.0; capacity]; channels],
            written: 0,
        }
    }

    pub fn capacity_seconds(&self) -> f64 {
        self.capacity as f64 / self.fs as f64
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Write clock in seconds.
    pub fn clock(&self) -> f64 {
        self.written as f64 / self.fs as f64
    }

    pub fn stored_samples(&self) -> usize {
        (self.written as usize).min(self.capacity)
    }

    pub fn stored_seconds(&self) -> f64 {
        self.stored_samples() as f64 / self.fs as f64
    }

    pub fn push(&mut self, frame: &MultiChannelClip) -> Result<(), RingBufferError> {
        if frame.channel_count() != self.channels.len() || frame.fs() != self.fs {
            return Err(RingBufferError::ChannelMismatch {
                got: frame.channel_count(),
                want: self.channels.len(),
                got_fs: frame.fs(),
                want_fs: self.fs,
            });
        }
        let len = frame.len();
        // Only the last `capacity` samples of an oversized frame survive.
        let skip = len.saturating_sub(self.capacity);
        for (store, ch) in self.channels.iter_mut().zip(frame.channels()) {
            let mut pos = ((self.written + skip as u64) % self.capacity as u64) as usize;
            let mut src = &ch.samples[skip..];
            while !src.is_empty() {
                let n = src.len().min(self.capacity - pos);
                store[pos..pos + n].copy_from_slice(&src[..n]);
                src = &src[n..];
                pos = (pos + n) % self.capacity;
            }
        }
        self.written += len as u64;
        Ok(())
    }

    /// Copies samples `[start, start + len)` of the absolute stream.
    pub fn extract_samples(&self, start: u64, len: usize) -> Result<MultiChannelClip, RingBufferError> {
        if len > self.capacity {
            return Err(RingBufferError::WindowTooLong {
                window: len as f64 / self.fs as f64,
                capacity: self.capacity_seconds(),
            });
        }
        let oldest = self.written - self.stored_samples() as u64;
        if start < oldest || start + len as u64 > self.written {
            let fs = self.fs as f64;
            return Err(RingBufferError::WindowNotBuffered {
                start: start as f64 / fs,
                end: (start + len as u64) as f64 / fs,
                stored_start: oldest as f64 / fs,
                stored_end: self.written as f64 / fs,
            });
        }
        let channels = self
            .channels
            .iter()
            .map(|store| {
                let mut out = Vec::with_capacity(len);
                let mut pos = (start % self.capacity as u64) as usize;
                while out.len() < len {
                    let n = (len - out.len()).min(self.capacity - pos);
                    out.extend_from_slice(&store[pos..pos + n]);
                    pos = (pos + n) % self.capacity;
                }
                Waveform::new(out, self.fs)
            })
            .collect();
        Ok(MultiChannelClip::new(channels, start as f64 / self.fs as f64).expect("buffer channels share shape"))
    }

    /// Window `[t_trig - retro, t_trig + post]` as a copy.
    pub fn extract(&self, t_trig: f64, retro: f64, post: f64) -> Result<MultiChannelClip, RingBufferError> {
        let window = retro + post;
        if window > self.capacity_seconds() {
            return Err(RingBufferError::WindowTooLong {
                window,
                capacity: self.capacity_seconds(),
            });
        }
        let start = t_trig - retro;
        if start < 0.0 {
            return Err(RingBufferError::WindowNotBuffered {
                start,
                end: t_trig + post,
                stored_start: self.clock() - self.stored_seconds(),
                stored_end: self.clock(),
            });
        }
        self.extract_samples(
            seconds_to_samples(start, self.fs) as u64,
            seconds_to_samples(window, self.fs),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_clip(m: usize, start: usize, len: usize, fs: u32) -> MultiChannelClip {
        let channels = (0..m)
            .map(|c| Waveform::new((start..start + len).map(|i| i as f64 + c as f64 * 1e6).collect(), fs))
            .collect();
        MultiChannelClip::new(channels, start as f64 / fs as f64).unwrap()
    }

    #[test]
    fn stored_span_clamps_to_capacity() {
        let fs = 100;
        let mut buf = RingBuffer::new(3, fs, 12.0);
        buf.push(&ramp_clip(3, 0, 100, fs)).unwrap();
        assert_eq!(buf.stored_seconds(), 1.0);
        for k in 1..20 {
            buf.push(&ramp_clip(3, k * 100, 100, fs)).unwrap();
        }
        assert_eq!(buf.stored_seconds(), 12.0);
        assert_eq!(buf.clock(), 20.0);
    }

    #[test]
    fn channel_mismatch() {
        let mut buf = RingBuffer::new(7, 100, 12.0);
        let err = buf.push(&ramp_clip(6, 0, 10, 100)).unwrap_err();
        assert!(matches!(err, RingBufferError::ChannelMismatch { got: 6, want: 7, .. }));
    }

    #[test]
    fn extract_without_wrap() {
        let fs = 1000;
        let mut buf = RingBuffer::new(2, fs, 12.0);
        let full = ramp_clip(2, 0, 12_000, fs);
        buf.push(&full).unwrap();
        let w = buf.extract(11.5, 0.5, 0.5).unwrap();
        assert_eq!(w, full.slice(11_000, 1000));
        assert_eq!(w.start_time, 11.0);
    }

    #[test]
    fn extract_errors() {
        let fs = 1000;
        let mut buf = RingBuffer::new(1, fs, 12.0);
        buf.push(&ramp_clip(1, 0, 20_000, fs)).unwrap();
        assert!(matches!(
            buf.extract(15.0, 6.5, 6.5),
            Err(RingBufferError::WindowTooLong { .. })
        ));
        assert!(matches!(
            buf.extract(5.0, 0.5, 0.5),
            Err(RingBufferError::WindowNotBuffered { .. })
        ));
        assert!(matches!(
            buf.extract(19.8, 0.5, 0.5),
            Err(RingBufferError::WindowNotBuffered { .. })
        ));
        // Repeatable reads.
        let a = buf.extract(19.0, 0.5, 0.5).unwrap();
        let b = buf.extract(19.0, 0.5, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
