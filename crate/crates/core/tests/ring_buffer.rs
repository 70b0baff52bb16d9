use proptest::prelude::*;
use skyear_core::ring_buffer::{RingBuffer, RingBufferError};
use skyear_core::scene::{MultiChannelClip, Waveform};

const FS: u32 = 100;

/// Channel `m` of the reference stream carries `m * 1e6 + i` at sample `i`.
fn frame(m: usize, start: usize, len: usize) -> MultiChannelClip {
    let channels = (0..m)
        .map(|c| Waveform::new((start..start + len).map(|i| (c * 1_000_000 + i) as f64).collect(), FS))
        .collect();
    MultiChannelClip::new(channels, start as f64 / FS as f64).unwrap()
}

fn push_all(buf: &mut RingBuffer, m: usize, sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut reference = vec![Vec::new(); m];
    let mut at = 0;
    for &n in sizes {
        let f = frame(m, at, n);
        for c in 0..m {
            reference[c].extend_from_slice(&f.channel(c).samples);
        }
        buf.push(&f).unwrap();
        at += n;
    }
    reference
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extract_matches_unwrapped_stream(
        sizes in prop::collection::vec(1usize..700, 1..12),
        cap_s in 1.0f64..6.0,
        start_frac in 0.0f64..1.0,
        len_frac in 0.0f64..1.0,
    ) {
        let m = 3;
        let mut buf = RingBuffer::new(m, FS, cap_s);
        let reference = push_all(&mut buf, m, &sizes);
        let total = reference[0].len();
        let stored = buf.stored_samples();
        prop_assert_eq!(stored, total.min((cap_s * FS as f64).round() as usize));

        let oldest = total - stored;
        let len = ((stored as f64 * len_frac) as usize).max(1);
        let start = oldest + ((stored - len) as f64 * start_frac) as usize;
        let a = buf.extract_samples(start as u64, len).unwrap();
        for c in 0..m {
            prop_assert_eq!(&a.channel(c).samples[..], &reference[c][start..start + len]);
        }
        let b = buf.extract_samples(start as u64, len).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn windows_outside_storage_are_refused(sizes in prop::collection::vec(50usize..400, 3..8)) {
        let mut buf = RingBuffer::new(2, FS, 2.0);
        let reference = push_all(&mut buf, 2, &sizes);
        let total = reference[0].len() as u64;
        let oldest = total - buf.stored_samples() as u64;
        if oldest > 0 {
            let r = buf.extract_samples(oldest - 1, 10);
            prop_assert!(matches!(r, Err(RingBufferError::WindowNotBuffered { .. })), "window before storage accepted");
        }
        let r = buf.extract_samples(total - 5, 10);
        prop_assert!(matches!(r, Err(RingBufferError::WindowNotBuffered { .. })), "window past the clock accepted");
    }
}

#[test]
fn twenty_seconds_into_twelve() {
    let fs = 16_000;
    let mut buf = RingBuffer::new(2, fs, 12.0);
    let mut reference = Vec::new();
    for k in 0..20 {
        let samples: Vec<f64> = (0..fs as usize)
            .map(|i| ((k * fs as usize + i) as f64 * 0.37).sin())
            .collect();
        reference.extend_from_slice(&samples);
        let w = Waveform::new(samples, fs);
        buf.push(&MultiChannelClip::new(vec![w.clone(), w.scaled(-1.0)], k as f64).unwrap())
            .unwrap();
    }
    assert_eq!(buf.stored_seconds(), 12.0);
    let tail = buf.extract(19.5, 0.5, 0.5).unwrap();
    assert_eq!(tail.channel(0).samples, reference[19 * fs as usize..]);
    let neg: Vec<f64> = reference[19 * fs as usize..].iter().map(|v| -v).collect();
    assert_eq!(tail.channel(1).samples, neg);
    assert!(matches!(
        buf.extract(19.5, 6.5, 6.5),
        Err(RingBufferError::WindowTooLong { .. })
    ));
}
