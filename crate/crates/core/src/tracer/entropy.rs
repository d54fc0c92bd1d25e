//! Shannon entropy of byte buffers, in bits per byte.

use super::TraceEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("entropy of an empty buffer is undefined")]
pub struct EmptyInput;

/// `H = Σ p_k · log2(1/p_k)` over the byte-value histogram of `bytes`.
pub fn shannon_entropy(bytes: &[u8]) -> Result<f64, EmptyInput> {
    if bytes.is_empty() {
        return Err(EmptyInput);
    }
    Ok(histogram_entropy(&histogram(bytes)))
}

pub fn histogram(bytes: &[u8]) -> [u32; 256] {
    let mut h = [0u32; 256];
    for &b in bytes {
        h[b as usize] += 1;
    }
    h
}

/// Entropy of a byte-value histogram. Empty bins contribute nothing; an
/// all-empty histogram has entropy 0.
pub fn histogram_entropy(hist: &[u32; 256]) -> f64 {
    let n: u64 = hist.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            (c / n) * (n / c).log2()
        })
        .sum()
}

/// Sum of absolute entropy changes over every write in `events`.
pub fn score_block_entropy(events: &[TraceEvent]) -> f64 {
    events
        .iter()
        .filter_map(|e| e.write.as_deref())
        .map(|w| w.entropy_delta().abs())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Opcode;
    use crate::tracer::WriteRecord;

    fn store_event(old: &[u8], new: &[u8]) -> TraceEvent {
        TraceEvent {
            addr: 0,
            opcode: Opcode::Store,
            is_head: true,
            is_tail: false,
            write: Some(Box::new(WriteRecord::whole_object(0, old, new))),
        }
    }

    #[test]
    fn uniform_bytes_have_eight_bits() {
        let all: Vec<u8> = (0..=255).collect();
        assert_eq!(shannon_entropy(&all).unwrap(), 8.0);
    }

    #[test]
    fn degenerate_and_binary_buffers() {
        assert_eq!(shannon_entropy(&[0u8; 64]).unwrap(), 0.0);
        assert_eq!(shannon_entropy(&[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(shannon_entropy(&[]), Err(EmptyInput));
    }

    #[test]
    fn block_scores() {
        assert_eq!(score_block_entropy(&[]), 0.0);
        let zeros = vec![0u8; 256];
        let perm: Vec<u8> = (0..=255u8).rev().collect();
        assert_eq!(score_block_entropy(&[store_event(&zeros, &perm)]), 8.0);
        // Permuting bytes in place leaves the histogram, and so the entropy, unchanged.
        let mut shuffled = perm.clone();
        shuffled.swap(3, 200);
        shuffled.swap(0, 17);
        assert_eq!(score_block_entropy(&[store_event(&perm, &shuffled)]), 0.0);
        // Increases and decreases both count.
        let e = [store_event(&zeros, &perm), store_event(&perm, &zeros)];
        assert_eq!(score_block_entropy(&e), 16.0);
    }
}
