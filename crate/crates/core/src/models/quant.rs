//! Symmetric blockwise absmax quantization to signed 4-bit codes.
//!
//! Each block of `block_size` consecutive weights (row-major) gets
//! `scale = absmax / 7`; codes are `round(w / scale)` (half away from zero)
//! clamped to `[-7, 7]`. In memory the scales are f64. The serialized form
//! packs two codes per byte and stores scales as f32, which keeps the blob
//! at 5 bits per weight for 32-weight blocks.

use super::{ModelError, Result};
use crate::autodiff::Tensor;
use crate::par;

pub const DEFAULT_BLOCK_SIZE: usize = 32;
pub const QMAX: i8 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLinear {
    pub shape: Vec<usize>,
    pub block_size: usize,
    pub codes: Vec<i8>,
    pub scales: Vec<f64>,
}

fn quantize_block(block: &[f64]) -> (f64, Vec<i8>) {
    let absmax = block.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if absmax == 0.0 {
        return (0.0, vec![0; block.len()]);
    }
    let scale = absmax / QMAX as f64;
    let codes = block
        .iter()
        .map(|w| (w / scale).round().clamp(-(QMAX as f64), QMAX as f64) as i8)
        .collect();
    (scale, codes)
}

pub fn quantize_weights(w: &Tensor, block_size: usize) -> Result<QuantizedLinear> {
    if block_size == 0 {
        return Err(ModelError::Shape("block size must be positive".into()));
    }
    if !w.all_finite() {
        return Err(ModelError::Fit("cannot quantize non-finite weights".into()));
    }
    let data = w.data();
    let blocks = par::map_range(data.len().div_ceil(block_size), |b| {
        quantize_block(&data[b * block_size..((b + 1) * block_size).min(data.len())])
    });
    let mut codes = Vec::with_capacity(data.len());
    let mut scales = Vec::with_capacity(blocks.len());
    for (s, c) in blocks {
        scales.push(s);
        codes.extend(c);
    }
    Ok(QuantizedLinear {
        shape: w.shape().to_vec(),
        block_size,
        codes,
        scales,
    })
}

impl QuantizedLinear {
    pub fn numel(&self) -> usize {
        self.codes.len()
    }

    pub fn scale_for(&self, index: usize) -> f64 {
        self.scales[index / self.block_size]
    }

    pub fn dequantize(&self) -> Tensor {
        let data = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * self.scale_for(i))
            .collect();
        Tensor::new(&self.shape, data).expect("codes match shape")
    }

    /// Two codes per byte, low nibble first, two's complement.
    pub fn packed_codes(&self) -> Vec<u8> {
        self.codes
            .chunks(2)
            .map(|pair| {
                let lo = (pair[0] as u8) & 0x0f;
                let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0f);
                lo | (hi << 4)
            })
            .collect()
    }

    /// Packed codes followed by little-endian f32 scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.packed_codes();
        for s in &self.scales {
            out.extend_from_slice(&(*s as f32).to_le_bytes());
        }
        out
    }

    pub fn serialized_len(numel: usize, block_size: usize) -> usize {
        numel.div_ceil(2) + 4 * numel.div_ceil(block_size)
    }

    pub fn from_bytes(shape: &[usize], block_size: usize, bytes: &[u8]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if block_size == 0 || bytes.len() != Self::serialized_len(numel, block_size) {
            return Err(ModelError::Format(format!(
                "quantized blob has {} bytes, expected {}",
                bytes.len(),
                Self::serialized_len(numel, block_size.max(1))
            )));
        }
        let split = numel.div_ceil(2);
        let nibble = |n: u8| ((n << 4) as i8) >> 4;
        let mut codes = Vec::with_capacity(numel);
        for &b in &bytes[..split] {
            codes.push(nibble(b & 0x0f));
            codes.push(nibble(b >> 4));
        }
        codes.truncate(numel);
        if codes.iter().any(|c| !(-QMAX..=QMAX).contains(c)) {
            return Err(ModelError::Format("quantized code outside [-7, 7]".into()));
        }
        let scales = bytes[split..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            block_size,
            codes,
            scales,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let w = Tensor::new(&[4], vec![0.7, -0.35, 0.0, 0.1]).unwrap();
        let q = quantize_weights(&w, 32).unwrap();
        assert!((q.scales[0] - 0.1).abs() < 1e-15);
        assert_eq!(q.codes, vec![7, -4, 0, 1]);
        let d = q.dequantize();
        for (a, b) in d.data().iter().zip([0.7, -0.4, 0.0, 0.1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_block_is_exact() {
        let w = Tensor::zeros(&[2, 40]);
        let q = quantize_weights(&w, 32).unwrap();
        assert_eq!(q.scales, vec![0.0, 0.0, 0.0]);
        assert!(q.dequantize().bit_eq(&w));
    }

    #[test]
    fn pack_roundtrip_and_size() {
        let w = Tensor::new(&[3, 33], (0..99).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let q = quantize_weights(&w, 32).unwrap();
        let bytes = q.to_bytes();
        assert_eq!(bytes.len(), QuantizedLinear::serialized_len(99, 32));
        let back = QuantizedLinear::from_bytes(&[3, 33], 32, &bytes).unwrap();
        assert_eq!(back.codes, q.codes);
        for (a, b) in back.scales.iter().zip(&q.scales) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(QuantizedLinear::from_bytes(&[3, 33], 32, &bytes[1..]).is_err());
        // 512 weights: 256 code bytes + 16 f32 scales = 320 bytes vs 1024 at 16 bits.
        assert_eq!(QuantizedLinear::serialized_len(512, 32), 320);
    }

    #[test]
    fn rejects_non_finite() {
        let w = Tensor::new(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(quantize_weights(&w, 32).is_err());
    }
}
