//! Adaptive binary range coder (15-bit probabilities, carry-propagating
//! encoder, big-endian byte output).
//!
//! The decoder reads exactly as many bytes as the encoder wrote, which lets
//! the plane decoder check that a payload was consumed completely.

use crate::error::{Error, Result};

const PROB_BITS: u32 = 15;
const PROB_ONE: u16 = 1 << PROB_BITS;
const ADAPT_SHIFT: u32 = 5;
const TOP: u32 = 1 << 24;

/// Probability that the next bit is 0, scaled by 2^15.
#[derive(Clone, Copy, Debug)]
pub struct Prob(u16);

impl Default for Prob {
    fn default() -> Self {
        Prob(PROB_ONE / 2)
    }
}

impl Prob {
    fn update(&mut self, bit: bool) {
        if bit {
            self.0 -= self.0 >> ADAPT_SHIFT;
        } else {
            self.0 += (PROB_ONE - self.0) >> ADAPT_SHIFT;
        }
    }
}

pub struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Encoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_bit(&mut self, prob: &mut Prob, bit: bool) {
        let bound = (self.range >> PROB_BITS) * u32::from(prob.0);
        if bit {
            self.low += u64::from(bound);
            self.range -= bound;
        } else {
            self.range = bound;
        }
        prob.update(bit);
        self.normalize();
    }

    /// Equiprobable bits, most significant first.
    pub fn encode_direct(&mut self, value: u32, bits: u32) {
        for i in (0..bits).rev() {
            self.range >>= 1;
            if (value >> i) & 1 == 1 {
                self.low += u64::from(self.range);
            }
            self.normalize();
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Decoder {
            data,
            pos: 0,
            range: u32::MAX,
            code: 0,
        };
        let first = d.next_byte()?;
        if first != 0 {
            return Err(Error::bitstream(
                0,
                "range coder must start with a zero byte",
            ));
        }
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::bitstream(self.pos, "payload truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn decode_bit(&mut self, prob: &mut Prob) -> Result<bool> {
        let bound = (self.range >> PROB_BITS) * u32::from(prob.0);
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        prob.update(bit);
        self.normalize()?;
        Ok(bit)
    }

    pub fn decode_direct(&mut self, bits: u32) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..bits {
            self.range >>= 1;
            let bit = self.code >= self.range;
            if bit {
                self.code -= self.range;
            }
            value = (value << 1) | u32::from(bit);
            self.normalize()?;
        }
        Ok(value)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_mixed_symbols_consumes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let symbols: Vec<(bool, u32)> = (0..5000)
            .map(|_| (rng.random_bool(0.1), rng.random_range(0..1 << 12)))
            .collect();
        let mut enc = Encoder::new();
        let mut p = [Prob::default(); 2];
        for &(b, v) in &symbols {
            enc.encode_bit(&mut p[0], b);
            enc.encode_direct(v, 12);
            enc.encode_bit(&mut p[1], !b);
        }
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes).unwrap();
        let mut p = [Prob::default(); 2];
        for &(b, v) in &symbols {
            assert_eq!(dec.decode_bit(&mut p[0]).unwrap(), b);
            assert_eq!(dec.decode_direct(12).unwrap(), v);
            assert_eq!(dec.decode_bit(&mut p[1]).unwrap(), !b);
        }
        assert_eq!(dec.position(), bytes.len());
    }

    #[test]
    fn skewed_bits_compress() {
        let mut enc = Encoder::new();
        let mut p = Prob::default();
        for _ in 0..10_000 {
            enc.encode_bit(&mut p, false);
        }
        assert!(enc.finish().len() < 40);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut enc = Encoder::new();
        enc.encode_direct(0xABCD, 16);
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            dec.decode_direct(16),
            Err(Error::Bitstream { .. })
        ));
    }
}
