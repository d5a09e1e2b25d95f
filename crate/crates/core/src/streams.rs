//! Counter-based random streams.
//!
//! Every random number used by the optimizers is a pure function of a
//! [`StreamCoord`] and an element index, so perturbations can be regenerated
//! instead of stored and evaluated in any order (or in parallel) with
//! bit-identical results.
//!
//! The construction is fixed so that ports to other languages can reproduce
//! the same bits:
//!
//! ```text
//! mix64(z):   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!             z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!             z ^ (z >> 31)                          (wrapping arithmetic)
//!
//! key  = mix64(master_seed ^ 0x243f6a8885a308d3)
//! key  = mix64(key ^ mix64(step  + 0x9e3779b97f4a7c15))
//! key  = mix64(key ^ mix64(pass  + 0xbb67ae8584caa73b))
//! key  = mix64(key ^ mix64(layer + 0x3c6ef372fe94f82b))
//! uniform64(coord, i) = mix64(key ^ mix64(block_offset + i))
//! ```
//!
//! Gaussians use Box–Muller on word pairs `(2p, 2p + 1)`: with
//! `u1 = ((w0 >> 11) + 1) / 2^53` and `u2 = (w1 >> 11) / 2^53`, element `2p`
//! is `sqrt(-2 ln u1) cos(2 pi u2)` and element `2p + 1` the matching sine.
//! Element `j` of a stream therefore depends only on `block_offset + j`.

const SEED_SALT: u64 = 0x243f_6a88_85a3_08d3;
const STEP_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PASS_SALT: u64 = 0xbb67_ae85_84ca_a73b;
const LAYER_SALT: u64 = 0x3c6e_f372_fe94_f82b;

/// SplitMix64 finalizer. A bijection on `u64` with full avalanche.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coordinates of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamCoord {
    pub master_seed: u64,
    pub step: u64,
    pub pass: u64,
    pub layer: u64,
    pub block_offset: u64,
}

impl StreamCoord {
    pub fn new(master_seed: u64, step: u64, pass: u64, layer: u64) -> Self {
        Self {
            master_seed,
            step,
            pass,
            layer,
            block_offset: 0,
        }
    }

    pub fn with_offset(self, block_offset: u64) -> Self {
        Self {
            block_offset,
            ..self
        }
    }

    #[inline]
    fn key(&self) -> u64 {
        let mut key = mix64(self.master_seed ^ SEED_SALT);
        key = mix64(key ^ mix64(self.step.wrapping_add(STEP_SALT)));
        key = mix64(key ^ mix64(self.pass.wrapping_add(PASS_SALT)));
        mix64(key ^ mix64(self.layer.wrapping_add(LAYER_SALT)))
    }
}

#[inline]
fn word(key: u64, counter: u64) -> u64 {
    mix64(key ^ mix64(counter))
}

/// The `index`-th 64-bit word of the stream at `coord`.
pub fn uniform64(coord: StreamCoord, index: u64) -> u64 {
    word(coord.key(), coord.block_offset.wrapping_add(index))
}

/// Uniform double in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn unit_f64(w: u64) -> f64 {
    (w >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(key: u64, pair: u64) -> (f64, f64) {
    let w0 = word(key, pair.wrapping_mul(2));
    let w1 = word(key, pair.wrapping_mul(2).wrapping_add(1));
    let u1 = ((w0 >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = unit_f64(w1);
    let r = (-2.0 * u1.ln()).sqrt();
    let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
    (r * cos, r * sin)
}

/// Fills `out` with standard normals from the stream at `coord`.
pub fn fill_gaussian(coord: StreamCoord, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let key = coord.key();
    let start = coord.block_offset;
    let mut j = 0usize;
    // leading odd element takes the sine half of its pair
    if start % 2 == 1 {
        out[0] = box_muller(key, start / 2).1;
        j = 1;
    }
    while j + 1 < out.len() {
        let (z0, z1) = box_muller(key, (start + j as u64) / 2);
        out[j] = z0;
        out[j + 1] = z1;
        j += 2;
    }
    if j < out.len() {
        out[j] = box_muller(key, (start + j as u64) / 2).0;
    }
}

/// `len` standard normals from the stream at `coord`.
pub fn gaussian_block(coord: StreamCoord, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    fill_gaussian(coord, &mut out);
    out
}

/// Uniform integer in `[0, bound)` (Lemire's multiply-shift reduction).
pub fn uniform_below(coord: StreamCoord, index: u64, bound: u64) -> u64 {
    ((uniform64(coord, index) as u128 * bound as u128) >> 64) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord() -> StreamCoord {
        StreamCoord::new(42, 7, 3, 1)
    }

    #[test]
    fn same_coord_same_bits() {
        let a = gaussian_block(coord(), 257);
        let b = gaussian_block(coord(), 257);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(uniform64(coord(), 0), uniform64(coord(), 0));
    }

    #[test]
    fn random_access_matches_contiguous_block() {
        let full = gaussian_block(coord(), 64);
        for i in 0..64 {
            let single = gaussian_block(coord().with_offset(i as u64), 1);
            assert_eq!(single[0].to_bits(), full[i].to_bits(), "index {i}");
        }
        // odd-offset, odd-length windows
        let window = gaussian_block(coord().with_offset(5), 11);
        assert_eq!(&window[..], &full[5..16]);
    }

    #[test]
    fn moments_of_one_stream() {
        let n = 1_000_000;
        let z = gaussian_block(StreamCoord::new(1, 0, 1, 0), n);
        let mean = z.iter().sum::<f64>() / n as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn streams_differing_in_pass_are_uncorrelated() {
        let n = 1_000_000;
        let a = gaussian_block(StreamCoord::new(9, 4, 1, 0), n);
        let b = gaussian_block(StreamCoord::new(9, 4, 2, 0), n);
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn monobit_frequency_per_bit_position() {
        let n = 1_000_000u64;
        let c = StreamCoord::new(5, 0, 0, 0);
        let mut counts = [0u64; 64];
        for i in 0..n {
            let w = uniform64(c, i);
            for (b, count) in counts.iter_mut().enumerate() {
                *count += (w >> b) & 1;
            }
        }
        let sigma = (n as f64 * 0.25).sqrt();
        for (b, &count) in counts.iter().enumerate() {
            let dev = (count as f64 - n as f64 / 2.0).abs();
            assert!(dev < 4.0 * sigma, "bit {b}: {count}");
        }
    }

    #[test]
    fn seed_avalanche() {
        let trials = 10_000u64;
        let mut flipped = 0u64;
        for t in 0..trials {
            let seed = mix64(t);
            let bit = t % 64;
            let a = uniform64(StreamCoord::new(seed, 0, 0, 0), 0);
            let b = uniform64(StreamCoord::new(seed ^ (1 << bit), 0, 0, 0), 0);
            flipped += (a ^ b).count_ones() as u64;
        }
        let frac = flipped as f64 / (trials * 64) as f64;
        assert!(frac >= 0.45, "avalanche fraction {frac}");
    }

    #[test]
    fn uniform_below_stays_in_range() {
        let c = StreamCoord::new(3, 0, 0, 0);
        for i in 0..10_000 {
            assert!(uniform_below(c, i, 17) < 17);
        }
    }
}
