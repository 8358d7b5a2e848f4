//! Device identity: PUF cell model with thermal-noise flips, 15-cycle
//! temporal majority voting, POR-triggered 8-bit ID generation, and the
//! ID-gated register-file update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downlink::{Packet, Payload, StimMode};
use crate::exec::{map_indexed, Execution};
use crate::rng::SimRng;

/// Majority-voting depth for ID generation.
pub const TMV_VOTES: u32 = 15;
/// Default per-evaluation noise scale relative to unit mismatch variance.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum IdentityError {
    #[error("majority voting needs an odd vote count, got {0}")]
    EvenVotes(u32),
    #[error("ID generation requires a prior POR")]
    PorNotFired,
}

/// One PUF cell: a fixed device mismatch plus per-evaluation thermal noise.
#[derive(Clone, Copy, Debug)]
pub struct PufCell {
    /// Device-specific offset, reproducible from the device seed.
    pub mismatch: f64,
    /// Per-evaluation noise scale.
    pub noise_sigma: f64,
}

/// Single raw evaluation: the sign of mismatch plus a fresh noise draw.
pub fn puf_cell_eval(cell: &PufCell, rng: &mut SimRng) -> bool {
    cell.mismatch + cell.noise_sigma * rng.gaussian() >= 0.0
}

/// Majority vote over `votes` independent evaluations of one cell.
pub fn tmv(cell: &PufCell, votes: u32, rng: &mut SimRng) -> Result<bool, IdentityError> {
    if votes % 2 == 0 {
        return Err(IdentityError::EvenVotes(votes));
    }
    let mut ones = 0u32;
    for _ in 0..votes {
        ones += puf_cell_eval(cell, rng) as u32;
    }
    Ok(ones * 2 > votes)
}

/// 8-bit device address generated from PUF cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceId {
    pub bits: u8,
    /// Set once the bits have been through majority voting.
    pub stable: bool,
}

impl DeviceId {
    pub fn to_bit_string(self) -> String {
        format!("{:08b}", self.bits)
    }
}

/// The eight per-device cell mismatches, reproducible from the seed.
pub fn device_cells(device_seed: u64, noise_sigma: f64) -> [PufCell; 8] {
    let mut rng = SimRng::derive(device_seed, 0x505546); // "PUF"
    std::array::from_fn(|_| PufCell {
        mismatch: rng.gaussian(),
        noise_sigma,
    })
}

/// Generate the 8-bit ID, MSB first, with 15-cycle TMV per bit. Triggered
/// by POR; calling without one is a protocol error.
pub fn generate_id(
    device_seed: u64,
    por_fired: bool,
    noise_sigma: f64,
) -> Result<DeviceId, IdentityError> {
    if !por_fired {
        return Err(IdentityError::PorNotFired);
    }
    let cells = device_cells(device_seed, noise_sigma);
    let mut noise = SimRng::derive(device_seed, 0x544d56); // "TMV"
    let mut bits = 0u8;
    for cell in &cells {
        bits = bits << 1 | tmv(cell, TMV_VOTES, &mut noise)? as u8;
    }
    Ok(DeviceId { bits, stable: true })
}

/// Stimulation settings store, mirroring the payload layout. Changes only
/// on an accepted (ID-matched) packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterFile {
    pub amp_code: u8,
    pub pw_code: u8,
    pub delay_code: u8,
    pub mode: StimMode,
    pub ref_trim: u8,
}

impl Default for RegisterFile {
    fn default() -> Self {
        Self {
            amp_code: 0,
            pw_code: 0,
            delay_code: 0,
            mode: StimMode::Monophasic,
            ref_trim: 0,
        }
    }
}

impl RegisterFile {
    pub fn from_payload(payload: &Payload) -> Self {
        Self {
            amp_code: payload.amp_code,
            pw_code: payload.pw_code,
            delay_code: payload.delay_code,
            mode: payload.mode,
            ref_trim: payload.ref_trim,
        }
    }
}

/// ID-gated register update: the payload is accepted only when the packet
/// ID matches the on-chip ID. A mismatch is a normal outcome, not an error.
pub fn update_registers(rf: &RegisterFile, packet: &Packet, id: &DeviceId) -> (RegisterFile, bool) {
    if packet.device_id == id.bits {
        (RegisterFile::from_payload(&packet.payload), true)
    } else {
        (*rf, false)
    }
}

/// Fraction of ones over a fresh ensemble of `cells` single evaluations.
/// Across devices the PUF output is unbiased.
pub fn ensemble_ones_fraction(cells: u64, noise_sigma: f64, seed: u64, exec: Execution) -> f64 {
    let ones: Vec<u8> = map_indexed(exec, cells as usize, |i| {
        let mut rng = SimRng::derive(seed, i as u64);
        let cell = PufCell {
            mismatch: rng.gaussian(),
            noise_sigma,
        };
        puf_cell_eval(&cell, &mut rng) as u8
    });
    ones.iter().map(|&b| b as u64).sum::<u64>() as f64 / cells as f64
}

/// Monte Carlo post-TMV error rate of one cell: the fraction of majority
/// outcomes that disagree with the cell's mismatch sign.
pub fn tmv_error_monte_carlo(cell: &PufCell, trials: u64, seed: u64, exec: Execution) -> f64 {
    let nominal = cell.mismatch >= 0.0;
    let errors: Vec<u8> = map_indexed(exec, trials as usize, |i| {
        let mut rng = SimRng::derive(seed, i as u64);
        (tmv(cell, TMV_VOTES, &mut rng).unwrap() != nominal) as u8
    });
    errors.iter().map(|&e| e as u64).sum::<u64>() as f64 / trials as f64
}

/// Mean pairwise Hamming distance over a set of 8-bit IDs.
pub fn mean_pairwise_hamming(ids: &[u8]) -> f64 {
    let mut total = 0u64;
    let mut pairs = 0u64;
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            total += (ids[i] ^ ids[j]).count_ones() as u64;
            pairs += 1;
        }
    }
    total as f64 / pairs.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Post-TMV error oracle: probability that at least (votes+1)/2 of
    /// `votes` evaluations flip, each with probability `p`.
    fn binomial_tmv_error(p: f64, votes: u32) -> f64 {
        let majority = votes / 2 + 1;
        (majority..=votes)
            .map(|k| binomial(votes, k) * p.powi(k as i32) * (1.0 - p).powi((votes - k) as i32))
            .sum()
    }

    fn binomial(n: u32, k: u32) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
    }

    // Standard normal quantiles z with Phi(z) = 1 - p, so a cell with
    // mismatch z and unit noise flips with probability p per evaluation.
    const Z_P20: f64 = 0.841621233572914;
    const Z_P10: f64 = 1.2815515655446004;
    const Z_P05: f64 = 1.6448536269514722;

    #[test]
    fn strong_cell_never_flips() {
        let cell = PufCell {
            mismatch: 2.0,
            noise_sigma: 0.05,
        };
        let mut rng = SimRng::new(1);
        assert!((0..10_000).all(|_| puf_cell_eval(&cell, &mut rng)));
    }

    #[test]
    fn ensemble_of_5000_cells_is_unbiased() {
        let fraction = ensemble_ones_fraction(5000, DEFAULT_NOISE_SIGMA, 99, Execution::Sequential);
        assert!((fraction - 0.5).abs() <= 0.02, "fraction {fraction}");
    }

    #[test]
    fn zero_mismatch_cell_flips_half_the_time() {
        let cell = PufCell {
            mismatch: 0.0,
            noise_sigma: 1.0,
        };
        let mut rng = SimRng::new(5);
        let ones: u32 = (0..100_000).map(|_| puf_cell_eval(&cell, &mut rng) as u32).sum();
        let fraction = ones as f64 / 100_000.0;
        assert!((fraction - 0.5).abs() < 0.01, "fraction {fraction}");
    }

    #[test]
    fn tmv_rejects_even_votes() {
        let cell = PufCell {
            mismatch: 1.0,
            noise_sigma: 0.1,
        };
        assert_eq!(
            tmv(&cell, 14, &mut SimRng::new(1)).unwrap_err(),
            IdentityError::EvenVotes(14)
        );
    }

    #[test]
    fn tmv_error_zero_for_noiseless_cell() {
        let cell = PufCell {
            mismatch: 1.0,
            noise_sigma: 0.0,
        };
        assert_eq!(tmv_error_monte_carlo(&cell, 1000, 3, Execution::Sequential), 0.0);
    }

    #[test]
    fn tmv_error_matches_binomial_oracle() {
        // 3-sigma Monte Carlo agreement for flip probabilities 0.05/0.1/0.2.
        let trials = 400_000u64;
        for (z, p) in [(Z_P05, 0.05), (Z_P10, 0.10), (Z_P20, 0.20)] {
            let cell = PufCell {
                mismatch: z,
                noise_sigma: 1.0,
            };
            let expected = binomial_tmv_error(p, TMV_VOTES);
            let measured = tmv_error_monte_carlo(&cell, trials, 1234, Execution::default());
            let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
            assert!(
                (measured - expected).abs() <= 3.0 * sigma,
                "p={p}: measured {measured}, expected {expected}, 3sigma {}",
                3.0 * sigma
            );
        }
        // Spot value for the p = 0.2 oracle itself.
        assert_relative_eq!(binomial_tmv_error(0.2, 15), 4.2399e-3, epsilon = 1e-6);
    }

    #[test]
    fn tmv_cannot_fix_metastable_cell() {
        let cell = PufCell {
            mismatch: 0.0,
            noise_sigma: 1.0,
        };
        let error = tmv_error_monte_carlo(&cell, 100_000, 7, Execution::Sequential);
        assert!((error - 0.5).abs() < 0.01, "error {error}");
    }

    #[test]
    fn id_requires_por_and_is_deterministic() {
        assert_eq!(
            generate_id(42, false, DEFAULT_NOISE_SIGMA).unwrap_err(),
            IdentityError::PorNotFired
        );
        let a = generate_id(42, true, DEFAULT_NOISE_SIGMA).unwrap();
        let b = generate_id(42, true, DEFAULT_NOISE_SIGMA).unwrap();
        assert_eq!(a, b);
        assert!(a.stable);
    }

    #[test]
    fn random_seeds_give_fair_independent_bits() {
        let ids: Vec<u8> = (0..1000)
            .map(|seed| generate_id(seed, true, DEFAULT_NOISE_SIGMA).unwrap().bits)
            .collect();
        let mean = mean_pairwise_hamming(&ids);
        assert!((mean - 4.0).abs() <= 0.2, "mean pairwise Hamming {mean}");
    }

    #[test]
    fn register_update_gated_by_id() {
        let id = DeviceId {
            bits: 0b11010111,
            stable: true,
        };
        let rf = RegisterFile::default();
        let payload = Payload {
            amp_code: 8,
            pw_code: 15,
            delay_code: 0,
            mode: StimMode::Biphasic,
            ref_trim: 16,
        };
        let matching = Packet {
            device_id: 0b11010111,
            payload,
        };
        let (updated, accepted) = update_registers(&rf, &matching, &id);
        assert!(accepted);
        assert_eq!(updated.amp_code, 8);

        let other = Packet {
            device_id: 0b01111000,
            payload,
        };
        let (unchanged, accepted) = update_registers(&updated, &other, &id);
        assert!(!accepted);
        assert_eq!(unchanged, updated);
    }

    #[test]
    fn single_bit_id_corruption_rejected() {
        let id = DeviceId {
            bits: 0b11010111,
            stable: true,
        };
        let payload = Payload {
            amp_code: 1,
            pw_code: 0,
            delay_code: 0,
            mode: StimMode::Monophasic,
            ref_trim: 0,
        };
        let rf = RegisterFile::default();
        for flip in 0..8 {
            let corrupted = Packet {
                device_id: id.bits ^ (1 << flip),
                payload,
            };
            let (out, accepted) = update_registers(&rf, &corrupted, &id);
            assert!(!accepted);
            assert_eq!(out, rf);
        }
    }
}
