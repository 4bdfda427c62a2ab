//! BPSK modulation and the AWGN channel.
//!
//! Noise variance per real dimension is sigma^2 = 1 / (2 * 10^(SNR/10)),
//! so SNR is the symbol SNR in dB for unit-energy symbols. An infinite
//! `snr_db` is the noiseless sentinel: sigma = 0 and the channel is the
//! identity.

use rand::Rng;

use crate::rng::seeded_rng;

/// Channel condition plus the seed for its noise stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        Self { snr_db, seed }
    }

    /// Per-dimension noise variance.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db.is_infinite() && self.snr_db > 0.0 {
            return 0.0;
        }
        1.0 / (2.0 * 10f64.powf(self.snr_db / 10.0))
    }
}

/// Per-dimension noise variance for a given SNR in dB.
pub fn noise_variance(snr_db: f64) -> f64 {
    ChannelConfig::new(snr_db, 0).noise_variance()
}

/// Maps bit 0 -> +1.0 and bit 1 -> -1.0 (unit symbol energy).
pub fn bpsk_modulate(bits: &[u8]) -> Vec<f64> {
    bits.iter()
        .map(|&b| if b == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Channel LLRs for BPSK over AWGN: llr = 2 y / sigma^2, positive favoring
/// bit 0. In the noiseless limit the LLR saturates to +/- a large finite
/// value so downstream decoders stay in floating range.
pub fn bpsk_demodulate_llr(symbols: &[f64], snr_db: f64) -> Vec<f64> {
    let var = noise_variance(snr_db);
    if var == 0.0 {
        return symbols.iter().map(|&y| y.signum() * 1e6).collect();
    }
    symbols.iter().map(|&y| 2.0 * y / var).collect()
}

/// Hard decision on symbols or LLRs: negative means bit 1.
pub fn hard_decision(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v < 0.0)).collect()
}

/// Adds seeded white Gaussian noise with the config's variance.
pub fn awgn(symbols: &[f64], cfg: &ChannelConfig) -> Vec<f64> {
    let var = cfg.noise_variance();
    if var == 0.0 {
        return symbols.to_vec();
    }
    let sigma = var.sqrt();
    let mut rng = seeded_rng(cfg.seed);
    symbols
        .iter()
        .map(|&x| x + sigma * standard_normal(&mut rng))
        .collect()
}

/// Box-Muller standard normal draw; two uniforms per sample keeps the
/// stream layout independent of any library distribution internals.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Tail probability Q(x) of the standard normal, via erfc.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Theoretical uncoded BPSK bit error rate at the given symbol SNR.
pub fn bpsk_theoretical_ber(snr_db: f64) -> f64 {
    q_function((2.0 * 10f64.powf(snr_db / 10.0)).sqrt())
}

// Abramowitz-Stegun 7.1.26-style rational approximation, |error| < 1.2e-7.
fn erfc(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.5 * x.abs());
    let tau = t * (-x * x - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        tau
    } else {
        2.0 - tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_mapping() {
        assert_eq!(bpsk_modulate(&[0, 1]), vec![1.0, -1.0]);
    }

    #[test]
    fn llr_at_10db_noiseless_symbol() {
        // sigma^2 = 1/(2*10) = 0.05, llr = 2*1/0.05 = 40
        let llr = bpsk_demodulate_llr(&[1.0], 10.0);
        assert!((llr[0] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn hard_decision_recovers_noiseless_bits() {
        let bits = vec![0, 1, 1, 0, 1];
        let symbols = bpsk_modulate(&bits);
        let llr = bpsk_demodulate_llr(&symbols, 5.0);
        assert_eq!(hard_decision(&llr), bits);
    }

    #[test]
    fn awgn_variance_at_0db() {
        let cfg = ChannelConfig::new(0.0, 99);
        assert!((cfg.noise_variance() - 0.5).abs() < 1e-12);
        let zeros = vec![0.0; 1_000_000];
        let noisy = awgn(&zeros, &cfg);
        let measured: f64 = noisy.iter().map(|v| v * v).sum::<f64>() / noisy.len() as f64;
        assert!(
            (measured - 0.5).abs() / 0.5 < 0.01,
            "measured variance {measured}"
        );
    }

    #[test]
    fn awgn_seed_determinism_and_noiseless_identity() {
        let cfg = ChannelConfig::new(3.0, 5);
        let x = vec![1.0, -1.0, 1.0];
        assert_eq!(awgn(&x, &cfg), awgn(&x, &cfg));

        let clean = ChannelConfig::new(f64::INFINITY, 5);
        assert_eq!(awgn(&x, &clean), x);
    }

    #[test]
    fn uncoded_ber_at_0db_matches_q_sqrt2() {
        let n = 100_000;
        let mut rng = seeded_rng(123);
        let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
        let noisy = awgn(&bpsk_modulate(&bits), &ChannelConfig::new(0.0, 321));
        let errors = hard_decision(&noisy)
            .iter()
            .zip(&bits)
            .filter(|(a, b)| a != b)
            .count();
        let ber = errors as f64 / n as f64;
        let expected = bpsk_theoretical_ber(0.0);
        assert!((expected - 0.0786).abs() < 5e-4);
        assert!(
            (ber - expected).abs() / expected < 0.10,
            "ber {ber} vs {expected}"
        );
    }
}
