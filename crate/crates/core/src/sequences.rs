//! Pilot books and PN spreading code books.

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dotc, C64};
use crate::rng::stream_rng;

pub const MIN_REGISTER_LEN: u32 = 1;
pub const MAX_REGISTER_LEN: u32 = 20;

/// Primitive polynomials over GF(2), one per register length, written as
/// the exponents of their non-leading terms (the constant term is implied).
///
/// | n  | polynomial                       |
/// |----|----------------------------------|
/// | 1  | x + 1                            |
/// | 2  | x^2 + x + 1                      |
/// | 3  | x^3 + x + 1                      |
/// | 4  | x^4 + x + 1                      |
/// | 5  | x^5 + x^2 + 1                    |
/// | 6  | x^6 + x + 1                      |
/// | 7  | x^7 + x + 1                      |
/// | 8  | x^8 + x^4 + x^3 + x^2 + 1        |
/// | 9  | x^9 + x^4 + 1                    |
/// | 10 | x^10 + x^3 + 1                   |
/// | 11 | x^11 + x^2 + 1                   |
/// | 12 | x^12 + x^6 + x^4 + x + 1         |
/// | 13 | x^13 + x^4 + x^3 + x + 1         |
/// | 14 | x^14 + x^10 + x^6 + x + 1        |
/// | 15 | x^15 + x + 1                     |
/// | 16 | x^16 + x^12 + x^3 + x + 1        |
/// | 17 | x^17 + x^3 + 1                   |
/// | 18 | x^18 + x^7 + 1                   |
/// | 19 | x^19 + x^5 + x^2 + x + 1         |
/// | 20 | x^20 + x^3 + 1                   |
pub const PRIMITIVE_POLYNOMIALS: [&[u32]; 20] = [
    &[],
    &[1],
    &[1],
    &[1],
    &[2],
    &[1],
    &[1],
    &[4, 3, 2],
    &[4],
    &[3],
    &[2],
    &[6, 4, 1],
    &[4, 3, 1],
    &[10, 6, 1],
    &[1],
    &[12, 3, 1],
    &[3],
    &[7],
    &[5, 2, 1],
    &[3],
];

/// Maximal-length sequence of period `2^n - 1`, chips mapped `0 -> +1`,
/// `1 -> -1`.
///
/// The register starts from the all-ones state and follows the recurrence
/// `s[k+n] = s[k] + sum_e s[k+e]` over GF(2), `e` ranging over the
/// polynomial's middle exponents.
pub fn gen_mseq(n: u32) -> Result<Vec<i8>> {
    if !(MIN_REGISTER_LEN..=MAX_REGISTER_LEN).contains(&n) {
        return Err(Error::Domain(format!(
            "register length {n} outside [{MIN_REGISTER_LEN}, {MAX_REGISTER_LEN}]"
        )));
    }
    let len = (1usize << n) - 1;
    let n = n as usize;
    let taps = PRIMITIVE_POLYNOMIALS[n - 1];
    let mut bits = vec![1u8; n];
    bits.reserve(len.saturating_sub(n));
    while bits.len() < len {
        let k = bits.len() - n;
        let mut next = bits[k];
        for &e in taps {
            next ^= bits[k + e as usize];
        }
        bits.push(next);
    }
    bits.truncate(len);
    Ok(bits.into_iter().map(|b| if b == 0 { 1 } else { -1 }).collect())
}

/// Un-normalized periodic correlation `sum_j x[j] y[(j + lag) mod N]`.
pub fn periodic_correlation(x: &[i8], y: &[i8], lag: usize) -> i64 {
    let n = x.len();
    (0..n).map(|j| x[j] as i64 * y[(j + lag) % n] as i64).sum()
}

/// Device spreading codes: cyclic shifts of one base m-sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadingBook {
    pub base: Vec<i8>,
    /// Cyclic shift assigned to each device.
    pub shifts: Vec<usize>,
    /// `chips[d][j] = base[(j + shifts[d]) mod N]`.
    pub chips: Vec<Vec<i8>>,
}

impl SpreadingBook {
    /// Builds a book from an explicit shift assignment; repeated shifts are
    /// allowed.
    pub fn with_shifts(base: Vec<i8>, shifts: Vec<usize>) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::Domain("empty base sequence".into()));
        }
        let n = base.len();
        if let Some(&s) = shifts.iter().find(|&&s| s >= n) {
            return Err(Error::Domain(format!("shift {s} out of range for period {n}")));
        }
        let chips = shifts
            .iter()
            .map(|&s| (0..n).map(|j| base[(j + s) % n]).collect())
            .collect();
        Ok(SpreadingBook { base, shifts, chips })
    }

    /// No spreading: every device sends a single `+1` chip.
    pub fn unspread(num_devices: usize) -> Self {
        SpreadingBook {
            base: vec![1],
            shifts: vec![0; num_devices],
            chips: vec![vec![1]; num_devices],
        }
    }

    pub fn spreading_gain(&self) -> usize {
        self.base.len()
    }

    pub fn num_devices(&self) -> usize {
        self.chips.len()
    }

    pub fn chip(&self, device: usize, prb: usize) -> f64 {
        self.chips[device][prb] as f64
    }

    /// `(1/N) |sum_j c_d[j] c_k[j]|`.
    pub fn normalized_cross_correlation(&self, d: usize, k: usize) -> f64 {
        periodic_correlation(&self.chips[d], &self.chips[k], 0).abs() as f64 / self.spreading_gain() as f64
    }

    /// One row per device, chips as `+1`/`-1` separated by spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.chips {
            let line: Vec<&str> = row.iter().map(|&c| if c > 0 { "+1" } else { "-1" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Assigns cyclic shift `d` of the order-`n` m-sequence to device `d`.
pub fn build_spreading_book(n: u32, num_devices: usize) -> Result<SpreadingBook> {
    let base = gen_mseq(n)?;
    if num_devices > base.len() {
        return Err(Error::Capacity { requested: num_devices, available: base.len() });
    }
    SpreadingBook::with_shifts(base, (0..num_devices).collect())
}

/// Register length `n` for a spreading gain `N = 2^n - 1`.
pub fn register_len(spreading_gain: usize) -> Result<u32> {
    if !crate::config::is_spreading_gain(spreading_gain) {
        return Err(Error::Domain(format!("{spreading_gain} is not of the form 2^n - 1")));
    }
    Ok((spreading_gain + 1).trailing_zeros())
}

/// Code book for a spreading gain, falling back to the unspread book when
/// `N = 1`.
pub fn spreading_book_for_gain(spreading_gain: usize, num_devices: usize) -> Result<SpreadingBook> {
    if spreading_gain == 1 {
        return Ok(SpreadingBook::unspread(num_devices));
    }
    build_spreading_book(register_len(spreading_gain)?, num_devices)
}

/// Orthonormal pilot basis (DFT columns) shared by users and devices with
/// reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotBook {
    pub pilot_len: usize,
    /// Basis index of each user's pilot.
    pub user_pilot: Vec<usize>,
    /// Basis index of each device's pilot.
    pub device_pilot: Vec<usize>,
    basis: Vec<Vec<C64>>,
}

impl PilotBook {
    pub fn from_assignment(pilot_len: usize, user_pilot: Vec<usize>, device_pilot: Vec<usize>) -> Result<Self> {
        if pilot_len == 0 {
            return Err(Error::Domain("pilot length must be at least 1".into()));
        }
        if user_pilot.iter().chain(&device_pilot).any(|&p| p >= pilot_len) {
            return Err(Error::Domain("pilot index out of range".into()));
        }
        let scale = 1.0 / (pilot_len as f64).sqrt();
        let basis = (0..pilot_len)
            .map(|j| {
                (0..pilot_len)
                    .map(|t| {
                        let angle = -2.0 * std::f64::consts::PI * (j * t % pilot_len) as f64 / pilot_len as f64;
                        C64::from_polar(scale, angle)
                    })
                    .collect()
            })
            .collect();
        Ok(PilotBook { pilot_len, user_pilot, device_pilot, basis })
    }

    pub fn num_users(&self) -> usize {
        self.user_pilot.len()
    }

    pub fn num_devices(&self) -> usize {
        self.device_pilot.len()
    }

    /// User pilot `phi_u`.
    pub fn phi(&self, user: usize) -> &[C64] {
        &self.basis[self.user_pilot[user]]
    }

    /// Device pilot `pi_d`.
    pub fn pi(&self, device: usize) -> &[C64] {
        &self.basis[self.device_pilot[device]]
    }

    /// `|phi_k^H phi_u|`, exact from the assignment.
    pub fn gram_uu(&self, k: usize, u: usize) -> f64 {
        (self.user_pilot[k] == self.user_pilot[u]) as u8 as f64
    }

    /// `|pi_d^H phi_u|`.
    pub fn gram_ud(&self, u: usize, d: usize) -> f64 {
        (self.user_pilot[u] == self.device_pilot[d]) as u8 as f64
    }

    /// `|pi_k^H pi_d|`.
    pub fn gram_dd(&self, k: usize, d: usize) -> f64 {
        (self.device_pilot[k] == self.device_pilot[d]) as u8 as f64
    }

    /// Number of terminals sharing each basis vector.
    pub fn reuse_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.pilot_len];
        for &p in self.user_pilot.iter().chain(&self.device_pilot) {
            counts[p] += 1;
        }
        counts
    }

    /// Numerically evaluated inner product between two basis vectors.
    pub fn basis_inner(&self, i: usize, j: usize) -> C64 {
        dotc(&self.basis[i], &self.basis[j])
    }

    /// One line per terminal (users first), entries as `re,im`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let rows = self.user_pilot.iter().map(|&p| ('u', p)).chain(self.device_pilot.iter().map(|&p| ('d', p)));
        for (kind, p) in rows {
            let entries: Vec<String> = self.basis[p].iter().map(|c| format!("{:.17e},{:.17e}", c.re, c.im)).collect();
            let _ = writeln!(out, "{kind} {}", entries.join(" "));
        }
        out
    }
}

/// Orthonormal pilots assigned round-robin over a seeded random permutation
/// of all `Ku + Kd` terminals (users first in the terminal index).
///
/// The permutation sorts per-terminal random keys drawn from separate user
/// and device streams, so growing one population keeps the relative order
/// of the terminals already present.
pub fn build_pilot_book(pilot_len: usize, num_users: usize, num_devices: usize, seed: u64) -> Result<PilotBook> {
    if pilot_len == 0 {
        return Err(Error::Domain("pilot length must be at least 1".into()));
    }
    let mut user_keys = stream_rng(seed, 0x9171);
    let mut device_keys = stream_rng(seed, 0x9172);
    let keys: Vec<u64> = (0..num_users)
        .map(|_| user_keys.next_u64())
        .chain((0..num_devices).map(|_| device_keys.next_u64()))
        .collect();
    let mut order: Vec<usize> = (0..num_users + num_devices).collect();
    order.sort_by_key(|&t| (keys[t], t));
    let mut index = vec![0; order.len()];
    for (slot, &terminal) in order.iter().enumerate() {
        index[terminal] = slot % pilot_len;
    }
    let device_pilot = index.split_off(num_users);
    PilotBook::from_assignment(pilot_len, index, device_pilot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_three_sequence() {
        let seq = gen_mseq(3).unwrap();
        assert_eq!(seq.len(), 7);
        // x^3 + x + 1 from 111: bits 1 1 1 0 0 1 0
        assert_eq!(seq, vec![-1, -1, -1, 1, 1, -1, 1]);
        for lag in 0..7 {
            let expect = if lag == 0 { 7 } else { -1 };
            assert_eq!(periodic_correlation(&seq, &seq, lag), expect);
        }
    }

    #[test]
    fn degenerate_and_reference_lengths() {
        assert_eq!(gen_mseq(1).unwrap(), vec![-1]);
        assert_eq!(gen_mseq(8).unwrap().len(), 255);
        assert!(matches!(gen_mseq(0), Err(Error::Domain(_))));
        assert!(matches!(gen_mseq(21), Err(Error::Domain(_))));
    }

    #[test]
    fn every_table_entry_is_maximal() {
        for n in 1..=MAX_REGISTER_LEN {
            let seq = gen_mseq(n).unwrap();
            let len = seq.len();
            // smallest period divides len; check no proper divisor is a period
            for p in 1..len {
                if len % p == 0 {
                    assert!((0..len).any(|j| seq[j] != seq[(j + p) % len]), "n={n} has period {p}");
                }
            }
            let minus = seq.iter().filter(|&&c| c < 0).count();
            assert_eq!(minus, len - minus + 1, "balance for n={n}");
        }
    }

    #[test]
    fn spreading_book_cross_correlation() {
        let book = build_spreading_book(3, 7).unwrap();
        assert_eq!(book.num_devices(), 7);
        for d in 0..7 {
            for k in 0..7 {
                if d != k {
                    assert_eq!(periodic_correlation(&book.chips[d], &book.chips[k], 0), -1);
                    assert!((book.normalized_cross_correlation(d, k) - 1.0 / 7.0).abs() < 1e-15);
                }
            }
        }
        let big = build_spreading_book(8, 50).unwrap();
        assert_eq!(big.shifts, (0..50).collect::<Vec<_>>());
        let single = build_spreading_book(5, 1).unwrap();
        assert_eq!(single.chips[0], single.base);
        assert!(matches!(build_spreading_book(3, 8), Err(Error::Capacity { requested: 8, available: 7 })));
    }

    #[test]
    fn text_export_is_one_row_per_device() {
        let book = build_spreading_book(2, 2).unwrap();
        let text = book.to_text();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(' ').count(), 3);
    }

    #[test]
    fn register_len_round_trip() {
        assert_eq!(register_len(255).unwrap(), 8);
        assert_eq!(register_len(1).unwrap(), 1);
        assert!(register_len(100).is_err());
        assert_eq!(spreading_book_for_gain(1, 5).unwrap().spreading_gain(), 1);
    }

    #[test]
    fn fully_orthogonal_pilots() {
        let book = build_pilot_book(12, 4, 6, 1).unwrap();
        for u in 0..4 {
            assert_eq!(book.gram_uu(u, u), 1.0);
            for k in 0..4 {
                if k != u {
                    assert_eq!(book.gram_uu(k, u), 0.0);
                }
            }
            for d in 0..6 {
                assert_eq!(book.gram_ud(u, d), 0.0);
            }
        }
        for d in 0..6 {
            for k in 0..6 {
                assert_eq!(book.gram_dd(k, d), (k == d) as u8 as f64);
            }
        }
    }

    #[test]
    fn reference_budget_reuses_each_pilot_twice() {
        let book = build_pilot_book(30, 10, 50, 7).unwrap();
        assert!(book.reuse_counts().iter().all(|&c| c == 2));
    }

    #[test]
    fn basis_is_orthonormal_and_matches_gram() {
        let book = build_pilot_book(5, 3, 4, 2).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let g = book.basis_inner(i, j).norm();
                assert!((g - (i == j) as u8 as f64).abs() < 1e-12);
            }
        }
        for u in 0..3 {
            for d in 0..4 {
                assert!((dotc(book.pi(d), book.phi(u)).norm() - book.gram_ud(u, d)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn shifts_have_two_valued_correlation(n in 3u32..=8, a in 0usize..255, b in 0usize..255) {
            let seq = gen_mseq(n).unwrap();
            let len = seq.len();
            let (a, b) = (a % len, b % len);
            let book = SpreadingBook::with_shifts(seq, vec![a, b]).unwrap();
            let c = periodic_correlation(&book.chips[0], &book.chips[1], 0);
            prop_assert_eq!(c, if a == b { len as i64 } else { -1 });
        }

        #[test]
        fn pilot_gram_entries_are_binary(tau in 1usize..20, ku in 0usize..10, kd in 0usize..10, seed in any::<u64>()) {
            let book = build_pilot_book(tau, ku, kd, seed).unwrap();
            let counts = book.reuse_counts();
            let max = counts.iter().max().copied().unwrap_or(0);
            let min = counts.iter().min().copied().unwrap_or(0);
            prop_assert!(max - min <= 1);
            for u in 0..ku {
                for d in 0..kd {
                    let g = book.gram_ud(u, d);
                    prop_assert!(g == 0.0 || g == 1.0);
                }
            }
        }
    }
}
