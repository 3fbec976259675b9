use rayon::prelude::*;

use super::ModulatorState;
use crate::error::{arg_err, Result};

fn check_range(x: &[f64], lo: f64, hi: f64) -> Result<()> {
    if in_range(x, lo, hi) {
        return Ok(());
    }
    let (i, v) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(lo..=hi).contains(*v))
        .unwrap();
    arg_err(format!("input[{i}] = {v} outside [{lo}, {hi}]"))
}

/// Branch-free so it vectorizes; NaN fails both comparisons.
fn in_range(x: &[f64], lo: f64, hi: f64) -> bool {
    x.iter().fold(true, |ok, &v| ok & (v >= lo) & (v <= hi))
}

/// Classic bipolar first-order sigma-delta. Emits +1 while the accumulated
/// error is positive, -1 otherwise, and feeds the output back.
pub fn pcm2pdm_seq(x: &[f64], state: ModulatorState) -> Result<(Vec<i8>, ModulatorState)> {
    check_range(x, -1.0, 1.0)?;
    let mut qe = state.qe;
    let y = x
        .iter()
        .map(|&v| {
            qe += v;
            let out = if qe > 0.0 { 1.0 } else { -1.0 };
            qe -= out;
            out as i8
        })
        .collect();
    Ok((y, ModulatorState { qe, ..state }))
}

/// Unipolar variant of [`pcm2pdm_seq`]: a pulse whenever `qe + x > 0`
/// (strictly), after which `qe` drops by `th`.
///
/// Starting from `qe = 0` with `th = 1`, the number of pulses up to `n` is
/// `ceil(cumsum(x)[n])`.
pub fn pcm2pdm_mod(x: &[f64], state: ModulatorState) -> Result<(Vec<u8>, ModulatorState)> {
    check_range(x, 0.0, 1.0)?;
    let th = state.th;
    let mut qe = state.qe;
    let y = x
        .iter()
        .map(|&v| {
            qe += v;
            let fire = qe > 0.0;
            if fire {
                qe -= th;
            }
            fire as u8
        })
        .collect();
    Ok((y, ModulatorState { qe, th }))
}

/// Integrate-and-fire with soft reset: integrate `x`, fire once the membrane
/// reaches `th`, subtract `th`.
///
/// Starting from `qe = 0`, the number of pulses up to `n` is
/// `floor(cumsum(x)[n] / th)`.
pub fn pcm2pdm_if(x: &[f64], state: ModulatorState) -> Result<(Vec<u8>, ModulatorState)> {
    check_range(x, 0.0, 1.0)?;
    if !(state.th > 0.0) {
        return arg_err("threshold must be positive");
    }
    let th = state.th;
    let mut qe = state.qe;
    let y = x
        .iter()
        .map(|&v| {
            qe += v;
            let fire = qe >= th;
            if fire {
                qe -= th;
            }
            fire as u8
        })
        .collect();
    Ok((y, ModulatorState { qe, th }))
}

/// Fractional bits of the fixed-point prefix sums used by the scan encoder.
///
/// A sample `x` in `[0, 1]` becomes `bits(x + 1.0) - bits(1.0)`, i.e. `x`
/// rounded to the nearest multiple of `2^-52`. That is exact for every
/// sample in `[0.5, 1]` and for any multiple of `2^-52`; prefix sums after
/// conversion are exact integers.
pub const FIXED_FRAC_BITS: u32 = 52;

const ONE_BITS: u64 = 0x3ff0_0000_0000_0000;
const FRAC_MASK: u64 = (1 << FIXED_FRAC_BITS) - 1;

#[inline(always)]
fn to_fixed(v: f64) -> u64 {
    (v + 1.0).to_bits().wrapping_sub(ONE_BITS)
}

/// Sum of fixed-point samples, accumulated in `u64` blocks that cannot
/// overflow and then widened, plus whether every sample lies in `[0, 1]`.
fn fixed_total(x: &[f64]) -> (u128, bool) {
    x.chunks(SAFE_BLOCK).fold((0u128, true), |(total, ok), b| {
        let (s, k) = block_total(b);
        (total + s as u128, ok & k)
    })
}

fn block_total(b: &[f64]) -> (u64, bool) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: feature presence checked at runtime
        return unsafe { simd::block_total_avx512(b) };
    }
    block_total_scalar(b)
}

fn block_total_scalar(b: &[f64]) -> (u64, bool) {
    b.iter().fold((0u64, true), |(s, k), &v| {
        (s.wrapping_add(to_fixed(v)), k & (v >= 0.0) & (v <= 1.0))
    })
}

/// Samples per block such that `FRAC_MASK + SAFE_BLOCK * 2^52` fits a u64.
const SAFE_BLOCK: usize = 2048;

/// `floor(c / th)` on fixed-point operands.
#[derive(Clone, Copy)]
enum FloorDiv {
    /// `th == 1`: every sample moves the floor by at most one step.
    Unit,
    Shift(u32),
    Div(u128),
}

impl FloorDiv {
    fn new(th: f64) -> Result<Self> {
        if !(th > 0.0) || !th.is_finite() {
            return arg_err(format!("threshold must be positive and finite, got {th}"));
        }
        let scaled = th * (1u64 << FIXED_FRAC_BITS) as f64;
        if scaled < 1.0 || scaled >= 2f64.powi(127) || scaled.fract() != 0.0 {
            return arg_err(format!(
                "threshold {th} is not representable with {FIXED_FRAC_BITS} fractional bits"
            ));
        }
        let fixed = scaled as u128;
        Ok(if th == 1.0 {
            FloorDiv::Unit
        } else if fixed.is_power_of_two() {
            FloorDiv::Shift(fixed.trailing_zeros())
        } else {
            FloorDiv::Div(fixed)
        })
    }

    #[inline(always)]
    fn apply(self, c: u128) -> u128 {
        match self {
            FloorDiv::Unit => c >> FIXED_FRAC_BITS,
            FloorDiv::Shift(s) => c >> s,
            FloorDiv::Div(d) => c / d,
        }
    }
}

/// Encodes one span of the input given the exact prefix sum of everything
/// before it. `c = offset + cumsum(x)`, `f = floor(c / th)`, and a bit is
/// set wherever `f` steps up. Returns whether every sample lies in `[0, 1]`;
/// the bits are meaningless otherwise.
fn scan_span(x: &[f64], offset: u128, div: FloorDiv, out: &mut [u8]) -> bool {
    if let FloorDiv::Unit = div {
        // only the fractional part of the offset matters for unit steps
        let frac = (offset as u64) & FRAC_MASK;
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature presence checked at runtime
            return unsafe { simd::scan_unit_avx512(x, frac, out) };
        }
        return scan_unit_scalar(x, frac, out);
    }
    if !in_range(x, 0.0, 1.0) {
        return false;
    }
    let mut c = offset;
    let mut prev = div.apply(offset);
    for (o, &v) in out.iter_mut().zip(x) {
        c += to_fixed(v) as u128;
        let f = div.apply(c);
        *o = (f > prev) as u8;
        prev = f;
    }
    true
}

/// Unit threshold: with `x <= 1` the floor of the running sum rises by at
/// most one per sample, so the bit is the carry out of the fractional part.
fn scan_unit_scalar(x: &[f64], mut frac: u64, out: &mut [u8]) -> bool {
    let mut ok = true;
    for (o, &v) in out.iter_mut().zip(x) {
        ok &= (v >= 0.0) & (v <= 1.0);
        let s = frac.wrapping_add(to_fixed(v));
        *o = (s >> FIXED_FRAC_BITS) as u8;
        frac = s & FRAC_MASK;
    }
    ok
}

#[cfg(target_arch = "x86_64")]
mod simd {
    use std::arch::x86_64::*;

    use super::{
        block_total_scalar, scan_unit_scalar, FIXED_FRAC_BITS, FRAC_MASK, ONE_BITS, SAFE_BLOCK,
    };

    /// Eight samples per step: in-register prefix sum, floors of the running
    /// sum before and after each sample, compare.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn scan_unit_avx512(x: &[f64], frac: u64, out: &mut [u8]) -> bool {
        let n = x.len() / 8 * 8;
        let one = _mm512_set1_pd(1.0);
        let zero_pd = _mm512_setzero_pd();
        let mut in_range: __mmask8 = 0xff;
        let one_bits = _mm512_set1_epi64(ONE_BITS as i64);
        let zero = _mm512_setzero_si512();
        let mask = _mm512_set1_epi64(FRAC_MASK as i64);
        let last = _mm512_set1_epi64(7);
        let mut run = _mm512_set1_epi64(frac as i64);
        let mut since_reduce = 0usize;

        for i in (0..n).step_by(8) {
            let raw = _mm512_loadu_pd(x.as_ptr().add(i));
            in_range &= _mm512_cmp_pd_mask::<_CMP_GE_OQ>(raw, zero_pd)
                & _mm512_cmp_pd_mask::<_CMP_LE_OQ>(raw, one);
            let v = _mm512_add_pd(raw, one);
            let iv = _mm512_sub_epi64(_mm512_castpd_si512(v), one_bits);
            let mut p = _mm512_add_epi64(iv, _mm512_alignr_epi64::<7>(iv, zero));
            p = _mm512_add_epi64(p, _mm512_alignr_epi64::<6>(p, zero));
            p = _mm512_add_epi64(p, _mm512_alignr_epi64::<4>(p, zero));
            let s = _mm512_add_epi64(p, run);
            let after = _mm512_srli_epi64::<FIXED_FRAC_BITS>(s);
            let before = _mm512_srli_epi64::<FIXED_FRAC_BITS>(_mm512_sub_epi64(s, iv));
            let fired = _mm512_cmpgt_epu64_mask(after, before);
            let bytes = SPREAD[fired as usize];
            std::ptr::write_unaligned(out.as_mut_ptr().add(i) as *mut u64, bytes);
            run = _mm512_add_epi64(run, _mm512_permutexvar_epi64(last, p));
            since_reduce += 8;
            if since_reduce >= SAFE_BLOCK {
                // dropping whole units shifts both floors equally
                run = _mm512_and_si512(run, mask);
                since_reduce = 0;
            }
        }
        let tail_frac = (_mm_cvtsi128_si64(_mm512_castsi512_si128(run)) as u64) & FRAC_MASK;
        scan_unit_scalar(&x[n..], tail_frac, &mut out[n..]) & (in_range == 0xff)
    }

    /// Fixed-point sum of at most [`SAFE_BLOCK`] samples and the range check.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn block_total_avx512(b: &[f64]) -> (u64, bool) {
        let n = b.len() / 8 * 8;
        let one = _mm512_set1_pd(1.0);
        let zero = _mm512_setzero_pd();
        let one_bits = _mm512_set1_epi64(ONE_BITS as i64);
        let mut acc = _mm512_setzero_si512();
        let mut in_range: __mmask8 = 0xff;
        for i in (0..n).step_by(8) {
            let raw = _mm512_loadu_pd(b.as_ptr().add(i));
            in_range &= _mm512_cmp_pd_mask::<_CMP_GE_OQ>(raw, zero)
                & _mm512_cmp_pd_mask::<_CMP_LE_OQ>(raw, one);
            let bits = _mm512_castpd_si512(_mm512_add_pd(raw, one));
            acc = _mm512_add_epi64(acc, _mm512_sub_epi64(bits, one_bits));
        }
        let (tail, ok) = block_total_scalar(&b[n..]);
        let sum = (_mm512_reduce_add_epi64(acc) as u64).wrapping_add(tail);
        (sum, ok & (in_range == 0xff))
    }

    /// Byte `i` of entry `m` holds bit `i` of `m`.
    static SPREAD: [u64; 256] = {
        let mut t = [0u64; 256];
        let mut m = 0;
        while m < 256 {
            let mut i = 0;
            while i < 8 {
                t[m] |= (((m >> i) & 1) as u64) << (8 * i);
                i += 1;
            }
            m += 1;
        }
        t
    };
}

/// Parallel-form encoder: cumulative sum, integer division by `th`, first
/// difference, positive test. The first output compares against an
/// implicit zero, so the result matches [`pcm2pdm_if`] from `qe = 0`.
///
/// Prefix sums are exact integers, so the result never depends on how the
/// sum is split up.
pub fn pcm2pdm_par(x: &[f64], th: f64) -> Result<Vec<u8>> {
    let div = FloorDiv::new(th)?;
    let mut out = vec![0u8; x.len()];
    if !scan_span(x, 0, div, &mut out) {
        check_range(x, 0.0, 1.0)?;
    }
    Ok(out)
}

/// [`pcm2pdm_par`] split into `chunk_len` spans processed on the current
/// rayon pool: span totals in parallel, an in-order exclusive scan of the
/// totals, then every span encoded in parallel from its offset.
pub fn pcm2pdm_par_chunked(x: &[f64], th: f64, chunk_len: usize) -> Result<Vec<u8>> {
    if chunk_len == 0 {
        return arg_err("chunk length must be at least 1");
    }
    let div = FloorDiv::new(th)?;

    // validation rides along with the span totals
    let (totals, valid): (Vec<u128>, Vec<bool>) = x.par_chunks(chunk_len).map(fixed_total).unzip();
    if valid.contains(&false) {
        check_range(x, 0.0, 1.0)?;
    }
    let offsets: Vec<u128> = totals
        .iter()
        .scan(0u128, |acc, &t| {
            let start = *acc;
            *acc += t;
            Some(start)
        })
        .collect();

    let mut out = vec![0u8; x.len()];
    out.par_chunks_mut(chunk_len)
        .zip(x.par_chunks(chunk_len))
        .zip(offsets.par_iter())
        .for_each(|((o, chunk), &offset)| {
            scan_span(chunk, offset, div, o);
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st() -> ModulatorState {
        ModulatorState::default()
    }

    #[test]
    fn seq_hand_trace() {
        let (y, s) = pcm2pdm_seq(&[0.0, 0.0, 0.0], st()).unwrap();
        assert_eq!(y, vec![-1, 1, -1]);
        assert_eq!(s.qe, 1.0);
        let (y, _) = pcm2pdm_seq(&[1.0; 8], st()).unwrap();
        assert_eq!(y, vec![1; 8]);
    }

    #[test]
    fn seq_rejects_out_of_range() {
        assert!(pcm2pdm_seq(&[0.0, 1.5], st()).is_err());
    }

    #[test]
    fn mod_hand_traces() {
        assert_eq!(pcm2pdm_mod(&[0.5; 3], st()).unwrap().0, vec![1, 0, 1]);
        assert_eq!(pcm2pdm_mod(&[0.6; 3], st()).unwrap().0, vec![1, 1, 0]);
        assert_eq!(pcm2pdm_mod(&[0.0; 5], st()).unwrap().0, vec![0; 5]);
    }

    #[test]
    fn if_hand_traces() {
        assert_eq!(pcm2pdm_if(&[0.6; 3], st()).unwrap().0, vec![0, 1, 0]);
        assert_eq!(pcm2pdm_if(&[1.0, 0.0], st()).unwrap().0, vec![1, 0]);
        assert_eq!(pcm2pdm_if(&[0.0; 5], st()).unwrap().0, vec![0; 5]);
    }

    #[test]
    fn par_hand_traces() {
        assert_eq!(pcm2pdm_par(&[0.5; 3], 1.0).unwrap(), vec![0, 1, 0]);
        assert_eq!(pcm2pdm_par(&[0.6; 3], 1.0).unwrap(), vec![0, 1, 0]);
        assert_eq!(pcm2pdm_par(&[1.0, 0.0], 1.0).unwrap(), vec![1, 0]);
        assert_eq!(pcm2pdm_par(&[], 1.0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn par_non_power_of_two_threshold() {
        // th = 0.75: floor(cumsum / 0.75) over 0.5 steps = 0,1,2,2,3
        let bits = pcm2pdm_par(&[0.5; 5], 0.75).unwrap();
        assert_eq!(bits, vec![0, 1, 1, 0, 1]);
        let (seq, _) = pcm2pdm_if(&[0.5; 5], ModulatorState { qe: 0.0, th: 0.75 }).unwrap();
        assert_eq!(bits, seq);
    }

    #[test]
    fn par_threshold_validation() {
        for th in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(pcm2pdm_par(&[0.5], th).is_err(), "th {th}");
        }
        assert!(pcm2pdm_par_chunked(&[0.5], 1.0, 0).is_err());
    }

    #[test]
    fn mod_error_stays_bounded() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let mut s = st();
        for v in x {
            let (_, next) = pcm2pdm_mod(&[v], s).unwrap();
            assert!((-1.0..=1.0).contains(&next.qe));
            s = next;
        }
    }

    #[test]
    fn unit_kernels_agree_with_general_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for len in [0usize, 1, 7, 8, 9, 63, 4096, 5003] {
            let x: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let offset = rng.gen::<u64>() as u128 * 3;
            let mut scalar = vec![0u8; len];
            scan_unit_scalar(&x, (offset as u64) & FRAC_MASK, &mut scalar);
            // the unit fast path against plain floor differences
            let mut general = vec![0u8; len];
            let mut c = offset;
            let mut prev = c >> FIXED_FRAC_BITS;
            for (o, &v) in general.iter_mut().zip(&x) {
                c += to_fixed(v) as u128;
                *o = ((c >> FIXED_FRAC_BITS) > prev) as u8;
                prev = c >> FIXED_FRAC_BITS;
            }
            assert_eq!(scalar, general, "len {len}");
            let mut dispatched = vec![0u8; len];
            assert!(scan_span(
                &x,
                offset,
                FloorDiv::new(1.0).unwrap(),
                &mut dispatched
            ));
            assert_eq!(dispatched, general, "len {len}");
            assert_eq!(block_total(&x), block_total_scalar(&x), "len {len}");
        }
    }

    #[test]
    fn scan_encoders_reject_bad_samples_anywhere() {
        for bad in [-0.1, 1.5, f64::NAN] {
            for (len, at) in [(1usize, 0usize), (9, 3), (9, 8), (5000, 4999), (5000, 2100)] {
                let mut x = vec![0.25; len];
                x[at] = bad;
                assert!(pcm2pdm_par(&x, 1.0).is_err(), "{bad} at {at}/{len}");
                assert!(pcm2pdm_par(&x, 0.5).is_err(), "{bad} at {at}/{len}");
                for chunk in [1, 7, 4096] {
                    assert!(
                        pcm2pdm_par_chunked(&x, 1.0, chunk).is_err(),
                        "{bad} at {at}/{len}"
                    );
                }
            }
        }
    }

    #[test]
    fn chunked_degenerate_lengths() {
        let x: Vec<f64> = (0..777).map(|i| ((i * 13) % 29) as f64 / 28.0).collect();
        let whole = pcm2pdm_par(&x, 1.0).unwrap();
        for len in [1, 2, 7, 776, 777, 10_000] {
            assert_eq!(
                pcm2pdm_par_chunked(&x, 1.0, len).unwrap(),
                whole,
                "len {len}"
            );
        }
    }
}
