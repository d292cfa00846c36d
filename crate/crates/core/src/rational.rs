//! Exact arithmetic for the constrained rational sequences.
//!
//! Houses the reduced fractions αₙ = pₙ/qₙ, smoothness witnesses for the
//! sets 𝒵ₙ, the prime-avoidance window scan, and the two density lemmas
//! (divisible-numerator approximation and the constrained next-α step).
//! Everything is arbitrary precision: the denominators grow fast.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, ToBigInt};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};

/// An exact rational p/q in lowest terms with positive denominator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReducedFraction(BigRational);

impl ReducedFraction {
    pub fn new(p: i64, q: i64) -> Result<Self> {
        Self::from_big(BigInt::from(p), BigInt::from(q))
    }

    /// Reduce p/q to lowest terms. `q = 0` is a domain error.
    pub fn from_big(p: BigInt, q: BigInt) -> Result<Self> {
        if q.is_zero() {
            return Err(CoreError::Domain("denominator must be nonzero".into()));
        }
        Ok(ReducedFraction(BigRational::new(p, q)))
    }

    pub fn from_integer(n: i64) -> Self {
        ReducedFraction(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn zero() -> Self {
        ReducedFraction(BigRational::zero())
    }

    pub fn numerator(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denominator(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn abs_diff(&self, other: &Self) -> Self {
        ReducedFraction((&self.0 - &other.0).abs())
    }

    pub fn mul(&self, other: &Self) -> Self {
        ReducedFraction(&self.0 * &other.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        ReducedFraction(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        ReducedFraction(&self.0 - &other.0)
    }

    pub fn neg(&self) -> Self {
        ReducedFraction(-self.0.clone())
    }

    pub fn mul_int(&self, k: i64) -> Self {
        ReducedFraction(&self.0 * BigRational::from_integer(BigInt::from(k)))
    }

    pub fn div_int(&self, k: i64) -> Result<Self> {
        if k == 0 {
            return Err(CoreError::Domain("division by zero".into()));
        }
        Ok(ReducedFraction(
            &self.0 / BigRational::from_integer(BigInt::from(k)),
        ))
    }

    /// Compare |self| against an exact binary representation of `x`.
    pub fn abs_lt_f64(&self, x: f64) -> bool {
        match BigRational::from_float(x) {
            Some(r) => self.0.abs() < r,
            None => false,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Fractional part in [0, 1) as f64, exact in the rational step.
    ///
    /// Used for rotation angles of the 1-periodic plateau action: the
    /// integer part is discarded exactly before any float rounding.
    pub fn frac_part_f64(&self) -> f64 {
        let num = self.0.numer();
        let den = self.0.denom();
        let r = num.mod_floor(den);
        if r.is_zero() {
            return 0.0;
        }
        // Scale so the quotient keeps full f64 precision even for huge q.
        let shift = 64usize;
        let scaled = (r << shift) / den;
        scaled.to_f64().unwrap_or(0.0) / (2f64).powi(shift as i32)
    }
}

impl fmt::Display for ReducedFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for ReducedFraction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let (p, q) = match s.split_once('/') {
            Some((p, q)) => (p.trim(), q.trim()),
            None => (s.trim(), "1"),
        };
        let p = BigInt::from_str(p)
            .map_err(|e| CoreError::Domain(format!("bad numerator {p:?}: {e}")))?;
        let q = BigInt::from_str(q)
            .map_err(|e| CoreError::Domain(format!("bad denominator {q:?}: {e}")))?;
        Self::from_big(p, q)
    }
}

impl Serialize for ReducedFraction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ReducedFraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Reduce p/q to lowest terms with positive denominator.
pub fn reduce(p: i64, q: i64) -> Result<ReducedFraction> {
    ReducedFraction::new(p, q)
}

/// Membership witness for the n-smooth numbers 𝒵ₙ.
///
/// The exponent list reconstructs the witnessed integer exactly and every
/// listed prime is ≤ `bound`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothnessWitness {
    pub bound: u64,
    pub exponents: Vec<(u64, u32)>,
}

impl SmoothnessWitness {
    /// Recompute the witnessed integer from the exponent list.
    pub fn reconstruct(&self) -> BigUint {
        let mut acc = BigUint::one();
        for &(p, e) in &self.exponents {
            acc *= BigUint::from(p).pow(e);
        }
        acc
    }

    pub fn verify(&self, m: &BigUint) -> bool {
        self.exponents.iter().all(|&(p, _)| p <= self.bound) && &self.reconstruct() == m
    }
}

/// Primes ≤ n by sieve.
pub fn primes_up_to(n: u64) -> Vec<u64> {
    if n < 2 {
        return Vec::new();
    }
    let n = n as usize;
    let mut sieve = vec![true; n + 1];
    sieve[0] = false;
    sieve[1] = false;
    let mut p = 2usize;
    while p * p <= n {
        if sieve[p] {
            let mut k = p * p;
            while k <= n {
                sieve[k] = false;
                k += p;
            }
        }
        p += 1;
    }
    (2..=n).filter(|&i| sieve[i]).map(|i| i as u64).collect()
}

pub fn factorial(n: u64) -> BigUint {
    let mut acc = BigUint::one();
    for k in 2..=n {
        acc *= BigUint::from(k);
    }
    acc
}

/// Product of all primes ≤ n.
pub fn primorial(n: u64) -> BigUint {
    let mut acc = BigUint::one();
    for p in primes_up_to(n) {
        acc *= BigUint::from(p);
    }
    acc
}

/// Split `m` into (prime-power part over primes ≤ n, leftover residual).
pub fn smooth_split(m: &BigUint, n: u64) -> (Vec<(u64, u32)>, BigUint) {
    let mut rest = m.clone();
    let mut exps = Vec::new();
    for p in primes_up_to(n) {
        let pb = BigUint::from(p);
        let mut e = 0u32;
        while (&rest % &pb).is_zero() {
            rest /= &pb;
            e += 1;
        }
        if e > 0 {
            exps.push((p, e));
        }
    }
    (exps, rest)
}

/// Witness that every prime factor of `m` is ≤ n, or `None`.
pub fn is_n_smooth(m: &BigUint, n: u64) -> Option<SmoothnessWitness> {
    if m.is_zero() {
        return None;
    }
    let (exponents, rest) = smooth_split(m, n);
    if rest.is_one() {
        Some(SmoothnessWitness { bound: n, exponents })
    } else {
        None
    }
}

/// Smallest y ≥ max(1, x−P) with y ≡ 1 (mod P), P = ∏ rᵢ.
///
/// This is the witness from the number-theory sub-lemma: such a y lies in
/// [x−P, x+P] and is coprime to every rᵢ. The congruence-1 scan makes the
/// choice deterministic.
pub fn coprime_in_window(x: &BigUint, rs: &[BigUint]) -> Result<BigUint> {
    if rs.is_empty() {
        return Err(CoreError::Domain("window factor list is empty".into()));
    }
    if rs.iter().any(|r| r.is_zero()) {
        return Err(CoreError::Domain("window factors must be ≥ 1".into()));
    }
    let p: BigUint = rs.iter().product();
    let one = BigUint::one();
    let lo = if *x > p { x - &p } else { one.clone() };
    // Smallest y ≥ lo with y ≡ 1 (mod P).
    let y = if lo <= one {
        one
    } else {
        let rem = (&lo - &one) % &p;
        if rem.is_zero() {
            lo
        } else {
            &lo + (&p - rem)
        }
    };
    debug_assert!(&y <= &(x + &p));
    Ok(y)
}

/// Deterministic Miller-Rabin, exact for all inputs below 2^64 and
/// overwhelmingly reliable beyond (fixed witness set, no randomness).
pub fn is_prime_u128(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mul_mod = |a: u128, b: u128, m: u128| -> u128 {
        // Schoolbook double-and-add to avoid overflow on u128 products.
        let mut acc: u128 = 0;
        let mut a = a % m;
        let mut b = b;
        while b > 0 {
            if b & 1 == 1 {
                acc = (acc + a) % m;
            }
            a = (a << 1) % m;
            b >>= 1;
        }
        acc
    };
    let pow_mod = |mut base: u128, mut exp: u128, m: u128| -> u128 {
        let mut acc: u128 = 1;
        base %= m;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = mul_mod(acc, base, m);
            }
            base = mul_mod(base, base, m);
            exp >>= 1;
        }
        acc
    };
    'witness: for a in [2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than `n`.
pub fn next_prime_above(n: u128) -> Result<u128> {
    let mut c = n.checked_add(1).ok_or_else(|| {
        CoreError::Resource("prime search exceeds u128 range".into())
    })?;
    if c <= 2 {
        return Ok(2);
    }
    if c % 2 == 0 {
        c += 1;
    }
    loop {
        if is_prime_u128(c) {
            return Ok(c);
        }
        c = c.checked_add(2).ok_or_else(|| {
            CoreError::Resource("prime search exceeds u128 range".into())
        })?;
    }
}

/// Nearest fraction with reduced numerator divisible by n!.
///
/// Follows the density lemma's proof: pick the smallest prime
/// q > max(n!, 2·n!/eps), round target·q/n! to an integer m, nudge m by ±1
/// if q divides it, and return n!·m / q (already reduced since q is prime).
pub fn approx_with_divisible_numerator(
    target: &ReducedFraction,
    n: u64,
    eps: f64,
) -> Result<ReducedFraction> {
    if !(eps > 0.0) {
        return Err(CoreError::Domain("eps must be positive".into()));
    }
    let nf = factorial(n);
    let nf_u128 = nf
        .to_u128()
        .ok_or_else(|| CoreError::Resource("n! exceeds u128".into()))?;
    let need = (2.0 * nf_u128 as f64 / eps).ceil();
    if !need.is_finite() || need >= u128::MAX as f64 / 4.0 {
        return Err(CoreError::Resource("eps too small for prime search".into()));
    }
    let bound = std::cmp::max(nf_u128, need as u128);
    let q = next_prime_above(bound)?;
    let q_big = BigInt::from(q);

    // m = round(target·q / n!), half away from zero.
    let nf_int = nf.to_bigint().expect("biguint to bigint");
    let scaled = target.0.clone() * BigRational::from_integer(q_big.clone())
        / BigRational::from_integer(nf_int.clone());
    let mut m = round_rational(&scaled);
    if (&m % &q_big).is_zero() {
        // Nudge toward the target to keep the error one rounding step.
        let down = &m - 1;
        let up = &m + 1;
        let err = |cand: &BigInt| {
            let alpha = BigRational::new(&nf_int * cand, q_big.clone());
            (alpha - target.0.clone()).abs()
        };
        m = if err(&down) <= err(&up) { down } else { up };
    }
    let alpha = ReducedFraction::from_big(&nf_int * &m, q_big)?;
    debug_assert!((alpha.numerator().magnitude() % &nf).is_zero());
    Ok(alpha)
}

fn round_rational(x: &BigRational) -> BigInt {
    let two = BigInt::from(2);
    let num = x.numer();
    let den = x.denom();
    if num.is_negative() {
        -((-num * &two + den) / (den * &two))
    } else {
        (num * &two + den) / (den * &two)
    }
}

/// Next constrained α in the chain: pₙ ∈ 𝒵ₙ, n! | pₙ, p_{n−1} | pₙ,
/// qₙ coprime to every prime ≤ n, |pₙ/qₙ − target| < eps.
///
/// pₙ = lcm(n!, p_{n−1})·2^k for the smallest k whose window-adjusted
/// denominator satisfies the lemma's error bound (P+1)·p_t/(qₙ·q_t) < eps.
pub fn next_alpha(
    prev: &ReducedFraction,
    n: u64,
    target: &ReducedFraction,
    eps: f64,
) -> Result<ReducedFraction> {
    if n < 2 {
        return Err(CoreError::Domain("next_alpha requires n ≥ 2".into()));
    }
    if !(eps > 0.0) {
        return Err(CoreError::Domain("eps must be positive".into()));
    }
    if target.is_zero() {
        return Err(CoreError::Domain(
            "target 0 degenerates the denominator formula".into(),
        ));
    }
    if !target.is_positive() {
        return Err(CoreError::Domain("target must be positive".into()));
    }
    let p_prev = prev.numerator();
    if !p_prev.is_positive() {
        return Err(CoreError::Domain("prev numerator must be positive".into()));
    }
    let p_prev_mag = p_prev.magnitude().clone();
    if is_n_smooth(&p_prev_mag, n - 1).is_none() {
        return Err(CoreError::Domain(format!(
            "prev numerator {p_prev_mag} is not {}-smooth",
            n - 1
        )));
    }

    let base = factorial(n).lcm(&p_prev_mag);
    let window: BigUint = primorial(n);
    let window_primes: Vec<BigUint> = primes_up_to(n).into_iter().map(BigUint::from).collect();
    let eps_rat = BigRational::from_float(eps)
        .ok_or_else(|| CoreError::Domain("eps must be finite".into()))?;
    let p_t = target.numerator().magnitude().clone();
    let q_t = target.denominator().magnitude().clone();

    let mut p_n = base;
    for _ in 0..4096 {
        // q̃ = ⌊pₙ·q_t/p_t⌋, then slide to the window's coprime witness.
        let q_tilde = (&p_n * &q_t) / &p_t;
        let q_n = coprime_in_window(&q_tilde, &window_primes)?;
        // Lemma bound: |pₙ/qₙ − p_t/q_t| ≤ (P+1)·p_t / (qₙ·q_t).
        let bound = BigRational::new(
            ((&window + 1u32) * &p_t).to_bigint().unwrap(),
            (&q_n * &q_t).to_bigint().unwrap(),
        );
        if bound < eps_rat {
            let alpha = ReducedFraction::from_big(
                p_n.to_bigint().unwrap(),
                q_n.to_bigint().unwrap(),
            )?;
            debug_assert_eq!(alpha.numerator().magnitude(), &p_n);
            return Ok(alpha);
        }
        p_n *= 2u32;
    }
    Err(CoreError::Resource(
        "next_alpha: growth budget exhausted before the error bound closed".into(),
    ))
}

/// Gap-minimal variant of the constrained step: same postconditions as
/// [`next_alpha`], but the denominator is scanned outward from the exact
/// ratio q̃ = pₙ·q_prev/p_prev, so |αₙ − prev| = p_prev·|j|/(q_prev·qₙ)
/// is within a small multiple of the least possible gap at that
/// denominator. The construction's shrink loop needs this sharpness: the
/// window-congruence witness of the lemma proof leaves a gap of random
/// size, which the Cauchy bounds cannot absorb once the conjugators
/// steepen.
///
/// With `require_smooth_prev` the full 𝒵-chain constraints are enforced
/// (prev numerator (n−1)-smooth, so the output is n-smooth); without it
/// only divisibility by n! and prev, reducedness, and the denominator
/// coprimality survive — the dense-orbit mode needs no more.
pub fn next_alpha_min_gap(
    prev: &ReducedFraction,
    n: u64,
    eps: f64,
    require_smooth_prev: bool,
) -> Result<ReducedFraction> {
    if n < 2 {
        return Err(CoreError::Domain("next_alpha requires n ≥ 2".into()));
    }
    if !(eps > 0.0) {
        return Err(CoreError::Domain("eps must be positive".into()));
    }
    if !prev.is_positive() {
        return Err(CoreError::Domain("prev must be positive".into()));
    }
    let p_prev = prev.numerator().magnitude().clone();
    let q_prev = prev.denominator().magnitude().clone();
    if require_smooth_prev && is_n_smooth(&p_prev, n - 1).is_none() {
        return Err(CoreError::Domain(format!(
            "prev numerator {p_prev} is not {}-smooth",
            n - 1
        )));
    }
    let base = factorial(n).lcm(&p_prev);
    let window_primes: Vec<BigUint> = primes_up_to(n).into_iter().map(BigUint::from).collect();
    let eps_rat = BigRational::from_float(eps)
        .ok_or_else(|| CoreError::Domain("eps must be finite".into()))?;

    let mut p_n = base;
    for _ in 0..4096 {
        // Exact center: p_prev | pₙ, so q̃ = pₙ·q_prev/p_prev is integral
        // and pₙ/q̃ = prev exactly. Scan |j| = 1, 2, … both sides.
        let q_center = (&p_n * &q_prev) / &p_prev;
        let mut found: Option<(BigUint, u64)> = None;
        'scan: for j in 1u64..=1_000_000 {
            let above = &q_center + j;
            let below = if q_center > BigUint::from(j) {
                Some(&q_center - j)
            } else {
                None
            };
            for q in std::iter::once(above).chain(below) {
                if window_primes.iter().any(|r| (&q % r).is_zero()) {
                    continue;
                }
                if !p_n.gcd(&q).is_one() {
                    continue;
                }
                found = Some((q, j));
                break 'scan;
            }
        }
        if let Some((q_n, j)) = found {
            let gap = BigRational::new(
                (&p_prev * j).to_bigint().unwrap(),
                (&q_prev * &q_n).to_bigint().unwrap(),
            );
            if gap < eps_rat {
                let alpha = ReducedFraction::from_big(
                    p_n.to_bigint().unwrap(),
                    q_n.to_bigint().unwrap(),
                )?;
                debug_assert_eq!(alpha.numerator().magnitude(), &p_n);
                return Ok(alpha);
            }
        }
        p_n *= 2u32;
    }
    Err(CoreError::Resource(
        "next_alpha_min_gap: growth budget exhausted before the gap closed".into(),
    ))
}

/// Recompute the five next_alpha postconditions by independent factorization.
pub fn check_alpha_constraints(
    alpha: &ReducedFraction,
    prev: &ReducedFraction,
    n: u64,
    target: &ReducedFraction,
    eps: f64,
) -> AlphaConstraintReport {
    let p = alpha.numerator().magnitude();
    let q = alpha.denominator().magnitude();
    let smooth = is_n_smooth(p, n).is_some();
    let divides_factorial = (p % factorial(n)).is_zero();
    let divides_prev = (p % prev.numerator().magnitude()).is_zero();
    let within_eps = alpha.sub(target).abs_lt_f64(eps);
    let coprime_window = primes_up_to(n)
        .into_iter()
        .all(|r| !(q % BigUint::from(r)).is_zero());
    let reduced = alpha.numerator().gcd(alpha.denominator()).is_one();
    AlphaConstraintReport {
        smooth,
        divides_factorial,
        divides_prev,
        within_eps,
        coprime_window,
        reduced,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaConstraintReport {
    pub smooth: bool,
    pub divides_factorial: bool,
    pub divides_prev: bool,
    pub within_eps: bool,
    pub coprime_window: bool,
    pub reduced: bool,
}

impl AlphaConstraintReport {
    pub fn pass(&self) -> bool {
        self.smooth
            && self.divides_factorial
            && self.divides_prev
            && self.within_eps
            && self.coprime_window
            && self.reduced
    }

    /// Variant for the unconstrained mode: only (n!)-divisibility,
    /// closeness and reducedness are required.
    pub fn pass_divisibility_only(&self) -> bool {
        self.divides_factorial && self.within_eps && self.reduced
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(p: i64, q: i64) -> ReducedFraction {
        ReducedFraction::new(p, q).unwrap()
    }

    #[test]
    fn reduce_cancels_gcd() {
        let r = reduce(6, 4).unwrap();
        assert_eq!(r.to_string(), "3/2");
    }

    #[test]
    fn reduce_zero() {
        assert_eq!(reduce(0, 7).unwrap().to_string(), "0/1");
    }

    #[test]
    fn reduce_normalizes_signs() {
        assert_eq!(reduce(-10, -4).unwrap().to_string(), "5/2");
        assert_eq!(reduce(10, -4).unwrap().to_string(), "-5/2");
    }

    #[test]
    fn reduce_rejects_zero_denominator() {
        assert!(reduce(3, 0).is_err());
    }

    #[test]
    fn fraction_roundtrips_through_string() {
        let r = frac(-600, 1201);
        assert_eq!(r, r.to_string().parse().unwrap());
    }

    #[test]
    fn frac_part_handles_huge_denominators() {
        let r = ReducedFraction::from_big(BigInt::from(7), BigInt::from(3)).unwrap();
        assert!((r.frac_part_f64() - 1.0 / 3.0).abs() < 1e-15);
        let big = ReducedFraction::from_big(
            BigInt::from(123456789123456789i64 * 2 + 1),
            BigInt::from(123456789123456789i64),
        )
        .unwrap();
        let expect = 1.0 / 123456789123456789.0;
        assert!((big.frac_part_f64() - expect).abs() < 1e-18);
    }

    #[test]
    fn smooth_witness_for_12_at_3() {
        let w = is_n_smooth(&BigUint::from(12u32), 3).unwrap();
        assert_eq!(w.exponents, vec![(2, 2), (3, 1)]);
        assert!(w.verify(&BigUint::from(12u32)));
    }

    #[test]
    fn fourteen_is_not_5_smooth() {
        assert!(is_n_smooth(&BigUint::from(14u32), 5).is_none());
        let (_, rest) = smooth_split(&BigUint::from(14u32), 5);
        assert_eq!(rest, BigUint::from(7u32));
    }

    #[test]
    fn one_is_smooth_with_empty_witness() {
        let w = is_n_smooth(&BigUint::one(), 1).unwrap();
        assert!(w.exponents.is_empty());
        assert!(w.verify(&BigUint::one()));
    }

    #[test]
    fn coprime_window_scans_from_lemma_congruence() {
        let y = coprime_in_window(&BigUint::from(100u32), &[4u32.into(), 9u32.into()]).unwrap();
        assert_eq!(y, BigUint::from(73u32));
        let y = coprime_in_window(&BigUint::from(1u32), &[2u32.into()]).unwrap();
        assert_eq!(y, BigUint::one());
        let y = coprime_in_window(&BigUint::from(50u32), &[7u32.into()]).unwrap();
        assert_eq!(y, BigUint::from(43u32));
    }

    #[test]
    fn miller_rabin_agrees_with_trial_division() {
        let small = primes_up_to(2000);
        for n in 2..2000u64 {
            assert_eq!(is_prime_u128(n as u128), small.contains(&n), "n={n}");
        }
        assert!(is_prime_u128(1201));
        assert!(!is_prime_u128(1_000_000_007u128 * 3));
    }

    #[test]
    fn approx_matches_frozen_lemma_example() {
        // q = 1201 is the smallest prime above max(3!, 2·3!/0.01) = 1200.
        let a = approx_with_divisible_numerator(&frac(1, 2), 3, 0.01).unwrap();
        assert_eq!(a.to_string(), "600/1201");
        assert!(a.sub(&frac(1, 2)).abs_lt_f64(0.01));
    }

    #[test]
    fn approx_zero_target_stays_conforming() {
        let a = approx_with_divisible_numerator(&frac(0, 1), 2, 0.5).unwrap();
        assert!((a.numerator().magnitude() % BigUint::from(2u32)).is_zero());
        assert!(a.abs_lt_f64(0.5));
    }

    #[test]
    fn approx_third_example_postconditions() {
        // Deterministic output: q = 41 (first prime above 40), m = 7.
        let a = approx_with_divisible_numerator(&frac(1, 3), 2, 0.1).unwrap();
        assert_eq!(a.to_string(), "14/41");
        assert!((a.numerator().magnitude() % BigUint::from(2u32)).is_zero());
        assert!(a.sub(&frac(1, 3)).abs_lt_f64(0.1));
    }

    #[test]
    fn next_alpha_frozen_first_step() {
        // Stated algorithm: k=0 gives q=5 with bound 0.2; k=1 gives 4/11
        // with bound 3/33 < 0.1.
        let a = next_alpha(&frac(1, 1), 2, &frac(1, 3), 0.1).unwrap();
        assert_eq!(a.to_string(), "4/11");
        let rep = check_alpha_constraints(&a, &frac(1, 1), 2, &frac(1, 3), 0.1);
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn next_alpha_chains_divisibility() {
        let a2 = next_alpha(&frac(1, 1), 2, &frac(1, 3), 0.1).unwrap();
        let a3 = next_alpha(&a2, 3, &a2, 1e-3).unwrap();
        let rep = check_alpha_constraints(&a3, &a2, 3, &a2, 1e-3);
        assert!(rep.pass(), "{rep:?}");
        // If n+1 is prime it cannot divide the n-smooth numerator.
        assert!(is_n_smooth(a2.numerator().magnitude(), 2).is_some());
        assert!(!(a2.numerator().magnitude() % BigUint::from(3u32)).is_zero());
    }

    #[test]
    fn next_alpha_rejects_bad_inputs() {
        assert!(next_alpha(&frac(1, 1), 2, &frac(0, 1), 0.1).is_err());
        assert!(next_alpha(&frac(1, 1), 2, &frac(-1, 3), 0.1).is_err());
        // prev numerator 3 is not 1-smooth when n = 2.
        assert!(next_alpha(&frac(3, 5), 2, &frac(1, 3), 0.1).is_err());
    }
}
