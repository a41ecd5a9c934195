//! Prime-field arithmetic and polynomials.
//!
//! Every protocol in the crate is generic over [`Field`]. The concrete
//! implementation is [`Fp`], a prime field whose modulus is a const generic,
//! so that small fields (7, 11, 101) used for exhaustive checks and the
//! default Mersenne field `2^31 - 1` share one code path.

use std::cell::Cell;
use std::fmt;
use std::hash::Hash;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_traits::{One, Zero};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("duplicate abscissa {0} in interpolation set")]
    DuplicateAbscissa(u64),
    #[error("interpolation needs at least one point")]
    NoPoints,
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
}

thread_local! {
    static FIELD_OPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of field operations executed on this thread so far.
///
/// The simulator reads this before and after each handler invocation to
/// charge computation steps to the handling player.
pub fn field_ops() -> u64 {
    FIELD_OPS.with(|c| c.get())
}

#[inline]
fn tick() {
    FIELD_OPS.with(|c| c.set(c.get() + 1));
}

/// A prime field usable by every protocol in this crate.
pub trait Field:
    Copy
    + Eq
    + Ord
    + Hash
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const MODULUS: u64;

    /// Reduces `v` modulo the field characteristic.
    fn from_u64(v: u64) -> Self;
    /// Canonical representative in `[0, p)`.
    fn value(self) -> u64;
    fn inv(self) -> Result<Self, FieldError>;

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_u64(rng.gen_range(0..Self::MODULUS))
    }

    fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }

    /// Abscissa used by the member at zero-based position `index`.
    fn abscissa(index: usize) -> Self {
        Self::from_u64(index as u64 + 1)
    }

    /// Little-endian 8-byte transcript encoding.
    fn to_le_bytes(self) -> [u8; 8] {
        self.value().to_le_bytes()
    }
}

/// Element of the prime field `F_P`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fp<const P: u64>(u64);

impl<const P: u64> Fp<P> {
    pub const fn new(v: u64) -> Self {
        Fp(v % P)
    }

    /// Checks that the modulus is prime. Type aliases in the crate root all
    /// satisfy this; it exists for user-declared fields.
    pub fn validate_modulus() -> Result<(), FieldError> {
        if is_prime(P) {
            Ok(())
        } else {
            Err(FieldError::NotPrime(P))
        }
    }
}

impl<const P: u64> fmt::Debug for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const P: u64> fmt::Display for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const P: u64> Add for Fp<P> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        tick();
        let s = self.0 + rhs.0;
        Fp(if s >= P { s - P } else { s })
    }
}

impl<const P: u64> Sub for Fp<P> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        tick();
        Fp(if self.0 >= rhs.0 { self.0 - rhs.0 } else { self.0 + P - rhs.0 })
    }
}

impl<const P: u64> Mul for Fp<P> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        tick();
        Fp(((self.0 as u128 * rhs.0 as u128) % P as u128) as u64)
    }
}

impl<const P: u64> Neg for Fp<P> {
    type Output = Self;
    fn neg(self) -> Self {
        Fp(if self.0 == 0 { 0 } else { P - self.0 })
    }
}

impl<const P: u64> Div for Fp<P> {
    type Output = Self;
    /// Panics on division by zero; use [`Field::inv`] for a fallible inverse.
    fn div(self, rhs: Self) -> Self {
        self * rhs.inv().expect("division by zero")
    }
}

impl<const P: u64> AddAssign for Fp<P> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const P: u64> SubAssign for Fp<P> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const P: u64> MulAssign for Fp<P> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const P: u64> Zero for Fp<P> {
    fn zero() -> Self {
        Fp(0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl<const P: u64> One for Fp<P> {
    fn one() -> Self {
        Fp(1 % P)
    }
}

impl<const P: u64> Field for Fp<P> {
    const MODULUS: u64 = P;

    fn from_u64(v: u64) -> Self {
        Fp(v % P)
    }

    fn value(self) -> u64 {
        self.0
    }

    fn inv(self) -> Result<Self, FieldError> {
        if self.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        // Extended Euclid over i128 avoids the log(p) multiplications of
        // Fermat inversion.
        let (mut r0, mut r1) = (P as i128, self.0 as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (t0, t1) = (t1, t0 - q * t1);
        }
        tick();
        Ok(Fp(t0.rem_euclid(P as i128) as u64))
    }
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2u64;
    while d.saturating_mul(d) <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Polynomial with coefficients in ascending order. The stored length is an
/// upper bound on the degree; leading zeros are allowed.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Polynomial<F> {
    pub coeffs: Vec<F>,
}

impl<F: Field> Polynomial<F> {
    pub fn new(coeffs: Vec<F>) -> Self {
        Polynomial { coeffs }
    }

    pub fn constant(c: F) -> Self {
        Polynomial { coeffs: vec![c] }
    }

    /// Uniformly random polynomial of degree at most `degree` with `p(0) = constant`.
    pub fn random_with_constant<R: Rng + ?Sized>(constant: F, degree: usize, rng: &mut R) -> Self {
        let mut coeffs = Vec::with_capacity(degree + 1);
        coeffs.push(constant);
        for _ in 0..degree {
            coeffs.push(F::random(rng));
        }
        Polynomial { coeffs }
    }

    /// Degree bound (length − 1); zero polynomial reports 0.
    pub fn degree_bound(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Actual degree ignoring leading zeros.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|c| !c.is_zero()).unwrap_or(0)
    }

    pub fn eval(&self, x: F) -> F {
        self.coeffs.iter().rev().fold(F::zero(), |acc, &c| acc * x + c)
    }

    pub fn constant_term(&self) -> F {
        self.coeffs.first().copied().unwrap_or_else(F::zero)
    }

    /// Lagrange interpolation through all points; result has degree `< points.len()`.
    pub fn interpolate(points: &[(F, F)]) -> Result<Self, FieldError> {
        if points.is_empty() {
            return Err(FieldError::NoPoints);
        }
        check_distinct(points)?;
        let k = points.len();
        let mut result = vec![F::zero(); k];
        for (i, &(xi, yi)) in points.iter().enumerate() {
            // basis numerator prod_{j != i} (x - xj), built incrementally
            let mut basis = vec![F::one()];
            let mut denom = F::one();
            for (j, &(xj, _)) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut next = vec![F::zero(); basis.len() + 1];
                for (d, &b) in basis.iter().enumerate() {
                    next[d + 1] += b;
                    next[d] -= b * xj;
                }
                basis = next;
                denom *= xi - xj;
            }
            let scale = yi * denom.inv()?;
            for (d, b) in basis.into_iter().enumerate() {
                result[d] += b * scale;
            }
        }
        Ok(Polynomial { coeffs: result })
    }

    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|i| {
                let a = self.coeffs.get(i).copied().unwrap_or_else(F::zero);
                let b = other.coeffs.get(i).copied().unwrap_or_else(F::zero);
                a + b
            })
            .collect();
        Polynomial { coeffs }
    }

    pub fn scale(&self, s: F) -> Self {
        Polynomial { coeffs: self.coeffs.iter().map(|&c| c * s).collect() }
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Polynomial { coeffs: vec![] };
        }
        let mut coeffs = vec![F::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Polynomial { coeffs }
    }
}

fn check_distinct<F: Field>(points: &[(F, F)]) -> Result<(), FieldError> {
    for (i, a) in points.iter().enumerate() {
        if points[..i].iter().any(|b| b.0 == a.0) {
            return Err(FieldError::DuplicateAbscissa(a.0.value()));
        }
    }
    Ok(())
}

/// Evaluates the interpolating polynomial of `points` at `x` without
/// materialising it.
pub fn interpolate_at<F: Field>(points: &[(F, F)], x: F) -> Result<F, FieldError> {
    if points.is_empty() {
        return Err(FieldError::NoPoints);
    }
    check_distinct(points)?;
    let mut acc = F::zero();
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut num = F::one();
        let mut den = F::one();
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                num *= x - xj;
                den *= xi - xj;
            }
        }
        acc += yi * num * den.inv()?;
    }
    Ok(acc)
}

/// Lagrange coefficients `λ_i` with `p(x) = Σ λ_i p(x_i)` for any `p` of
/// degree `< xs.len()`.
pub fn lagrange_coefficients<F: Field>(xs: &[F], x: F) -> Result<Vec<F>, FieldError> {
    let mut out = Vec::with_capacity(xs.len());
    for (i, &xi) in xs.iter().enumerate() {
        let mut num = F::one();
        let mut den = F::one();
        for (j, &xj) in xs.iter().enumerate() {
            if i != j {
                if xi == xj {
                    return Err(FieldError::DuplicateAbscissa(xi.value()));
                }
                num *= x - xj;
                den *= xi - xj;
            }
        }
        out.push(num * den.inv()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{F101, F11, F7, Fp31};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn add_examples() {
        assert_eq!(F7::new(3) + F7::new(5), F7::new(1));
        assert_eq!(Fp31::new(12345) + Fp31::zero(), Fp31::new(12345));
        assert_eq!(Fp31::new(Fp31::MODULUS - 1) + Fp31::one(), Fp31::zero());
    }

    fn brute_inverse<const P: u64>(a: Fp<P>) -> Fp<P> {
        (1..P).map(Fp::<P>::new).find(|&b| a * b == Fp::one()).unwrap()
    }

    #[test]
    fn inverse_matches_brute_force() {
        assert_eq!(F7::new(2).inv().unwrap(), F7::new(4));
        assert_eq!(brute_inverse(F7::new(2)), F7::new(4));
        assert_eq!(F11::new(10).inv().unwrap(), F11::new(10));
        assert_eq!(brute_inverse(F11::new(10)), F11::new(10));
        assert_eq!(Fp31::one().inv().unwrap(), Fp31::one());
        for a in 1..101 {
            let a = F101::new(a);
            assert_eq!(a.inv().unwrap(), brute_inverse(a));
        }
        assert_eq!(F7::zero().inv(), Err(FieldError::ZeroInverse));
    }

    #[test]
    fn eval_examples() {
        let p = Polynomial::new(vec![F7::new(1), F7::new(2)]);
        assert_eq!(p.eval(F7::new(3)), F7::zero());
        let c = Polynomial::constant(Fp31::new(99));
        assert_eq!(c.eval(Fp31::new(12345)), Fp31::new(99));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Polynomial::random_with_constant(Fp31::new(42), 3, &mut rng);
        assert_eq!(r.eval(Fp31::zero()), Fp31::new(42));
    }

    #[test]
    fn interpolate_examples() {
        let s = F7::new(5);
        let pts = [(F7::new(1), s), (F7::new(2), s), (F7::new(3), s)];
        let p = Polynomial::interpolate(&pts).unwrap();
        assert_eq!(p.degree(), 0);
        assert_eq!(p.constant_term(), s);

        // 2x2 system by hand: c0 + c1 = 2, c0 + 2 c1 = 4  =>  c1 = 2, c0 = 0
        let p = Polynomial::interpolate(&[(F7::new(1), F7::new(2)), (F7::new(2), F7::new(4))]).unwrap();
        assert_eq!(p.coeffs, vec![F7::new(0), F7::new(2)]);

        let err = Polynomial::interpolate(&[(F7::new(1), F7::new(2)), (F7::new(1), F7::new(4))]);
        assert_eq!(err, Err(FieldError::DuplicateAbscissa(1)));
    }

    #[test]
    fn field_axioms_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (a, b, c) = (Fp31::random(&mut rng), Fp31::random(&mut rng), Fp31::random(&mut rng));
            assert_eq!((a + b) + c, a + (b + c));
            assert_eq!((a * b) * c, a * (b * c));
            assert_eq!(a + b, b + a);
            assert_eq!(a * b, b * a);
            assert_eq!(a * (b + c), a * b + a * c);
            assert_eq!(a - a, Fp31::zero());
        }
    }

    #[test]
    fn round_trip_all_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for degree in 0..=32 {
            let p = Polynomial::random_with_constant(Fp31::random(&mut rng), degree, &mut rng);
            let pts: Vec<_> = (0..=degree).map(|i| (Fp31::abscissa(i), p.eval(Fp31::abscissa(i)))).collect();
            let q = Polynomial::interpolate(&pts).unwrap();
            assert_eq!(q.coeffs, p.coeffs);
            for &(x, y) in &pts {
                assert_eq!(q.eval(x), y);
            }
            let at = Fp31::new(987654);
            assert_eq!(interpolate_at(&pts, at).unwrap(), p.eval(at));
        }
    }

    #[test]
    fn primality_of_aliases() {
        assert!(Fp31::validate_modulus().is_ok());
        assert!(F7::validate_modulus().is_ok());
        assert!(Fp::<12>::validate_modulus().is_err());
    }

    #[test]
    fn ops_are_counted() {
        let before = field_ops();
        let _ = F7::new(3) * F7::new(4) + F7::new(1);
        assert_eq!(field_ops() - before, 2);
    }

    proptest::proptest! {
        #[test]
        fn interpolation_passes_through_points(ys in proptest::collection::vec(0u64..101, 1..12)) {
            let pts: Vec<_> = ys.iter().enumerate().map(|(i, &y)| (F101::abscissa(i), F101::new(y))).collect();
            let p = Polynomial::interpolate(&pts).unwrap();
            for &(x, y) in &pts {
                proptest::prop_assert_eq!(p.eval(x), y);
            }
        }
    }
}
