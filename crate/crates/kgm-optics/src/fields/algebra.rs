//! Pointwise field algebra and the KGML nonlinearity written once for any
//! representation (plain samples or oscillatory expansions).

use crate::C64;

/// Commutative algebra of complex fields with conjugation.
pub trait Algebra: Clone {
    /// Sum.
    fn add(&self, o: &Self) -> Self;
    /// Difference.
    fn sub(&self, o: &Self) -> Self;
    /// Pointwise product.
    fn mul(&self, o: &Self) -> Self;
    /// Complex conjugate.
    fn conj(&self) -> Self;
    /// Multiplication by a constant.
    fn scale(&self, c: C64) -> Self;

    /// Real part `(f + conj f)/2`.
    fn re(&self) -> Self {
        self.add(&self.conj()).scale(C64::new(0.5, 0.0))
    }

    /// Imaginary part `(f − conj f)/(2i)`.
    fn im(&self) -> Self {
        self.sub(&self.conj()).scale(C64::new(0.0, -0.5))
    }

    /// `|f|² = f · conj f`.
    fn abs2(&self) -> Self {
        self.mul(&self.conj())
    }
}

impl Algebra for Vec<C64> {
    fn add(&self, o: &Self) -> Self {
        self.iter().zip(o).map(|(a, b)| a + b).collect()
    }
    fn sub(&self, o: &Self) -> Self {
        self.iter().zip(o).map(|(a, b)| a - b).collect()
    }
    fn mul(&self, o: &Self) -> Self {
        self.iter().zip(o).map(|(a, b)| a * b).collect()
    }
    fn conj(&self) -> Self {
        self.iter().map(|a| a.conj()).collect()
    }
    fn scale(&self, c: C64) -> Self {
        self.iter().map(|a| a * c).collect()
    }
}

/// Sign of the metric component `η^{αα}` (−,+,+,+).
pub fn eta(alpha: usize) -> f64 {
    if alpha == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Minkowski contraction `X^α Y_α` of two upper-index vectors.
pub fn contract<T: Algebra>(x: &[T], y: &[T]) -> T {
    let mut acc = x[0].mul(&y[0]).scale(C64::new(-1.0, 0.0));
    for a in 1..x.len() {
        acc = acc.add(&x[a].mul(&y[a]));
    }
    acc
}

/// Right-hand sides of KGML:
///
/// ```text
/// 𝒩_A^β = −Im(Φ conj(∂^βΦ)) + A^β |Φ|²
/// 𝒩_Φ   = −2i A^α ∂_αΦ + A^α A_α Φ
/// ```
///
/// `a` holds the upper-index potential, `dphi` the lower-index gradient
/// `∂_αΦ` (α = 0 is the time derivative).
pub fn kgml_rhs<T: Algebra>(a: &[T], phi: &T, dphi: &[T]) -> (Vec<T>, T) {
    let abs2 = phi.abs2();
    let maxwell = (0..a.len())
        .map(|beta| {
            let up = dphi[beta].scale(C64::new(eta(beta), 0.0));
            phi.mul(&up.conj()).im().scale(C64::new(-1.0, 0.0)).add(&a[beta].mul(&abs2))
        })
        .collect();
    let mut transport = a[0].mul(&dphi[0]);
    for alpha in 1..a.len() {
        transport = transport.add(&a[alpha].mul(&dphi[alpha]));
    }
    let kg = transport.scale(C64::new(0.0, -2.0)).add(&contract(a, a).mul(phi));
    (maxwell, kg)
}

/// Charge flux `𝒥^β = −Im(Φ conj(∂^βΦ)) + A^β|Φ|²` (equal to `𝒩_A^β`).
pub fn charge_flux<T: Algebra>(a: &[T], phi: &T, dphi: &[T]) -> Vec<T> {
    kgml_rhs(a, phi, dphi).0
}
