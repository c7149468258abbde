//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] is a value together with every mixed first-order partial with
//! respect to up to [`MAX_INFINITESIMALS`] independent nilpotent
//! infinitesimals `ε₀ … ε₄` (each `εᵢ² = 0`). Coefficient `c[S]` multiplies
//! the product of the infinitesimals whose indices are set in the bitmask `S`.
//!
//! Evaluating a rational map on jets produces its iterated directional
//! derivatives to rounding error. This is what the nested Lie derivatives of
//! the observability codistribution need; nested central differences lose
//! roughly six significant digits per level and are unusable past depth two.
//!
//! Every model function in this crate is written once over the [`Real`]
//! trait, so the same code runs on `f64` and on [`Jet`].

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{ClosedAddAssign, ClosedDivAssign, ClosedMulAssign, ClosedSubAssign, Scalar};
use num_traits::{One, Zero};

/// Number of independent infinitesimals a [`Jet`] can carry.
pub const MAX_INFINITESIMALS: usize = 5;

const WIDTH: usize = 1 << MAX_INFINITESIMALS;

/// Scalar type the model code is generic over.
pub trait Real:
    Scalar
    + Copy
    + Zero
    + One
    + ClosedAddAssign
    + ClosedSubAssign
    + ClosedMulAssign
    + ClosedDivAssign
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;

    /// The real (infinitesimal-free) part.
    fn value(&self) -> f64;

    fn to_jet(self) -> Jet;

    /// Converts back from a jet. For `f64` this keeps only the value, so it
    /// must only be called on jets whose infinitesimal parts were introduced
    /// and consumed locally.
    fn from_jet(j: Jet) -> Self;
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn to_jet(self) -> Jet {
        Jet::constant(self)
    }
    #[inline]
    fn from_jet(j: Jet) -> Self {
        j.value()
    }
}

/// Multi-dual number over at most [`MAX_INFINITESIMALS`] infinitesimals.
///
/// `order` is the number of infinitesimal slots in use; coefficients at
/// indices `>= 1 << order` are always zero.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet {
    order: u8,
    c: [f64; WIDTH],
}

impl Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("order", &self.order)
            .field("c", &&self.c[..self.width()])
            .finish()
    }
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; WIDTH];
        c[0] = v;
        Jet { order: 0, c }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Number of infinitesimal slots in use.
    #[inline]
    pub fn order(&self) -> usize {
        self.order as usize
    }

    #[inline]
    fn width(&self) -> usize {
        1 << self.order
    }

    /// Coefficient of the monomial whose infinitesimals are the bits of `mask`.
    pub fn coeff(&self, mask: usize) -> f64 {
        if mask < self.width() {
            self.c[mask]
        } else {
            0.0
        }
    }

    /// Returns `self + ε_slot · direction`.
    ///
    /// # Panics
    /// If `slot` is already used by either operand or exceeds the capacity.
    pub fn perturbed(&self, slot: usize, direction: &Jet) -> Jet {
        assert!(slot < MAX_INFINITESIMALS, "jet slot {slot} out of range");
        assert!(
            slot >= self.order() && slot >= direction.order(),
            "jet slot {slot} already in use"
        );
        let mut out = *self;
        out.order = slot as u8 + 1;
        let bit = 1 << slot;
        for m in 0..direction.width() {
            out.c[m | bit] += direction.c[m];
        }
        out
    }

    /// Coefficient of `ε_slot`, as a jet over the lower slots.
    ///
    /// `slot` must be the highest slot that could have been introduced;
    /// jets that never picked up that slot have zero derivative.
    pub fn derivative(&self, slot: usize) -> Jet {
        let mut out = Jet::constant(0.0);
        out.order = slot as u8;
        if self.order() <= slot {
            out.order = self.order.min(slot as u8);
            return out;
        }
        debug_assert_eq!(self.order(), slot + 1, "derivative slot must be the top slot");
        let bit = 1 << slot;
        out.c[..bit].copy_from_slice(&self.c[bit..2 * bit]);
        out
    }

    fn scaled(&self, k: f64) -> Jet {
        let mut out = *self;
        for v in &mut out.c[..self.width()] {
            *v *= k;
        }
        out
    }

    fn recip(&self) -> Jet {
        let r0 = 1.0 / self.c[0];
        let mut r = Jet::constant(r0);
        r.order = self.order;
        for s in 1..self.width() {
            // Σ over non-empty t ⊆ s of b[t]·r[s∖t]
            let mut acc = 0.0;
            let mut t = s;
            while t != 0 {
                acc += self.c[t] * r.c[s ^ t];
                t = (t - 1) & s;
            }
            r.c[s] = -acc * r0;
        }
        r
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(mut self, rhs: Jet) -> Jet {
        self += rhs;
        self
    }
}

impl AddAssign for Jet {
    #[inline]
    fn add_assign(&mut self, rhs: Jet) {
        self.order = self.order.max(rhs.order);
        for m in 0..rhs.width() {
            self.c[m] += rhs.c[m];
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(mut self, rhs: Jet) -> Jet {
        self -= rhs;
        self
    }
}

impl SubAssign for Jet {
    #[inline]
    fn sub_assign(&mut self, rhs: Jet) {
        self.order = self.order.max(rhs.order);
        for m in 0..rhs.width() {
            self.c[m] -= rhs.c[m];
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self.scaled(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        if rhs.order == 0 {
            return self.scaled(rhs.c[0]);
        }
        if self.order == 0 {
            return rhs.scaled(self.c[0]);
        }
        let order = self.order.max(rhs.order);
        let mut out = Jet::constant(0.0);
        out.order = order;
        for s in 0..(1usize << order) {
            let mut acc = 0.0;
            let mut t = s;
            loop {
                acc += self.c[t] * rhs.c[s ^ t];
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            out.c[s] = acc;
        }
        out
    }
}

impl MulAssign for Jet {
    #[inline]
    fn mul_assign(&mut self, rhs: Jet) {
        *self = *self * rhs;
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        if rhs.order == 0 {
            return self.scaled(1.0 / rhs.c[0]);
        }
        self * rhs.recip()
    }
}

impl DivAssign for Jet {
    #[inline]
    fn div_assign(&mut self, rhs: Jet) {
        *self = *self / rhs;
    }
}

impl Zero for Jet {
    fn zero() -> Self {
        Jet::constant(0.0)
    }
    fn is_zero(&self) -> bool {
        self.c[..self.width()].iter().all(|v| *v == 0.0)
    }
}

impl One for Jet {
    fn one() -> Self {
        Jet::constant(1.0)
    }
}

impl Real for Jet {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.c[0]
    }
    #[inline]
    fn to_jet(self) -> Jet {
        self
    }
    #[inline]
    fn from_jet(j: Jet) -> Self {
        j
    }
}

/// First-order dual number `v + d·ε`, `ε² = 0`.
///
/// A one-slot [`Jet`] in 16 bytes instead of 256; used for plain Jacobians,
/// which dominate the cost of the variational flow equation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn new(v: f64, d: f64) -> Self {
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, r: Dual) -> Dual {
        Dual::new(self.v + r.v, self.d + r.d)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, r: Dual) {
        *self = *self + r;
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, r: Dual) -> Dual {
        Dual::new(self.v - r.v, self.d - r.d)
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, r: Dual) {
        *self = *self - r;
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, r: Dual) -> Dual {
        Dual::new(self.v * r.v, self.d * r.v + self.v * r.d)
    }
}

impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, r: Dual) {
        *self = *self * r;
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, r: Dual) -> Dual {
        let q = self.v / r.v;
        Dual::new(q, (self.d - q * r.d) / r.v)
    }
}

impl DivAssign for Dual {
    #[inline]
    fn div_assign(&mut self, r: Dual) {
        *self = *self / r;
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Zero for Dual {
    fn zero() -> Self {
        Dual::default()
    }
    fn is_zero(&self) -> bool {
        self.v == 0.0 && self.d == 0.0
    }
}

impl One for Dual {
    fn one() -> Self {
        Dual::new(1.0, 0.0)
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    /// The dual part occupies slot 0.
    fn to_jet(self) -> Jet {
        let j = Jet::constant(self.v);
        if self.d == 0.0 {
            j
        } else {
            j.perturbed(0, &Jet::constant(self.d))
        }
    }
    fn from_jet(j: Jet) -> Self {
        Dual::new(j.value(), j.coeff(1))
    }
}

/// Highest slot order over a slice of jets.
pub fn max_order(xs: &[Jet]) -> usize {
    xs.iter().map(Jet::order).max().unwrap_or(0)
}
