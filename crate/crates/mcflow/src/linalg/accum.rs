//! Compensated (double-double) accumulation for quadratic forms.
//!
//! Energy functionals and Rayleigh quotients of the assembled operators
//! suffer heavy cancellation: entries scale like the fracture
//! transmissibility (1e8 and up) while the quantity of interest can be
//! near zero. Plain f64 sums leave noise far above the tolerances the
//! stability checks assert, so the final reductions run through
//! error-free transformations instead.

/// Knuth's TwoSum: returns (s, e) with s = fl(a + b) and a + b = s + e exactly.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// TwoProd via FMA: (p, e) with p = fl(a * b) and a * b = p + e exactly.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = f64::mul_add(a, b, -p);
    (p, e)
}

/// Running compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    err: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.sum, x);
        self.sum = s;
        self.err += e;
    }

    #[inline]
    pub fn add_prod(&mut self, a: f64, b: f64) {
        let (p, pe) = two_prod(a, b);
        let (s, e) = two_sum(self.sum, p);
        self.sum = s;
        self.err += e + pe;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Compensated dot product.
pub fn dot_compensated(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = Compensated::new();
    for (&a, &b) in x.iter().zip(y.iter()) {
        acc.add_prod(a, b);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_survives() {
        // 1e16 + 1 - 1e16 loses the 1 in plain f64 dot form.
        let x = vec![1e16, 1.0, -1e16];
        let y = vec![1.0, 1.0, 1.0];
        assert_eq!(dot_compensated(&x, &y), 1.0);
    }

    #[test]
    fn product_errors_recovered() {
        // (1 + 2^-27)^2 = 1 + 2^-26 + 2^-54; the last term vanishes in fl().
        let a = 1.0 + f64::powi(2.0, -27);
        let exact = 1.0 + f64::powi(2.0, -26) + f64::powi(2.0, -54);
        let mut acc = Compensated::new();
        acc.add_prod(a, a);
        assert_eq!(acc.value(), exact);
    }
}
