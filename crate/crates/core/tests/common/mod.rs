//! High-precision reference arithmetic shared by the integration tests.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};

pub const P: usize = 320;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    cc: Consts,
}

impl Hp {
    pub fn new() -> Self {
        Hp {
            cc: Consts::new().expect("constants cache"),
        }
    }

    pub fn f(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    pub fn int(&self, k: u64) -> BigFloat {
        BigFloat::from_u64(k, P)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(P, RM)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, P, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, P, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, P, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, P, RM)
    }

    pub fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(P, RM)
    }

    pub fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(P, RM, &mut self.cc)
    }

    pub fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(P, RM, &mut self.cc)
    }

    pub fn asin(&mut self, a: &BigFloat) -> BigFloat {
        a.asin(P, RM, &mut self.cc)
    }

    pub fn to_f64(&self, a: &BigFloat) -> f64 {
        let s = format!("{a}");
        s.parse()
            .unwrap_or_else(|_| panic!("cannot read back `{s}`"))
    }

    /// `erfc(x)` for `x >= 0` from the Maclaurin series of `erf`, summed at
    /// high precision so the cancellation in `1 - erf` is harmless.
    pub fn erfc(&mut self, x: f64) -> BigFloat {
        let x = self.f(x);
        let x2 = self.mul(&x, &x);
        let mut term = x.clone();
        let mut sum = self.div(&x, &self.int(1));
        let mut k = 0u64;
        loop {
            k += 1;
            term = self.mul(&term, &x2);
            term = self.div(&term, &self.int(k));
            term = term.neg();
            let add = self.div(&term, &self.int(2 * k + 1));
            sum = self.add(&sum, &add);
            if k > 20 && add.exponent().unwrap_or(i32::MIN) < sum.exponent().unwrap_or(0) - P as i32
            {
                break;
            }
        }
        let pi = self.pi();
        let two = self.int(2);
        let erf = self.div(&self.mul(&two, &sum), &self.sqrt(&pi));
        self.sub(&self.int(1), &erf)
    }
}
