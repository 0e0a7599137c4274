//! Base input spaces, their normalized kernels, and the random feature
//! schemes that sample them.
//!
//! | space               | kernel                    | feature                      | bound      |
//! |---------------------|---------------------------|------------------------------|------------|
//! | `Binary`            | `x x'`                    | `x`                          | 1          |
//! | `Circle`            | `Re(z conj z')`           | `z^w`, `w ~ U{-1,+1}`        | 1          |
//! | `Categorical(n)`    | `1{x = x'}`               | `exp(2 pi i w x / n)`        | 1          |
//! | `Gaussian(d, a)`    | `exp(-a^2 |x - x'|^2 / 2)`| `exp(i a <w, x>)`, `w ~ N(0,I)` | 1       |
//! | `SpherePair(d)`     | `<x, x'>`                 | `sqrt(d/2)(x_j + i b x_{j+1})` | sqrt(d/2) |
//! | `SphereProjection(d)` | `<x, x'>`               | `sqrt(d) <w, x>`, `w ~ U(S^{d-1})` | sqrt(d) |
//!
//! Every scheme is unbiased: `E_w[psi(w,x) conj(psi(w,x'))] = k(x,x')`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Tolerance for unit-modulus and unit-norm domain checks.
pub const DOMAIN_TOL: f64 = 1e-12;

/// A base input space together with its feature scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSpace {
    Binary,
    Circle,
    Categorical { n: u32 },
    Gaussian { d: usize, a: f64 },
    SpherePair { d: usize },
    SphereProjection { d: usize },
}

/// A draw `w ~ mu` for one base space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseParam {
    Binary,
    Circle {
        exponent: i8,
    },
    Categorical {
        omega: u32,
    },
    Gaussian {
        omega: Vec<f64>,
    },
    /// `j` is 1-based.
    SpherePair {
        j: u32,
        b: i8,
    },
    SphereProjection {
        w: Vec<f64>,
    },
}

/// One coordinate of an input record.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseValue {
    Binary(i8),
    Circle(Complex64),
    /// 1-based category.
    Categorical(u32),
    /// Gaussian and sphere coordinates.
    Vector(Vec<f64>),
}

impl BaseValue {
    pub fn circle_from_phase(theta: f64) -> Self {
        BaseValue::Circle(Complex64::from_polar(1.0, theta))
    }
}

impl BaseSpace {
    /// Checks the space's own parameters.
    pub fn check(&self) -> Result<()> {
        match *self {
            BaseSpace::Binary | BaseSpace::Circle => Ok(()),
            BaseSpace::Categorical { n } if n >= 1 => Ok(()),
            BaseSpace::Gaussian { d, a } if d >= 1 && a.is_finite() && a > 0.0 => Ok(()),
            BaseSpace::SpherePair { d } if d >= 3 => Ok(()),
            BaseSpace::SphereProjection { d } if d >= 1 => Ok(()),
            ref s => Err(Error::Parameter(format!("invalid base space {s:?}"))),
        }
    }

    /// The norm bound `C` of this space's feature scheme.
    pub fn bound(&self) -> f64 {
        match *self {
            BaseSpace::SpherePair { d } => (d as f64 / 2.0).sqrt(),
            BaseSpace::SphereProjection { d } => (d as f64).sqrt(),
            _ => 1.0,
        }
    }

    pub fn is_norm_efficient(&self) -> bool {
        !matches!(self, BaseSpace::SpherePair { .. } | BaseSpace::SphereProjection { .. })
    }

    /// Whether the parameter space is finite (exact enumeration possible).
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            BaseSpace::Binary | BaseSpace::Circle | BaseSpace::Categorical { .. } | BaseSpace::SpherePair { .. }
        )
    }

    /// Number of CSV columns a value of this space occupies.
    pub fn width(&self) -> usize {
        match *self {
            BaseSpace::Gaussian { d, .. } | BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d } => d,
            _ => 1,
        }
    }

    /// All parameters with their probabilities, for finite `Omega`.
    pub fn enumerate_params(&self) -> Option<Vec<(BaseParam, f64)>> {
        match *self {
            BaseSpace::Binary => Some(vec![(BaseParam::Binary, 1.0)]),
            BaseSpace::Circle => Some(vec![
                (BaseParam::Circle { exponent: -1 }, 0.5),
                (BaseParam::Circle { exponent: 1 }, 0.5),
            ]),
            BaseSpace::Categorical { n } => {
                let p = 1.0 / n as f64;
                Some((1..=n).map(|omega| (BaseParam::Categorical { omega }, p)).collect())
            }
            BaseSpace::SpherePair { d } => {
                let p = 1.0 / (2 * d) as f64;
                Some(
                    (1..=d as u32)
                        .flat_map(|j| [-1i8, 1].map(move |b| (BaseParam::SpherePair { j, b }, p)))
                        .collect(),
                )
            }
            BaseSpace::Gaussian { .. } | BaseSpace::SphereProjection { .. } => None,
        }
    }

    /// Validates that `x` lies in this space's domain.
    pub fn check_value(&self, x: &BaseValue) -> Result<()> {
        match (self, x) {
            (BaseSpace::Binary, BaseValue::Binary(v)) if *v == 1 || *v == -1 => Ok(()),
            (BaseSpace::Circle, BaseValue::Circle(z)) if (z.norm() - 1.0).abs() <= DOMAIN_TOL => Ok(()),
            (BaseSpace::Categorical { n }, BaseValue::Categorical(v)) if (1..=*n).contains(v) => Ok(()),
            (BaseSpace::Gaussian { d, .. }, BaseValue::Vector(v))
                if v.len() == *d && v.iter().all(|c| c.is_finite()) =>
            {
                Ok(())
            }
            (BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d }, BaseValue::Vector(v))
                if v.len() == *d && (norm(v) - 1.0).abs() <= DOMAIN_TOL =>
            {
                Ok(())
            }
            _ => Err(Error::Domain(format!("value {x:?} is not in {self:?}"))),
        }
    }

    fn check_param(&self, p: &BaseParam) -> Result<()> {
        let ok = match (self, p) {
            (BaseSpace::Binary, BaseParam::Binary) => true,
            (BaseSpace::Circle, BaseParam::Circle { exponent }) => exponent.abs() == 1,
            (BaseSpace::Categorical { n }, BaseParam::Categorical { omega }) => (1..=*n).contains(omega),
            (BaseSpace::Gaussian { d, .. }, BaseParam::Gaussian { omega }) => omega.len() == *d,
            (BaseSpace::SpherePair { d }, BaseParam::SpherePair { j, b }) => {
                (1..=*d as u32).contains(j) && b.abs() == 1
            }
            (BaseSpace::SphereProjection { d }, BaseParam::SphereProjection { w }) => w.len() == *d,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("parameter {p:?} does not belong to {self:?}")))
        }
    }

    /// Checks a parameter read from outside (e.g. a registry file).
    pub fn validate_param(&self, p: &BaseParam) -> Result<()> {
        self.check_param(p)?;
        if let BaseParam::SphereProjection { w } = p {
            if (norm(w) - 1.0).abs() > DOMAIN_TOL {
                return Err(Error::Domain("projection vector is not unit norm".into()));
            }
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Draws `w ~ mu` for the space's scheme.
pub fn sample_base_param(space: &BaseSpace, rng: &mut RandomStream) -> BaseParam {
    match *space {
        BaseSpace::Binary => BaseParam::Binary,
        BaseSpace::Circle => BaseParam::Circle {
            exponent: if rng.coin() { 1 } else { -1 },
        },
        BaseSpace::Categorical { n } => BaseParam::Categorical {
            omega: rng.below(n as usize) as u32 + 1,
        },
        BaseSpace::Gaussian { d, .. } => BaseParam::Gaussian {
            omega: (0..d).map(|_| StandardNormal.sample(rng)).collect(),
        },
        BaseSpace::SpherePair { d } => {
            let k = rng.below(2 * d);
            BaseParam::SpherePair {
                j: (k / 2) as u32 + 1,
                b: if k.is_multiple_of(2) { -1 } else { 1 },
            }
        }
        BaseSpace::SphereProjection { d } => BaseParam::SphereProjection {
            w: uniform_sphere(d, rng),
        },
    }
}

/// Uniform point on `S^{d-1}` from a normalized standard Gaussian vector.
pub fn uniform_sphere(d: usize, rng: &mut RandomStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let r = norm(&v);
        if r > 1e-300 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

/// Evaluates `psi(w, x)`.
pub fn eval_base_feature(space: &BaseSpace, param: &BaseParam, x: &BaseValue) -> Result<Complex64> {
    space.check_param(param)?;
    eval_unchecked(space, param, x)
}

/// Evaluates a feature whose parameter is known to belong to `space`.
pub(crate) fn eval_unchecked(space: &BaseSpace, param: &BaseParam, x: &BaseValue) -> Result<Complex64> {
    match (space, param, x) {
        (BaseSpace::Binary, BaseParam::Binary, BaseValue::Binary(v)) => Ok(Complex64::new(*v as f64, 0.0)),
        (BaseSpace::Circle, BaseParam::Circle { exponent }, BaseValue::Circle(z)) => {
            Ok(if *exponent > 0 { *z } else { z.conj() })
        }
        (BaseSpace::Categorical { n }, BaseParam::Categorical { omega }, BaseValue::Categorical(v)) => {
            let r = (u64::from(*omega) * u64::from(*v)) % u64::from(*n);
            Ok(Complex64::from_polar(1.0, 2.0 * PI * r as f64 / *n as f64))
        }
        (BaseSpace::Gaussian { a, .. }, BaseParam::Gaussian { omega }, BaseValue::Vector(v))
            if v.len() == omega.len() =>
        {
            Ok(Complex64::from_polar(1.0, a * dot(omega, v)))
        }
        (BaseSpace::SpherePair { d }, BaseParam::SpherePair { j, b }, BaseValue::Vector(v)) if v.len() == *d => {
            let j = *j as usize - 1;
            let next = v[(j + 1) % d];
            let s = (*d as f64 / 2.0).sqrt();
            Ok(Complex64::new(s * v[j], s * f64::from(*b) * next))
        }
        (BaseSpace::SphereProjection { d }, BaseParam::SphereProjection { w }, BaseValue::Vector(v))
            if v.len() == *d =>
        {
            Ok(Complex64::new((*d as f64).sqrt() * dot(w, v), 0.0))
        }
        _ => Err(Error::Domain(format!("value {x:?} does not match {space:?}"))),
    }
}

/// The exact normalized kernel of the space.
pub fn base_kernel(space: &BaseSpace, x: &BaseValue, y: &BaseValue) -> Result<f64> {
    match (space, x, y) {
        (BaseSpace::Binary, BaseValue::Binary(a), BaseValue::Binary(b)) => Ok(f64::from(*a) * f64::from(*b)),
        (BaseSpace::Circle, BaseValue::Circle(a), BaseValue::Circle(b)) => Ok((a * b.conj()).re),
        (BaseSpace::Categorical { .. }, BaseValue::Categorical(a), BaseValue::Categorical(b)) => {
            Ok(if a == b { 1.0 } else { 0.0 })
        }
        (BaseSpace::Gaussian { d, a }, BaseValue::Vector(u), BaseValue::Vector(v))
            if u.len() == *d && v.len() == *d =>
        {
            let sq: f64 = u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum();
            Ok((-a * a * sq / 2.0).exp())
        }
        (
            BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d },
            BaseValue::Vector(u),
            BaseValue::Vector(v),
        ) if u.len() == *d && v.len() == *d => Ok(dot(u, v)),
        _ => Err(Error::Domain(format!("values {x:?}, {y:?} do not match {space:?}"))),
    }
}

impl BaseParam {
    /// Appends the canonical byte encoding; equal encodings mean equal parameters.
    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        match self {
            BaseParam::Binary => buf.push(0),
            BaseParam::Circle { exponent } => {
                buf.push(1);
                buf.push(*exponent as u8);
            }
            BaseParam::Categorical { omega } => {
                buf.push(2);
                buf.extend_from_slice(&omega.to_be_bytes());
            }
            BaseParam::Gaussian { omega } => {
                buf.push(3);
                buf.extend_from_slice(&(omega.len() as u32).to_be_bytes());
                for w in omega {
                    buf.extend_from_slice(&w.to_bits().to_be_bytes());
                }
            }
            BaseParam::SpherePair { j, b } => {
                buf.push(4);
                buf.extend_from_slice(&j.to_be_bytes());
                buf.push(*b as u8);
            }
            BaseParam::SphereProjection { w } => {
                buf.push(5);
                buf.extend_from_slice(&(w.len() as u32).to_be_bytes());
                for c in w {
                    buf.extend_from_slice(&c.to_bits().to_be_bytes());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn i() -> Complex64 {
        Complex64::new(0.0, 1.0)
    }

    #[test]
    fn binary_param_is_deterministic() {
        let mut rng = RandomStream::new(1);
        for _ in 0..10 {
            assert_eq!(sample_base_param(&BaseSpace::Binary, &mut rng), BaseParam::Binary);
        }
    }

    #[test]
    fn circle_exponent_is_fair() {
        let mut rng = RandomStream::new(11);
        let n = 1_000_000;
        let plus = (0..n)
            .filter(|_| sample_base_param(&BaseSpace::Circle, &mut rng) == BaseParam::Circle { exponent: 1 })
            .count();
        let f = plus as f64 / n as f64;
        assert!((0.498..=0.502).contains(&f), "{f}");
    }

    #[test]
    fn sphere_pair_outcomes_are_uniform() {
        let mut rng = RandomStream::new(12);
        let n = 1_000_000usize;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            match sample_base_param(&BaseSpace::SpherePair { d: 3 }, &mut rng) {
                BaseParam::SpherePair { j, b } => counts[(j as usize - 1) * 2 + usize::from(b > 0)] += 1,
                _ => unreachable!(),
            }
        }
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() <= 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn feature_examples() {
        let z = eval_base_feature(
            &BaseSpace::Circle,
            &BaseParam::Circle { exponent: 1 },
            &BaseValue::Circle(i()),
        )
        .unwrap();
        assert_eq!(z, i());

        let s = eval_base_feature(
            &BaseSpace::SpherePair { d: 3 },
            &BaseParam::SpherePair { j: 3, b: 1 },
            &BaseValue::Vector(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!((s - Complex64::new(1.5f64.sqrt(), 0.0)).norm() < 1e-15);

        let g = eval_base_feature(
            &BaseSpace::Gaussian { d: 1, a: 1.0 },
            &BaseParam::Gaussian { omega: vec![0.0] },
            &BaseValue::Vector(vec![3.7]),
        )
        .unwrap();
        assert_eq!(g, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn kernel_examples() {
        let cat = BaseSpace::Categorical { n: 5 };
        assert_eq!(
            base_kernel(&cat, &BaseValue::Categorical(2), &BaseValue::Categorical(2)).unwrap(),
            1.0
        );
        let g = BaseSpace::Gaussian { d: 2, a: 1.0 };
        let o = BaseValue::Vector(vec![0.0, 0.0]);
        assert_eq!(base_kernel(&g, &o, &o).unwrap(), 1.0);
        let k = base_kernel(
            &BaseSpace::Circle,
            &BaseValue::Circle(Complex64::new(1.0, 0.0)),
            &BaseValue::Circle(i()),
        )
        .unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn domain_mismatch_is_rejected() {
        assert!(matches!(
            eval_base_feature(&BaseSpace::Binary, &BaseParam::Binary, &BaseValue::Categorical(1)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            eval_base_feature(&BaseSpace::Circle, &BaseParam::Binary, &BaseValue::Circle(i())),
            Err(Error::Domain(_))
        ));
        assert!(base_kernel(
            &BaseSpace::Categorical { n: 3 },
            &BaseValue::Binary(1),
            &BaseValue::Binary(1)
        )
        .is_err());
        assert!(BaseSpace::SpherePair { d: 3 }
            .check_value(&BaseValue::Vector(vec![1.0, 1.0, 0.0]))
            .is_err());
        assert!(BaseSpace::SpherePair { d: 2 }.check().is_err());
    }

    fn random_value(space: &BaseSpace, rng: &mut RandomStream) -> BaseValue {
        match *space {
            BaseSpace::Binary => BaseValue::Binary(if rng.coin() { 1 } else { -1 }),
            BaseSpace::Circle => BaseValue::circle_from_phase(rng.uniform() * 2.0 * PI),
            BaseSpace::Categorical { n } => BaseValue::Categorical(rng.below(n as usize) as u32 + 1),
            BaseSpace::Gaussian { d, .. } => BaseValue::Vector((0..d).map(|_| StandardNormal.sample(rng)).collect()),
            BaseSpace::SpherePair { d } | BaseSpace::SphereProjection { d } => {
                BaseValue::Vector(uniform_sphere(d, rng))
            }
        }
    }

    #[test]
    fn finite_schemes_are_exactly_unbiased() {
        let spaces = [
            BaseSpace::Binary,
            BaseSpace::Circle,
            BaseSpace::Categorical { n: 1 },
            BaseSpace::Categorical { n: 7 },
            BaseSpace::SpherePair { d: 3 },
            BaseSpace::SpherePair { d: 6 },
        ];
        let mut rng = RandomStream::new(99);
        for space in &spaces {
            let params = space.enumerate_params().unwrap();
            for _ in 0..100 {
                let x = random_value(space, &mut rng);
                let y = random_value(space, &mut rng);
                let avg: f64 = params
                    .iter()
                    .map(|(p, w)| {
                        let a = eval_base_feature(space, p, &x).unwrap();
                        let b = eval_base_feature(space, p, &y).unwrap();
                        w * (a * b.conj()).re
                    })
                    .sum();
                let k = base_kernel(space, &x, &y).unwrap();
                assert!((avg - k).abs() <= 1e-12, "{space:?}: {avg} vs {k}");
            }
        }
    }

    #[test]
    fn continuous_schemes_are_unbiased_in_expectation() {
        let spaces = [
            BaseSpace::Gaussian { d: 3, a: 0.7 },
            BaseSpace::SphereProjection { d: 4 },
        ];
        let mut rng = RandomStream::new(5);
        let n = 1_000_000;
        for space in &spaces {
            let x = random_value(space, &mut rng);
            let y = random_value(space, &mut rng);
            let mut sum = 0.0;
            for _ in 0..n {
                let p = sample_base_param(space, &mut rng);
                let a = eval_base_feature(space, &p, &x).unwrap();
                let b = eval_base_feature(space, &p, &y).unwrap();
                sum += (a * b.conj()).re;
            }
            let k = base_kernel(space, &x, &y).unwrap();
            let tol = 5.0 / (n as f64).sqrt() * space.bound().powi(2);
            assert!((sum / n as f64 - k).abs() <= tol, "{space:?}");
        }
    }

    proptest! {
        #[test]
        fn features_respect_bounds(seed in any::<u64>(), which in 0usize..6) {
            let spaces = [
                BaseSpace::Binary,
                BaseSpace::Circle,
                BaseSpace::Categorical { n: 9 },
                BaseSpace::Gaussian { d: 4, a: 2.0 },
                BaseSpace::SpherePair { d: 5 },
                BaseSpace::SphereProjection { d: 5 },
            ];
            let space = &spaces[which];
            let mut rng = RandomStream::new(seed);
            let x = random_value(space, &mut rng);
            let p = sample_base_param(space, &mut rng);
            let v = eval_base_feature(space, &p, &x).unwrap();
            prop_assert!(v.norm() <= space.bound() + 1e-12);
            if space.is_norm_efficient() {
                prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
            }
            prop_assert!((base_kernel(space, &x, &x).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}
