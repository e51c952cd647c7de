//! Closed-form vector rogue waves of the Yajima-Oikawa system
//!
//! ```text
//! i S_t + 0.5 S_xx + S L = 0,    L_t = (|S|^2)_x
//! ```
//!
//! The general rational solution depends on a background amplitude `a`, a
//! long-wave offset `b` and a wavenumber `k`; `m` and `n` follow from them
//! through a cubic whose real root is picked by the branch rule in
//! [`derive_rw_parameters`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("background amplitude must be positive, got {0}")]
    Amplitude(f64),
    #[error("long-wave offset must be non-negative, got {0}")]
    Offset(f64),
    #[error("wavenumber {k} outside the existence range k < 1.5 k_n = {limit}")]
    OutOfRange { k: f64, limit: f64 },
    #[error("rho^2 - sigma^3 = {0} < 0: the real cube-root branch does not exist")]
    Branch(f64),
    #[error("eta vanishes: degenerate parameters")]
    Degenerate,
    #[error("(3m - k)(m - k) = {0} < 0: no real rogue wave")]
    NoRealWave(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bright,
    Intermediate,
    Dark,
}

/// Parameters of one rogue-wave family; `n` is stored positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RwParams {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub m: f64,
    pub n: f64,
    pub sigma: f64,
    pub rho: f64,
    pub eta: f64,
    pub k_n: f64,
}

/// One point of the `(u, v, L)` field, with `S = u + i v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub x: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub l: f64,
}

impl FieldSample {
    pub fn s(&self) -> Complex64 {
        Complex64::new(self.u, self.v)
    }

    pub fn modulus(&self) -> f64 {
        self.u.hypot(self.v)
    }
}

pub fn critical_wavenumber(a: f64) -> f64 {
    (2.0 * a * a).cbrt()
}

/// Wavenumber of the intermediate family used in the forward experiments.
pub fn intermediate_k() -> f64 {
    0.5 * 2f64.cbrt()
}

/// Wavenumber of the dark family used in the forward experiments.
pub fn dark_k() -> f64 {
    1.2 * 2f64.cbrt()
}

/// `eta` for `k <= -3 k_n`.
pub fn eta_lower_branch(rho: f64, disc: f64) -> f64 {
    -(rho - disc.sqrt()).cbrt()
}

/// `eta` for `-3 k_n < k <= 1.5 k_n`.
pub fn eta_upper_branch(rho: f64, disc: f64) -> f64 {
    (-rho + disc.sqrt()).cbrt()
}

pub fn derive_rw_parameters(a: f64, b: f64, k: f64) -> Result<RwParams, ExactError> {
    if !(a > 0.0) {
        return Err(ExactError::Amplitude(a));
    }
    if !(b >= 0.0) {
        return Err(ExactError::Offset(b));
    }
    let k_n = critical_wavenumber(a);
    if !(k < 1.5 * k_n) {
        return Err(ExactError::OutOfRange { k, limit: 1.5 * k_n });
    }
    let a2 = a * a;
    let sigma = k.powi(4) / 9.0 + 6.0 * a2 * k;
    let rho = 0.5 * k.powi(6) - (27.0 * a2 + 5.0 * k.powi(3)).powi(2) / 54.0;
    let disc = rho * rho - sigma.powi(3);
    if disc < 0.0 {
        return Err(ExactError::Branch(disc));
    }
    let eta = if k <= -3.0 * k_n {
        eta_lower_branch(rho, disc)
    } else {
        eta_upper_branch(rho, disc)
    };
    // `sigma / eta` is 0/0 at the seam; for rho > 0 it equals
    // `-cbrt(rho + sqrt(disc))`, which has no cancellation.
    let sigma_over_eta = if rho > 0.0 {
        -(rho + disc.sqrt()).cbrt()
    } else if eta == 0.0 {
        return Err(ExactError::Degenerate);
    } else {
        sigma / eta
    };
    let m = (5.0 * k - (3.0 * (k * k + eta + sigma_over_eta)).sqrt()) / 6.0;
    let n2 = (3.0 * m - k) * (m - k);
    if !(n2 >= 0.0) {
        return Err(ExactError::NoRealWave(n2));
    }
    Ok(RwParams {
        a,
        b,
        k,
        m,
        n: n2.sqrt(),
        sigma,
        rho,
        eta,
        k_n,
    })
}

pub fn classify(a: f64, k: f64) -> Result<Regime, ExactError> {
    let k_n = critical_wavenumber(a);
    let dark_from = (4.0f64 / 3.0).cbrt() * k_n;
    if k <= 0.0 {
        Ok(Regime::Bright)
    } else if k < dark_from {
        Ok(Regime::Intermediate)
    } else if k < 1.5 * k_n {
        Ok(Regime::Dark)
    } else {
        Err(ExactError::OutOfRange { k, limit: 1.5 * k_n })
    }
}

impl RwParams {
    pub fn bright() -> Self {
        derive_rw_parameters(1.0, 0.0, 0.0).expect("bright family exists")
    }

    pub fn intermediate() -> Self {
        derive_rw_parameters(1.0, 0.0, intermediate_k()).expect("intermediate family exists")
    }

    pub fn dark() -> Self {
        derive_rw_parameters(1.0, 0.0, dark_k()).expect("dark family exists")
    }

    pub fn regime(&self) -> Regime {
        classify(self.a, self.k).expect("validated at construction")
    }

    /// Minimum of the rational denominator over the plane.
    pub fn denominator_floor(&self) -> f64 {
        1.0 / (4.0 * self.n * self.n)
    }

    pub fn eval(&self, x: f64, t: f64) -> FieldSample {
        eval_general_rw(self, x, t)
    }
}

pub fn eval_general_rw(p: &RwParams, x: f64, t: f64) -> FieldSample {
    let (m, n, k) = (p.m, p.n, p.k);
    let n2 = n * n;
    let xi = x - m * t;
    let den = xi * xi + n2 * t * t + 0.25 / n2;
    let two_m_k = 2.0 * m - k;
    let numer = Complex64::new(1.0 / (2.0 * two_m_k * (m - k)), t + x / two_m_k);
    let phase = k * x - (0.5 * k * k - p.b) * t;
    let s = Complex64::from_polar(p.a, phase) * (1.0 - numer / den);
    let l = p.b + 2.0 * (n2 * t * t - xi * xi + 0.25 / n2) / (den * den);
    FieldSample {
        x,
        t,
        u: s.re,
        v: s.im,
        l,
    }
}

/// Explicit bright-bright pair (`a = 1, b = 0, k = 0`).
pub fn eval_bright_bright(x: f64, t: f64) -> FieldSample {
    let q = 3.0 * t * t + 3.0 * t * x + 3.0 * x * x;
    let den = q + 1.0;
    let u = (q - 2.0) / den;
    let v = (3.0 * x - 3.0 * t) / den;
    let l = 3.0 * (3.0 * t * t - 6.0 * t * x - 6.0 * x * x + 2.0) / (den * den);
    FieldSample { x, t, u, v, l }
}

const D1: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
const D2: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];

fn fd1<T, F>(f: F, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let mut acc = (f(h) - f(-h)) * D1[0];
    for (j, c) in D1.iter().enumerate().skip(1) {
        let o = (j + 1) as f64 * h;
        acc = acc + (f(o) - f(-o)) * *c;
    }
    acc * (1.0 / h)
}

fn fd2<T, F>(f: F, h: f64) -> T
where
    F: Fn(f64) -> T,
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let mut acc = f(0.0) * D2[0];
    for (j, c) in D2.iter().enumerate().skip(1) {
        let o = j as f64 * h;
        acc = acc + (f(o) + f(-o)) * *c;
    }
    acc * (1.0 / (h * h))
}

/// Residuals `|i S_t + 0.5 S_xx + S L|` and `|L_t - (|S|^2)_x|` at one point,
/// with sixth-order central differences of step `h`.
pub fn pde_residual_at(p: &RwParams, x: f64, t: f64, h: f64) -> (f64, f64) {
    let s_at = |x: f64, t: f64| p.eval(x, t).s();
    let here = p.eval(x, t);
    let s_t = fd1(|d| s_at(x, t + d), h);
    let s_xx = fd2(|d| s_at(x + d, t), h);
    let l_t = fd1(|d| p.eval(x, t + d).l, h);
    let mod2_x = fd1(|d| s_at(x + d, t).norm_sqr(), h);
    let r_s = Complex64::i() * s_t + s_xx * 0.5 + here.s() * here.l;
    let r_l = l_t - mod2_x;
    (r_s.norm(), r_l.abs())
}

/// Largest PDE residual of the closed form over the given points.
pub fn verify_pde_residual(p: &RwParams, points: &[(f64, f64)], h: f64) -> f64 {
    points
        .iter()
        .map(|&(x, t)| {
            let (a, b) = pde_residual_at(p, x, t, h);
            a.max(b)
        })
        .fold(0.0, f64::max)
}

/// `nx x nt` tensor grid over a box, as `(x, t)` pairs.
pub fn box_points(x: (f64, f64), t: (f64, f64), nx: usize, nt: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(nx * nt);
    for j in 0..nt {
        let tj = t.0 + (t.1 - t.0) * j as f64 / (nt - 1) as f64;
        for i in 0..nx {
            out.push((x.0 + (x.1 - x.0) * i as f64 / (nx - 1) as f64, tj));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bright_parameters() {
        let p = RwParams::bright();
        assert!((p.m + 0.5).abs() < 1e-12);
        assert!((p.n - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(p.regime(), Regime::Bright);
    }

    #[test]
    fn intermediate_and_dark_parameters() {
        // Frozen from a 40-digit evaluation of the parameter relations.
        let p = RwParams::intermediate();
        assert!((p.m - -0.09909159751616893).abs() < 1e-12);
        assert!((p.n - 0.8221939407728767).abs() < 1e-12);
        assert!((p.eta - 3.018576332288872).abs() < 1e-12);
        let p = RwParams::dark();
        assert!((p.m - 0.4179263056480985).abs() < 1e-12);
        assert!((p.n - 0.5313988960246235).abs() < 1e-12);
        let p = derive_rw_parameters(1.0, 0.0, -5.0).unwrap();
        assert!((p.m - -5.019688664056924).abs() < 1e-11);
        assert!((p.n - 0.44502760706081657).abs() < 1e-11);
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(
            derive_rw_parameters(0.0, 0.0, 0.0),
            Err(ExactError::Amplitude(_))
        ));
        assert!(matches!(
            derive_rw_parameters(1.0, -0.1, 0.0),
            Err(ExactError::Offset(_))
        ));
        assert!(matches!(
            derive_rw_parameters(1.0, 0.0, 1.5 * 2f64.cbrt()),
            Err(ExactError::OutOfRange { .. })
        ));
    }

    #[test]
    fn branches_agree_at_seam() {
        let k_n = critical_wavenumber(1.0);
        let k = -3.0 * k_n;
        let sigma = k.powi(4) / 9.0 + 6.0 * k;
        let rho = 0.5 * k.powi(6) - (27.0 + 5.0 * k.powi(3)).powi(2) / 54.0;
        let disc = rho * rho - sigma.powi(3);
        assert!(disc >= 0.0);
        let lo = eta_lower_branch(rho, disc);
        let hi = eta_upper_branch(rho, disc);
        assert!((lo - hi).abs() <= 1e-12);
        // sigma and eta both vanish here; m takes its limiting value.
        let p = derive_rw_parameters(1.0, 0.0, k).unwrap();
        let m_limit = (5.0 * k - (3.0 * (k * k - 9.0)).sqrt()) / 6.0;
        assert!((p.m - m_limit).abs() < 1e-9);
        let near = derive_rw_parameters(1.0, 0.0, k * (1.0 + 1e-7)).unwrap();
        assert!((near.m - p.m).abs() < 1e-5);
    }

    #[test]
    fn classification_boundaries() {
        let kn = 2f64.cbrt();
        let cases = [
            (-1.0, Regime::Bright),
            (0.0, Regime::Bright),
            (0.5 * kn, Regime::Intermediate),
            ((4.0f64 / 3.0).cbrt() * kn, Regime::Dark),
            (1.2 * kn, Regime::Dark),
        ];
        for (k, want) in cases {
            assert_eq!(classify(1.0, k).unwrap(), want, "k = {k}");
        }
    }

    #[test]
    fn bright_peak_and_background() {
        let s = eval_general_rw(&RwParams::bright(), 0.0, 0.0);
        assert!((s.modulus() - 2.0).abs() < 1e-14);
        assert!((s.l - 6.0).abs() < 1e-13);
        let far = eval_general_rw(&RwParams::bright(), 1e3, 0.0);
        assert!((far.modulus() - 1.0).abs() < 1e-4);
        assert!(far.l.abs() < 1e-4);
    }

    #[test]
    fn explicit_pair_values() {
        let o = eval_bright_bright(0.0, 0.0);
        assert_eq!((o.u, o.v, o.l), (-2.0, 0.0, 6.0));
        let p = eval_bright_bright(1.0, 0.0);
        assert_eq!((p.u, p.v, p.l), (0.25, 0.75, -0.75));
    }

    #[test]
    fn n_sign_is_unobservable() {
        let p = RwParams::dark();
        let q = RwParams { n: -p.n, ..p };
        for &(x, t) in &[(0.3, -0.2), (-2.0, 1.1)] {
            assert_eq!(p.eval(x, t), q.eval(x, t));
        }
    }

    #[test]
    fn far_field_residual_is_tiny() {
        let p = RwParams::bright();
        let r = verify_pde_residual(&p, &[(1e4, 0.0), (-1e4, 3.0)], 0.1);
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn offset_tail_tends_to_b() {
        let p = derive_rw_parameters(1.0, 0.7, 0.3).unwrap();
        assert!((p.eval(2e3, 1e3).l - 0.7).abs() < 1e-6);
    }
}
