//! Kumaraswamy primitives, the standard normal, and monotone mixture curves.
//!
//! A [`MonotoneCurve`] is a convex combination of Kumaraswamy cdfs. It maps
//! `[0, 1]` onto `[0, 1]`, fixes both endpoints and is strictly increasing,
//! which is exactly what the joint quantile construction in [`crate::qar`]
//! needs from each of its building blocks.

use serde::{Deserialize, Serialize};

use crate::error::{QarError, Result};

const LN_2: f64 = std::f64::consts::LN_2;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// ln(sqrt(2 pi))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(1 - exp(v))` for `v <= 0` without cancellation.
#[inline]
pub(crate) fn ln_one_minus_exp(v: f64) -> f64 {
    if v > -LN_2 {
        (-v.exp_m1()).ln()
    } else {
        (-v.exp()).ln_1p()
    }
}

/// Shape parameters of a Kumaraswamy distribution on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KumaraswamyParams {
    a: f64,
    b: f64,
}

impl KumaraswamyParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(QarError::InvalidParameter {
                name: "a",
                value: a,
                reason: "must be positive and finite",
            });
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(QarError::InvalidParameter {
                name: "b",
                value: b,
                reason: "must be positive and finite",
            });
        }
        Ok(Self { a, b })
    }

    /// The uniform distribution, `a = b = 1`.
    pub fn uniform() -> Self {
        Self { a: 1.0, b: 1.0 }
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }

    /// `ln(1 - x^a)` for `x` in `[0, 1]`.
    #[inline]
    fn ln_one_minus_xa(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            ln_one_minus_exp(self.a * x.ln())
        }
    }

    #[inline]
    pub(crate) fn cdf_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        -(self.b * self.ln_one_minus_xa(x)).exp_m1()
    }

    #[inline]
    pub(crate) fn pdf_unchecked(&self, x: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        if x <= 0.0 {
            return if a < 1.0 {
                f64::INFINITY
            } else if a == 1.0 {
                b
            } else {
                0.0
            };
        }
        if x >= 1.0 {
            return if b < 1.0 {
                f64::INFINITY
            } else if b == 1.0 {
                a
            } else {
                0.0
            };
        }
        let ln_x = x.ln();
        let ln_pdf =
            a.ln() + b.ln() + (a - 1.0) * ln_x + (b - 1.0) * ln_one_minus_exp(a * ln_x);
        ln_pdf.exp()
    }

    #[inline]
    pub(crate) fn quantile_unchecked(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        if tau >= 1.0 {
            return 1.0;
        }
        // (1 - (1 - tau)^(1/b))^(1/a)
        let w = (-tau).ln_1p() / self.b;
        ((-w.exp_m1()).ln() / self.a).exp()
    }

    /// Median `(1 - 2^(-1/b))^(1/a)`.
    pub fn median(&self) -> f64 {
        self.quantile_unchecked(0.5)
    }
}

fn check_unit(x: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(QarError::Domain(format!("{what} = {x} is outside [0, 1]")))
    }
}

/// Kumaraswamy cdf `1 - (1 - x^a)^b`.
pub fn kuma_cdf(x: f64, p: &KumaraswamyParams) -> Result<f64> {
    check_unit(x, "x")?;
    Ok(p.cdf_unchecked(x))
}

/// Kumaraswamy density `a b x^(a-1) (1 - x^a)^(b-1)`.
///
/// Endpoints are allowed and may evaluate to `+inf` when `a < 1` or `b < 1`.
pub fn kuma_pdf(x: f64, p: &KumaraswamyParams) -> Result<f64> {
    check_unit(x, "x")?;
    Ok(p.pdf_unchecked(x))
}

/// Closed-form Kumaraswamy quantile `(1 - (1 - tau)^(1/b))^(1/a)`.
pub fn kuma_quantile(tau: f64, p: &KumaraswamyParams) -> Result<f64> {
    check_unit(tau, "tau")?;
    Ok(p.quantile_unchecked(tau))
}

/// Parameters of the `k`-th of `K` fixed basis components, whose median is
/// `k / (K + 1)`. The shape `a` is held at 2 and `b` solves the median
/// equation; see [`basis_curve_params_with_shape`] to choose another `a`.
pub fn basis_curve_params(big_k: usize, k: usize) -> Result<KumaraswamyParams> {
    basis_curve_params_with_shape(big_k, k, 2.0)
}

pub fn basis_curve_params_with_shape(big_k: usize, k: usize, a: f64) -> Result<KumaraswamyParams> {
    if big_k == 0 || k == 0 || k > big_k {
        return Err(QarError::Domain(format!(
            "basis index k = {k} must lie in 1..={big_k}"
        )));
    }
    let median = k as f64 / (big_k as f64 + 1.0);
    // (1 - 2^(-1/b))^(1/a) = median  =>  b = ln(1/2) / ln(1 - median^a)
    let b = -LN_2 / ln_one_minus_exp(a * median.ln());
    KumaraswamyParams::new(a, b)
}

/// A strictly increasing map of `[0, 1]` onto itself built as a weighted
/// mixture of Kumaraswamy cdfs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCurve {
    components: Vec<KumaraswamyParams>,
    weights: Vec<f64>,
}

impl MonotoneCurve {
    pub fn new(components: Vec<KumaraswamyParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(QarError::Domain("a curve needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(QarError::Dimension(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(QarError::InvalidParameter {
                name: "lambda",
                value: w,
                reason: "mixture weights must be nonnegative",
            });
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QarError::InvalidParameter {
                name: "lambda",
                value: total,
                reason: "mixture weights must sum to one",
            });
        }
        Ok(Self { components, weights })
    }

    /// A one-component curve.
    pub fn single(p: KumaraswamyParams) -> Self {
        Self {
            components: vec![p],
            weights: vec![1.0],
        }
    }

    /// The identity map `tau -> tau`.
    pub fn identity() -> Self {
        Self::single(KumaraswamyParams::uniform())
    }

    pub fn components(&self) -> &[KumaraswamyParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    #[inline]
    pub fn eval(&self, tau: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.cdf_unchecked(tau))
            .sum()
    }

    #[inline]
    pub fn deriv(&self, tau: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| if *w == 0.0 { 0.0 } else { w * c.pdf_unchecked(tau) })
            .sum()
    }
}

/// `eta(tau)` with a domain check on `tau`.
pub fn curve_eval(c: &MonotoneCurve, tau: f64) -> Result<f64> {
    check_unit(tau, "tau")?;
    Ok(c.eval(tau))
}

/// `d eta / d tau` with a domain check on `tau`.
pub fn curve_deriv(c: &MonotoneCurve, tau: f64) -> Result<f64> {
    check_unit(tau, "tau")?;
    Ok(c.deriv(tau))
}

/// Standard normal cdf through the complementary error function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

// Wichura (1988), algorithm AS 241 (PPND16).
const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const AS241_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&AS241_A, r) / horner(&AS241_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        horner(&AS241_C, r) / horner(&AS241_D, r)
    } else {
        let r = r - 5.0;
        horner(&AS241_E, r) / horner(&AS241_F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Standard normal quantile. Errors at `p` in `{0, 1}` rather than
/// returning an infinity.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(QarError::Domain(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    let x = as241(p);
    // one Newton step against the erfc-based cdf, working on the smaller tail
    let density = normal_pdf(x);
    if density > 0.0 {
        // Phi(x) - p, written as (1 - p) - Phi(-x) in the upper half
        let err = if x < 0.0 {
            normal_cdf(x) - p
        } else {
            (1.0 - p) - normal_cdf(-x)
        };
        return Ok(x - err / density);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(a: f64, b: f64) -> KumaraswamyParams {
        KumaraswamyParams::new(a, b).unwrap()
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(kuma_cdf(0.5, &kp(1.0, 1.0)).unwrap(), 0.5);
        assert!((kuma_cdf(0.5, &kp(2.0, 1.0)).unwrap() - 0.25).abs() < 1e-15);
        let expected = 1.0 - 0.9375f64.powi(4);
        assert!((kuma_cdf(0.5, &kp(4.0, 4.0)).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.227_523_803_710_937_5).abs() < 1e-15);
    }

    #[test]
    fn pdf_examples() {
        assert!((kuma_pdf(0.5, &kp(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((kuma_pdf(0.5, &kp(2.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((kuma_pdf(0.25, &kp(2.0, 2.0)).unwrap() - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn pdf_endpoints() {
        assert_eq!(kuma_pdf(0.0, &kp(0.5, 2.0)).unwrap(), f64::INFINITY);
        assert_eq!(kuma_pdf(0.0, &kp(1.0, 3.0)).unwrap(), 3.0);
        assert_eq!(kuma_pdf(0.0, &kp(2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(kuma_pdf(1.0, &kp(2.0, 0.5)).unwrap(), f64::INFINITY);
        assert_eq!(kuma_pdf(1.0, &kp(2.0, 1.0)).unwrap(), 2.0);
        assert_eq!(kuma_pdf(1.0, &kp(2.0, 3.0)).unwrap(), 0.0);
    }

    #[test]
    fn quantile_examples() {
        for &tau in &[0.0, 0.1, 0.37, 0.9, 1.0] {
            assert!((kuma_quantile(tau, &kp(1.0, 1.0)).unwrap() - tau).abs() < 1e-15);
        }
        assert!((kuma_quantile(0.5, &kp(2.0, 1.0)).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((kuma_quantile(0.75, &kp(2.0, 1.0)).unwrap() - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(kuma_cdf(1.5, &kp(1.0, 1.0)).is_err());
        assert!(kuma_pdf(-0.1, &kp(1.0, 1.0)).is_err());
        assert!(kuma_quantile(1.1, &kp(1.0, 1.0)).is_err());
        assert!(KumaraswamyParams::new(0.0, 1.0).is_err());
        assert!(KumaraswamyParams::new(1.0, -2.0).is_err());
        assert!(KumaraswamyParams::new(f64::INFINITY, 1.0).is_err());
        assert!(KumaraswamyParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn cdf_stays_accurate_near_one() {
        // 1 - (1 - x^a)^b with x = 1 - 1e-10, a = 3, b = 0.5
        let p = kp(3.0, 0.5);
        let x = 1.0 - 1e-10;
        let survival = (1.0 - p.cdf_unchecked(x)).max(0.0);
        // (1 - x^3)^0.5 ~ sqrt(3e-10)
        assert!((survival - (3e-10f64).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn curve_examples() {
        let id = MonotoneCurve::identity();
        assert!((curve_eval(&id, 0.3).unwrap() - 0.3).abs() < 1e-15);

        let twin = MonotoneCurve::new(vec![kp(2.0, 1.0), kp(2.0, 1.0)], vec![0.5, 0.5]).unwrap();
        assert!((curve_eval(&twin, 0.5).unwrap() - 0.25).abs() < 1e-15);

        let mix = MonotoneCurve::new(vec![kp(0.5, 2.0), kp(4.0, 8.0)], vec![0.3, 0.7]).unwrap();
        // hand sums of the two component cdfs at 0.5
        let f1 = 1.0 - (1.0 - 0.5f64.sqrt()).powi(2);
        let f2 = 1.0 - (1.0 - 0.0625f64).powi(8);
        assert!((curve_eval(&mix, 0.5).unwrap() - (0.3 * f1 + 0.7 * f2)).abs() < 1e-14);
        assert_eq!(mix.eval(0.0), 0.0);
        assert!((mix.eval(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn curve_deriv_examples() {
        let id = MonotoneCurve::identity();
        for &t in &[0.1, 0.5, 0.9] {
            assert!((curve_deriv(&id, t).unwrap() - 1.0).abs() < 1e-15);
        }
        let c = MonotoneCurve::single(kp(2.0, 1.0));
        assert!((curve_deriv(&c, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let m = MonotoneCurve::new(vec![kp(1.0, 1.0), kp(2.0, 1.0)], vec![0.5, 0.5]).unwrap();
        assert!((curve_deriv(&m, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn curve_validation() {
        assert!(MonotoneCurve::new(vec![], vec![]).is_err());
        assert!(MonotoneCurve::new(vec![kp(1.0, 1.0)], vec![0.9]).is_err());
        assert!(MonotoneCurve::new(vec![kp(1.0, 1.0), kp(2.0, 2.0)], vec![1.2, -0.2]).is_err());
        assert!(MonotoneCurve::new(vec![kp(1.0, 1.0)], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn basis_examples() {
        let p = basis_curve_params(1, 1).unwrap();
        assert_eq!(p.a(), 2.0);
        assert!((p.b() - 0.5f64.ln() / 0.75f64.ln()).abs() < 1e-13);
        assert!((p.b() - 2.409_420_839_653_209).abs() < 1e-12);
        let q = basis_curve_params(3, 2).unwrap();
        assert!((q.b() - p.b()).abs() < 1e-13);
        let r = basis_curve_params(2, 1).unwrap();
        assert!((r.b() - 0.5f64.ln() / (1.0 - 1.0 / 9.0f64).ln()).abs() < 1e-12);
        assert!((r.b() - 5.884_9).abs() < 1e-3);
        assert!(basis_curve_params(2, 3).is_err());
        assert!(basis_curve_params(0, 0).is_err());
    }

    #[test]
    fn basis_medians() {
        for big_k in 1..=8 {
            for k in 1..=big_k {
                let p = basis_curve_params(big_k, k).unwrap();
                let m = k as f64 / (big_k as f64 + 1.0);
                assert!((kuma_cdf(m, &p).unwrap() - 0.5).abs() < 1e-12, "K={big_k} k={k}");
            }
        }
    }

    #[test]
    fn normal_quantile_edges() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert_eq!(normal_cdf(0.0), 0.5);
        let x = normal_quantile(1e-300).unwrap();
        assert!(x < -37.0 && x.is_finite());
    }
}
