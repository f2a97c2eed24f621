//! Discontinuous right-hand sides `f(x, s)`: pointwise rule, declared jump
//! structure, essential envelopes, primitive and bracket selections.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type PointRule = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type LevelRule = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("invalid nonlinearity: {0}")]
    Invalid(String),
    #[error("quadrature for F(x, {s}) did not converge (achieved relative error {achieved:.3e})")]
    Quadrature { s: f64, achieved: f64 },
    #[error("unknown nonlinearity `{0}`")]
    UnknownName(String),
    #[error("nonlinearity `{name}` is missing parameter `{param}`")]
    MissingParameter { name: String, param: String },
}

/// A jump of `f(x, ·)` across the level `s = level(x)`, with one-sided limits
/// `below(x) = lim_{s↗level} f` and `above(x) = lim_{s↘level} f`.
#[derive(Clone)]
pub struct Jump {
    pub level: LevelRule,
    pub below: LevelRule,
    pub above: LevelRule,
}

impl Jump {
    /// Jump at a fixed level with constant one-sided limits.
    pub fn constant(level: f64, below: f64, above: f64) -> Self {
        Self {
            level: Arc::new(move |_| level),
            below: Arc::new(move |_| below),
            above: Arc::new(move |_| above),
        }
    }
}

impl fmt::Debug for Jump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jump").finish_non_exhaustive()
    }
}

/// Interval `[f̲, f̄]` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// Set when the bracket was estimated by sampling rather than taken from
    /// declared jump data.
    pub approximate: bool,
}

impl Bracket {
    pub fn point(v: f64) -> Self {
        Self {
            lo: v,
            hi: v,
            approximate: false,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Distance from `v` to the bracket widened by `slack` on both sides.
    pub fn distance(&self, v: f64, slack: f64) -> f64 {
        if v < self.lo - slack {
            self.lo - slack - v
        } else if v > self.hi + slack {
            v - self.hi - slack
        } else {
            0.0
        }
    }

    pub fn hull(&self, other: &Bracket) -> Bracket {
        Bracket {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
            approximate: self.approximate || other.approximate,
        }
    }

    pub fn select(&self, rule: SelectionRule) -> f64 {
        match rule {
            SelectionRule::Lo => self.lo,
            SelectionRule::Mid => self.midpoint(),
            SelectionRule::Hi => self.hi,
        }
    }
}

/// Which point of a nondegenerate bracket a selection returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionRule {
    Lo,
    #[default]
    Mid,
    Hi,
}

impl FromStr for SelectionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "lo" => Ok(Self::Lo),
            "mid" | "midpoint" => Ok(Self::Mid),
            "hi" => Ok(Self::Hi),
            other => Err(format!(
                "unknown selection rule `{other}` (expected lo, mid or hi)"
            )),
        }
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lo => "lo",
            Self::Mid => "mid",
            Self::Hi => "hi",
        })
    }
}

/// Sampling schedule for envelopes of black-box rules.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub deltas: Vec<f64>,
    pub samples: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            deltas: vec![1e-2, 1e-3, 1e-4],
            samples: 64,
        }
    }
}

/// `f(x, s)` with growth constants `|f| <= C (1 + |s|^(q-1))`.
///
/// `jumps` is `Some` when the discontinuity structure is declared (exact
/// mode, possibly with no jumps at all for continuous rules) and `None` for a
/// black-box rule whose envelopes are estimated by sampling.
#[derive(Clone)]
pub struct NonlinearitySpec {
    name: String,
    evaluate: PointRule,
    jumps: Option<Vec<Jump>>,
    growth_c: f64,
    growth_q: f64,
    estimator: EstimatorOptions,
}

impl fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearitySpec")
            .field("name", &self.name)
            .field("jumps", &self.jumps.as_ref().map(Vec::len))
            .field("growth_c", &self.growth_c)
            .field("growth_q", &self.growth_q)
            .finish()
    }
}

const GAUSS7_NODES: [f64; 7] = [
    -0.949_107_912_342_758_5,
    -0.741_531_185_599_394_4,
    -0.405_845_151_377_397_2,
    0.0,
    0.405_845_151_377_397_2,
    0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
];
const GAUSS7_WEIGHTS: [f64; 7] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
];
const QUAD_RTOL: f64 = 1e-10;
const QUAD_MAX_DEPTH: usize = 48;
/// Bisections allowed per smooth piece before giving up.
const QUAD_MAX_SPLITS: usize = 20_000;
/// Levels refined unconditionally, so that a lucky agreement of the coarse
/// estimates cannot end the recursion.
const QUAD_MIN_DEPTH: usize = 2;

impl NonlinearitySpec {
    /// Black-box rule: envelopes are estimated by sampling.
    pub fn black_box(
        name: impl Into<String>,
        evaluate: PointRule,
        growth_c: f64,
        growth_q: f64,
    ) -> Result<Self, NonlinearityError> {
        if !(growth_c >= 0.0) || !growth_c.is_finite() {
            return Err(NonlinearityError::Invalid(format!(
                "growth constant C must be finite and nonnegative, got {growth_c}"
            )));
        }
        if !(growth_q > 1.0) || !growth_q.is_finite() {
            return Err(NonlinearityError::Invalid(format!(
                "growth exponent q must lie in (1, inf), got {growth_q}"
            )));
        }
        Ok(Self {
            name: name.into(),
            evaluate,
            jumps: None,
            growth_c,
            growth_q,
            estimator: EstimatorOptions::default(),
        })
    }

    /// Rule with a declared (possibly empty) jump list.
    pub fn with_jumps(
        name: impl Into<String>,
        evaluate: PointRule,
        jumps: Vec<Jump>,
        growth_c: f64,
        growth_q: f64,
    ) -> Result<Self, NonlinearityError> {
        let mut spec = Self::black_box(name, evaluate, growth_c, growth_q)?;
        spec.jumps = Some(jumps);
        Ok(spec)
    }

    pub fn with_estimator(mut self, estimator: EstimatorOptions) -> Self {
        self.estimator = estimator;
        self
    }

    /// Drops the jump metadata, turning this into a black-box rule.
    pub fn forget_jumps(mut self) -> Self {
        self.jumps = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth_c(&self) -> f64 {
        self.growth_c
    }

    pub fn growth_q(&self) -> f64 {
        self.growth_q
    }

    pub fn jumps(&self) -> Option<&[Jump]> {
        self.jumps.as_deref()
    }

    pub fn is_exact(&self) -> bool {
        self.jumps.is_some()
    }

    pub fn evaluate(&self, x: &[f64], s: f64) -> f64 {
        (self.evaluate)(x, s)
    }

    /// Jump levels at `x`.
    pub fn jump_levels(&self, x: &[f64]) -> Vec<f64> {
        self.jumps.iter().flatten().map(|j| (j.level)(x)).collect()
    }

    /// `[f̲(x, s), f̄(x, s)]`.
    pub fn bracket(&self, x: &[f64], s: f64) -> Bracket {
        match &self.jumps {
            Some(jumps) => {
                let mut b: Option<Bracket> = None;
                for j in jumps {
                    if (j.level)(x) == s {
                        let (lo, hi) = ((j.below)(x), (j.above)(x));
                        let here = Bracket {
                            lo: lo.min(hi),
                            hi: lo.max(hi),
                            approximate: false,
                        };
                        b = Some(b.map_or(here, |prev| prev.hull(&here)));
                    }
                }
                b.unwrap_or_else(|| Bracket::point(self.evaluate(x, s)))
            }
            None => self.estimate_bracket(x, s),
        }
    }

    pub fn lower_envelope(&self, x: &[f64], s: f64) -> f64 {
        self.bracket(x, s).lo
    }

    pub fn upper_envelope(&self, x: &[f64], s: f64) -> f64 {
        self.bracket(x, s).hi
    }

    /// inf/sup of `evaluate(x, ·)` over symmetric samples of `|t - s| < δ`
    /// for the decreasing δ schedule; the last δ wins.
    fn estimate_bracket(&self, x: &[f64], s: f64) -> Bracket {
        let n = self.estimator.samples.max(1);
        let mut out = Bracket {
            lo: self.evaluate(x, s),
            hi: self.evaluate(x, s),
            approximate: true,
        };
        for &delta in &self.estimator.deltas {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..n {
                let t = s - delta + 2.0 * delta * (k as f64 + 0.5) / n as f64;
                let v = self.evaluate(x, t);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            out.lo = lo;
            out.hi = hi;
        }
        out
    }

    /// A value of the bracket at `(x, s)`: the pointwise value where `f` is
    /// continuous, the point chosen by `rule` on a jump.
    pub fn selection(&self, x: &[f64], s: f64, rule: SelectionRule) -> f64 {
        let b = self.bracket(x, s);
        if b.approximate {
            // sampled brackets of continuous rules have width O(δ·|f'|);
            // only a visibly open bracket counts as a jump
            let f = self.evaluate(x, s);
            let scale = 1.0 + f.abs() + b.lo.abs() + b.hi.abs();
            if b.width() <= 1e-3 * scale {
                return f.clamp(b.lo, b.hi);
            }
            return b.select(rule);
        }
        if b.lo == b.hi {
            b.lo
        } else {
            b.select(rule)
        }
    }

    /// True when `(x, s)` sits on a jump with an open bracket.
    pub fn is_jump_point(&self, x: &[f64], s: f64) -> bool {
        let b = self.bracket(x, s);
        if b.approximate {
            let scale = 1.0 + b.lo.abs() + b.hi.abs();
            b.width() > 1e-3 * scale
        } else {
            b.lo < b.hi
        }
    }

    /// `F(x, s) = ∫_0^s f(x, ξ) dξ`, split at declared jump levels and
    /// integrated piecewise by adaptive 7-point Gauss-Legendre quadrature.
    pub fn primitive(&self, x: &[f64], s: f64) -> Result<f64, NonlinearityError> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let (a, b, sign) = if s > 0.0 {
            (0.0, s, 1.0)
        } else {
            (s, 0.0, -1.0)
        };
        Ok(sign * self.integrate(x, a, b)?)
    }

    /// `∫_a^b f(x, ξ) dξ` for `a <= b`.
    pub fn integrate(&self, x: &[f64], a: f64, b: f64) -> Result<f64, NonlinearityError> {
        if a > b {
            return Ok(-self.integrate(x, b, a)?);
        }
        // zero is where power-type rules lose smoothness
        let mut cuts: Vec<f64> = self
            .jump_levels(x)
            .into_iter()
            .chain(std::iter::once(0.0))
            .filter(|&l| l > a && l < b)
            .collect();
        cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        cuts.dedup();
        let mut total = 0.0;
        let mut left = a;
        for right in cuts.into_iter().chain(std::iter::once(b)) {
            if right > left {
                total += self.integrate_smooth(x, left, right)?;
            }
            left = right;
        }
        Ok(total)
    }

    fn gauss(&self, x: &[f64], a: f64, b: f64) -> (f64, f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut val = 0.0;
        let mut abs = 0.0;
        for (t, w) in GAUSS7_NODES.iter().zip(GAUSS7_WEIGHTS) {
            let v = self.evaluate(x, mid + half * t);
            val += w * v;
            abs += w * v.abs();
        }
        (half * val, half * abs)
    }

    fn integrate_smooth(&self, x: &[f64], a: f64, b: f64) -> Result<f64, NonlinearityError> {
        let (whole, abs) = self.gauss(x, a, b);
        let scale = abs.max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        let mut budget = QUAD_MAX_SPLITS;
        let value = self.refine(x, a, b, whole, scale, 0, &mut worst, &mut budget);
        if !value.is_finite() {
            return Err(NonlinearityError::Quadrature {
                s: b,
                achieved: f64::INFINITY,
            });
        }
        if worst > QUAD_RTOL {
            return Err(NonlinearityError::Quadrature {
                s: b,
                achieved: worst,
            });
        }
        Ok(value)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        x: &[f64],
        a: f64,
        b: f64,
        whole: f64,
        scale: f64,
        depth: usize,
        worst: &mut f64,
        budget: &mut usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (l, _) = self.gauss(x, a, m);
        let (r, _) = self.gauss(x, m, b);
        let err = (l + r - whole).abs() / scale;
        if (depth >= QUAD_MIN_DEPTH && err <= QUAD_RTOL) || !err.is_finite() {
            return l + r;
        }
        if depth >= QUAD_MAX_DEPTH || *budget == 0 || m <= a || m >= b {
            *worst = worst.max(err);
            return l + r;
        }
        *budget -= 1;
        self.refine(x, a, m, l, scale, depth + 1, worst, budget)
            + self.refine(x, m, b, r, scale, depth + 1, worst, budget)
    }

    /// Samples `count` points of `sample_box` and compares `|f|` with the
    /// declared growth bound.
    pub fn growth_check(&self, sample_box: &SampleBox, count: usize, seed: u64) -> GrowthReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = GrowthReport {
            max_ratio: 0.0,
            worst_x: sample_box.x_min.clone(),
            worst_s: 0.0,
            samples: count,
            passed: true,
        };
        for _ in 0..count.max(1) {
            let x: Vec<f64> = sample_box
                .x_min
                .iter()
                .zip(&sample_box.x_max)
                .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect();
            let s = if sample_box.s_max > sample_box.s_min {
                rng.gen_range(sample_box.s_min..sample_box.s_max)
            } else {
                sample_box.s_min
            };
            let f = self.evaluate(&x, s).abs();
            let bound = self.growth_c * (1.0 + s.abs().powf(self.growth_q - 1.0));
            let ratio = if f == 0.0 {
                0.0
            } else if bound == 0.0 {
                f64::INFINITY
            } else {
                f / bound
            };
            if ratio > report.max_ratio {
                report.max_ratio = ratio;
                report.worst_x = x;
                report.worst_s = s;
            }
        }
        report.passed = report.max_ratio <= 1.0;
        report
    }

    /// Sampled check of the declared jump structure: every declared jump must
    /// be nonredundant, and `evaluate` must not move by more than `tol`
    /// across steps of size `eta` away from jump levels.
    pub fn spot_check(
        &self,
        sample_box: &SampleBox,
        count: usize,
        eta: f64,
        tol: f64,
        seed: u64,
    ) -> Result<(), NonlinearityError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let x: Vec<f64> = sample_box
                .x_min
                .iter()
                .zip(&sample_box.x_max)
                .map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect();
            for j in self.jumps.iter().flatten() {
                if (j.below)(&x) == (j.above)(&x) {
                    return Err(NonlinearityError::Invalid(format!(
                        "redundant jump at level {} (equal one-sided limits)",
                        (j.level)(&x)
                    )));
                }
            }
            let s = rng.gen_range(sample_box.s_min..=sample_box.s_max);
            let levels = self.jump_levels(&x);
            if levels.iter().any(|&l| (l - s).abs() <= 2.0 * eta) {
                continue;
            }
            let jump = (self.evaluate(&x, s + eta) - self.evaluate(&x, s)).abs();
            if jump > tol {
                return Err(NonlinearityError::Invalid(format!(
                    "undeclared discontinuity near s = {s}: |Δf| = {jump:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Axis-aligned sampling region for `(x, s)`.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
}

impl SampleBox {
    pub fn new(x_min: Vec<f64>, x_max: Vec<f64>, s_min: f64, s_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            s_min,
            s_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    pub max_ratio: f64,
    pub worst_x: Vec<f64>,
    pub worst_s: f64,
    pub samples: usize,
    pub passed: bool,
}

fn neg_sign_value(s: f64) -> f64 {
    if s > 0.0 {
        -1.0
    } else if s < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `f ≡ 0`.
pub fn zero() -> NonlinearitySpec {
    constant(0.0)
}

/// `f ≡ a`.
pub fn constant(a: f64) -> NonlinearitySpec {
    NonlinearitySpec::with_jumps(
        format!("constant({a})"),
        Arc::new(move |_, _| a),
        vec![],
        a.abs(),
        2.0,
    )
    .expect("valid growth constants")
}

/// `f(s) = -sign(s)`.
pub fn neg_sign() -> NonlinearitySpec {
    NonlinearitySpec::with_jumps(
        "neg_sign",
        Arc::new(|_, s| neg_sign_value(s)),
        vec![Jump::constant(0.0, 1.0, -1.0)],
        1.0,
        2.0,
    )
    .expect("valid growth constants")
}

/// `a` for `s < s0`, `b` for `s > s0`.
pub fn step(a: f64, b: f64, s0: f64) -> NonlinearitySpec {
    let jumps = if a == b {
        vec![]
    } else {
        vec![Jump::constant(s0, a, b)]
    };
    NonlinearitySpec::with_jumps(
        format!("step({a},{b},{s0})"),
        Arc::new(move |_, s| {
            if s < s0 {
                a
            } else if s > s0 {
                b
            } else {
                0.5 * (a + b)
            }
        }),
        jumps,
        a.abs().max(b.abs()),
        2.0,
    )
    .expect("valid growth constants")
}

/// Unit step at zero.
pub fn heaviside() -> NonlinearitySpec {
    let mut spec = step(0.0, 1.0, 0.0);
    spec.name = "heaviside".into();
    spec
}

/// `f(s) = c |s|^(r-1) sign(s)`, continuous for `r > 1`.
pub fn power(c: f64, r: f64) -> Result<NonlinearitySpec, NonlinearityError> {
    if !(r > 1.0) {
        return Err(NonlinearityError::Invalid(format!(
            "power exponent r must exceed 1, got {r}"
        )));
    }
    NonlinearitySpec::with_jumps(
        format!("power({c},{r})"),
        Arc::new(move |_, s| c * s.abs().powf(r - 1.0) * s.signum() * (s != 0.0) as i32 as f64),
        vec![],
        c.abs(),
        r,
    )
}

/// Catalog lookup by name; `param` returns named numeric parameters.
pub fn from_catalog(
    name: &str,
    param: impl Fn(&str) -> Option<f64>,
) -> Result<NonlinearitySpec, NonlinearityError> {
    let need = |p: &str| {
        param(p).ok_or_else(|| NonlinearityError::MissingParameter {
            name: name.to_string(),
            param: p.to_string(),
        })
    };
    match name {
        "zero" => Ok(zero()),
        "constant" => Ok(constant(need("a")?)),
        "neg_sign" => Ok(neg_sign()),
        "heaviside" => Ok(heaviside()),
        "step" => Ok(step(need("a")?, need("b")?, param("s0").unwrap_or(0.0))),
        "power" => power(need("c")?, need("r")?),
        other => Err(NonlinearityError::UnknownName(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const X: &[f64] = &[0.0];

    #[test]
    fn heaviside_bracket() {
        let h = heaviside();
        let b = h.bracket(X, 0.0);
        assert_eq!((b.lo, b.hi), (0.0, 1.0));
        assert!(!b.approximate);
        assert_eq!(h.lower_envelope(X, 0.1), 1.0);
        assert_eq!(h.upper_envelope(X, 0.1), 1.0);
        assert_eq!(
            (h.lower_envelope(X, -0.1), h.upper_envelope(X, -0.1)),
            (0.0, 0.0)
        );
    }

    #[test]
    fn continuous_rule_collapses_bracket() {
        let sq =
            NonlinearitySpec::with_jumps("sq", Arc::new(|_, s| s * s), vec![], 1.0, 3.0).unwrap();
        assert_eq!(sq.bracket(X, 3.0), Bracket::point(9.0));
    }

    #[test]
    fn neg_sign_bracket_and_selection() {
        let f = neg_sign();
        let b = f.bracket(X, 0.0);
        assert_eq!((b.lo, b.hi), (-1.0, 1.0));
        let b = f.bracket(X, 0.5);
        assert_eq!((b.lo, b.hi), (-1.0, -1.0));
        assert_eq!(f.selection(X, 0.0, SelectionRule::Mid), 0.0);
        assert_eq!(f.selection(X, 0.0, SelectionRule::Lo), -1.0);
        assert_eq!(f.selection(X, 0.0, SelectionRule::Hi), 1.0);
        assert_eq!(f.selection(X, 0.3, SelectionRule::Mid), -1.0);
        assert_eq!(constant(2.5).selection(X, -7.0, SelectionRule::Hi), 2.5);
    }

    #[test]
    fn primitives() {
        let f = neg_sign();
        assert_relative_eq!(f.primitive(X, 0.5).unwrap(), -0.5, epsilon = 1e-14);
        assert_relative_eq!(f.primitive(X, -0.5).unwrap(), -0.5, epsilon = 1e-14);
        assert_eq!(f.primitive(X, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            constant(1.0).primitive(X, -2.0).unwrap(),
            -2.0,
            epsilon = 1e-14
        );
        let s = step(2.0, -1.0, 0.25);
        // ∫_0^1 = 2 * 0.25 - 1 * 0.75
        assert_relative_eq!(s.primitive(X, 1.0).unwrap(), -0.25, epsilon = 1e-13);
        let p = power(3.0, 2.5).unwrap();
        // F(s) = 3 |s|^2.5 / 2.5
        assert_relative_eq!(
            p.primitive(X, -1.7).unwrap(),
            3.0 * 1.7f64.powf(2.5) / 2.5,
            max_relative = 1e-10
        );
    }

    #[test]
    fn primitive_of_black_box_step_converges() {
        let f = neg_sign().forget_jumps();
        assert_relative_eq!(f.primitive(X, 0.7).unwrap(), -0.7, epsilon = 1e-9);
        let s = step(1.0, 3.0, 0.3).forget_jumps();
        assert_relative_eq!(s.primitive(X, 1.0).unwrap(), 0.3 + 2.1, max_relative = 1e-9);
    }

    #[test]
    fn primitive_reports_nonconvergence() {
        let wild = NonlinearitySpec::with_jumps(
            "wild",
            Arc::new(|_, s| (1.0 / (s * s + 1e-300)).sin() / (s.abs() + 1e-300).sqrt()),
            vec![],
            1.0,
            2.0,
        )
        .unwrap();
        assert!(matches!(
            wild.primitive(X, 1.0),
            Err(NonlinearityError::Quadrature { .. })
        ));
    }

    #[test]
    fn growth_checks() {
        let bx = SampleBox::new(vec![-1.0], vec![1.0], -3.0, 3.0);
        let r = neg_sign().growth_check(&bx, 500, 1);
        assert!(r.passed && r.max_ratio <= 1.0);
        let r = zero().growth_check(&bx, 500, 1);
        assert!(r.passed);
        assert_eq!(r.max_ratio, 0.0);

        // s^3 against C = 1, q = 2: |s|^3 = 1 + |s| at s* ≈ 1.3247
        let cube =
            NonlinearitySpec::with_jumps("cube", Arc::new(|_, s| s * s * s), vec![], 1.0, 2.0)
                .unwrap();
        let crossing = {
            // bisection oracle on |s|^3 - 1 - |s|
            let (mut lo, mut hi) = (1.0f64, 2.0f64);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if m * m * m - 1.0 - m > 0.0 {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            lo
        };
        assert!((crossing - 1.324_717_957).abs() < 1e-8);
        let r = cube.growth_check(&SampleBox::new(vec![0.0], vec![0.0], -3.0, 3.0), 2000, 3);
        assert!(!r.passed);
        assert!(r.worst_s.abs() > crossing);
        let r = cube.growth_check(&SampleBox::new(vec![0.0], vec![0.0], -1.3, 1.3), 2000, 3);
        assert!(r.passed);
    }

    #[test]
    fn estimator_flags_approximation() {
        let f = neg_sign().forget_jumps();
        let b = f.bracket(X, 0.0);
        assert!(b.approximate);
        assert_eq!((b.lo, b.hi), (-1.0, 1.0));
        assert_eq!(f.selection(X, 0.0, SelectionRule::Mid), 0.0);
        assert_eq!(f.selection(X, 0.2, SelectionRule::Mid), -1.0);
        // off the jump the sampled bracket of a smooth rule stays tight
        let sq = NonlinearitySpec::black_box("sq", Arc::new(|_, s| s * s), 1.0, 3.0).unwrap();
        let b = sq.bracket(X, 3.0);
        assert!((b.lo - 9.0).abs() < 1e-3 && (b.hi - 9.0).abs() < 1e-3);
        assert_eq!(sq.selection(X, 3.0, SelectionRule::Lo), 9.0);
    }

    #[test]
    fn estimator_converges_to_declared_envelopes() {
        let specs = [neg_sign(), heaviside(), step(-2.0, 0.5, 0.3)];
        for spec in specs {
            let levels = spec.jump_levels(X);
            let probe: Vec<f64> = levels.iter().copied().chain([-0.4, 0.05, 0.9]).collect();
            let mut last_err = f64::INFINITY;
            for samples in [2usize, 8, 64, 512] {
                let est = spec
                    .clone()
                    .forget_jumps()
                    .with_estimator(EstimatorOptions {
                        deltas: vec![1e-2, 1e-3, 1e-4],
                        samples,
                    });
                let err = probe
                    .iter()
                    .map(|&s| {
                        let (a, b) = (spec.bracket(X, s), est.bracket(X, s));
                        (a.lo - b.lo).abs().max((a.hi - b.hi).abs())
                    })
                    .fold(0.0, f64::max);
                assert!(err <= last_err);
                last_err = err;
            }
            assert_eq!(last_err, 0.0, "{}", spec.name());
        }
    }

    #[test]
    fn catalog_lookup() {
        let get = |p: &str| match p {
            "a" => Some(2.0),
            "b" => Some(-1.0),
            "c" => Some(1.0),
            "r" => Some(3.0),
            _ => None,
        };
        assert_eq!(from_catalog("step", get).unwrap().jump_levels(X), vec![0.0]);
        assert_eq!(from_catalog("power", get).unwrap().growth_q(), 3.0);
        assert!(matches!(
            from_catalog("nope", get),
            Err(NonlinearityError::UnknownName(_))
        ));
        assert!(matches!(
            from_catalog("constant", |_| None),
            Err(NonlinearityError::MissingParameter { .. })
        ));
        assert!(power(1.0, 1.0).is_err());
    }

    #[test]
    fn spot_check_catches_undeclared_jump() {
        let bx = SampleBox::new(vec![0.0], vec![1.0], -1.0, 1.0);
        assert!(neg_sign().spot_check(&bx, 500, 1e-7, 1e-5, 2).is_ok());
        let hidden = NonlinearitySpec::with_jumps(
            "hidden",
            Arc::new(|_, s| if s > 0.1 { 1.0 } else { 0.0 }),
            vec![],
            1.0,
            2.0,
        )
        .unwrap();
        let bx = SampleBox::new(vec![0.0], vec![1.0], 0.1 - 1e-6, 0.1 + 1e-7);
        assert!(hidden.spot_check(&bx, 500, 1e-6, 1e-5, 2).is_err());
        let redundant = NonlinearitySpec::with_jumps(
            "redundant",
            Arc::new(|_, _| 1.0),
            vec![Jump::constant(0.0, 1.0, 1.0)],
            1.0,
            2.0,
        )
        .unwrap();
        assert!(redundant.spot_check(&bx, 10, 1e-6, 1e-5, 2).is_err());
    }

    proptest! {
        #[test]
        fn selection_lies_in_bracket(s in -2.0f64..2.0, which in 0usize..3, rule in 0usize..3) {
            let spec = [neg_sign(), heaviside(), step(1.5, -0.5, 0.25)][which].clone();
            let rule = [SelectionRule::Lo, SelectionRule::Mid, SelectionRule::Hi][rule];
            for s in [s, 0.0, 0.25] {
                let b = spec.bracket(X, s);
                let z = spec.selection(X, s, rule);
                prop_assert!(b.lo <= z && z <= b.hi);
                if b.lo == b.hi {
                    prop_assert_eq!(z, spec.evaluate(X, s));
                }
            }
        }

        #[test]
        fn primitive_is_additive(s1 in -3.0f64..3.0, s2 in -3.0f64..3.0, which in 0usize..3) {
            let spec = [neg_sign(), step(2.0, -1.0, 0.4), power(0.5, 2.5).unwrap()][which].clone();
            let lhs = spec.primitive(X, s2).unwrap() - spec.primitive(X, s1).unwrap();
            let rhs = spec.integrate(X, s1, s2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9);
        }

        #[test]
        fn primitive_is_locally_lipschitz(s1 in -2.0f64..2.0, s2 in -2.0f64..2.0, which in 0usize..3) {
            let spec = [neg_sign(), step(2.0, -1.0, 0.4), power(0.5, 2.5).unwrap()][which].clone();
            let rho: f64 = 2.0;
            let lip = spec.growth_c() * (1.0 + rho.powf(spec.growth_q() - 1.0));
            let diff = (spec.primitive(X, s2).unwrap() - spec.primitive(X, s1).unwrap()).abs();
            prop_assert!(diff <= lip * (s2 - s1).abs() + 1e-12);
        }
    }
}
