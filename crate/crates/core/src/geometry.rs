//! Oscillating-boundary height profiles.
//!
//! A profile is `G(x, y) = a_i(x) + Σ_r b_{i,r}(x) g_r(y)` on the piece
//! `(ξ_{i-1}, ξ_i)` of the unit interval, where `a_i`, `b_{i,r}` are
//! polynomials of degree at most three and every `g_r` is a finite Fourier
//! series with period `L`. Derivatives are evaluated in closed form.
//!
//! The config schema (TOML or JSON) is
//!
//! ```toml
//! period = 1.0
//! breakpoints = [0.0, 1.0]          # optional, defaults to [0, 1]
//!
//! [[profiles]]                      # g_0(y) = c0 + Σ cos[k-1] cos(2πky/L) + sin[k-1] sin(2πky/L)
//! c0 = 0.0
//! cos = []
//! sin = [1.0]
//!
//! [[pieces]]                        # one entry per interval
//! a_poly = [2.0]                    # ascending coefficients in x
//! b_terms = [{ poly = [1.0], profile = 0 }]
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per period used for bound certification and `C¹` distances.
pub const SAMPLES_PER_PERIOD: usize = 2048;
/// Samples in `x` per piece used for bound certification.
const X_SAMPLES_PER_PIECE: usize = 65;
const MAX_POLY_LEN: usize = 4;

/// Which one-sided limit to take when `x` sits exactly on a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Side {
    #[default]
    Left,
    Right,
}

/// Polynomial in `x` with ascending coefficients, degree ≤ 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    /// Only the constant coefficient is nonzero.
    pub fn is_constant(&self) -> bool {
        self.0.iter().skip(1).all(|&c| c == 0.0)
    }

    /// Crude upper bound for `sup |p|` on `[lo, hi]`.
    fn sup_bound(&self, lo: f64, hi: f64) -> f64 {
        let m = lo.abs().max(hi.abs());
        self.0.iter().enumerate().map(|(k, c)| c.abs() * m.powi(k as i32)).sum()
    }

    fn second_derivative_sup_bound(&self, lo: f64, hi: f64) -> f64 {
        let m = lo.abs().max(hi.abs());
        self.0
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, c)| (k * (k - 1)) as f64 * c.abs() * m.powi(k as i32 - 2))
            .sum()
    }

    fn scaled(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * s).collect())
    }
}

/// Finite Fourier series `c0 + Σ_k cos_k cos(2πky/L) + sin_k sin(2πky/L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierProfile {
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierProfile {
    pub fn constant(c0: f64) -> Self {
        FourierProfile { c0, cos: vec![], sin: vec![] }
    }

    pub fn sine(amplitude: f64) -> Self {
        FourierProfile { c0: 0.0, cos: vec![], sin: vec![amplitude] }
    }

    fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coeff(v: &[f64], k: usize) -> f64 {
        v.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Value and first derivative at `y`.
    pub fn eval(&self, y: f64, period: f64) -> (f64, f64) {
        let mut g = self.c0;
        let mut dg = 0.0;
        for k in 1..=self.modes() {
            let w = 2.0 * PI * k as f64 / period;
            let (s, c) = (w * y).sin_cos();
            let ck = Self::coeff(&self.cos, k);
            let sk = Self::coeff(&self.sin, k);
            g += ck * c + sk * s;
            dg += w * (sk * c - ck * s);
        }
        (g, dg)
    }

    fn sup_bound(&self) -> f64 {
        self.c0.abs() + self.cos.iter().chain(&self.sin).map(|c| c.abs()).sum::<f64>()
    }

    fn second_derivative_sup_bound(&self, period: f64) -> f64 {
        (1..=self.modes())
            .map(|k| {
                let w = 2.0 * PI * k as f64 / period;
                w * w * (Self::coeff(&self.cos, k).abs() + Self::coeff(&self.sin, k).abs())
            })
            .sum()
    }

    fn is_constant(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }
}

/// `b(x) · g_profile(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTerm {
    pub poly: Poly,
    pub profile: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub a_poly: Poly,
    #[serde(default)]
    pub b_terms: Vec<ProfileTerm>,
}

/// Raw config as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub period: f64,
    #[serde(default = "default_breakpoints")]
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub profiles: Vec<FourierProfile>,
    pub pieces: Vec<Piece>,
}

fn default_breakpoints() -> Vec<f64> {
    vec![0.0, 1.0]
}

/// `G`, `∂G/∂x`, `∂G/∂y` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Height {
    pub g: f64,
    pub dx: f64,
    pub dy: f64,
}

/// A structurally valid profile together with its sampled bounds.
///
/// Construction never fails on a non-positive height; use
/// [`validate_hypothesis`] or [`parse_geometry`] for that.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySpec {
    config: GeometryConfig,
    g0: f64,
    g1: f64,
}

impl GeometrySpec {
    pub fn new(config: GeometryConfig) -> Result<Self> {
        check_structure(&config)?;
        let (g0, g1) = certified_bounds(&config);
        Ok(GeometrySpec { config, g0, g1 })
    }

    /// `G ≡ c` on the unit interval.
    pub fn flat(c: f64, period: f64) -> Result<Self> {
        Self::new(GeometryConfig {
            period,
            breakpoints: default_breakpoints(),
            profiles: vec![],
            pieces: vec![Piece { a_poly: Poly::constant(c), b_terms: vec![] }],
        })
    }

    /// `G(x, y) = a(x) + g(y)` with a single piece.
    pub fn single(a: Poly, profile: FourierProfile, period: f64) -> Result<Self> {
        Self::new(GeometryConfig {
            period,
            breakpoints: default_breakpoints(),
            profiles: vec![profile],
            pieces: vec![Piece {
                a_poly: a,
                b_terms: vec![ProfileTerm { poly: Poly::constant(1.0), profile: 0 }],
            }],
        })
    }

    /// x-independent pieces with constant heights on the given breakpoints.
    pub fn piecewise_flat(breakpoints: &[f64], heights: &[f64], period: f64) -> Result<Self> {
        Self::new(GeometryConfig {
            period,
            breakpoints: breakpoints.to_vec(),
            profiles: vec![],
            pieces: heights
                .iter()
                .map(|&h| Piece { a_poly: Poly::constant(h), b_terms: vec![] })
                .collect(),
        })
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    pub fn period(&self) -> f64 {
        self.config.period
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.config.breakpoints
    }

    pub fn pieces(&self) -> usize {
        self.config.pieces.len()
    }

    /// Certified lower bound for `G`.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// Certified upper bound for `G`.
    pub fn g1(&self) -> f64 {
        self.g1
    }

    /// Index of the piece containing `x`; `x = ξ_i` belongs to the left piece
    /// unless `side` is [`Side::Right`].
    pub fn piece_index(&self, x: f64, side: Side) -> usize {
        let bp = &self.config.breakpoints;
        let last = bp.len() - 2;
        let i = match side {
            Side::Left => bp[1..].partition_point(|&b| b < x),
            Side::Right => bp[1..].partition_point(|&b| b <= x),
        };
        i.min(last)
    }

    /// Interval `(ξ_{i-1}, ξ_i)` of piece `i`.
    pub fn piece_bounds(&self, i: usize) -> (f64, f64) {
        (self.config.breakpoints[i], self.config.breakpoints[i + 1])
    }

    /// True when `G` does not depend on `x` on piece `i`.
    pub fn piece_is_x_independent(&self, i: usize) -> bool {
        let piece = &self.config.pieces[i];
        piece.a_poly.is_constant() && piece.b_terms.iter().all(|t| t.poly.is_constant())
    }

    pub fn is_x_independent(&self) -> bool {
        (0..self.pieces()).all(|i| self.piece_is_x_independent(i))
    }

    /// Flat in `y` on every piece (all profile terms constant).
    pub fn is_flat_in_y(&self) -> bool {
        self.config.pieces.iter().all(|p| {
            p.b_terms.iter().all(|t| {
                t.poly.0.iter().all(|&c| c == 0.0) || self.config.profiles[t.profile].is_constant()
            })
        })
    }

    pub fn eval_piece(&self, i: usize, x: f64, y: f64) -> Height {
        let piece = &self.config.pieces[i];
        let l = self.config.period;
        let mut h = Height { g: piece.a_poly.eval(x), dx: piece.a_poly.derivative(x), dy: 0.0 };
        for term in &piece.b_terms {
            let (g, dg) = self.config.profiles[term.profile].eval(y, l);
            let b = term.poly.eval(x);
            h.g += b * g;
            h.dx += term.poly.derivative(x) * g;
            h.dy += b * dg;
        }
        h
    }

    /// Closed-form `(G, ∂G/∂x, ∂G/∂y)`.
    pub fn eval(&self, x: f64, y: f64, side: Side) -> Result<Height> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidInput(format!("x = {x} outside [0, 1]")));
        }
        Ok(self.eval_piece(self.piece_index(x, side), x, y))
    }

    /// `G(x, y)` for `x` already known to lie in `[0, 1]`.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.eval_piece(self.piece_index(x, Side::Left), x, y).g
    }

    /// Exact period mean `(1/L) ∫_0^L G(x, y) dy`.
    pub fn mean_height(&self, x: f64, side: Side) -> f64 {
        let piece = &self.config.pieces[self.piece_index(x, side)];
        piece.a_poly.eval(x)
            + piece
                .b_terms
                .iter()
                .map(|t| t.poly.eval(x) * self.config.profiles[t.profile].c0)
                .sum::<f64>()
    }

    /// The x-independent profile `y ↦ G(x, y)` frozen at station `x`.
    pub fn frozen_at(&self, x: f64, side: Side) -> Result<GeometrySpec> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidInput(format!("x = {x} outside [0, 1]")));
        }
        let piece = &self.config.pieces[self.piece_index(x, side)];
        let frozen = Piece {
            a_poly: Poly::constant(piece.a_poly.eval(x)),
            b_terms: piece
                .b_terms
                .iter()
                .map(|t| ProfileTerm { poly: Poly::constant(t.poly.eval(x)), profile: t.profile })
                .collect(),
        };
        GeometrySpec::new(GeometryConfig {
            period: self.config.period,
            breakpoints: default_breakpoints(),
            profiles: self.config.profiles.clone(),
            pieces: vec![frozen],
        })
    }

    /// `Ĝ = G + δ` (uniform vertical shift).
    pub fn shifted(&self, delta: f64) -> Result<GeometrySpec> {
        let mut config = self.config.clone();
        for piece in &mut config.pieces {
            if piece.a_poly.0.is_empty() {
                piece.a_poly.0.push(0.0);
            }
            piece.a_poly.0[0] += delta;
        }
        GeometrySpec::new(config)
    }

    /// Every oscillating term multiplied by `factor`.
    pub fn amplitude_scaled(&self, factor: f64) -> Result<GeometrySpec> {
        let mut config = self.config.clone();
        for piece in &mut config.pieces {
            for term in &mut piece.b_terms {
                term.poly = term.poly.scaled(factor);
            }
        }
        GeometrySpec::new(config)
    }

    /// `G_ε(x) = G(x, x/ε)`.
    pub fn at_epsilon(&self, epsilon: f64) -> Result<EpsilonProfile<'_>> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon = {epsilon} must be positive")));
        }
        Ok(EpsilonProfile { spec: self, epsilon })
    }
}

fn check_structure(config: &GeometryConfig) -> Result<()> {
    if !(config.period > 0.0) || !config.period.is_finite() {
        return Err(Error::Config(format!("period must be positive, got {}", config.period)));
    }
    let bp = &config.breakpoints;
    if bp.len() < 2 || bp[0] != 0.0 || *bp.last().unwrap() != 1.0 {
        return Err(Error::Config("breakpoints must start at 0 and end at 1".into()));
    }
    if bp.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("breakpoints must be strictly increasing".into()));
    }
    if config.pieces.len() != bp.len() - 1 {
        return Err(Error::Config(format!(
            "{} breakpoints need {} pieces, found {}",
            bp.len(),
            bp.len() - 1,
            config.pieces.len()
        )));
    }
    let all_coeffs = config.pieces.iter().flat_map(|p| {
        p.a_poly.0.iter().chain(p.b_terms.iter().flat_map(|t| t.poly.0.iter()))
    });
    let profile_coeffs = config
        .profiles
        .iter()
        .flat_map(|g| std::iter::once(&g.c0).chain(&g.cos).chain(&g.sin));
    if all_coeffs.chain(profile_coeffs).any(|c| !c.is_finite()) {
        return Err(Error::Config("non-finite coefficient".into()));
    }
    for (i, piece) in config.pieces.iter().enumerate() {
        if piece.a_poly.0.len() > MAX_POLY_LEN
            || piece.b_terms.iter().any(|t| t.poly.0.len() > MAX_POLY_LEN)
        {
            return Err(Error::Config(format!("piece {i}: polynomial degree exceeds 3")));
        }
        if let Some(t) = piece.b_terms.iter().find(|t| t.profile >= config.profiles.len()) {
            return Err(Error::Config(format!("piece {i}: unknown profile index {}", t.profile)));
        }
    }
    Ok(())
}

/// Sampled min/max padded by the bilinear-interpolation error bound
/// `(M_xx Δx² + M_yy Δy²) / 8`.
fn certified_bounds(config: &GeometryConfig) -> (f64, f64) {
    let spec = GeometrySpec { config: config.clone(), g0: 0.0, g1: 0.0 };
    let l = config.period;
    let dy = l / SAMPLES_PER_PERIOD as f64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, piece) in config.pieces.iter().enumerate() {
        let (a, b) = spec.piece_bounds(i);
        let dx = (b - a) / (X_SAMPLES_PER_PIECE - 1) as f64;
        let mut piece_lo = f64::INFINITY;
        let mut piece_hi = f64::NEG_INFINITY;
        for ix in 0..X_SAMPLES_PER_PIECE {
            let x = a + ix as f64 * dx;
            for iy in 0..SAMPLES_PER_PERIOD {
                let g = spec.eval_piece(i, x, iy as f64 * dy).g;
                piece_lo = piece_lo.min(g);
                piece_hi = piece_hi.max(g);
            }
        }
        let mut mxx = piece.a_poly.second_derivative_sup_bound(a, b);
        let mut myy = 0.0;
        for t in &piece.b_terms {
            let g = &config.profiles[t.profile];
            mxx += t.poly.second_derivative_sup_bound(a, b) * g.sup_bound();
            myy += t.poly.sup_bound(a, b) * g.second_derivative_sup_bound(l);
        }
        let pad = (mxx * dx * dx + myy * dy * dy) / 8.0;
        lo = lo.min(piece_lo - pad);
        hi = hi.max(piece_hi + pad);
    }
    (lo, hi)
}

/// Read a geometry config (TOML, or JSON when the text starts with `{`),
/// check its structure and reject profiles whose certified lower bound is
/// not positive.
pub fn parse_geometry(text: &str) -> Result<GeometrySpec> {
    let config: GeometryConfig = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    let spec = GeometrySpec::new(config)?;
    if !(spec.g0 > 0.0) {
        return Err(Error::Inadmissible(format!("certified lower bound G0 = {} ≤ 0", spec.g0)));
    }
    Ok(spec)
}

/// Serialize back to the TOML schema.
pub fn geometry_to_toml(spec: &GeometrySpec) -> String {
    toml::to_string(&spec.config).expect("geometry config is always serializable")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieceDerivatives {
    pub sup_dx: f64,
    pub sup_dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub g0: f64,
    pub g1: f64,
    pub pieces: Vec<PieceDerivatives>,
    pub passed: bool,
    pub message: Option<String>,
}

/// Bounds and per-piece derivative sups; `passed` iff `G0 > 0`.
pub fn validate_hypothesis(spec: &GeometrySpec) -> ValidationReport {
    let l = spec.period();
    let dy = l / SAMPLES_PER_PERIOD as f64;
    let pieces = (0..spec.pieces())
        .map(|i| {
            let (a, b) = spec.piece_bounds(i);
            let dx = (b - a) / (X_SAMPLES_PER_PIECE - 1) as f64;
            let mut d = PieceDerivatives { sup_dx: 0.0, sup_dy: 0.0 };
            for ix in 0..X_SAMPLES_PER_PIECE {
                let x = a + ix as f64 * dx;
                for iy in 0..SAMPLES_PER_PERIOD {
                    let h = spec.eval_piece(i, x, iy as f64 * dy);
                    d.sup_dx = d.sup_dx.max(h.dx.abs());
                    d.sup_dy = d.sup_dy.max(h.dy.abs());
                }
            }
            d
        })
        .collect();
    let passed = spec.g0 > 0.0;
    ValidationReport {
        g0: spec.g0,
        g1: spec.g1,
        pieces,
        passed,
        message: (!passed).then(|| format!("G0 = {} is not positive", spec.g0)),
    }
}

/// `‖G(x,·) − Ĝ(x,·)‖_∞ + ‖∂_y G(x,·) − ∂_y Ĝ(x,·)‖_∞` over one period.
pub fn c1_distance(a: &GeometrySpec, b: &GeometrySpec, x: f64) -> Result<f64> {
    if a.period() != b.period() {
        return Err(Error::InvalidInput(format!(
            "periods differ: {} vs {}",
            a.period(),
            b.period()
        )));
    }
    let dy = a.period() / SAMPLES_PER_PERIOD as f64;
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for iy in 0..SAMPLES_PER_PERIOD {
        let y = iy as f64 * dy;
        let ha = a.eval(x, y, Side::Left)?;
        let hb = b.eval(x, y, Side::Left)?;
        d0 = d0.max((ha.g - hb.g).abs());
        d1 = d1.max((ha.dy - hb.dy).abs());
    }
    Ok(d0 + d1)
}

/// `G_ε(x) = G(x, x/ε)` on the unit interval.
#[derive(Debug, Clone, Copy)]
pub struct EpsilonProfile<'a> {
    pub spec: &'a GeometrySpec,
    pub epsilon: f64,
}

impl EpsilonProfile<'_> {
    pub fn height(&self, x: f64, side: Side) -> f64 {
        let i = self.spec.piece_index(x, side);
        self.spec.eval_piece(i, x, x / self.epsilon).g
    }

    /// `G_ε'(x) = ∂_x G + ∂_y G / ε`.
    pub fn derivative(&self, x: f64, side: Side) -> f64 {
        let i = self.spec.piece_index(x, side);
        let h = self.spec.eval_piece(i, x, x / self.epsilon);
        h.dx + h.dy / self.epsilon
    }

    /// Height of the domain column at `x`: the smaller one-sided limit at
    /// interior breakpoints.
    pub fn column_height(&self, x: f64) -> f64 {
        self.height(x, Side::Left).min(self.height(x, Side::Right))
    }

    /// Sampled `sup |G_ε'|`, finite for fixed ε and growing like `1/ε`.
    pub fn sup_derivative(&self) -> f64 {
        let per_period = 256;
        let n = ((per_period as f64) / (self.epsilon * self.spec.period())).ceil() as usize;
        let n = n.max(per_period);
        (0..=n)
            .map(|k| {
                let x = k as f64 / n as f64;
                self.derivative(x, Side::Left).abs().max(self.derivative(x, Side::Right).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_spec(a: Poly, amp: f64) -> GeometrySpec {
        GeometrySpec::single(a, FourierProfile::sine(amp), 1.0).unwrap()
    }

    #[test]
    fn parse_flat_config() {
        let spec = parse_geometry("period = 1.0\n[[pieces]]\na_poly = [2.0]\n").unwrap();
        assert_eq!(spec.g0(), 2.0);
        assert_eq!(spec.g1(), 2.0);
    }

    #[test]
    fn parse_sine_config() {
        let text = r#"
            period = 1.0
            [[profiles]]
            sin = [1.0]
            [[pieces]]
            a_poly = [2.0]
            b_terms = [{ poly = [1.0], profile = 0 }]
        "#;
        let spec = parse_geometry(text).unwrap();
        assert!((spec.g0() - 1.0).abs() < 1e-5 && spec.g0() <= 1.0);
        assert!((spec.g1() - 3.0).abs() < 1e-5 && spec.g1() >= 3.0);
    }

    #[test]
    fn parse_piecewise_config_and_json() {
        let text = r#"{"period": 1.0, "breakpoints": [0.0, 0.5, 1.0],
                       "pieces": [{"a_poly": [1.0]}, {"a_poly": [2.0]}]}"#;
        let spec = parse_geometry(text).unwrap();
        assert_eq!((spec.g0(), spec.g1()), (1.0, 2.0));
        assert_eq!(spec.height(0.5, 0.3), 1.0);
        assert_eq!(spec.eval(0.5, 0.3, Side::Right).unwrap().g, 2.0);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_geometry("period = "), Err(Error::Config(_))));
        let non_increasing = "period = 1.0\nbreakpoints = [0.0, 0.6, 0.4, 1.0]\n\
            [[pieces]]\na_poly=[1.0]\n[[pieces]]\na_poly=[1.0]\n[[pieces]]\na_poly=[1.0]\n";
        assert!(matches!(parse_geometry(non_increasing), Err(Error::Config(_))));
        let negative = "period = 1.0\n[[profiles]]\nsin=[1.0]\n[[pieces]]\na_poly=[0.0]\n\
            b_terms=[{poly=[1.0], profile=0}]\n";
        assert!(matches!(parse_geometry(negative), Err(Error::Inadmissible(_))));
        let quartic = "period = 1.0\n[[pieces]]\na_poly=[1.0, 0, 0, 0, 1.0]\n";
        assert!(matches!(parse_geometry(quartic), Err(Error::Config(_))));
    }

    #[test]
    fn eval_examples() {
        let flat = GeometrySpec::flat(2.0, 1.0).unwrap();
        assert_eq!(flat.eval(0.3, 7.1, Side::Left).unwrap(), Height { g: 2.0, dx: 0.0, dy: 0.0 });

        let s = sine_spec(Poly::constant(2.0), 1.0);
        let h = s.eval(0.5, 0.25, Side::Left).unwrap();
        assert!((h.g - 3.0).abs() < 1e-15 && h.dx == 0.0 && h.dy.abs() < 1e-14);

        let s = sine_spec(Poly(vec![1.0, 1.0]), 1.0);
        let h = s.eval(0.5, 0.0, Side::Left).unwrap();
        assert!((h.g - 1.5).abs() < 1e-15);
        assert!((h.dx - 1.0).abs() < 1e-15);
        assert!((h.dy - 2.0 * PI).abs() < 1e-14);

        assert!(s.eval(1.2, 0.0, Side::Left).is_err());
        assert!(s.eval(-0.1, 0.0, Side::Left).is_err());
    }

    #[test]
    fn validate_examples() {
        let r = validate_hypothesis(&GeometrySpec::flat(2.0, 1.0).unwrap());
        assert!(r.passed);
        assert_eq!((r.g0, r.g1), (2.0, 2.0));
        assert_eq!(r.pieces[0], PieceDerivatives { sup_dx: 0.0, sup_dy: 0.0 });

        let r = validate_hypothesis(&sine_spec(Poly::constant(2.0), 1.0));
        assert!(r.passed);
        assert!((r.pieces[0].sup_dy - 2.0 * PI).abs() < 1e-12);

        let r = validate_hypothesis(&sine_spec(Poly::constant(0.0), 1.0));
        assert!(!r.passed);
        assert!(r.g0 <= -1.0 + 1e-5);
    }

    #[test]
    fn c1_distance_examples() {
        let g = sine_spec(Poly::constant(2.0), 1.0);
        assert_eq!(c1_distance(&g, &g, 0.4).unwrap(), 0.0);

        let a = GeometrySpec::flat(2.0, 1.0).unwrap();
        let b = GeometrySpec::flat(2.1, 1.0).unwrap();
        assert!((c1_distance(&a, &b, 0.5).unwrap() - 0.1).abs() < 1e-14);

        let h = sine_spec(Poly::constant(2.0), 1.1);
        assert!((c1_distance(&g, &h, 0.5).unwrap() - (0.1 + 0.2 * PI)).abs() < 1e-12);

        let other_period = GeometrySpec::flat(2.0, 2.0).unwrap();
        assert!(c1_distance(&a, &other_period, 0.5).is_err());
    }

    #[test]
    fn breakpoint_convention() {
        let spec = GeometrySpec::piecewise_flat(&[0.0, 0.5, 1.0], &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(spec.piece_index(0.0, Side::Left), 0);
        assert_eq!(spec.piece_index(0.5, Side::Left), 0);
        assert_eq!(spec.piece_index(0.5, Side::Right), 1);
        assert_eq!(spec.piece_index(1.0, Side::Right), 1);
        assert!(spec.is_x_independent());
        let eps = spec.at_epsilon(0.1).unwrap();
        assert_eq!(eps.column_height(0.5), 1.0);
    }

    #[test]
    fn mean_height_and_frozen() {
        let s = sine_spec(Poly(vec![2.0, 1.0]), 1.0);
        assert!((s.mean_height(0.5, Side::Left) - 2.5).abs() < 1e-15);
        let f = s.frozen_at(0.5, Side::Left).unwrap();
        assert!(f.is_x_independent());
        assert_eq!(f.height(0.9, 0.3), s.height(0.5, 0.3));
        assert!(!s.is_x_independent());
    }

    #[test]
    fn epsilon_profile_derivative_grows() {
        let s = sine_spec(Poly::constant(2.0), 1.0);
        let d1 = s.at_epsilon(0.1).unwrap().sup_derivative();
        let d2 = s.at_epsilon(0.05).unwrap().sup_derivative();
        assert!((d1 - 2.0 * PI / 0.1).abs() < 1e-6 * d1);
        assert!((d2 / d1 - 2.0).abs() < 1e-6);
        assert!(s.at_epsilon(0.0).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = sine_spec(Poly(vec![2.0, 0.5]), 0.7);
        let back = parse_geometry(&geometry_to_toml(&s)).unwrap();
        assert_eq!(back, s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_spec() -> impl Strategy<Value = GeometrySpec> {
            (1.0f64..3.0, -0.5f64..0.5, 0.1f64..0.8, -0.3f64..0.3, 0.5f64..2.0).prop_map(
                |(a0, a1, s1, c2, l)| {
                    GeometrySpec::new(GeometryConfig {
                        period: l,
                        breakpoints: vec![0.0, 0.4, 1.0],
                        profiles: vec![FourierProfile { c0: 0.1, cos: vec![0.0, c2], sin: vec![s1] }],
                        pieces: vec![
                            Piece {
                                a_poly: Poly(vec![a0, a1]),
                                b_terms: vec![ProfileTerm { poly: Poly::constant(1.0), profile: 0 }],
                            },
                            Piece {
                                a_poly: Poly(vec![a0 + 0.3, 0.0, a1]),
                                b_terms: vec![ProfileTerm { poly: Poly(vec![0.5, 0.2]), profile: 0 }],
                            },
                        ],
                    })
                    .unwrap()
                },
            )
        }

        proptest! {
            #[test]
            fn periodic_in_y(spec in arb_spec(), x in 0.0f64..1.0, y in -5.0f64..5.0) {
                let a = spec.eval(x, y, Side::Left).unwrap();
                let b = spec.eval(x, y + spec.period(), Side::Left).unwrap();
                prop_assert!((a.g - b.g).abs() <= 1e-12 * a.g.abs().max(1.0));
                prop_assert!((a.dy - b.dy).abs() <= 1e-11 * a.dy.abs().max(1.0));
            }

            #[test]
            fn bounds_enclose_dense_grid(spec in arb_spec()) {
                for ix in 0..100 {
                    let x = ix as f64 / 99.0;
                    for iy in 0..100 {
                        let y = spec.period() * (iy as f64 + 0.37) / 100.0;
                        for side in [Side::Left, Side::Right] {
                            let g = spec.eval(x, y, side).unwrap().g;
                            prop_assert!(g >= spec.g0() && g <= spec.g1());
                        }
                    }
                }
            }

            #[test]
            fn one_sided_limits_match_pieces(spec in arb_spec(), y in 0.0f64..1.0) {
                let xi = spec.breakpoints()[1];
                let left = spec.eval(xi, y, Side::Left).unwrap();
                let right = spec.eval(xi, y, Side::Right).unwrap();
                prop_assert_eq!(left, spec.eval_piece(0, xi, y));
                prop_assert_eq!(right, spec.eval_piece(1, xi, y));
                let near = spec.eval(xi - 1e-9, y, Side::Left).unwrap();
                prop_assert!((near.g - left.g).abs() < 1e-7);
            }

            #[test]
            fn c1_distance_is_pseudometric(a in arb_spec(), s1 in 0.5f64..1.5, s2 in 0.5f64..1.5, x in 0.0f64..1.0) {
                let b = a.amplitude_scaled(s1).unwrap();
                let c = a.amplitude_scaled(s2).unwrap().shifted(0.05).unwrap();
                let ab = c1_distance(&a, &b, x).unwrap();
                let ba = c1_distance(&b, &a, x).unwrap();
                let bc = c1_distance(&b, &c, x).unwrap();
                let ac = c1_distance(&a, &c, x).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, ba);
                prop_assert!(ac <= ab + bc + 1e-12);
            }
        }
    }
}
