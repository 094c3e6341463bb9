//! Named one-variable built-ins (`const`, `tanh`, `atan`, `poly`, `bump`) and
//! sums of them, with closed-form derivatives.
//!
//! Text form: `tanh(a, s, c) + const(1)`; an x-function may carry an axis
//! selector `@x2` (1-based, defaults to `x1`).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Const(f64),
    /// `amp * tanh(scale * (t - shift))`
    Tanh {
        amp: f64,
        scale: f64,
        shift: f64,
    },
    /// `amp * atan(scale * (t - shift))`
    Atan {
        amp: f64,
        scale: f64,
        shift: f64,
    },
    /// `c0 + c1 t + c2 t^2 + ...`
    Poly(Vec<f64>),
    /// `amp * exp(-((t - center) / width)^2)`
    Bump {
        amp: f64,
        center: f64,
        width: f64,
    },
    Sum(Vec<Profile>),
}

impl Profile {
    pub fn eval(&self, t: f64) -> f64 {
        self.derivs(t)[0]
    }

    /// `[value, first derivative, second derivative]` at `t`.
    pub fn derivs(&self, t: f64) -> [f64; 3] {
        match self {
            Profile::Const(c) => [*c, 0.0, 0.0],
            Profile::Tanh { amp, scale, shift } => {
                let th = (scale * (t - shift)).tanh();
                let sech2 = 1.0 - th * th;
                [amp * th, amp * scale * sech2, -2.0 * amp * scale * scale * th * sech2]
            }
            Profile::Atan { amp, scale, shift } => {
                let z = scale * (t - shift);
                let q = 1.0 + z * z;
                [amp * z.atan(), amp * scale / q, -2.0 * amp * scale * scale * z / (q * q)]
            }
            Profile::Poly(c) => {
                let mut out = [0.0; 3];
                for &ck in c.iter().rev() {
                    out[2] = out[2] * t + out[1] * 2.0;
                    out[1] = out[1] * t + out[0];
                    out[0] = out[0] * t + ck;
                }
                out
            }
            Profile::Bump { amp, center, width } => {
                let z = (t - center) / width;
                let e = amp * (-z * z).exp();
                [e, -2.0 * z * e / width, (4.0 * z * z - 2.0) * e / (width * width)]
            }
            Profile::Sum(terms) => terms.iter().fold([0.0; 3], |acc, p| {
                let d = p.derivs(t);
                [acc[0] + d[0], acc[1] + d[1], acc[2] + d[2]]
            }),
        }
    }

    pub fn is_const(&self) -> bool {
        match self {
            Profile::Const(_) => true,
            Profile::Poly(c) => c.iter().skip(1).all(|&v| v == 0.0),
            Profile::Sum(t) => t.iter().all(Profile::is_const),
            _ => false,
        }
    }

    /// First and second derivative expressed through the value `v = f(t)`,
    /// for profiles solving an autonomous ODE. The returned expressions are
    /// polynomial in `v` and therefore extend past the range of the profile.
    pub fn derivs_from_value(&self, v: f64) -> Option<(f64, f64)> {
        match self {
            Profile::Tanh { amp, scale, .. } if *amp != 0.0 => {
                let w = amp * amp - v * v;
                Some((scale / amp * w, -2.0 * scale * scale / (amp * amp) * v * w))
            }
            Profile::Poly(c) if c.len() <= 2 => Some((c.get(1).copied().unwrap_or(0.0), 0.0)),
            _ => None,
        }
    }

    /// Inverse of a strictly increasing profile at `v`, if `v` is in its range.
    pub fn inverse(&self, v: f64) -> Option<f64> {
        match self {
            Profile::Tanh { amp, scale, shift } => {
                let z = v / amp;
                (z.abs() < 1.0).then(|| shift + z.atanh() / scale)
            }
            Profile::Atan { amp, scale, shift } => {
                let z = v / amp;
                (z.abs() < std::f64::consts::FRAC_PI_2).then(|| shift + z.tan() / scale)
            }
            Profile::Poly(c) if c.len() == 2 && c[1] != 0.0 => Some((v - c[0]) / c[1]),
            _ => self.inverse_by_bisection(v),
        }
    }

    fn inverse_by_bisection(&self, v: f64) -> Option<f64> {
        let (mut lo, mut hi) = (-1.0, 1.0);
        let mut width = 1.0;
        while !(self.eval(lo) <= v && self.eval(hi) >= v) {
            width *= 2.0;
            if width > 1e8 {
                return None;
            }
            lo = -width;
            hi = width;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    pub fn parse(text: &str) -> Result<Profile> {
        let terms: Vec<Profile> = split_top_level(text, '+').into_iter().map(|t| parse_term(t.trim())).collect::<Result<_>>()?;
        match terms.len() {
            0 => Err(Error::Config(format!("empty function expression `{text}`"))),
            1 => Ok(terms.into_iter().next().unwrap()),
            _ => Ok(Profile::Sum(terms)),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Const(c) => write!(f, "const({c})"),
            Profile::Tanh { amp, scale, shift } => write!(f, "tanh({amp}, {scale}, {shift})"),
            Profile::Atan { amp, scale, shift } => write!(f, "atan({amp}, {scale}, {shift})"),
            Profile::Poly(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "poly({})", parts.join(", "))
            }
            Profile::Bump { amp, center, width } => write!(f, "bump({amp}, {center}, {width})"),
            Profile::Sum(terms) => {
                let parts: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
                write!(f, "{}", parts.join(" + "))
            }
        }
    }
}

fn split_top_level(text: &str, sep: char) -> Vec<&str> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut parts = Vec::new();
    let bytes: Vec<char> = text.chars().collect();
    let mut offset = 0;
    for (i, &c) in bytes.iter().enumerate() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            // a sign inside an exponent such as `1e+3` is not a separator
            c if c == sep && depth == 0 && !(i > 0 && matches!(bytes[i - 1], 'e' | 'E')) => {
                parts.push(&text[start..offset]);
                start = offset + c.len_utf8();
            }
            _ => {}
        }
        offset += c.len_utf8();
    }
    parts.push(&text[start..]);
    parts.into_iter().filter(|p| !p.trim().is_empty()).collect()
}

fn parse_term(term: &str) -> Result<Profile> {
    let open = term.find('(').ok_or_else(|| Error::Config(format!("expected `name(args)`, got `{term}`")))?;
    if !term.ends_with(')') {
        return Err(Error::Config(format!("unbalanced parentheses in `{term}`")));
    }
    let name = term[..open].trim();
    let args: Vec<f64> = term[open + 1..term.len() - 1]
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{}` in `{term}`", a.trim()))))
        .collect::<Result<_>>()?;
    let want = |k: usize| -> Result<()> {
        if args.len() == k {
            Ok(())
        } else {
            Err(Error::Config(format!("`{name}` takes {k} arguments, got {}", args.len())))
        }
    };
    match name {
        "const" => {
            want(1)?;
            Ok(Profile::Const(args[0]))
        }
        "tanh" => {
            want(3)?;
            Ok(Profile::Tanh { amp: args[0], scale: args[1], shift: args[2] })
        }
        "atan" => {
            want(3)?;
            Ok(Profile::Atan { amp: args[0], scale: args[1], shift: args[2] })
        }
        "poly" => {
            if args.is_empty() {
                return Err(Error::Config("`poly` needs at least one coefficient".into()));
            }
            Ok(Profile::Poly(args))
        }
        "bump" => {
            want(3)?;
            if args[2] == 0.0 {
                return Err(Error::Config("`bump` width must be nonzero".into()));
            }
            Ok(Profile::Bump { amp: args[0], center: args[1], width: args[2] })
        }
        other => Err(Error::Config(format!("unknown built-in function `{other}`"))),
    }
}

/// A profile applied to one x-coordinate: `x -> profile(x[axis])`.
#[derive(Debug, Clone, PartialEq)]
pub struct XFunction {
    pub profile: Profile,
    /// Zero-based x-axis the profile reads.
    pub axis: usize,
}

impl XFunction {
    pub fn constant(c: f64) -> Self {
        XFunction { profile: Profile::Const(c), axis: 0 }
    }

    pub fn along(profile: Profile, axis: usize) -> Self {
        let axis = if profile.is_const() { 0 } else { axis };
        XFunction { profile, axis }
    }

    fn arg(&self, x: &[f64]) -> f64 {
        x.get(self.axis).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.profile.eval(self.arg(x))
    }

    /// `[value, d/dx_axis, d^2/dx_axis^2]`; all other partials vanish.
    pub fn derivs(&self, x: &[f64]) -> [f64; 3] {
        self.profile.derivs(self.arg(x))
    }

    pub fn is_const(&self) -> bool {
        self.profile.is_const()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (expr, axis) = match text.rfind('@') {
            Some(at) => {
                let sel = text[at + 1..].trim();
                let k: usize = sel
                    .strip_prefix('x')
                    .and_then(|d| d.parse().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::Config(format!("bad axis selector `@{sel}`")))?;
                (&text[..at], k - 1)
            }
            None => (text, 0),
        };
        Ok(XFunction::along(Profile::parse(expr)?, axis))
    }
}

impl fmt::Display for XFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const() || self.axis == 0 {
            write!(f, "{}", self.profile)
        } else {
            write!(f, "{}@x{}", self.profile, self.axis + 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd(p: &Profile, t: f64) -> (f64, f64) {
        let h = 1e-4;
        let d1 = (p.eval(t + h) - p.eval(t - h)) / (2.0 * h);
        let d2 = (p.eval(t + h) - 2.0 * p.eval(t) + p.eval(t - h)) / (h * h);
        (d1, d2)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let profiles = [
            Profile::Const(2.0),
            Profile::Tanh { amp: 1.5, scale: 0.7, shift: 0.2 },
            Profile::Atan { amp: 0.8, scale: 2.0, shift: -0.3 },
            Profile::Poly(vec![1.0, -2.0, 0.5, 0.25]),
            Profile::Bump { amp: 0.5, center: 0.1, width: 0.9 },
            Profile::parse("const(1) + bump(0.5, 0, 1)").unwrap(),
        ];
        for p in &profiles {
            for &t in &[-1.3, -0.2, 0.0, 0.45, 1.7] {
                let d = p.derivs(t);
                let (d1, d2) = fd(p, t);
                assert!((d[1] - d1).abs() < 1e-6, "{p}: d1 at {t}");
                assert!((d[2] - d2).abs() < 1e-5, "{p}: d2 at {t}");
            }
        }
    }

    #[test]
    fn tanh_value_form_matches_direct_derivatives() {
        let p = Profile::Tanh { amp: 2.0, scale: 1.3, shift: 0.4 };
        for &t in &[-2.0, -0.1, 0.7, 3.0] {
            let d = p.derivs(t);
            let (d1, d2) = p.derivs_from_value(d[0]).unwrap();
            assert!((d1 - d[1]).abs() < 1e-13);
            assert!((d2 - d[2]).abs() < 1e-13);
        }
    }

    #[test]
    fn inverses() {
        let p = Profile::Tanh { amp: 1.0, scale: 1.0, shift: 0.0 };
        assert!((p.inverse(p.eval(0.3)).unwrap() - 0.3).abs() < 1e-14);
        assert!(p.inverse(1.0).is_none());
        let a = Profile::Atan { amp: 1.0, scale: 2.0, shift: 1.0 };
        assert!((a.inverse(a.eval(-0.7)).unwrap() + 0.7).abs() < 1e-12);
        let cubic = Profile::Poly(vec![0.0, 1.0, 0.0, 1.0]);
        assert!((cubic.inverse(cubic.eval(1.2)).unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn parse_errors() {
        assert!(Profile::parse("sinh(1)").is_err());
        assert!(Profile::parse("tanh(1, 2)").is_err());
        assert!(Profile::parse("const(x)").is_err());
        assert!(Profile::parse("").is_err());
        assert!(XFunction::parse("const(1)@y1").is_err());
    }

    #[test]
    fn axis_selector() {
        let f = XFunction::parse("poly(0, 1)@x2").unwrap();
        assert_eq!(f.axis, 1);
        assert_eq!(f.eval(&[5.0, 3.0]), 3.0);
        assert_eq!(f.to_string(), "poly(0, 1)@x2");
    }

    fn arb_profile() -> impl Strategy<Value = Profile> {
        let v = -1e3..1e3f64;
        let leaf = prop_oneof![
            v.clone().prop_map(Profile::Const),
            (v.clone(), v.clone(), v.clone()).prop_map(|(a, s, c)| Profile::Tanh { amp: a, scale: s, shift: c }),
            (v.clone(), v.clone(), v.clone()).prop_map(|(a, s, c)| Profile::Atan { amp: a, scale: s, shift: c }),
            prop::collection::vec(v.clone(), 1..5).prop_map(Profile::Poly),
            (v.clone(), v.clone(), 0.1..10.0f64).prop_map(|(a, c, w)| Profile::Bump { amp: a, center: c, width: w }),
        ];
        prop::collection::vec(leaf, 1..4).prop_map(|mut t| if t.len() == 1 { t.pop().unwrap() } else { Profile::Sum(t) })
    }

    proptest! {
        #[test]
        fn text_form_round_trips(p in arb_profile(), axis in 0usize..3) {
            let xf = XFunction { profile: p, axis };
            let parsed = XFunction::parse(&xf.to_string()).unwrap();
            prop_assert_eq!(parsed.profile, xf.profile.clone());
            if !xf.is_const() {
                prop_assert_eq!(parsed.axis, axis);
            }
        }
    }
}
