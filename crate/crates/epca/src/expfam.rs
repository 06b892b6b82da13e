//! One-parameter exponential families and their variance maps.
//!
//! A family with log-partition `A` has mean `A'(θ)` and variance `A''(θ)`;
//! the variance map `V(m) = A''[(A')⁻¹(m)]` sends a mean parameter to the
//! noise variance at that mean. It drives both diagonal debiasing and
//! homogenization.
//!
//! All functions here are pure; values are `Copy` and safe to share across
//! threads.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// A one-parameter exponential family, with any nuisance parameter
/// (Gaussian variance, negative-binomial dispersion) supplied up front.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExponentialFamily {
    /// Counts with variance equal to the mean.
    Poisson,
    /// Gaussian with known variance σ²; the mean is unrestricted.
    GaussianKnownVar(f64),
    /// Binomial with k trials; means live in [0, k].
    Binomial(u32),
    /// Negative binomial with dispersion r > 0; V(m) = m + m²/r.
    NegativeBinomial(f64),
}

impl ExponentialFamily {
    /// The closed interval of valid mean parameters (the image of A').
    pub fn mean_domain(&self) -> (f64, f64) {
        match self {
            ExponentialFamily::Poisson | ExponentialFamily::NegativeBinomial(_) => {
                (0.0, f64::INFINITY)
            }
            ExponentialFamily::GaussianKnownVar(_) => (f64::NEG_INFINITY, f64::INFINITY),
            ExponentialFamily::Binomial(k) => (0.0, f64::from(*k)),
        }
    }

    /// True iff `m` lies in the mean domain.
    pub fn validate_mean(&self, m: f64) -> bool {
        if m.is_nan() {
            return false;
        }
        let (lo, hi) = self.mean_domain();
        m >= lo && m <= hi
    }

    /// Clamp `m` to the nearest point of the mean domain.
    pub fn clamp_mean(&self, m: f64) -> f64 {
        let (lo, hi) = self.mean_domain();
        m.clamp(lo, hi)
    }

    /// The variance map V(m) = A''[(A')⁻¹(m)].
    ///
    /// Errors when `m` is outside the mean domain; callers that tolerate
    /// small domain violations from sampling noise should clamp first via
    /// [`clamp_mean`](Self::clamp_mean).
    pub fn variance_map(&self, m: f64) -> Result<f64> {
        if !self.validate_mean(m) {
            return Err(Error::MeanOutOfDomain {
                family: self.to_string(),
                value: m,
            });
        }
        Ok(match self {
            ExponentialFamily::Poisson => m,
            ExponentialFamily::GaussianKnownVar(var) => *var,
            // Evaluated as m·(1 − m/k): bit-identical to the 2p̂(1−p̂) form
            // of the Hardy-Weinberg weights when k = 2 (p̂ = m/2 is exact).
            ExponentialFamily::Binomial(k) => m * (1.0 - m / f64::from(*k)),
            ExponentialFamily::NegativeBinomial(r) => m + m * m / r,
        })
    }

    /// Short family tag without parameters.
    pub fn name(&self) -> &'static str {
        match self {
            ExponentialFamily::Poisson => "poisson",
            ExponentialFamily::GaussianKnownVar(_) => "gaussian",
            ExponentialFamily::Binomial(_) => "binomial",
            ExponentialFamily::NegativeBinomial(_) => "negbin",
        }
    }
}

impl fmt::Display for ExponentialFamily {
    /// Round-trips through [`FromStr`]: `poisson`, `gaussian:1.0`,
    /// `binomial:2`, `negbin:5`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExponentialFamily::Poisson => write!(f, "poisson"),
            ExponentialFamily::GaussianKnownVar(v) => write!(f, "gaussian:{v}"),
            ExponentialFamily::Binomial(k) => write!(f, "binomial:{k}"),
            ExponentialFamily::NegativeBinomial(r) => write!(f, "negbin:{r}"),
        }
    }
}

impl FromStr for ExponentialFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(msg);
        let (tag, param) = match s.split_once(':') {
            Some((t, p)) => (t.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        match (tag, param) {
            ("poisson", None) => Ok(ExponentialFamily::Poisson),
            ("poisson", Some(_)) => Err(bad("poisson takes no parameter".into())),
            ("gaussian", Some(p)) => {
                let var: f64 = p
                    .parse()
                    .map_err(|_| bad(format!("bad gaussian variance {p:?}")))?;
                if !(var.is_finite() && var >= 0.0) {
                    return Err(bad(format!("gaussian variance must be nonnegative, got {var}")));
                }
                Ok(ExponentialFamily::GaussianKnownVar(var))
            }
            ("binomial", Some(p)) => {
                let k: u32 = p
                    .parse()
                    .map_err(|_| bad(format!("bad binomial trial count {p:?}")))?;
                if k == 0 {
                    return Err(bad("binomial trial count must be positive".into()));
                }
                Ok(ExponentialFamily::Binomial(k))
            }
            ("negbin", Some(p)) => {
                let r: f64 = p
                    .parse()
                    .map_err(|_| bad(format!("bad negative-binomial dispersion {p:?}")))?;
                if !(r.is_finite() && r > 0.0) {
                    return Err(bad(format!("negbin dispersion must be positive, got {r}")));
                }
                Ok(ExponentialFamily::NegativeBinomial(r))
            }
            ("gaussian" | "binomial" | "negbin", None) => {
                Err(bad(format!("family {tag:?} needs a parameter, e.g. {tag}:2")))
            }
            _ => Err(bad(format!(
                "unknown family {s:?}; expected poisson, gaussian:VAR, binomial:K, or negbin:R"
            ))),
        }
    }
}

/// Family assignment for the columns of a data matrix: one family shared by
/// every column (the common case) or one per column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnFamilies {
    Shared(ExponentialFamily),
    PerColumn(Vec<ExponentialFamily>),
}

impl ColumnFamilies {
    pub fn family(&self, column: usize) -> ExponentialFamily {
        match self {
            ColumnFamilies::Shared(f) => *f,
            ColumnFamilies::PerColumn(v) => v[column],
        }
    }

    /// Check against a column count; `PerColumn` must match exactly.
    pub fn check_len(&self, columns: usize) -> Result<()> {
        match self {
            ColumnFamilies::Shared(_) => Ok(()),
            ColumnFamilies::PerColumn(v) if v.len() == columns => Ok(()),
            ColumnFamilies::PerColumn(v) => Err(Error::ShapeMismatch {
                expected: format!("{columns} column families"),
                actual: format!("{}", v.len()),
            }),
        }
    }

    /// Restrict to a subset of columns (used when degenerate columns drop).
    pub fn select(&self, keep: &[usize]) -> ColumnFamilies {
        match self {
            ColumnFamilies::Shared(f) => ColumnFamilies::Shared(*f),
            ColumnFamilies::PerColumn(v) => {
                ColumnFamilies::PerColumn(keep.iter().map(|&j| v[j]).collect())
            }
        }
    }
}

impl From<ExponentialFamily> for ColumnFamilies {
    fn from(f: ExponentialFamily) -> Self {
        ColumnFamilies::Shared(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ExponentialFamily::*;

    #[test]
    fn variance_map_values() {
        assert_eq!(Poisson.variance_map(3.0).unwrap(), 3.0);
        assert_eq!(GaussianKnownVar(1.0).variance_map(17.3).unwrap(), 1.0);
        assert_eq!(Binomial(2).variance_map(1.0).unwrap(), 0.5);
        let nb = NegativeBinomial(5.0).variance_map(2.0).unwrap();
        assert!((nb - 2.8).abs() < 1e-15, "m + m²/r = 2 + 4/5, got {nb}");
    }

    #[test]
    fn validate_mean_boundaries() {
        assert!(!Poisson.validate_mean(-0.1));
        assert!(Binomial(2).validate_mean(2.0));
        assert!(Binomial(2).validate_mean(0.0));
        assert!(!Binomial(2).validate_mean(2.0 + 1e-12));
        assert!(GaussianKnownVar(1.0).validate_mean(-5.0));
        assert!(!Poisson.validate_mean(f64::NAN));
    }

    #[test]
    fn variance_map_domain_error_names_family() {
        let err = Poisson.variance_map(-0.5).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("poisson") && msg.contains("-0.5"), "{msg}");
    }

    #[test]
    fn poisson_variance_is_exactly_linear() {
        for &m in &[0.0, 0.04, 1.0, 3.5, 1e6] {
            for &a in &[0.5, 2.0, 7.3] {
                let lhs = Poisson.variance_map(a * m).unwrap();
                let rhs = a * Poisson.variance_map(m).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn binomial2_matches_allele_frequency_form() {
        // V(m) = m(1 − m/2) must equal 2p̂(1−p̂) with p̂ = m/2 bit-for-bit
        // (a single shared rounding of 1 − m/2).
        for i in 0..=200 {
            let m = 2.0 * f64::from(i) / 200.0;
            let v = Binomial(2).variance_map(m).unwrap();
            let p_hat = m / 2.0;
            let hw = 2.0 * p_hat * (1.0 - p_hat);
            assert_eq!(v.to_bits(), hw.to_bits(), "m = {m}");
        }
    }

    #[test]
    fn clamp_mean_snaps_to_domain() {
        assert_eq!(Poisson.clamp_mean(-1e-9), 0.0);
        assert_eq!(Binomial(2).clamp_mean(2.5), 2.0);
        assert_eq!(GaussianKnownVar(1.0).clamp_mean(-5.0), -5.0);
    }

    #[test]
    fn family_strings_round_trip() {
        for s in ["poisson", "binomial:2", "gaussian:1.5", "negbin:5.5"] {
            let f: ExponentialFamily = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
            let again: ExponentialFamily = f.to_string().parse().unwrap();
            assert_eq!(f, again);
        }
        assert!("binomial".parse::<ExponentialFamily>().is_err());
        assert!("binomial:0".parse::<ExponentialFamily>().is_err());
        assert!("negbin:-1".parse::<ExponentialFamily>().is_err());
        assert!("weibull".parse::<ExponentialFamily>().is_err());
    }

    #[test]
    fn per_column_selection() {
        let fams = ColumnFamilies::PerColumn(vec![Poisson, Binomial(2), GaussianKnownVar(1.0)]);
        let sub = fams.select(&[2, 0]);
        assert_eq!(sub.family(0), GaussianKnownVar(1.0));
        assert_eq!(sub.family(1), Poisson);
        assert!(fams.check_len(3).is_ok());
        assert!(fams.check_len(2).is_err());
    }
}
