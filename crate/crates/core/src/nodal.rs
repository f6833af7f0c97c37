//! Analytic periodic nodal TPMS fields and the symmetry operators used to
//! assemble full structures from small units.

use crate::{Error, Result, ScalarField};
use serde::{Deserialize, Serialize};

/// Supported TPMS families.
///
/// P, D, G and I-WP use the usual truncated-Fourier nodal approximations with
/// normalizing divisors 0.9 / 0.6 / 0.9 / 2.5. FRD uses the standard
/// literature nodal form `4 cos x cos y cos z - (cos 2x cos 2y + cos 2y cos 2z
/// + cos 2z cos 2x)`; this formula is externally sourced, not part of the
/// P/D/G/IWP family table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TpmsKind {
    P,
    D,
    G,
    Iwp,
    Frd,
}

impl std::str::FromStr for TpmsKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "p" => Ok(TpmsKind::P),
            "d" => Ok(TpmsKind::D),
            "g" => Ok(TpmsKind::G),
            "iwp" | "i-wp" => Ok(TpmsKind::Iwp),
            "frd" => Ok(TpmsKind::Frd),
            other => Err(format!("unknown TPMS kind '{other}'")),
        }
    }
}

/// Solid selection rule applied to a nodal field value.
///
/// Rod denotes {phi <= c}, Pore denotes {phi >= c}, Sheet denotes
/// {-c <= phi <= c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolidType {
    Rod,
    Pore,
    Sheet,
}

impl std::str::FromStr for SolidType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rod" => Ok(SolidType::Rod),
            "pore" => Ok(SolidType::Pore),
            "sheet" => Ok(SolidType::Sheet),
            other => Err(format!("unknown solid type '{other}'")),
        }
    }
}

/// Analytic nodal TPMS field with per-axis angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    pub kind: TpmsKind,
    pub angular_frequencies: [f64; 3],
}

impl NodalField {
    /// Field with unit frequencies, i.e. period 2*pi per axis.
    pub fn new(kind: TpmsKind) -> Self {
        Self { kind, angular_frequencies: [1.0; 3] }
    }

    pub fn with_frequencies(kind: TpmsKind, freq: [f64; 3]) -> Result<Self> {
        if freq.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!(
                "angular frequencies must be positive and finite, got {freq:?}"
            )));
        }
        Ok(Self { kind, angular_frequencies: freq })
    }

    /// Half period per axis (pi / omega for unit frequencies).
    pub fn half_period(&self) -> [f64; 3] {
        let w = self.angular_frequencies;
        [std::f64::consts::PI / w[0], std::f64::consts::PI / w[1], std::f64::consts::PI / w[2]]
    }

    /// Raw closed-form evaluation. Non-finite inputs yield NaN.
    pub fn value_at(&self, p: [f64; 3]) -> f64 {
        let x = self.angular_frequencies[0] * p[0];
        let y = self.angular_frequencies[1] * p[1];
        let z = self.angular_frequencies[2] * p[2];
        match self.kind {
            TpmsKind::P => (x.cos() + y.cos() + z.cos()) / 0.9,
            TpmsKind::D => {
                (x.cos() * y.cos() * z.cos() - x.sin() * y.sin() * z.sin()) / 0.6
            }
            TpmsKind::G => {
                (x.sin() * y.cos() + y.sin() * z.cos() + z.sin() * x.cos()) / 0.9
            }
            TpmsKind::Iwp => {
                (2.0 * (x.cos() * y.cos() + y.cos() * z.cos() + z.cos() * x.cos())
                    - ((2.0 * x).cos() + (2.0 * y).cos() + (2.0 * z).cos()))
                    / 2.5
            }
            TpmsKind::Frd => {
                4.0 * x.cos() * y.cos() * z.cos()
                    - ((2.0 * x).cos() * (2.0 * y).cos()
                        + (2.0 * y).cos() * (2.0 * z).cos()
                        + (2.0 * z).cos() * (2.0 * x).cos())
            }
        }
    }

    /// Rod-form view of this field for a given solid type.
    pub fn rod_form(&self, solid: SolidType) -> RodFormField {
        RodFormField { field: *self, solid }
    }
}

/// Closed-form evaluation with input validation.
pub fn eval_nodal(field: &NodalField, point: [f64; 3]) -> Result<f64> {
    if point.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite coordinates {point:?}")));
    }
    Ok(field.value_at(point))
}

/// Reduce a field value so that Rod/Pore/Sheet solids all become sublevel
/// sets: Rod is the identity, Pore negates (threshold maps c -> -c), Sheet
/// takes the absolute value.
pub fn to_rod_form(field_value: f64, solid_type: SolidType) -> f64 {
    match solid_type {
        SolidType::Rod => field_value,
        SolidType::Pore => -field_value,
        SolidType::Sheet => field_value.abs(),
    }
}

/// Reflection about the half period: x for x <= X, else 2X - x.
pub fn reflect(x: f64, half_period: f64) -> Result<f64> {
    if !(0.0..=2.0 * half_period).contains(&x) {
        return Err(Error::Domain(format!(
            "reflect: {x} outside [0, {}]",
            2.0 * half_period
        )));
    }
    Ok(if x <= half_period { x } else { 2.0 * half_period - x })
}

/// Translation into the fundamental period [0, 2X).
pub fn translate(x: f64, half_period: f64) -> f64 {
    debug_assert!(half_period > 0.0);
    let period = 2.0 * half_period;
    x - period * (x / period).floor()
}

/// `reflect(translate(x))`, the map from R onto [0, X].
pub fn fold(x: f64, half_period: f64) -> f64 {
    let t = translate(x, half_period);
    if t <= half_period {
        t
    } else {
        2.0 * half_period - t
    }
}

/// A nodal field reduced to rod form, evaluatable anywhere.
#[derive(Debug, Clone, Copy)]
pub struct RodFormField {
    pub field: NodalField,
    pub solid: SolidType,
}

impl ScalarField for RodFormField {
    fn value(&self, p: [f64; 3]) -> f64 {
        to_rod_form(self.field.value_at(p), self.solid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn p_field_examples() {
        let f = NodalField::new(TpmsKind::P);
        assert!((eval_nodal(&f, [0.0, 0.0, 0.0]).unwrap() - 3.0 / 0.9).abs() < 1e-12);
        assert!((eval_nodal(&f, [PI, 0.0, 0.0]).unwrap() - 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn g_field_origin_is_zero() {
        let f = NodalField::new(TpmsKind::G);
        assert_eq!(eval_nodal(&f, [0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_point_rejected() {
        let f = NodalField::new(TpmsKind::P);
        assert!(eval_nodal(&f, [f64::NAN, 0.0, 0.0]).is_err());
        assert!(eval_nodal(&f, [f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rod_form_cases() {
        assert_eq!(to_rod_form(1.5, SolidType::Pore), -1.5);
        assert_eq!(to_rod_form(-0.7, SolidType::Sheet), 0.7);
        assert_eq!(to_rod_form(2.0, SolidType::Rod), 2.0);
    }

    #[test]
    fn sheet_reduction_is_even() {
        for v in [-2.5, -0.1, 0.0, 0.3, 4.0] {
            assert_eq!(to_rod_form(v, SolidType::Sheet), to_rod_form(-v, SolidType::Sheet));
        }
    }

    #[test]
    fn reflect_examples() {
        assert!((reflect(3.0 * PI / 2.0, PI).unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(reflect(PI, PI).unwrap(), PI);
        assert_eq!(reflect(0.3, 1.0).unwrap(), 0.3);
        assert!(reflect(-0.1, 1.0).is_err());
        assert!(reflect(2.1, 1.0).is_err());
    }

    #[test]
    fn translate_examples() {
        assert!((translate(5.0 * PI, PI) - PI).abs() < 1e-12);
        assert!((translate(-0.5, 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(translate(0.25, 1.0), 0.25);
    }

    #[test]
    fn translate_is_idempotent_and_reflect_bounded() {
        for i in 0..200 {
            let x = -17.0 + 0.173 * i as f64;
            let t = translate(x, 1.3);
            assert!((translate(t, 1.3) - t).abs() < 1e-12);
            let r = fold(x, 1.3);
            assert!((0.0..=1.3).contains(&r));
        }
    }

    #[test]
    fn p_field_reflection_symmetry() {
        let f = NodalField::new(TpmsKind::P);
        for i in 0..10 {
            for j in 0..10 {
                let x = 2.0 * PI * i as f64 / 9.0;
                let y = 2.0 * PI * j as f64 / 9.0;
                let z = 2.0 * PI * ((i * 7 + j) % 10) as f64 / 9.0;
                let a = f.value_at([x, y, z]);
                let b = f.value_at([fold(x, PI), fold(y, PI), fold(z, PI)]);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_frequency_periodicity() {
        for kind in [TpmsKind::P, TpmsKind::D, TpmsKind::G, TpmsKind::Iwp, TpmsKind::Frd] {
            let f = NodalField::new(kind);
            for (a, b, c) in [(1i32, 0, 0), (0, 1, 0), (0, 0, 1), (2, -1, 3)] {
                let p = [0.37, 1.91, 4.2];
                let q = [
                    p[0] + 2.0 * PI * a as f64,
                    p[1] + 2.0 * PI * b as f64,
                    p[2] + 2.0 * PI * c as f64,
                ];
                assert!((f.value_at(p) - f.value_at(q)).abs() < 1e-12);
            }
        }
    }
}
