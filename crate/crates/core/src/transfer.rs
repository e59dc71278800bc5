//! Exact 2×2 endpoint propagators of the tilted single-site measure.
//!
//! For a constant field `h` over an interval of length `t`,
//! `K(t) = e^{−λt} exp(t [[h, λ], [λ, −h]])`, indexed by (sign at start,
//! sign at end) with `+` first. Entry `K[a][b]` is the reference-measure
//! weight of paths from `a` to `b`, tilted by `exp(∫ h σ)`.

use crate::error::{Error, Result};
use crate::trajectory::{ModelParams, Piecewise, PiecewiseField, Sign};

/// `exp(log_scale) · m`, kept factored so long products neither overflow nor
/// underflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalKernel {
    m: [[f64; 2]; 2],
    log_scale: f64,
}

const SERIES_THRESHOLD: f64 = 1e-6;

impl IntervalKernel {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0], [0.0, 1.0]], log_scale: 0.0 }
    }

    /// Kernel of a constant field `h` over a duration `t`.
    pub fn constant(h: f64, lambda: f64, t: f64) -> Self {
        assert!(t >= 0.0, "negative duration");
        let r = h.hypot(lambda);
        let x = r * t;
        if x < SERIES_THRESHOLD {
            let x2 = x * x;
            let c = 1.0 + x2 / 2.0 + x2 * x2 / 24.0;
            let s = t * (1.0 + x2 / 6.0 + x2 * x2 / 120.0);
            return Self {
                m: [[c + s * h, s * lambda], [s * lambda, c - s * h]],
                log_scale: -lambda * t,
            };
        }
        // Pull out e^{rt}; (r ± h)/r written without cancellation.
        let e = (-2.0 * x).exp();
        let rp = if h >= 0.0 { r + h } else { lambda * lambda / (r - h) };
        let rm = if h <= 0.0 { r - h } else { lambda * lambda / (r + h) };
        let (a, b) = (rp / r, rm / r);
        let off = lambda / r * (-(-2.0 * x).exp_m1()) / 2.0;
        Self {
            m: [[(a + b * e) / 2.0, off], [off, (b + a * e) / 2.0]],
            log_scale: (r - lambda) * t,
        }
    }

    pub fn entry(&self, start: Sign, end: Sign) -> f64 {
        self.m[start.index()][end.index()] * self.log_scale.exp()
    }

    /// Entry scaled by `exp(-log_scale)`; ratios of these are exact ratios
    /// of entries.
    pub fn scaled(&self, start: Sign, end: Sign) -> f64 {
        self.m[start.index()][end.index()]
    }

    pub fn scaled_matrix(&self) -> [[f64; 2]; 2] {
        self.m
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn log_entry(&self, start: Sign, end: Sign) -> f64 {
        self.scaled(start, end).ln() + self.log_scale
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let s = self.log_scale.exp();
        self.m.map(|row| row.map(|v| v * s))
    }

    /// Ordered product `self · other`, renormalized.
    pub fn then(&self, other: &IntervalKernel) -> IntervalKernel {
        let (a, b) = (&self.m, &other.m);
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let mut out = IntervalKernel { m, log_scale: self.log_scale + other.log_scale };
        out.renormalize();
        out
    }

    fn renormalize(&mut self) {
        let mx = self.m.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        if mx > 0.0 && mx.is_finite() {
            for v in self.m.iter_mut().flatten() {
                *v /= mx;
            }
            self.log_scale += mx.ln();
        }
    }
}

pub fn interval_kernel(h: f64, params: &ModelParams, t: f64) -> IntervalKernel {
    IntervalKernel::constant(h, params.lambda, t)
}

/// Per-segment kernels of a piecewise field.
pub fn segment_kernels(field: &PiecewiseField, lambda: f64) -> Vec<IntervalKernel> {
    field.segments().map(|s| IntervalKernel::constant(s.value, lambda, s.len())).collect()
}

/// Ordered product of the constant-piece kernels of `field`.
pub fn path_kernel(field: &PiecewiseField, params: &ModelParams) -> Result<IntervalKernel> {
    if field.beta() != params.beta {
        return Err(Error::BetaMismatch(field.beta(), params.beta));
    }
    Ok(segment_kernels(field, params.lambda)
        .iter()
        .fold(IntervalKernel::identity(), |acc, k| acc.then(k)))
}

/// Condition on the imaginary-time endpoint values `(σ(0), σ(β))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointCondition {
    Free,
    Periodic,
    Pinned { start: Sign, end: Sign },
    /// Only `σ(β)` is fixed.
    End(Sign),
    /// Only `σ(0)` is fixed.
    Start(Sign),
}

impl EndpointCondition {
    fn weight(&self, s0: Sign, s1: Sign) -> f64 {
        let allowed = match *self {
            EndpointCondition::Free => true,
            EndpointCondition::Periodic => s0 == s1,
            EndpointCondition::Pinned { start, end } => s0 == start && s1 == end,
            EndpointCondition::End(e) => s1 == e,
            EndpointCondition::Start(a) => s0 == a,
        };
        if allowed {
            1.0
        } else {
            0.0
        }
    }
}

/// Joint law of `(σ(0), σ(β))`, indexed like the kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointLaw {
    pub p: [[f64; 2]; 2],
}

impl EndpointLaw {
    pub fn prob(&self, s0: Sign, s1: Sign) -> f64 {
        self.p[s0.index()][s1.index()]
    }

    /// Inverse-CDF draw in the order (++, +−, −+, −−).
    pub fn sample_with(&self, u: f64) -> (Sign, Sign) {
        let mut acc = 0.0;
        let mut last = None;
        for i in 0..2 {
            for j in 0..2 {
                if self.p[i][j] > 0.0 {
                    acc += self.p[i][j];
                    last = Some((Sign::from_index(i), Sign::from_index(j)));
                    if u < acc {
                        return last.unwrap();
                    }
                }
            }
        }
        last.expect("endpoint law has positive mass")
    }
}

/// Endpoint law from a (possibly scaled) total kernel.
pub fn endpoint_law_from_kernel(k: &IntervalKernel, bc: EndpointCondition) -> Result<EndpointLaw> {
    let mut p = [[0.0; 2]; 2];
    let mut z = 0.0;
    for s0 in Sign::BOTH {
        for s1 in Sign::BOTH {
            let w = bc.weight(s0, s1) * k.scaled(s0, s1);
            p[s0.index()][s1.index()] = w;
            z += w;
        }
    }
    if !(z > 0.0) {
        return Err(Error::ZeroProbability);
    }
    for v in p.iter_mut().flatten() {
        *v /= z;
    }
    Ok(EndpointLaw { p })
}

pub fn endpoint_law(
    field: &PiecewiseField,
    params: &ModelParams,
    bc: EndpointCondition,
) -> Result<EndpointLaw> {
    endpoint_law_from_kernel(&path_kernel(field, params)?, bc)
}

/// `log φ(e^{h•σ}; bc)`: the reference measure (uniform initial sign, hence
/// the factor ½) of the bc event, tilted by the field.
pub fn log_partition(
    field: &PiecewiseField,
    params: &ModelParams,
    bc: EndpointCondition,
) -> Result<f64> {
    let k = path_kernel(field, params)?;
    let mut z = 0.0;
    for s0 in Sign::BOTH {
        for s1 in Sign::BOTH {
            z += bc.weight(s0, s1) * k.scaled(s0, s1);
        }
    }
    if !(z > 0.0) {
        return Err(Error::ZeroProbability);
    }
    Ok((0.5 * z).ln() + k.log_scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [[f64; 2]; 2], b: [[f64; 2]; 2], tol: f64) -> bool {
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_duration_is_identity() {
        assert_eq!(IntervalKernel::constant(0.7, 1.3, 0.0).matrix(), [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn pure_transverse_closed_form() {
        let e = (-1.0f64).exp();
        let want = [[e * 1f64.cosh(), e * 1f64.sinh()], [e * 1f64.sinh(), e * 1f64.cosh()]];
        assert!(close(IntervalKernel::constant(0.0, 1.0, 1.0).matrix(), want, 1e-15));
    }

    #[test]
    fn classical_limit() {
        let k = IntervalKernel::constant(1.0, 0.0, 1.0).matrix();
        assert!(close(k, [[1f64.exp(), 0.0], [0.0, (-1f64).exp()]], 1e-14));
        let k = IntervalKernel::constant(-2.0, 0.0, 0.5).matrix();
        assert!(close(k, [[(-1f64).exp(), 0.0], [0.0, 1f64.exp()]], 1e-14));
    }

    #[test]
    fn series_branch_is_continuous() {
        // Straddle the threshold r·t = 1e-6 from both sides.
        for &(h, l) in &[(0.3, 0.4), (-0.6, 0.8), (0.0, 1.0), (1.0, 0.0)] {
            let below = IntervalKernel::constant(h, l, 0.999e-6).matrix();
            let above = IntervalKernel::constant(h, l, 1.001e-6).matrix();
            assert!(close(below, above, 1e-8), "{h} {l}");
        }
        assert_eq!(IntervalKernel::constant(0.0, 0.0, 3.0).matrix(), [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn large_arguments_stay_finite() {
        let k = IntervalKernel::constant(-40.0, 0.5, 50.0);
        assert!(k.log_scale().is_finite());
        assert!(k.scaled_matrix().iter().flatten().all(|v| v.is_finite() && *v >= 0.0));
        assert!(k.scaled(Sign::Minus, Sign::Minus) > k.scaled(Sign::Plus, Sign::Plus));
    }

    /// Fixed-step RK4 for dK/dt = K·(A(t) − λI), K(0) = I.
    fn rk4(field: &PiecewiseField, lambda: f64, dt: f64) -> [[f64; 2]; 2] {
        let gen = |t: f64| {
            let h = field.value_at(t.min(field.beta())).unwrap();
            [[h - lambda, lambda], [lambda, -h - lambda]]
        };
        let mul = |k: [[f64; 2]; 2], a: [[f64; 2]; 2]| {
            let mut o = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    o[i][j] = k[i][0] * a[0][j] + k[i][1] * a[1][j];
                }
            }
            o
        };
        let axpy = |k: [[f64; 2]; 2], d: [[f64; 2]; 2], c: f64| {
            let mut o = k;
            for i in 0..2 {
                for j in 0..2 {
                    o[i][j] += c * d[i][j];
                }
            }
            o
        };
        let steps = (field.beta() / dt).round() as usize;
        let mut k = [[1.0, 0.0], [0.0, 1.0]];
        for n in 0..steps {
            // Evaluate the generator just inside the current step so the
            // field jump at a step boundary is resolved exactly.
            let t = n as f64 * dt;
            let a0 = gen(t + 1e-3 * dt);
            let am = gen(t + 0.5 * dt);
            let a1 = gen(t + (1.0 - 1e-3) * dt);
            let k1 = mul(k, a0);
            let k2 = mul(axpy(k, k1, dt / 2.0), am);
            let k3 = mul(axpy(k, k2, dt / 2.0), am);
            let k4 = mul(axpy(k, k3, dt), a1);
            for i in 0..2 {
                for j in 0..2 {
                    k[i][j] += dt / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
                }
            }
        }
        k
    }

    #[test]
    fn two_piece_field_matches_rk4() {
        let field = PiecewiseField::new(vec![0.0, 0.5, 1.0], vec![1.0, -1.0], 1.0).unwrap();
        let params = ModelParams::new(1.0, 1.0, 0.0).unwrap();
        let exact = path_kernel(&field, &params).unwrap().matrix();
        let ode = rk4(&field, 1.0, 1e-5);
        assert!(close(exact, ode, 1e-8), "{exact:?} vs {ode:?}");
    }

    #[test]
    fn constant_field_path_kernel() {
        let params = ModelParams::new(1.3, 0.7, 0.4).unwrap();
        let a = path_kernel(&params.h, &params).unwrap().matrix();
        let b = interval_kernel(0.4, &params, 1.3).matrix();
        assert!(close(a, b, 1e-15));
    }

    #[test]
    fn endpoint_law_examples() {
        let params = ModelParams::new(1.0, 0.8, 0.0).unwrap();
        let law = endpoint_law(&params.h, &params, EndpointCondition::Free).unwrap();
        let p_plus = law.prob(Sign::Plus, Sign::Plus) + law.prob(Sign::Plus, Sign::Minus);
        assert!((p_plus - 0.5).abs() < 1e-15);

        let (beta, h) = (1.0, 0.6);
        let params = ModelParams::new(beta, 0.0, h).unwrap();
        let law = endpoint_law(&params.h, &params, EndpointCondition::Free).unwrap();
        let want = (beta * h).exp() / ((beta * h).exp() + (-beta * h).exp());
        assert!((law.prob(Sign::Plus, Sign::Plus) - want).abs() < 1e-15);
        assert_eq!(law.prob(Sign::Plus, Sign::Minus), 0.0);

        let pin = EndpointCondition::Pinned { start: Sign::Plus, end: Sign::Minus };
        assert_eq!(endpoint_law(&params.h, &params, pin), Err(Error::ZeroProbability));
    }

    #[test]
    fn log_partition_examples() {
        let params = ModelParams::new(2.0, 0.0, 0.0).unwrap();
        assert!(log_partition(&params.h, &params, EndpointCondition::Free).unwrap().abs() < 1e-15);
        let (beta, h) = (1.7, 0.45);
        let params = ModelParams::new(beta, 0.0, h).unwrap();
        let lz = log_partition(&params.h, &params, EndpointCondition::Free).unwrap();
        assert!((lz - (beta * h).cosh().ln()).abs() < 1e-14);
    }

    #[test]
    fn periodic_partition_is_trace() {
        // φ^per weight ½Tr K equals ½Tr e^{-βH}·e^{-λβ} for a single site.
        let (beta, h, l) = (1.0, 0.4, 0.6);
        let params = ModelParams::new(beta, l, h).unwrap();
        let lz = log_partition(&params.h, &params, EndpointCondition::Periodic).unwrap();
        let r = f64::hypot(h, l);
        let want = (0.5 * 2.0 * (beta * r).cosh()).ln() - l * beta;
        assert!((lz - want).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn semigroup(h in -3.0f64..3.0, l in 0.0f64..3.0, t in 0.0f64..4.0, frac in 0.0f64..1.0) {
            let whole = IntervalKernel::constant(h, l, t).matrix();
            let parts = IntervalKernel::constant(h, l, t * frac)
                .then(&IntervalKernel::constant(h, l, t * (1.0 - frac)))
                .matrix();
            let scale = whole.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
            prop_assert!(close(whole, parts, 1e-12 * scale.max(1.0)));
        }

        #[test]
        fn entries_nonnegative_and_positive(h in -5.0f64..5.0, l in 0.0f64..5.0, t in 0.0f64..5.0) {
            let k = IntervalKernel::constant(h, l, t);
            prop_assert!(k.scaled_matrix().iter().flatten().all(|&v| v >= 0.0));
            if l > 0.0 && t > 0.0 {
                prop_assert!(k.scaled_matrix().iter().flatten().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn log_partition_additive(h1 in -2.0f64..2.0, h2 in -2.0f64..2.0, l in 0.1f64..2.0, c in 0.1f64..0.9) {
            // Concatenation: Z over the two-piece field equals ½ Σ (K1 K2).
            let field = PiecewiseField::new(vec![0.0, c, 1.0], vec![h1, h2], 1.0).unwrap();
            let params = ModelParams::new(1.0, l, 0.0).unwrap();
            let k1 = IntervalKernel::constant(h1, l, c).matrix();
            let k2 = IntervalKernel::constant(h2, l, 1.0 - c).matrix();
            let mut z = 0.0;
            for i in 0..2 { for j in 0..2 { for m in 0..2 { z += k1[i][m] * k2[m][j]; } } }
            let lz = log_partition(&field, &params, EndpointCondition::Free).unwrap();
            prop_assert!((lz - (0.5 * z).ln()).abs() < 1e-12);
        }

        #[test]
        fn sign_flip_symmetry_at_zero_field(l in 0.0f64..3.0, t in 0.0f64..3.0) {
            let m = IntervalKernel::constant(0.0, l, t).matrix();
            prop_assert!((m[0][0] - m[1][1]).abs() < 1e-15 && (m[0][1] - m[1][0]).abs() < 1e-15);
        }
    }
}
