//! Monotone piecewise-cubic interpolation (Fritsch-Carlson).
//!
//! Used for the measured gain tables: interpolants through monotone knot
//! sets must stay monotone and never overshoot the data range.

/// Monotone cubic Hermite interpolant over sorted knots.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Build from knots sorted by strictly increasing x.
    ///
    /// Panics if fewer than two knots or x values are not strictly
    /// increasing; callers validate knot tables before constructing.
    pub fn new(knots: &[(f64, f64)]) -> Self {
        Self::build(knots, false)
    }

    /// Like [`MonotoneCubic::new`] but with a zero tangent at the first
    /// knot. Curves sampled from even functions (gain versus angle or
    /// radial offset) are flat at the origin.
    pub fn new_flat_start(knots: &[(f64, f64)]) -> Self {
        Self::build(knots, true)
    }

    fn build(knots: &[(f64, f64)], flat_start: bool) -> Self {
        assert!(knots.len() >= 2, "need at least two knots");
        let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
        for w in xs.windows(2) {
            assert!(w[0] < w[1], "knot x values must be strictly increasing");
        }

        let n = xs.len();
        let mut deltas = vec![0.0; n - 1];
        for i in 0..n - 1 {
            deltas[i] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }

        // Fritsch-Carlson tangents: zero at local extrema, harmonic-mean
        // style limiting elsewhere so each segment stays monotone.
        let mut slopes = vec![0.0; n];
        slopes[0] = if flat_start { 0.0 } else { deltas[0] };
        slopes[n - 1] = deltas[n - 2];
        for i in 1..n - 1 {
            if deltas[i - 1] * deltas[i] <= 0.0 {
                slopes[i] = 0.0;
            } else {
                slopes[i] = (deltas[i - 1] + deltas[i]) / 2.0;
            }
        }
        for i in 0..n - 1 {
            if deltas[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / deltas[i];
            let b = slopes[i + 1] / deltas[i];
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                slopes[i] = t * a * deltas[i];
                slopes[i + 1] = t * b * deltas[i];
            }
        }

        Self { xs, ys, slopes }
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Evaluate at `x`, clamping outside the knot range to the end values.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= *self.xs.last().unwrap() {
            return *self.ys.last().unwrap();
        }
        let i = match self
            .xs
            .binary_search_by(|probe| probe.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gain_curve() -> MonotoneCubic {
        MonotoneCubic::new(&[(0.0, 1.0), (30.0, 0.95), (60.0, 0.80), (90.0, 0.35)])
    }

    #[test]
    fn hits_knots_exactly() {
        let c = gain_curve();
        assert_eq!(c.eval_clamped(0.0), 1.0);
        assert_eq!(c.eval_clamped(30.0), 0.95);
        assert_eq!(c.eval_clamped(60.0), 0.80);
        assert_eq!(c.eval_clamped(90.0), 0.35);
    }

    #[test]
    fn monotone_between_knots() {
        let c = gain_curve();
        let mut prev = f64::INFINITY;
        for i in 0..=900 {
            let x = i as f64 * 0.1;
            let y = c.eval_clamped(x);
            assert!(y <= prev + 1e-12, "not nonincreasing at {x}: {y} > {prev}");
            assert!((0.35..=1.0).contains(&y), "overshoot at {x}: {y}");
            prev = y;
        }
    }

    #[test]
    fn clamps_outside_range() {
        let c = gain_curve();
        assert_eq!(c.eval_clamped(-5.0), 1.0);
        assert_eq!(c.eval_clamped(120.0), 0.35);
    }

    #[test]
    fn linear_data_reproduced() {
        let c = MonotoneCubic::new(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        for i in 0..=20 {
            let x = i as f64 * 0.1;
            assert_relative_eq!(c.eval_clamped(x), x, epsilon = 1e-12);
        }
    }
}
