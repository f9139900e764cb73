//! B-spline bases by Cox–de Boor recursion.

/// Evaluates every B-spline basis function of `degree` over `knots` at `x`.
///
/// Returns `knots.len() - degree - 1` values. `x` is clamped to the
/// interior domain `[knots[degree], knots[n_basis]]`, where the bases form a
/// partition of unity.
pub fn bspline_basis(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    assert!(
        knots.len() >= degree + 2,
        "need at least degree + 2 knots, got {}",
        knots.len()
    );
    debug_assert!(knots.windows(2).all(|w| w[0] <= w[1]));
    let n_basis = knots.len() - degree - 1;
    let mut out = vec![0.0; n_basis];
    let mut scratch = Scratch::new(degree);
    let xc = clamp_domain(x, knots, degree).0;
    let span = find_span(xc, knots, degree);
    scratch.eval(xc, span, knots, degree);
    out[span - degree..=span].copy_from_slice(&scratch.values[..=degree]);
    out
}

/// Uniform knot grid shared by all spline edges in a layer.
///
/// `n_basis` coefficients of a degree-`degree` spline over `[lo, hi]` need
/// `n_basis - degree` intervals, extended by `degree` knots on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    knots: Vec<f64>,
    degree: usize,
    lo: f64,
    hi: f64,
}

impl KnotGrid {
    pub fn uniform(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Self {
        assert!(lo < hi, "grid range must satisfy lo < hi");
        assert!(n_basis > degree, "need more coefficients than the degree");
        let intervals = n_basis - degree;
        let step = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|i| lo + (i as f64 - degree as f64) * step)
            .collect();
        Self {
            knots,
            degree,
            lo,
            hi,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Writes all basis values and their derivatives w.r.t. `x` into
    /// `values` and `derivs` (each `n_basis` long). Derivatives are zero
    /// outside the domain, where `x` is clamped.
    pub fn eval_into(&self, x: f64, values: &mut [f64], derivs: &mut [f64], scratch: &mut Scratch) {
        let p = self.degree;
        values.fill(0.0);
        derivs.fill(0.0);
        let (xc, clamped) = clamp_domain(x, &self.knots, p);
        let span = find_span(xc, &self.knots, p);
        scratch.eval(xc, span, &self.knots, p);
        values[span - p..=span].copy_from_slice(&scratch.values[..=p]);
        if clamped || p == 0 {
            return;
        }
        // lower-degree bases N_{span-p+1..=span, p-1} sit in scratch.lower
        let t = &self.knots;
        for r in 0..=p {
            let i = span - p + r;
            let left = if r >= 1 { scratch.lower[r - 1] } else { 0.0 };
            let right = if r < p { scratch.lower[r] } else { 0.0 };
            let mut d = 0.0;
            let den_l = t[i + p] - t[i];
            if den_l > 0.0 {
                d += left / den_l;
            }
            let den_r = t[i + p + 1] - t[i + 1];
            if den_r > 0.0 {
                d -= right / den_r;
            }
            derivs[i] = p as f64 * d;
        }
    }

    pub fn scratch(&self) -> Scratch {
        Scratch::new(self.degree)
    }
}

/// Work buffers for one basis evaluation.
#[derive(Debug, Clone)]
pub struct Scratch {
    values: Vec<f64>,
    lower: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Scratch {
    fn new(degree: usize) -> Self {
        Self {
            values: vec![0.0; degree + 1],
            lower: vec![0.0; degree + 1],
            left: vec![0.0; degree + 1],
            right: vec![0.0; degree + 1],
        }
    }

    /// Triangular Cox–de Boor evaluation of the `degree + 1` bases that are
    /// nonzero on knot span `span`. The degree-(p-1) row is kept in `lower`.
    fn eval(&mut self, x: f64, span: usize, t: &[f64], p: usize) {
        let n = &mut self.values;
        n[0] = 1.0;
        for j in 1..=p {
            if j == p {
                self.lower[..p].copy_from_slice(&n[..p]);
            }
            self.left[j] = x - t[span + 1 - j];
            self.right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let den = self.right[r + 1] + self.left[j - r];
                let temp = if den != 0.0 { n[r] / den } else { 0.0 };
                n[r] = saved + self.right[r + 1] * temp;
                saved = self.left[j - r] * temp;
            }
            n[j] = saved;
        }
    }
}

fn clamp_domain(x: f64, knots: &[f64], degree: usize) -> (f64, bool) {
    let lo = knots[degree];
    let hi = knots[knots.len() - degree - 1];
    if x < lo {
        (lo, true)
    } else if x > hi {
        (hi, true)
    } else {
        (x, false)
    }
}

/// Largest `s` in `degree..n_basis` with `knots[s] <= x < knots[s + 1]`;
/// the right domain edge belongs to the last nonempty span.
fn find_span(x: f64, knots: &[f64], degree: usize) -> usize {
    let n_basis = knots.len() - degree - 1;
    let mut span = degree;
    for s in degree..n_basis {
        if knots[s] <= x && knots[s] < knots[s + 1] {
            span = s;
        }
    }
    span
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive definition, used as an independent reference.
    fn cox_de_boor(i: usize, p: usize, x: f64, t: &[f64], last: usize) -> f64 {
        if p == 0 {
            // the right domain edge belongs only to the final span
            if x == t[last + 1] {
                return if i == last { 1.0 } else { 0.0 };
            }
            return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let dl = t[i + p] - t[i];
        if dl > 0.0 {
            v += (x - t[i]) / dl * cox_de_boor(i, p - 1, x, t, last);
        }
        let dr = t[i + p + 1] - t[i + 1];
        if dr > 0.0 {
            v += (t[i + p + 1] - x) / dr * cox_de_boor(i + 1, p - 1, x, t, last);
        }
        v
    }

    #[test]
    fn cubic_uniform_central_and_adjacent_values() {
        let knots: Vec<f64> = (0..12).map(|i| i as f64).collect();
        // B_2 has support [2, 6], centre knot 4.
        let at = |x: f64| bspline_basis(x, &knots, 3)[2];
        assert!((at(4.0) - 2.0 / 3.0).abs() < 1e-14);
        assert!((at(3.0) - 1.0 / 6.0).abs() < 1e-14);
        assert!((at(5.0) - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn matches_recursive_definition() {
        let knots: Vec<f64> = (0..12).map(|i| -2.0 + 0.4 * i as f64).collect();
        for degree in 0..=3 {
            let n_basis = knots.len() - degree - 1;
            let last = n_basis - 1;
            let lo = knots[degree];
            let hi = knots[n_basis];
            for step in 0..=50 {
                let x = lo + (hi - lo) * step as f64 / 50.0;
                let got = bspline_basis(x, &knots, degree);
                for (i, g) in got.iter().enumerate() {
                    let want = cox_de_boor(i, degree, x, &knots, last);
                    assert!((g - want).abs() < 1e-13, "deg {degree} i {i} x {x}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_on_interior() {
        let grid = KnotGrid::uniform(-2.0, 2.0, 8, 3);
        let mut v = vec![0.0; 8];
        let mut d = vec![0.0; 8];
        let mut s = grid.scratch();
        for step in 0..=400 {
            let x = -2.0 + 4.0 * step as f64 / 400.0;
            grid.eval_into(x, &mut v, &mut d, &mut s);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(bspline_basis(0.5, &knots, 0), vec![1.0, 0.0, 0.0]);
        assert_eq!(bspline_basis(1.0, &knots, 0), vec![0.0, 1.0, 0.0]);
        assert_eq!(bspline_basis(2.7, &knots, 0), vec![0.0, 0.0, 1.0]);
        assert_eq!(bspline_basis(3.0, &knots, 0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_range_inputs_clamp_to_edges() {
        let grid = KnotGrid::uniform(-2.0, 2.0, 8, 3);
        let mut v = vec![0.0; 8];
        let mut d = vec![0.0; 8];
        let mut e = vec![0.0; 8];
        let mut s = grid.scratch();
        grid.eval_into(-7.5, &mut v, &mut d, &mut s);
        grid.eval_into(-2.0, &mut e, &mut vec![0.0; 8], &mut s);
        assert_eq!(v, e);
        assert!(d.iter().all(|&x| x == 0.0));
        grid.eval_into(3.0, &mut v, &mut d, &mut s);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let grid = KnotGrid::uniform(-2.0, 2.0, 8, 3);
        let mut s = grid.scratch();
        let mut v = vec![0.0; 8];
        let mut d = vec![0.0; 8];
        let mut vp = vec![0.0; 8];
        let mut vm = vec![0.0; 8];
        let mut scratch_d = vec![0.0; 8];
        let h = 1e-6;
        for &x in &[-1.93, -1.1, -0.37, 0.05, 0.9, 1.61, 1.97] {
            grid.eval_into(x, &mut v, &mut d, &mut s);
            grid.eval_into(x + h, &mut vp, &mut scratch_d, &mut s);
            grid.eval_into(x - h, &mut vm, &mut scratch_d, &mut s);
            for i in 0..8 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-7, "x {x} i {i}: {fd} vs {}", d[i]);
            }
        }
    }

    #[test]
    fn uniform_grid_layout() {
        let grid = KnotGrid::uniform(-2.0, 2.0, 8, 3);
        assert_eq!(grid.knots().len(), 12);
        assert_eq!(grid.n_basis(), 8);
        assert!((grid.knots()[3] + 2.0).abs() < 1e-15);
        assert!((grid.knots()[8] - 2.0).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn basis_partitions_unity_inside_the_grid(
                lo in -5.0..0.0f64,
                width in 0.5..10.0f64,
                n_basis in 4..12usize,
                degree in 1..4usize,
                t in 0.0..=1.0f64,
            ) {
                prop_assume!(n_basis > degree);
                let grid = KnotGrid::uniform(lo, lo + width, n_basis, degree);
                let mut v = vec![0.0; n_basis];
                let mut d = vec![0.0; n_basis];
                let mut s = grid.scratch();
                grid.eval_into(lo + t * width, &mut v, &mut d, &mut s);
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(v.iter().all(|&b| b >= -1e-15));
            }
        }
    }
}
