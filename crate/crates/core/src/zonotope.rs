//! Zonotopes `<c, G> = { c + G b : b in [-1, 1]^q }`.
//!
//! Every set in the crate (perturbed observations, action sets, critic outputs,
//! reachable states) is a [`Zonotope`]. All operations here are exact; order
//! reduction lives in the verifier.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;

use crate::error::{check_dim, Result};
use crate::interval::IntervalBox;

/// Floor applied to `|G| 1` before taking logarithms or reciprocals.
pub const DIA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: Array1<f64>,
    generators: Array2<f64>,
}

impl Zonotope {
    pub fn new(center: Array1<f64>, generators: Array2<f64>) -> Result<Self> {
        check_dim("zonotope generator rows", center.len(), generators.nrows())?;
        Ok(Self { center, generators })
    }

    pub(crate) fn from_parts(center: Array1<f64>, generators: Array2<f64>) -> Self {
        debug_assert_eq!(center.len(), generators.nrows());
        Self { center, generators }
    }

    /// Zonotope without generators.
    pub fn point(center: Array1<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: Array2::zeros((n, 0)),
        }
    }

    /// The l-infinity ball `<c, eps I>`. A zero radius yields a point.
    pub fn linf_ball(center: Array1<f64>, eps: f64) -> Self {
        if eps == 0.0 {
            return Self::point(center);
        }
        let n = center.len();
        Self {
            center,
            generators: Array2::eye(n) * eps,
        }
    }

    pub fn from_box(b: &IntervalBox) -> Self {
        Self::point(b.center()).minkowski_interval_unchecked(b.lower(), b.upper())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &Array1<f64> {
        &self.center
    }

    pub fn generators(&self) -> &Array2<f64> {
        &self.generators
    }

    pub fn into_parts(self) -> (Array1<f64>, Array2<f64>) {
        (self.center, self.generators)
    }

    /// `<A c + b, A G>`.
    pub fn affine_map(&self, a: &Array2<f64>, b: &Array1<f64>) -> Result<Zonotope> {
        check_dim("affine map columns", self.dim(), a.ncols())?;
        check_dim("affine map offset", a.nrows(), b.len())?;
        Ok(Zonotope {
            center: a.dot(&self.center) + b,
            generators: a.dot(&self.generators),
        })
    }

    pub fn translate(&self, offset: &Array1<f64>) -> Result<Zonotope> {
        check_dim("translation", self.dim(), offset.len())?;
        Ok(Zonotope {
            center: &self.center + offset,
            generators: self.generators.clone(),
        })
    }

    /// `|G| 1`, the radius of the interval hull.
    pub fn radius(&self) -> Array1<f64> {
        row_abs_sums(&self.generators)
    }

    pub fn interval_hull(&self) -> IntervalBox {
        let r = self.radius();
        IntervalBox::from_parts_unchecked(&self.center - &r, &self.center + &r)
    }

    /// `upper - lower` of the interval hull, i.e. `2 |G| 1` up to rounding.
    pub fn diameter(&self) -> Array1<f64> {
        let h = self.interval_hull();
        h.upper() - h.lower()
    }

    /// Minkowski sum with a box; zero-width box dimensions add no column.
    pub fn minkowski_interval(&self, iv: &IntervalBox) -> Result<Zonotope> {
        check_dim("minkowski sum", self.dim(), iv.dim())?;
        Ok(self.minkowski_interval_unchecked(iv.lower(), iv.upper()))
    }

    fn minkowski_interval_unchecked(&self, lower: &Array1<f64>, upper: &Array1<f64>) -> Zonotope {
        let n = self.dim();
        let center = &self.center + &((upper + lower) * 0.5);
        let half: Vec<(usize, f64)> = (0..n)
            .map(|i| (i, 0.5 * (upper[i] - lower[i])))
            .filter(|&(_, h)| h != 0.0)
            .collect();
        let q = self.num_generators();
        let mut generators = Array2::zeros((n, q + half.len()));
        generators.slice_mut(s![.., ..q]).assign(&self.generators);
        for (k, &(i, h)) in half.iter().enumerate() {
            generators[[i, q + k]] = h;
        }
        Zonotope { center, generators }
    }

    /// Block-diagonal Cartesian product `self x other`.
    pub fn cartesian_product(&self, other: &Zonotope) -> Zonotope {
        let (n1, q1) = self.generators.dim();
        let (n2, q2) = other.generators.dim();
        let center = concatenate![Axis(0), self.center, other.center];
        let mut generators = Array2::zeros((n1 + n2, q1 + q2));
        generators.slice_mut(s![..n1, ..q1]).assign(&self.generators);
        generators.slice_mut(s![n1.., q1..]).assign(&other.generators);
        Zonotope { center, generators }
    }

    /// Points `c + G b` with `b ~ U(-1, 1)^q`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Array1<f64>> {
        let q = self.num_generators();
        (0..count)
            .map(|_| {
                let beta: Array1<f64> = (0..q).map(|_| rng.random_range(-1.0..=1.0)).collect();
                &self.center + &self.generators.dot(&beta)
            })
            .collect()
    }

    /// Restrict to a subset of coordinates (rows), keeping all generators.
    pub fn project(&self, dims: &[usize]) -> Zonotope {
        let center = dims.iter().map(|&d| self.center[d]).collect();
        let generators = self.generators.select(Axis(0), dims);
        Zonotope { center, generators }
    }
}

/// Row sums of `|G|`.
pub fn row_abs_sums(g: &Array2<f64>) -> Array1<f64> {
    g.map_axis(Axis(1), |row| row.iter().map(|v| v.abs()).sum())
}

/// `ln(2 |G| 1)` with the row sums floored at [`DIA_FLOOR`].
pub fn ln_dia(g: &Array2<f64>) -> Array1<f64> {
    row_abs_sums(g).mapv(|r| (2.0 * r.max(DIA_FLOOR)).ln())
}

/// Gradient of [`ln_dia`] with respect to `G`: `diag(|G| 1)^-1 sgn(G)`.
pub fn ln_dia_grad(g: &Array2<f64>) -> Array2<f64> {
    let rows = row_abs_sums(g);
    let mut out = Array2::zeros(g.raw_dim());
    for ((i, j), v) in g.indexed_iter() {
        out[[i, j]] = sgn(*v) / rows[i].max(DIA_FLOOR);
    }
    out
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn z(c: Array1<f64>, g: Array2<f64>) -> Zonotope {
        Zonotope::new(c, g).unwrap()
    }

    #[test]
    fn affine_identity_and_scalar() {
        let zz = z(array![1.0, -2.0], array![[1.0, 0.5], [0.0, 3.0]]);
        let same = zz.affine_map(&Array2::eye(2), &Array1::zeros(2)).unwrap();
        assert_eq!(same, zz);

        let one = z(array![0.0], array![[1.0]]);
        let mapped = one.affine_map(&array![[2.0]], &array![1.0]).unwrap();
        assert_eq!(mapped, z(array![1.0], array![[2.0]]));
    }

    #[test]
    fn affine_rejects_bad_shape() {
        let zz = Zonotope::point(array![0.0, 0.0]);
        assert!(zz.affine_map(&Array2::zeros((2, 3)), &Array1::zeros(2)).is_err());
        assert!(zz.affine_map(&Array2::zeros((2, 2)), &Array1::zeros(3)).is_err());
    }

    #[test]
    fn hull_examples() {
        let h = z(array![0.0, 0.0], Array2::eye(2)).interval_hull();
        assert_eq!(h.lower(), &array![-1.0, -1.0]);
        assert_eq!(h.upper(), &array![1.0, 1.0]);

        let h = z(array![1.0], array![[2.0, -1.0]]).interval_hull();
        assert_eq!((h.lower()[0], h.upper()[0]), (-2.0, 4.0));

        let h = Zonotope::point(array![3.0]).interval_hull();
        assert_eq!((h.lower()[0], h.upper()[0]), (3.0, 3.0));
    }

    #[test]
    fn hull_matches_vertex_enumeration() {
        // <[1], [2 -1]>: enumerate b in {-1, 1}^2
        let zz = z(array![1.0], array![[2.0, -1.0]]);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for b0 in [-1.0, 1.0] {
            for b1 in [-1.0, 1.0] {
                let v = 1.0 + 2.0 * b0 - b1;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let h = zz.interval_hull();
        assert_eq!((h.lower()[0], h.upper()[0]), (lo, hi));
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(z(array![0.0], array![[0.5]]).diameter(), array![1.0]);
        assert_eq!(
            z(array![0.0, 0.0], array![[1.0, 1.0], [0.0, 2.0]]).diameter(),
            array![4.0, 4.0]
        );
        assert_eq!(Zonotope::point(array![1.0, 2.0]).diameter(), array![0.0, 0.0]);
    }

    #[test]
    fn ln_dia_examples() {
        assert_eq!(ln_dia(&array![[0.5]]), array![0.0]);
        assert_eq!(ln_dia_grad(&array![[1.0, -1.0]]), array![[0.5, -0.5]]);
        let zero = Array2::zeros((1, 3));
        assert_eq!(ln_dia(&zero)[0], (2.0 * DIA_FLOOR).ln());
        assert_eq!(ln_dia_grad(&zero), Array2::<f64>::zeros((1, 3)));
    }

    #[test]
    fn minkowski_examples() {
        let zz = z(array![0.0], array![[1.0]]);
        let same = zz.minkowski_interval(&IntervalBox::symmetric(1, 0.0)).unwrap();
        assert_eq!(same, zz);

        let sum = zz
            .minkowski_interval(&IntervalBox::from_vecs(vec![-1.0], vec![3.0]).unwrap())
            .unwrap();
        assert_eq!(sum, z(array![1.0], array![[1.0, 2.0]]));
        let h = sum.interval_hull();
        assert_eq!((h.lower()[0], h.upper()[0]), (-2.0, 4.0));

        let c = array![0.3, -0.7];
        let sym = Zonotope::point(c.clone())
            .minkowski_interval(&IntervalBox::symmetric(2, 0.25))
            .unwrap();
        assert_eq!(sym.center(), &c);
        assert!(zz.minkowski_interval(&IntervalBox::symmetric(2, 1.0)).is_err());
    }

    #[test]
    fn cartesian_product_examples() {
        let a = z(array![0.0], array![[1.0]]);
        let square = a.cartesian_product(&a).interval_hull();
        assert_eq!(square.lower(), &array![-1.0, -1.0]);
        assert_eq!(square.upper(), &array![1.0, 1.0]);

        let p = a.cartesian_product(&Zonotope::point(array![5.0, 6.0]));
        assert_eq!(p.center(), &array![0.0, 5.0, 6.0]);
        assert_eq!(p.num_generators(), 1);
        assert_eq!(p.interval_hull().lower(), &array![-1.0, 5.0, 6.0]);
    }

    #[test]
    fn sample_point_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Zonotope::point(array![1.0, 2.0]);
        assert!(p.sample(10, &mut rng).iter().all(|x| x == p.center()));

        // Each coordinate is c + sum_j G_ij b_j with Var(b_j) = 1/3.
        let zz = z(array![1.0, -1.0], array![[0.5, 1.0], [2.0, 0.0]]);
        let n = 1_000_000;
        let samples = zz.sample(n, &mut rng);
        let hull = zz.interval_hull();
        assert!(samples.iter().all(|x| hull.contains(x, 0.0)));
        let mean: Array1<f64> = samples.iter().fold(Array1::<f64>::zeros(2), |acc, x| acc + x) / n as f64;
        for i in 0..2 {
            let var: f64 = zz.generators().row(i).iter().map(|g| g * g / 3.0).sum();
            let se = (var / n as f64).sqrt();
            assert!((mean[i] - zz.center()[i]).abs() < 4.0 * se, "dim {i}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let zz = z(array![0.0], array![[1.0, 2.0]]);
        let a = zz.sample(5, &mut ChaCha8Rng::seed_from_u64(3));
        let b = zz.sample(5, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    fn arb_zono(n: usize, q: usize) -> impl Strategy<Value = Zonotope> {
        (
            proptest::collection::vec(-3.0f64..3.0, n),
            proptest::collection::vec(-2.0f64..2.0, n * q),
        )
            .prop_map(move |(c, g)| {
                Zonotope::new(Array1::from(c), Array2::from_shape_vec((n, q), g).unwrap()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn affine_map_preserves_factors(zz in arb_zono(2, 3), a in proptest::collection::vec(-2.0f64..2.0, 6), seed in 0u64..1000) {
            // x = c + G b maps to (A c + b0) + (A G) b for the same factors b
            let a = Array2::from_shape_vec((3, 2), a).unwrap();
            let off = array![0.1, -0.2, 0.3];
            let m = zz.affine_map(&a, &off).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hull = m.interval_hull();
            for _ in 0..100 {
                let beta: Array1<f64> = (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let x = zz.center() + &zz.generators().dot(&beta);
                let y = a.dot(&x) + &off;
                let via_factors = m.center() + &m.generators().dot(&beta);
                for i in 0..3 {
                    prop_assert!((y[i] - via_factors[i]).abs() < 1e-9);
                }
                prop_assert!(hull.contains(&y, 1e-9));
            }
        }

        #[test]
        fn product_hull_is_hull_product(a in arb_zono(2, 2), b in arb_zono(3, 4)) {
            let p = a.cartesian_product(&b).interval_hull();
            let (ha, hb) = (a.interval_hull(), b.interval_hull());
            let lower = concatenate![Axis(0), *ha.lower(), *hb.lower()];
            let upper = concatenate![Axis(0), *ha.upper(), *hb.upper()];
            prop_assert_eq!(p.lower(), &lower);
            prop_assert_eq!(p.upper(), &upper);
        }

        #[test]
        fn minkowski_contains_sums(zz in arb_zono(2, 2), l in proptest::collection::vec(-1.0f64..0.0, 2), w in proptest::collection::vec(0.0f64..2.0, 2), seed in 0u64..1000) {
            let lo = Array1::from(l);
            let hi = &lo + &Array1::from(w);
            let iv = IntervalBox::new(lo, hi).unwrap();
            let sum = zz.minkowski_interval(&iv).unwrap();
            let hull = sum.interval_hull();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (x, y) in zz.sample(50, &mut rng).into_iter().zip((0..50).map(|_| iv.sample(&mut rng))) {
                prop_assert!(hull.contains(&(x + y), 1e-9));
            }
        }

        #[test]
        fn diameter_is_hull_width(zz in arb_zono(3, 4), s in 1.0f64..5.0) {
            let h = zz.interval_hull();
            prop_assert_eq!(zz.diameter(), h.upper() - h.lower());
            let scaled = Zonotope::new(zz.center().clone(), zz.generators() * s).unwrap();
            let ratio = scaled.diameter() / zz.diameter();
            for r in ratio.iter().filter(|r| r.is_finite()) {
                prop_assert!((r - s).abs() < 1e-12 * s.max(zz.center().iter().fold(1.0, |m, c| m.max(c.abs()))));
            }
        }

        #[test]
        fn ln_dia_grad_matches_differences(g in proptest::collection::vec(prop_oneof![-2.0f64..-1e-3, 1e-3f64..2.0], 6)) {
            let g = Array2::from_shape_vec((2, 3), g).unwrap();
            let grad = ln_dia_grad(&g);
            let h = 1e-7;
            for i in 0..2 {
                for j in 0..3 {
                    let mut gp = g.clone();
                    gp[[i, j]] += h;
                    let mut gm = g.clone();
                    gm[[i, j]] -= h;
                    let fd = (ln_dia(&gp).sum() - ln_dia(&gm).sum()) / (2.0 * h);
                    prop_assert!((fd - grad[[i, j]]).abs() <= 1e-6 * grad[[i, j]].abs().max(1.0));
                }
            }
        }
    }
}
