//! Image enclosures of elementwise activations.
//!
//! Each output dimension `i` is enclosed by `m_i x + t_i` plus a symmetric
//! error `[-d_i, d_i]`, computed on the interval hull `[l_i, u_i]` of the
//! input. Dimensions with `d_i > 0` receive one fresh generator column each,
//! appended after the propagated columns in increasing row order.
//!
//! For ReLU on a crossing dimension the slope is `u / (u - l)` and the offset
//! makes the output center equal `E[ReLU(U(l, u))] = u^2 / (2 (u - l))`.
//! Tanh uses the chord slope with the residual range found at the endpoints
//! and the interior tangent points, centered by the offset.

use ndarray::{s, Array1, Array2, ArrayView2};

use super::set::BackwardMode;
use super::Activation;
use crate::zonotope::{row_abs_sums, sgn, Zonotope};

/// Hull widths below this are treated as points and evaluated exactly.
pub const POINT_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Degenerate width: exact evaluation, slope is the derivative at the center.
    Point,
    /// ReLU with `u <= 0`.
    Inactive,
    /// ReLU with `l >= 0`.
    Active,
    /// ReLU with `l < 0 < u`, or any non-degenerate tanh dimension.
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extremum {
    Lower,
    Upper,
    Interior,
}

#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub kind: Activation,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
    pub slope: Array1<f64>,
    pub offset: Array1<f64>,
    /// Half-width `d` of the symmetric error interval.
    pub radius: Array1<f64>,
    pub regime: Vec<Regime>,
    /// Rows that received an error generator, in column order.
    pub error_rows: Vec<usize>,
    // tanh residual extrema: (location, which candidate) for max and min
    tanh_extrema: Vec<Option<((f64, Extremum), (f64, Extremum))>>,
}

struct DimEnclosure {
    regime: Regime,
    slope: f64,
    offset: f64,
    radius: f64,
    center: f64,
    tanh_extrema: Option<((f64, Extremum), (f64, Extremum))>,
}

fn relu_dim(c: f64, l: f64, u: f64) -> DimEnclosure {
    let plain = |regime, slope, center| DimEnclosure {
        regime,
        slope,
        offset: 0.0,
        radius: 0.0,
        center,
        tanh_extrema: None,
    };
    if u - l < POINT_WIDTH {
        let m = Activation::Relu.derivative(c);
        return DimEnclosure {
            offset: c.max(0.0) - m * c,
            ..plain(Regime::Point, m, c.max(0.0))
        };
    }
    if u <= 0.0 {
        return plain(Regime::Inactive, 0.0, 0.0);
    }
    if l >= 0.0 {
        return plain(Regime::Active, 1.0, c);
    }
    let width = u - l;
    let m = u / width;
    let t = 0.5 * (u * u / width - m * (u + l));
    DimEnclosure {
        regime: Regime::Crossing,
        slope: m,
        offset: t,
        radius: (u * l).abs() / (2.0 * width),
        center: m * c + t,
        tanh_extrema: None,
    }
}

fn tanh_dim(c: f64, l: f64, u: f64) -> DimEnclosure {
    if u - l < POINT_WIDTH {
        let m = Activation::Tanh.derivative(c);
        let y = c.tanh();
        return DimEnclosure {
            regime: Regime::Point,
            slope: m,
            offset: y - m * c,
            radius: 0.0,
            center: y,
            tanh_extrema: None,
        };
    }
    let m = (u.tanh() - l.tanh()) / (u - l);
    let residual = |x: f64| x.tanh() - m * x;
    let mut candidates = vec![(l, Extremum::Lower), (u, Extremum::Upper)];
    if m > 0.0 && m <= 1.0 {
        let x = (1.0 - m).sqrt().atanh();
        for cand in [x, -x] {
            if cand.is_finite() && cand > l && cand < u {
                candidates.push((cand, Extremum::Interior));
            }
        }
    }
    let mut hi = (f64::NEG_INFINITY, candidates[0]);
    let mut lo = (f64::INFINITY, candidates[0]);
    for &cand in &candidates {
        let v = residual(cand.0);
        if v > hi.0 {
            hi = (v, cand);
        }
        if v < lo.0 {
            lo = (v, cand);
        }
    }
    let t = 0.5 * (hi.0 + lo.0);
    DimEnclosure {
        regime: Regime::Crossing,
        slope: m,
        offset: t,
        radius: 0.5 * (hi.0 - lo.0),
        center: m * c + t,
        tanh_extrema: Some((hi.1, lo.1)),
    }
}

/// Encloses `act(Z)` by `diag(m) Z + t` plus a symmetric error box.
pub fn enclose_activation(kind: Activation, z: &Zonotope) -> (Zonotope, ActivationCache) {
    let n = z.dim();
    let q = z.num_generators();
    let c = z.center();
    let g = z.generators();
    let r = row_abs_sums(g);

    let dims: Vec<DimEnclosure> = (0..n)
        .map(|i| {
            let (l, u) = (c[i] - r[i], c[i] + r[i]);
            match kind {
                Activation::Relu => relu_dim(c[i], l, u),
                Activation::Tanh => tanh_dim(c[i], l, u),
            }
        })
        .collect();

    let error_rows: Vec<usize> = (0..n).filter(|&i| dims[i].radius > 0.0).collect();
    let mut out_g = Array2::zeros((n, q + error_rows.len()));
    for i in 0..n {
        let m = dims[i].slope;
        if m != 0.0 {
            out_g.row_mut(i).slice_mut(s![..q]).assign(&(&g.row(i) * m));
        }
    }
    for (k, &i) in error_rows.iter().enumerate() {
        out_g[[i, q + k]] = dims[i].radius;
    }
    let out_c: Array1<f64> = dims.iter().map(|d| d.center).collect();

    let cache = ActivationCache {
        kind,
        lower: c - &r,
        upper: c + &r,
        slope: dims.iter().map(|d| d.slope).collect(),
        offset: dims.iter().map(|d| d.offset).collect(),
        radius: dims.iter().map(|d| d.radius).collect(),
        regime: dims.iter().map(|d| d.regime).collect(),
        error_rows,
        tanh_extrema: dims.iter().map(|d| d.tanh_extrema).collect(),
    };
    (Zonotope::from_parts(out_c, out_g), cache)
}

/// Partial derivatives of `(m, t, d)` with respect to `(l, u)`.
struct BoundPartials {
    m: (f64, f64),
    t: (f64, f64),
    d: (f64, f64),
}

fn relu_partials(l: f64, u: f64) -> BoundPartials {
    let w2 = (u - l) * (u - l);
    // t = d = -u l / (2 (u - l)) on a crossing dimension
    let t = (-u * u / (2.0 * w2), l * l / (2.0 * w2));
    BoundPartials {
        m: (u / w2, -l / w2),
        t,
        d: t,
    }
}

fn tanh_partials(l: f64, u: f64, m: f64, extrema: ((f64, Extremum), (f64, Extremum))) -> BoundPartials {
    let width = u - l;
    let dl_m = (m - Activation::Tanh.derivative(l)) / width;
    let du_m = (Activation::Tanh.derivative(u) - m) / width;
    // envelope rule for V = tanh(x*) - m x*
    let value_partials = |(x, which): (f64, Extremum)| {
        let mut dl = -x * dl_m;
        let mut du = -x * du_m;
        match which {
            Extremum::Lower => dl += Activation::Tanh.derivative(l) - m,
            Extremum::Upper => du += Activation::Tanh.derivative(u) - m,
            Extremum::Interior => {}
        }
        (dl, du)
    };
    let (hi_l, hi_u) = value_partials(extrema.0);
    let (lo_l, lo_u) = value_partials(extrema.1);
    BoundPartials {
        m: (dl_m, du_m),
        t: (0.5 * (hi_l + lo_l), 0.5 * (hi_u + lo_u)),
        d: (0.5 * (hi_l - lo_l), 0.5 * (hi_u - lo_u)),
    }
}

/// Pulls `(d_center, d_generators)` of the enclosure output back to its input.
///
/// `d_gen` has the output's column count; error columns are consumed here.
pub(crate) fn backward_activation(
    cache: &ActivationCache,
    input: &Zonotope,
    d_center: &Array1<f64>,
    d_gen: ArrayView2<f64>,
    mode: BackwardMode,
) -> (Array1<f64>, Array2<f64>) {
    let q = input.num_generators();
    let c = input.center();
    let g = input.generators();
    let mut dc = d_center * &cache.slope;
    let mut dg = Array2::zeros((input.dim(), q));
    for i in 0..input.dim() {
        let m = cache.slope[i];
        if m != 0.0 {
            dg.row_mut(i).assign(&(&d_gen.row(i).slice(s![..q]) * m));
        }
    }
    if mode == BackwardMode::Frozen {
        return (dc, dg);
    }

    for (i, regime) in cache.regime.iter().enumerate() {
        // dL/dm collects the center and the scaled generator row
        let dm = d_center[i] * c[i] + d_gen.row(i).slice(s![..q]).dot(&g.row(i));
        match (cache.kind, regime) {
            (Activation::Tanh, Regime::Point) => {
                let y = c[i].tanh();
                let second = -2.0 * y * (1.0 - y * y);
                dc[i] += second * (dm - d_center[i] * c[i]);
            }
            (_, Regime::Crossing) => {
                let (l, u) = (cache.lower[i], cache.upper[i]);
                let partials = match cache.kind {
                    Activation::Relu => relu_partials(l, u),
                    Activation::Tanh => tanh_partials(
                        l,
                        u,
                        cache.slope[i],
                        cache.tanh_extrema[i].expect("tanh crossing extrema"),
                    ),
                };
                let de = cache
                    .error_rows
                    .iter()
                    .position(|&row| row == i)
                    .map(|k| d_gen[[i, q + k]])
                    .unwrap_or(0.0);
                let dl = dm * partials.m.0 + d_center[i] * partials.t.0 + de * partials.d.0;
                let du = dm * partials.m.1 + d_center[i] * partials.t.1 + de * partials.d.1;
                // l = c - |G|1, u = c + |G|1
                dc[i] += dl + du;
                let dr = du - dl;
                for j in 0..q {
                    dg[[i, j]] += dr * sgn(g[[i, j]]);
                }
            }
            _ => {}
        }
    }
    (dc, dg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn interval_zono(l: f64, u: f64) -> Zonotope {
        Zonotope::new(array![0.5 * (l + u)], array![[0.5 * (u - l)]]).unwrap()
    }

    #[test]
    fn relu_symmetric_crossing() {
        let (out, cache) = enclose_activation(Activation::Relu, &interval_zono(-1.0, 1.0));
        assert_eq!(cache.slope[0], 0.5);
        // E[ReLU(U(-1, 1))] = 1/4
        assert_eq!(out.center()[0], 0.25);
        assert_eq!(cache.radius[0], 0.25);
        assert_eq!(out.num_generators(), 2);
    }

    #[test]
    fn relu_stable_cases() {
        let (out, cache) = enclose_activation(Activation::Relu, &interval_zono(1.0, 2.0));
        assert_eq!(cache.regime[0], Regime::Active);
        assert_eq!(out, interval_zono(1.0, 2.0));
        assert_eq!(cache.radius[0], 0.0);

        let (out, cache) = enclose_activation(Activation::Relu, &interval_zono(-2.0, -1.0));
        assert_eq!(cache.regime[0], Regime::Inactive);
        assert_eq!(out.center()[0], 0.0);
        assert_eq!(out.radius()[0], 0.0);
        assert_eq!(out.num_generators(), 1);
    }

    #[test]
    fn point_dimensions_are_exact() {
        let z = Zonotope::point(array![-0.3, 0.0, 0.8]);
        let (out, _) = enclose_activation(Activation::Relu, &z);
        assert_eq!(out.center(), &array![0.0, 0.0, 0.8]);
        let (out, cache) = enclose_activation(Activation::Tanh, &z);
        assert_eq!(out.center(), &z.center().mapv(f64::tanh));
        assert!(cache.regime.iter().all(|r| *r == Regime::Point));
        assert_eq!(out.num_generators(), 0);
    }

    #[test]
    fn tanh_enclosure_contains_samples() {
        for &(l, u) in &[(-3.0, 0.5), (0.1, 0.2), (-0.01, 0.02), (2.0, 9.0), (-20.0, 20.0)] {
            let z = interval_zono(l, u);
            let (out, _) = enclose_activation(Activation::Tanh, &z);
            let hull = out.interval_hull();
            for k in 0..=1000 {
                let x = l + (u - l) * k as f64 / 1000.0;
                assert!(hull.contains(&array![x.tanh()], 1e-12), "[{l},{u}] at {x}");
            }
        }
    }

    #[test]
    fn relu_offset_formula() {
        let (l, u) = (-0.7, 1.9);
        let (_, cache) = enclose_activation(Activation::Relu, &interval_zono(l, u));
        let m = u / (u - l);
        let t = 0.5 * (u * u / (u - l) - m * (u + l));
        assert!((cache.offset[0] - t).abs() < 1e-15);
        assert!((cache.radius[0] - (u * l).abs() / (2.0 * (u - l))).abs() < 1e-15);
    }
}
