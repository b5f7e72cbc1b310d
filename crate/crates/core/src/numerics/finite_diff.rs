//! Central finite differences, used as an independent gradient oracle.

pub fn central_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order five-point stencil; tolerates a larger `h` than
/// [`central_gradient`] when `f` is large relative to its gradient.
pub fn five_point_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            let mut at = |k: f64| {
                probe[i] = orig + k * h;
                f(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            probe[i] = orig;
            (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
        })
        .collect()
}

/// Five-point stencil for piecewise-smooth `f`, which also returns a label
/// of the smooth piece it evaluated. Each component uses the first step in
/// `steps` whose probes all land on the same piece as `x`, and is `None`
/// when no step does. Listing steps from large to small trades roundoff
/// against the chance of crossing a kink.
pub fn five_point_gradient_regions<F, S>(mut f: F, x: &[f64], steps: &[f64]) -> Vec<Option<f64>>
where
    F: FnMut(&[f64]) -> (f64, S),
    S: PartialEq,
{
    let (_, base) = f(x);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            let found = steps.iter().find_map(|&h| {
                let mut same = true;
                let mut at = |k: f64| {
                    probe[i] = orig + k * h;
                    let (v, region) = f(&probe);
                    same &= region == base;
                    v
                };
                let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
                same.then(|| (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
            });
            probe[i] = orig;
            found
        })
        .collect()
}

/// Largest componentwise relative error, with the denominator floored at
/// `1e-6` so entries that are zero analytically are compared absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
