use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamShape {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, offset: usize) -> Self {
        Self {
            name: name.into(),
            shape,
            offset,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of a scalar loss, held flat with a per-parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    flat: Vec<f64>,
    shapes: Vec<ParamShape>,
}

impl GradientBundle {
    pub fn new(flat: Vec<f64>, shapes: Vec<ParamShape>) -> Self {
        debug_assert_eq!(flat.len(), shapes.iter().map(ParamShape::len).sum::<usize>());
        Self { flat, shapes }
    }

    /// Single unnamed parameter block.
    pub fn from_flat(flat: Vec<f64>) -> Self {
        let shapes = vec![ParamShape::new("params", vec![flat.len()], 0)];
        Self { flat, shapes }
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn shapes(&self) -> &[ParamShape] {
        &self.shapes
    }

    pub fn view(&self, index: usize) -> &[f64] {
        let s = &self.shapes[index];
        &self.flat[s.offset..s.offset + s.len()]
    }

    pub fn global_norm(&self) -> f64 {
        self.flat.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|g| g.is_finite())
    }
}

/// Rescales the whole bundle so its Euclidean norm is at most `max_norm`.
pub fn clip_by_global_norm(grads: &GradientBundle, max_norm: f64) -> GradientBundle {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.global_norm();
    if norm <= max_norm {
        return grads.clone();
    }
    let scale = max_norm / norm;
    GradientBundle {
        flat: grads.flat.iter().map(|g| g * scale).collect(),
        shapes: grads.shapes.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn under_threshold_is_unchanged() {
        let g = GradientBundle::from_flat(vec![3.0, 4.0]);
        assert_eq!(g.global_norm(), 5.0);
        assert_eq!(clip_by_global_norm(&g, 10.0).flat(), &[3.0, 4.0]);
    }

    #[test]
    fn over_threshold_is_scaled() {
        let g = GradientBundle::from_flat(vec![30.0, 40.0]);
        let c = clip_by_global_norm(&g, 10.0);
        assert!((c.flat()[0] - 6.0).abs() < 1e-12);
        assert!((c.flat()[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_stays_zero() {
        let g = GradientBundle::from_flat(vec![0.0; 4]);
        assert_eq!(clip_by_global_norm(&g, 0.5).flat(), &[0.0; 4]);
    }

    proptest! {
        #[test]
        fn clipped_norm_bounded_and_direction_kept(
            v in prop::collection::vec(-1e3f64..1e3, 1..40),
            max_norm in 1e-3f64..50.0,
        ) {
            let g = GradientBundle::from_flat(v.clone());
            let c = clip_by_global_norm(&g, max_norm);
            prop_assert!(c.global_norm() <= max_norm + 1e-12 || c.flat() == g.flat());
            prop_assert!(c.global_norm() <= max_norm.max(g.global_norm()) + 1e-12);
            let norm = g.global_norm();
            if norm > max_norm {
                let dot: f64 = c.flat().iter().zip(&v).map(|(a, b)| a * b).sum();
                let cos = dot / (c.global_norm() * norm);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn global_norm_matches_flat_norm(v in prop::collection::vec(-1e6f64..1e6, 0..64)) {
            let g = GradientBundle::from_flat(v.clone());
            let direct = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((g.global_norm() - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }
}
