use super::params::GradTree;

/// Rescales `grads` in place so that its global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn global_norm_clip_in_place(grads: &mut GradTree, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.norm_l2();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

pub fn global_norm_clip(grads: &GradTree, max_norm: f64) -> GradTree {
    let mut g = grads.clone();
    global_norm_clip_in_place(&mut g, max_norm);
    g
}
