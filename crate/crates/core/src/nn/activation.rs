use crate::FeatureMap;

/// Negative slope of the leaky rectifier used after every normalization.
pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

/// The leaky rectifier preserves sign, so its derivative can be read off the
/// output.
pub fn leaky_relu_backward_from_output(output: &FeatureMap, grad: &mut FeatureMap) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}
