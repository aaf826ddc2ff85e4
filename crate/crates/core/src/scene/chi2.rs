use super::SceneError;

/// `(γ, χ²₃(γ))` quantiles of the 3-DOF chi-squared distribution.
const CHI2_3: [(f64, f64); 19] = [
    (0.01, 0.1148318019),
    (0.05, 0.3518463177),
    (0.1, 0.5843743742),
    (0.2, 1.0051740131),
    (0.3, 1.4236522430),
    (0.4, 1.8691684034),
    (0.5, 2.3659738844),
    (0.6, 2.9461660731),
    (0.68, 3.5058823558),
    (0.7, 3.6648707832),
    (0.8, 4.6416276761),
    (0.9, 6.2513886312),
    (0.95, 7.8147279033),
    (0.97, 8.9472874989),
    (0.98, 9.8374093112),
    (0.99, 11.3448667301),
    (0.995, 12.8381564666),
    (0.997, 13.9314226655),
    (0.999, 16.2662361962),
];

/// Semi-axis multiplier `√χ²₃(γ)` turning 1σ axes into the `γ`-confidence
/// ellipsoid. Exact at the tabulated levels, linear in the quantile between
/// them; `γ` must lie in `[0.01, 0.999]`.
pub fn confidence_scale(gamma: f64) -> Result<f64, SceneError> {
    let (lo, hi) = (CHI2_3[0].0, CHI2_3[CHI2_3.len() - 1].0);
    if !(lo..=hi).contains(&gamma) {
        return Err(SceneError::InvalidParameter(format!(
            "confidence level {gamma} outside [{lo}, {hi}]"
        )));
    }
    let k = CHI2_3.partition_point(|&(g, _)| g < gamma);
    let q = if CHI2_3[k].0 == gamma {
        CHI2_3[k].1
    } else {
        let (g0, q0) = CHI2_3[k - 1];
        let (g1, q1) = CHI2_3[k];
        q0 + (q1 - q0) * (gamma - g0) / (g1 - g0)
    };
    Ok(q.sqrt())
}
