//! Direct evaluation of the decayed softmax average, one exponential per term.

/// `wkv_t` for every step of a single channel:
///
/// `(Σ_{i<t} e^{(t−1−i)w + kᵢ} vᵢ + e^{u + kₜ} vₜ) / (Σ_{i<t} e^{(t−1−i)w + kᵢ} + e^{u + kₜ})`
///
/// `w` is the effective (negative) decay exponent. Only usable on short
/// sequences where the raw exponentials stay finite.
pub fn wkv_channel(k: &[f64], v: &[f64], u: f64, w: f64) -> Vec<f64> {
    assert_eq!(k.len(), v.len());
    (0..k.len())
        .map(|t| {
            let mut num = (u + k[t]).exp() * v[t];
            let mut den = (u + k[t]).exp();
            for i in 0..t {
                let e = ((t - 1 - i) as f64 * w + k[i]).exp();
                num += e * v[i];
                den += e;
            }
            num / den
        })
        .collect()
}
