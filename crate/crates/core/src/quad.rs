//! Fourth-order prefix integration on uniform grids, shared by the
//! integral-recursion evaluators.

/// Cumulative integral of samples `f` with spacing `h`: `out[i]` approximates
/// the integral from node 0 to node `i`. Composite Simpson at even nodes,
/// cubic panels at odd nodes; needs at least 4 samples.
pub(crate) fn prefix_integral(f: &[f64], h: f64) -> Vec<f64> {
    assert!(f.len() >= 4, "prefix integration needs at least 4 nodes");
    let mut out = vec![0.0; f.len()];
    out[1] = h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]);
    for i in 2..f.len() {
        if i % 2 == 0 {
            out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
        } else {
            out[i] =
                out[i - 1] + h / 24.0 * (f[i - 3] - 5.0 * f[i - 2] + 19.0 * f[i - 1] + 9.0 * f[i]);
        }
    }
    out
}
