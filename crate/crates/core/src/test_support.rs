/// Kolmogorov–Smirnov p-value of `values` against U[0, 1), using the
/// asymptotic Kolmogorov distribution with the Stephens correction.
pub fn ks_uniform_pvalue(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let d = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i + 1) as f64 / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}
