/// `E|Z|` for `Z ~ N(0, var)` by composite Simpson integration on `[-12 sd, 12 sd]`.
pub fn expected_abs_normal(var: f64) -> f64 {
    let sd = var.sqrt();
    let (a, b, n) = (-12.0 * sd, 12.0 * sd, 20_000usize);
    let h = (b - a) / n as f64;
    let f = |t: f64| t.abs() * (-t * t / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
