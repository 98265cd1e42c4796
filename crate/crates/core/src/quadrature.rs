//! Composite Gauss-Legendre quadrature, used as an independent oracle for
//! the averaging operators (their production path is coefficientwise, so a
//! direct integral cross-checks them).

/// 10-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; the rule
/// is symmetric).
const GL10_X: [f64; 5] = [
    0.148874338981631211,
    0.433395394129247191,
    0.679409568299024406,
    0.865063366688984511,
    0.973906528517171720,
];
const GL10_W: [f64; 5] = [
    0.295524224714752870,
    0.269266719309996355,
    0.219086362515982044,
    0.149451349150580593,
    0.066671344308688138,
];

/// Integrate `f` over `[a, b]` with `panels` composite 10-point panels.
/// Values may be any type closed under scaling and addition; to keep this
/// simple we integrate complex-valued functions (reals embed).
pub fn integrate_complex<F>(f: F, a: f64, b: f64, panels: usize) -> num_complex::Complex64
where
    F: Fn(f64) -> num_complex::Complex64,
{
    let h = (b - a) / panels as f64;
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for i in 0..5 {
            let dx = half * GL10_X[i];
            acc += (f(mid + dx) + f(mid - dx)) * (GL10_W[i] * half);
        }
    }
    acc
}
