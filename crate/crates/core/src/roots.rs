//! Safeguarded scalar root refinement (Brent's method).

/// Find a root of `f` in the bracket `[a, b]`, given `f(a) f(b) <= 0`.
/// Returns `(x, f(x))`. `xtol` is the absolute tolerance on the abscissa.
pub fn brent(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    assert!(
        fa * fb <= 0.0,
        "brent requires a sign change: f({a}) = {fa}, f({b}) = {fb}"
    );
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut mflag = true;

    for _ in 0..max_iter {
        if fb == 0.0 || (b - a).abs() < xtol {
            return (b, fb);
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };

        let lo = (3.0 * a + b) / 4.0;
        let hi = b;
        let out_of_range = (s - lo) * (s - hi) > 0.0;
        let too_slow = if mflag {
            (s - b).abs() >= (b - c).abs() / 2.0 || (b - c).abs() < xtol
        } else {
            (s - b).abs() >= (c - d).abs() / 2.0 || (c - d).abs() < xtol
        };
        if out_of_range || too_slow {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }

        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    (b, fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root() {
        let (x, fx) = brent(|t| t - 1.0, 0.0, 2.0, -1.0, 1.0, 1e-14, 100);
        assert!((x - 1.0).abs() < 1e-13);
        assert!(fx.abs() < 1e-13);
    }

    #[test]
    fn transcendental_root() {
        let f = |t: f64| t.cos() - t;
        let (x, _) = brent(f, 0.0, 1.0, f(0.0), f(1.0), 1e-15, 200);
        assert!((x - 0.7390851332151607).abs() < 1e-12);
    }
}
