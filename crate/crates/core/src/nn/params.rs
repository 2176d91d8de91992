//! Named parameter traversal shared by the optimizer, checkpoints and
//! gradient containers.
//!
//! Gradients are stored in a value of the same type as the parameters they
//! belong to, so every container only has to describe its tensors once.

/// A set of named, flat `f64` tensors visited in a fixed order.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s| n += s.len());
        n
    }

    /// Flat views in visiting order.
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.visit("", &mut |_, s| out.push(s));
        out
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, s| out.push((name, s)));
        out
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, s| s.fill(value));
    }

    /// `self += alpha * other`; both sides must share a layout.
    fn add_scaled(&mut self, alpha: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        let mut idx = 0;
        self.visit_mut("", &mut |_, dst| {
            for (d, s) in dst.iter_mut().zip(src[idx]) {
                *d += alpha * s;
            }
            idx += 1;
        });
    }

    fn scale(&mut self, alpha: f64) {
        self.visit_mut("", &mut |_, s| s.iter_mut().for_each(|v| *v *= alpha));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// Reads the scalar at a flat index across all tensors.
    fn get_flat(&self, index: usize) -> f64 {
        let mut offset = 0;
        let mut out = f64::NAN;
        self.visit("", &mut |_, s| {
            if index >= offset && index < offset + s.len() {
                out = s[index - offset];
            }
            offset += s.len();
        });
        out
    }

    fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = 0;
        self.visit_mut("", &mut |_, s| {
            if index >= offset && index < offset + s.len() {
                s[index - offset] = value;
            }
            offset += s.len();
        });
    }
}

/// A zeroed copy with the same layout, used as a gradient accumulator.
pub fn zeros_like<P: Parameters + Clone>(params: &P) -> P {
    let mut out = params.clone();
    out.fill(0.0);
    out
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Parameters are compared bit-for-bit, so `-0.0 != 0.0` and NaN payloads
/// matter.
pub fn bit_identical<P: Parameters>(a: &P, b: &P) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len()
        && ta.iter().zip(&tb).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}
